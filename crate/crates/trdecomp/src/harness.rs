//! Seeded instance generation and the experiment suites behind `bench`.
//!
//! Every random draw comes from a ChaCha8 stream keyed by the trial seed and
//! selected by [`Role`], so trials can run in any order or in parallel and
//! still see the same numbers.
//!
//! CSV schemas:
//!
//! * trials: `dims,r,sigma_s,sigma_n,mask,seed,init,iter,masked_residual,full_rel_error,wallclock_ms`
//! * table1: `dims,r,route,seeds,failures,median_abs_error,median_rel_error,max_abs_error,max_rel_error,reference_rel_error`
//! * success grid: `sigma_n,init,trials,successes,fraction`, preceded by `#`
//!   metadata lines.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trdecomp_core::error::Error;
use trdecomp_core::exact::Grouping;
use trdecomp_core::exact::{
    blostr_decompose, build_sample_mask, refined_decompose, ExactConfig, ProbeConfig,
};
use trdecomp_core::mask::SampleMask;
use trdecomp_core::mps::{
    mps_recover, ratio_dispersion, simulate_marginal, MpsConfig, MpsState, NoisyMarginals,
    DENSE_STATE_LIMIT,
};
use trdecomp_core::numerics::ToleranceConfig;
use trdecomp_core::random::{add_noise, random_tr, Field};
use trdecomp_core::robust::{
    masked_als_sweep, random_init, robust_init, AlsState, InitKind, Observations, RobustConfig,
    DEFAULT_REL_EPS, DEFAULT_RESTARTS,
};
use trdecomp_core::source::MaskedTensorView;
use trdecomp_core::tensor::ComplexDenseTensor;
use trdecomp_core::tr::{
    relative_error, tr_distance, tr_reconstruct, TrDecomposition, TrSource, DEFAULT_MEMORY_BOUND,
};

/// Independent random streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Cores = 0,
    Noise = 1,
    Mask = 2,
    Algorithm = 3,
}

pub fn stream(seed: u64, role: Role) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role as u64);
    rng
}

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Blostr,
    Random,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::Blostr => "blostr",
            InitMode::Random => "random",
        }
    }
}

impl From<InitMode> for InitKind {
    fn from(m: InitMode) -> Self {
        match m {
            InitMode::Blostr => InitKind::Blostr,
            InitMode::Random => InitKind::Random,
        }
    }
}

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    PartialOrd,
    Ord,
    Hash,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// The sample set Δ of the drawn probes.
    Delta,
    Full,
}

impl MaskMode {
    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Delta => "delta",
            MaskMode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    #[default]
    Real,
    Complex,
}

impl From<FieldKind> for Field {
    fn from(f: FieldKind) -> Self {
        match f {
            FieldKind::Real => Field::Real,
            FieldKind::Complex => Field::Complex,
        }
    }
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub dims: Vec<usize>,
    pub r: usize,
    /// Standard deviation of core entries.
    pub sigma_s: f64,
    /// Standard deviation of the additive noise.
    pub sigma_n: f64,
    pub seed: u64,
    pub init: InitMode,
    pub mask: MaskMode,
    /// ALS sweep budget.
    pub sweeps: usize,
    #[serde(default)]
    pub field: FieldKind,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Absolute ALS stopping threshold; `None` means `1e-10 · ‖T_Δ‖`.
    #[serde(default)]
    pub eps: Option<f64>,
}

impl TrialSpec {
    pub fn new(dims: &[usize], r: usize, sigma_s: f64, sigma_n: f64, seed: u64) -> Self {
        TrialSpec {
            dims: dims.to_vec(),
            r,
            sigma_s,
            sigma_n,
            seed,
            init: InitMode::Blostr,
            mask: MaskMode::Full,
            sweeps: 10,
            field: FieldKind::Real,
            restarts: DEFAULT_RESTARTS,
            eps: None,
        }
    }

    pub fn with_init(&self, init: InitMode) -> Self {
        TrialSpec {
            init,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrialSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn dims_label(&self) -> String {
        dims_label(&self.dims)
    }

    fn robust_config(&self) -> RobustConfig {
        RobustConfig {
            restarts: self.restarts,
            eps: self.eps,
            t_max: self.sweeps,
            init: self.init.into(),
            seed: stream(self.seed, Role::Algorithm).next_u64(),
            ..RobustConfig::default()
        }
    }
}

pub fn dims_label(dims: &[usize]) -> String {
    dims.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub truth: TrDecomposition,
    pub clean: ComplexDenseTensor,
    pub noisy: ComplexDenseTensor,
    /// Distribution of the added noise; `None` when `σ_n = 0`.
    pub noise_field: Option<Field>,
}

impl Instance {
    /// Hash of the bit patterns of the noisy tensor.
    pub fn noisy_hash(&self) -> u64 {
        tensor_hash(&self.noisy)
    }
}

pub fn tensor_hash(t: &ComplexDenseTensor) -> u64 {
    let mut h = DefaultHasher::new();
    t.dims().hash(&mut h);
    for z in t.as_slice() {
        z.re.to_bits().hash(&mut h);
        z.im.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Random cores, their dense reconstruction and a noisy copy.
pub fn generate_instance(spec: &TrialSpec) -> Result<Instance, Error> {
    let truth = random_tr(
        &mut stream(spec.seed, Role::Cores),
        &spec.dims,
        spec.r,
        spec.sigma_s,
        spec.field.into(),
    )?;
    let clean = tr_reconstruct(&truth, DEFAULT_MEMORY_BOUND)?;
    let mut noisy = clean.clone();
    let noise_field = if spec.sigma_n > 0.0 {
        Some(add_noise(
            &mut stream(spec.seed, Role::Noise),
            &mut noisy,
            spec.sigma_n,
        ))
    } else {
        None
    };
    Ok(Instance {
        truth,
        clean,
        noisy,
        noise_field,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub spec: TrialSpec,
    /// Masked residual `‖P_Δ(T − R)‖` at iteration 0 (the initialization) and after each sweep.
    pub masked_residual: Vec<f64>,
    /// `‖T_clean − R‖ / ‖T_clean‖` at the same iterations.
    pub full_rel_error: Vec<f64>,
    /// Elapsed time since the start of the trial at each iteration.
    pub wallclock_ms: Vec<f64>,
    /// Smallest relative cluster gap of the two probes (spectral init only).
    pub probe_gaps: Vec<f64>,
    pub observed: usize,
    pub noisy_hash: u64,
    /// Largest increase of the masked residual between sweeps, relative to `‖T_Δ‖`.
    pub max_objective_increase: f64,
    pub error: Option<String>,
}

impl TrialResult {
    pub fn iterations(&self) -> usize {
        self.masked_residual.len().saturating_sub(1)
    }

    /// Relative error after `iter` sweeps, or the last one if the run stopped early.
    pub fn error_at(&self, iter: usize) -> Option<f64> {
        self.full_rel_error
            .get(iter)
            .or_else(|| self.full_rel_error.last())
            .copied()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.full_rel_error.last().copied()
    }

    pub fn objective_monotone(&self, slack: f64) -> bool {
        self.max_objective_increase <= slack
    }

    fn failed(spec: &TrialSpec, hash: u64, e: impl ToString) -> Self {
        TrialResult {
            spec: spec.clone(),
            masked_residual: Vec::new(),
            full_rel_error: Vec::new(),
            wallclock_ms: Vec::new(),
            probe_gaps: Vec::new(),
            observed: 0,
            noisy_hash: hash,
            max_objective_increase: 0.0,
            error: Some(e.to_string()),
        }
    }
}

/// The mask of a trial and, for Δ, the probes it was built from.
pub fn trial_mask(spec: &TrialSpec) -> Result<(SampleMask, Option<ProbeConfig>), Error> {
    match spec.mask {
        MaskMode::Full => Ok((SampleMask::full(&spec.dims, 1)?, None)),
        MaskMode::Delta => {
            let p = ProbeConfig::draw(&spec.dims, spec.r, &mut stream(spec.seed, Role::Mask))?;
            Ok((build_sample_mask(&spec.dims, spec.r, &p)?, Some(p)))
        }
    }
}

/// Initialization plus up to `spec.sweeps` masked ALS sweeps on `inst.noisy`.
pub fn run_trial(spec: &TrialSpec, inst: &Instance) -> TrialResult {
    let hash = inst.noisy_hash();
    match run_trial_inner(spec, inst, hash) {
        Ok(r) => r,
        Err(e) => TrialResult::failed(spec, hash, e),
    }
}

fn run_trial_inner(spec: &TrialSpec, inst: &Instance, hash: u64) -> Result<TrialResult, Error> {
    let start = Instant::now();
    let (mask, probes) = trial_mask(spec)?;
    let obs = Observations::from_mask(&inst.noisy, &mask)?;
    let cfg = spec.robust_config();
    let eps = cfg.eps.unwrap_or(DEFAULT_REL_EPS * obs.norm());
    let mut probe_gaps = Vec::new();
    let init = match spec.init {
        InitMode::Blostr => {
            let (dec, rep) = match spec.mask {
                MaskMode::Full => robust_init(&inst.noisy, spec.r, None, &cfg)?,
                MaskMode::Delta => {
                    let view = MaskedTensorView::new(&inst.noisy, mask.clone())?;
                    robust_init(&view, spec.r, probes.as_ref(), &cfg)?
                }
            };
            probe_gaps = rep.spectra.iter().map(|s| s.min_gap).collect();
            dec
        }
        InitMode::Random => random_init(&spec.dims, spec.r, &obs, cfg.seed)?,
    };
    let mut state = AlsState::new(init, &obs);
    let ms = |s: &Instant| s.elapsed().as_secs_f64() * 1e3;
    let mut full = vec![relative_error(&state.cores, &inst.clean)?];
    let mut clock = vec![ms(&start)];
    while state.iteration < spec.sweeps && state.history.last().is_some_and(|&h| h >= eps) {
        masked_als_sweep(&mut state, &obs, cfg.tol.pinv_rel_tol)?;
        full.push(relative_error(&state.cores, &inst.clean)?);
        clock.push(ms(&start));
    }
    let scale = obs.norm().max(f64::MIN_POSITIVE);
    let max_objective_increase = state
        .history
        .windows(2)
        .map(|w| (w[1] - w[0]) / scale)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    Ok(TrialResult {
        spec: spec.clone(),
        masked_residual: state.history,
        full_rel_error: full,
        wallclock_ms: clock,
        probe_gaps,
        observed: obs.len(),
        noisy_hash: hash,
        max_objective_increase,
        error: None,
    })
}

/// Both initializations on the same noisy tensor, for each seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTrial {
    pub blostr: TrialResult,
    pub random: TrialResult,
}

impl PairedTrial {
    pub fn shares_instance(&self) -> bool {
        self.blostr.noisy_hash == self.random.noisy_hash
    }

    /// True when the spectral initialization is strictly better after `iter` sweeps.
    pub fn blostr_wins_at(&self, iter: usize) -> bool {
        match (self.blostr.error_at(iter), self.random.error_at(iter)) {
            (Some(b), Some(r)) => b < r,
            _ => false,
        }
    }
}

/// Paired trials over `seeds`; `base` supplies everything but seed and init.
pub fn run_comparison(base: &TrialSpec, seeds: &[u64]) -> Vec<PairedTrial> {
    seeds
        .par_iter()
        .map(|&seed| {
            let spec = base.with_seed(seed);
            match generate_instance(&spec) {
                Ok(inst) => PairedTrial {
                    blostr: run_trial(&spec.with_init(InitMode::Blostr), &inst),
                    random: run_trial(&spec.with_init(InitMode::Random), &inst),
                },
                Err(e) => PairedTrial {
                    blostr: TrialResult::failed(&spec.with_init(InitMode::Blostr), 0, &e),
                    random: TrialResult::failed(&spec.with_init(InitMode::Random), 0, &e),
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub pairs: usize,
    pub iteration: usize,
    pub wins: usize,
    pub failed_trials: usize,
    pub unpaired: usize,
    /// Trials whose masked residual rose by more than the slack between sweeps.
    pub monotonicity_violations: usize,
}

pub fn summarize_comparison(
    pairs: &[PairedTrial],
    iteration: usize,
    slack: f64,
) -> ComparisonSummary {
    let trials = pairs.iter().flat_map(|p| [&p.blostr, &p.random]);
    ComparisonSummary {
        pairs: pairs.len(),
        iteration,
        wins: pairs.iter().filter(|p| p.blostr_wins_at(iteration)).count(),
        failed_trials: trials.clone().filter(|t| t.error.is_some()).count(),
        unpaired: pairs.iter().filter(|p| !p.shares_instance()).count(),
        monotonicity_violations: trials.filter(|t| !t.objective_monotone(slack)).count(),
    }
}

pub const TRIAL_CSV_HEADER: [&str; 11] = [
    "dims",
    "r",
    "sigma_s",
    "sigma_n",
    "mask",
    "seed",
    "init",
    "iter",
    "masked_residual",
    "full_rel_error",
    "wallclock_ms",
];

/// One row per iteration, sorted by (spec, seed, init, iter).
pub fn write_trials_csv<W: Write>(w: W, trials: &[&TrialResult]) -> csv::Result<()> {
    let mut sorted: Vec<&&TrialResult> = trials.iter().collect();
    sorted.sort_by(|a, b| {
        (
            &a.spec.dims,
            a.spec.r,
            a.spec.mask,
            a.spec.seed,
            a.spec.init,
        )
            .cmp(&(
                &b.spec.dims,
                b.spec.r,
                b.spec.mask,
                b.spec.seed,
                b.spec.init,
            ))
            .then(a.spec.sigma_n.total_cmp(&b.spec.sigma_n))
    });
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRIAL_CSV_HEADER)?;
    for t in sorted {
        for it in 0..t.masked_residual.len() {
            out.write_record([
                t.spec.dims_label(),
                t.spec.r.to_string(),
                t.spec.sigma_s.to_string(),
                t.spec.sigma_n.to_string(),
                t.spec.mask.name().to_string(),
                t.spec.seed.to_string(),
                t.spec.init.name().to_string(),
                it.to_string(),
                format!("{:e}", t.masked_residual[it]),
                format!("{:e}", t.full_rel_error[it]),
                format!("{:.3}", t.wallclock_ms[it]),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub dims: Vec<usize>,
    pub r: usize,
    /// Relative error printed in the reference table.
    pub reference_rel_error: f64,
}

/// The six rows of the exact-recovery table. The `20^5, r = 4` row is the
/// slowest and is included either way; `full_scale` is accepted for symmetry
/// with the other suites.
pub fn table1_rows() -> Vec<Table1Row> {
    let row = |dims: &[usize], r, e| Table1Row {
        dims: dims.to_vec(),
        r,
        reference_rel_error: e,
    };
    vec![
        row(&[12, 5, 6, 7, 10], 3, 5.73e-12),
        row(&[10; 5], 2, 5.70e-13),
        row(&[20; 5], 2, 6.12e-14),
        row(&[20; 5], 4, 5.72e-12),
        row(&[10; 6], 2, 3.83e-13),
        row(&[10; 7], 2, 4.81e-12),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Exact,
    Refined,
}

pub fn route_for(dims: &[usize], r: usize) -> Route {
    if dims.iter().all(|&n| n >= r * r) {
        Route::Exact
    } else {
        Route::Refined
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Result {
    pub row: Table1Row,
    pub route: Route,
    pub seeds: Vec<u64>,
    pub abs_errors: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub failures: Vec<(u64, String)>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NAN, f64::max)
}

impl Table1Result {
    /// Median over seeds; failed seeds count as infinite error.
    pub fn median_rel(&self) -> f64 {
        let mut v = self.rel_errors.clone();
        v.extend(self.failures.iter().map(|_| f64::INFINITY));
        median(&v)
    }

    pub fn median_abs(&self) -> f64 {
        let mut v = self.abs_errors.clone();
        v.extend(self.failures.iter().map(|_| f64::INFINITY));
        median(&v)
    }

    pub fn max_rel(&self) -> f64 {
        if self.failures.is_empty() {
            max_of(&self.rel_errors)
        } else {
            f64::INFINITY
        }
    }

    pub fn max_abs(&self) -> f64 {
        if self.failures.is_empty() {
            max_of(&self.abs_errors)
        } else {
            f64::INFINITY
        }
    }
}

/// Exact recovery of one seeded instance, read lazily from its cores.
/// Returns `(‖T − T̂‖_F, ‖T − T̂‖_F / ‖T‖_F)`.
pub fn exact_trial(dims: &[usize], r: usize, sigma_s: f64, seed: u64) -> Result<(f64, f64), Error> {
    let truth = random_tr(
        &mut stream(seed, Role::Cores),
        dims,
        r,
        sigma_s,
        Field::Real,
    )?;
    let src = TrSource::new(&truth);
    let cfg = ExactConfig {
        seed: stream(seed, Role::Algorithm).next_u64(),
        ..ExactConfig::default()
    };
    let est = match route_for(dims, r) {
        Route::Exact => blostr_decompose(&src, r, None, &cfg)?,
        Route::Refined => refined_decompose(&src, r, &cfg)?,
    };
    let (diff, norm) = tr_distance(&est, &truth)?;
    Ok((diff, diff / norm))
}

pub fn run_table1(rows: &[Table1Row], seeds: &[u64]) -> Vec<Table1Result> {
    rows.iter()
        .map(|row| {
            let out: Vec<Result<(f64, f64), Error>> = seeds
                .par_iter()
                .map(|&s| exact_trial(&row.dims, row.r, 10.0, s))
                .collect();
            let mut res = Table1Result {
                row: row.clone(),
                route: route_for(&row.dims, row.r),
                seeds: seeds.to_vec(),
                abs_errors: Vec::new(),
                rel_errors: Vec::new(),
                failures: Vec::new(),
            };
            for (&s, o) in seeds.iter().zip(out) {
                match o {
                    Ok((a, r)) => {
                        res.abs_errors.push(a);
                        res.rel_errors.push(r);
                    }
                    Err(e) => res.failures.push((s, e.to_string())),
                }
            }
            res
        })
        .collect()
}

pub fn write_table1_csv<W: Write>(w: W, results: &[Table1Result]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "dims",
        "r",
        "route",
        "seeds",
        "failures",
        "median_abs_error",
        "median_rel_error",
        "max_abs_error",
        "max_rel_error",
        "reference_rel_error",
    ])?;
    for t in results {
        out.write_record([
            dims_label(&t.row.dims),
            t.row.r.to_string(),
            format!("{:?}", t.route).to_lowercase(),
            t.seeds.len().to_string(),
            t.failures.len().to_string(),
            format!("{:e}", t.median_abs()),
            format!("{:e}", t.median_rel()),
            format!("{:e}", t.max_abs()),
            format!("{:e}", t.max_rel()),
            format!("{:e}", t.row.reference_rel_error),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub sigma_n: f64,
    pub init: InitMode,
    pub trials: usize,
    pub successes: usize,
}

impl GridCell {
    pub fn fraction(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

/// A trial succeeds when its relative error to the clean tensor drops below
/// `threshold` within `base.sweeps` sweeps.
pub fn run_success_grid(
    base: &TrialSpec,
    sigmas: &[f64],
    threshold: f64,
    seeds: &[u64],
) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &sigma_n in sigmas {
        let spec = TrialSpec {
            sigma_n,
            ..base.clone()
        };
        let pairs = run_comparison(&spec, seeds);
        for init in [InitMode::Blostr, InitMode::Random] {
            let successes = pairs
                .iter()
                .map(|p| {
                    if init == InitMode::Blostr {
                        &p.blostr
                    } else {
                        &p.random
                    }
                })
                .filter(|t| t.full_rel_error.iter().any(|&e| e < threshold))
                .count();
            cells.push(GridCell {
                sigma_n,
                init,
                trials: pairs.len(),
                successes,
            });
        }
    }
    cells
}

/// True when, per init, the success fraction never rises by more than `slack`
/// as σ_n grows.
pub fn grid_nonincreasing(cells: &[GridCell], slack: f64) -> bool {
    [InitMode::Blostr, InitMode::Random].iter().all(|&init| {
        let mut f: Vec<&GridCell> = cells.iter().filter(|c| c.init == init).collect();
        f.sort_by(|a, b| a.sigma_n.total_cmp(&b.sigma_n));
        f.windows(2)
            .all(|w| w[1].fraction() <= w[0].fraction() + slack)
    })
}

pub fn write_grid_csv<W: Write>(
    mut w: W,
    cells: &[GridCell],
    metadata: &[(String, String)],
) -> std::io::Result<()> {
    for (k, v) in metadata {
        writeln!(w, "# {}={}", k, v)?;
    }
    let mut out = csv::Writer::from_writer(w);
    let mut write = || -> csv::Result<()> {
        out.write_record(["sigma_n", "init", "trials", "successes", "fraction"])?;
        for c in cells {
            out.write_record([
                c.sigma_n.to_string(),
                c.init.name().to_string(),
                c.trials.to_string(),
                c.successes.to_string(),
                c.fraction().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    };
    write().map_err(std::io::Error::other)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub j: usize,
    pub k: usize,
    /// Smallest relative cluster gap of each of the two probe products.
    pub spectral_gaps: [f64; 2],
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDiagnostics {
    pub mode: usize,
    /// Condition number of the stitching matrix N_k.
    pub condition: f64,
    pub scale: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsDemoReport {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
    pub noise: f64,
    pub pairs: Vec<PairDiagnostics>,
    pub links: Vec<LinkDiagnostics>,
    pub ratio_dispersion: f64,
    /// Traces of the marginals on consecutive triples; all equal `⟨ψ|ψ⟩`.
    pub marginal_traces: Vec<f64>,
    pub max_trace_deviation: f64,
    pub error: Option<String>,
}

/// Dispersion is measured on entries with `|ψ_i| ≥ 0.1 · rms`.
pub const DISPERSION_FLOOR: f64 = 0.1;
pub const DISPERSION_SAMPLES: usize = 4096;

pub fn mps_demo(dims: &[usize], r: usize, seed: u64, noise: f64) -> Result<MpsDemoReport, Error> {
    let psi = MpsState::random(&mut stream(seed, Role::Cores), dims, r)?;
    let d = dims.len();
    let traces = (0..d)
        .map(|k| simulate_marginal(&psi, [k, (k + 1) % d, (k + 2) % d]).map(|m| m.trace().re))
        .collect::<Result<Vec<_>, _>>()?;
    let norm = psi.norm_sqr();
    let max_trace_deviation = traces.iter().map(|t| (t - norm).abs()).fold(0.0, f64::max);
    let alg_seed = stream(seed, Role::Algorithm).next_u64();
    let cfg = if noise > 0.0 {
        MpsConfig {
            tol: ToleranceConfig::robust(),
            grouping: Grouping::KMeans {
                restarts: DEFAULT_RESTARTS,
                seed: alg_seed,
            },
            seed: alg_seed,
            ..MpsConfig::default()
        }
    } else {
        MpsConfig {
            seed: alg_seed,
            ..MpsConfig::default()
        }
    };
    let noisy = NoisyMarginals {
        psi: &psi,
        sigma: noise,
        seed: stream(seed, Role::Noise).next_u64(),
    };
    let mut report = MpsDemoReport {
        dims: dims.to_vec(),
        rank: r,
        seed,
        noise,
        pairs: Vec::new(),
        links: Vec::new(),
        ratio_dispersion: f64::INFINITY,
        marginal_traces: traces,
        max_trace_deviation,
        error: None,
    };
    let recovered = if noise > 0.0 {
        mps_recover(&noisy, r, &cfg)
    } else {
        mps_recover(&psi, r, &cfg)
    };
    match recovered {
        Ok((dec, rep)) => {
            report.pairs = rep
                .pairs
                .iter()
                .zip(rep.redraws.iter().chain(std::iter::repeat(&0)))
                .map(|(p, &redraws)| PairDiagnostics {
                    j: p.j,
                    k: p.k,
                    spectral_gaps: [p.spectra[0].min_gap, p.spectra[1].min_gap],
                    redraws,
                })
                .collect();
            report.links = rep
                .links
                .iter()
                .enumerate()
                .map(|(m, l)| LinkDiagnostics {
                    mode: m,
                    condition: 1.0 / l.inverse_condition,
                    scale: [l.scale.re, l.scale.im],
                })
                .collect();
            report.ratio_dispersion = ratio_dispersion(
                &dec,
                psi.cores(),
                DISPERSION_FLOOR,
                DENSE_STATE_LIMIT,
                DISPERSION_SAMPLES,
                seed,
            )?;
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    Ok(report)
}
