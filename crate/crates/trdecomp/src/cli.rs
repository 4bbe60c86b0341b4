//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a bench assertion failed, 2 invalid arguments,
//! 3 numerical failure after retries, 4 I/O or file-format error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trdecomp_core::error::Error as CoreError;
use trdecomp_core::exact::{
    blostr_decompose_with_report, build_sample_mask, build_symmetric_mask, contraction_plan,
    order2_decompose, refined_decompose_with_report, refined_sample_mask, ExactConfig, ProbeConfig,
    RefinedLayout, DEFAULT_ACCEPT_RESIDUAL, DEFAULT_MAX_ATTEMPTS,
};
use trdecomp_core::mask::SampleMask;
use trdecomp_core::matrix::ComplexMatrix;
use trdecomp_core::numerics::{self, ToleranceConfig};
use trdecomp_core::random::{random_tensor, Field};
use trdecomp_core::robust::{robust_decompose, RobustConfig, DEFAULT_RESTARTS, DEFAULT_T_MAX};
use trdecomp_core::source::{EntrySource, MaskedTensorView, RecordingSource};
use trdecomp_core::symmetric::{
    symmetric_decompose_with_report, symmetric_probes, SymmetricConfig,
};
use trdecomp_core::tensor::ComplexDenseTensor;
use trdecomp_core::tr::{tr_evaluate, tr_reconstruct, TrDecomposition, DEFAULT_MEMORY_BOUND};

use crate::format::{self, CoresFile, CoresJson, FormatError, TensorJson};
use crate::harness::{
    self, generate_instance, grid_nonincreasing, run_comparison, run_success_grid, run_table1,
    stream, summarize_comparison, table1_rows, write_grid_csv, write_table1_csv, write_trials_csv,
    FieldKind, InitMode, MaskMode, Role, TrialSpec,
};

pub const GIT_DESCRIBE: &str = env!("TRDECOMP_GIT_DESCRIBE");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Numerical(CoreError),
    #[error("{0}")]
    Io(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Assertion(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(_)
            | CoreError::ShapeMismatch(_)
            | CoreError::IndexOutOfRange { .. }
            | CoreError::DimensionTooSmall { .. }
            | CoreError::MemoryBound { .. }
            | CoreError::NoValidStart => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Core(c) => c.into(),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "trdecomp", version = GIT_DESCRIBE, about = "Finite-step tensor-ring decomposition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Write a random TR instance: truth cores, clean and noisy tensors, spec JSON.
    Generate(GenerateArgs),
    /// Decompose a tensor file.
    Decompose(DecomposeArgs),
    /// Recover a random matrix product state from its 3-site marginals.
    MpsDemo(MpsDemoArgs),
    /// Run an experiment suite and write CSV.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Convert between binary containers and their JSON mirrors (by extension).
    Convert(ConvertArgs),
}

fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    let dims: Vec<usize> = s
        .split([',', 'x'])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad dimension {:?}: {}", p, e))
        })
        .collect::<Result<_, _>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err("dimensions must be positive".into());
    }
    Ok(dims)
}

/// `a:step:b` (inclusive) or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |p: &str| {
        p.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad number {:?}: {}", p, e))
    };
    let parts: Vec<&str> = s.split(':').collect();
    let v: Vec<f64> = match parts.as_slice() {
        [a, step, b] => {
            let (a, step, b) = (num(a)?, num(step)?, num(b)?);
            if !(step > 0.0) || b < a {
                return Err(format!("grid {:?} needs step > 0 and end >= start", s));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| a + step * i as f64).collect()
        }
        [_] => s.split(',').map(num).collect::<Result<_, _>>()?,
        _ => return Err(format!("grid {:?} is neither a:step:b nor a list", s)),
    };
    if v.iter().any(|x: &f64| !x.is_finite() || *x < 0.0) {
        return Err("noise levels must be finite and nonnegative".into());
    }
    Ok(v)
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_dims)]
    pub dims: ::std::vec::Vec<usize>,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of core entries (the exact-recovery table uses 10).
    #[arg(long, default_value_t = 10.0)]
    pub sigma_s: f64,
    /// Standard deviation of additive noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma_n: f64,
    #[arg(long, value_enum, default_value_t = FieldKind::Real)]
    pub field: FieldKind,
    /// One shared core on every mode; the tensor is flagged cyclically symmetric.
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// File name stem of the outputs.
    #[arg(long, default_value = "instance")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Refined,
    Symmetric,
    Robust,
    Auto,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    /// Input tensor (.trt or .json).
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    /// `auto` picks order-2, symmetric (flagged input), exact (all n_k >= r^2) or refined.
    #[arg(long, value_enum, default_value_t = Mode::Auto)]
    pub mode: Mode,
    /// Output cores (.trc or .json).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Probe indices (1-based JSON).
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Write the probes of the successful attempt (1-based JSON).
    #[arg(long)]
    pub save_probes: Option<PathBuf>,
    /// `delta` restricts every read to the sample set of the probes.
    #[arg(long, value_enum, default_value_t = MaskMode::Full)]
    pub mask: MaskMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    pub max_attempts: usize,
    /// Relative singular-value cutoff of pseudoinverses (default 1e-10, robust 1e-8).
    #[arg(long)]
    pub pinv_tol: Option<f64>,
    /// Relative spread allowed inside an eigenvalue cluster.
    #[arg(long)]
    pub cluster_tol: Option<f64>,
    /// Probe-slice residual above which probes are re-drawn.
    #[arg(long, default_value_t = DEFAULT_ACCEPT_RESIDUAL)]
    pub accept_residual: f64,
    /// Robust: absolute ALS stopping threshold (default 1e-10 · ‖T_Δ‖).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Robust: maximum number of ALS sweeps.
    #[arg(long, default_value_t = DEFAULT_T_MAX)]
    pub t_max: usize,
    /// Robust: k-means restarts for eigenvalue grouping.
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// Robust: initialization.
    #[arg(long, value_enum, default_value_t = InitMode::Blostr)]
    pub init: InitMode,
    /// Robust: per-iteration CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MpsDemoArgs {
    #[arg(long, value_parser = parse_dims)]
    pub dims: ::std::vec::Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of Hermitian Gaussian noise on marginal entries.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum BenchCommand {
    /// Exact recovery on the six table configurations.
    Table1(Table1Args),
    /// Paired spectral-vs-random initialization trials.
    Compare(CompareArgs),
    /// Success fraction over a grid of noise levels.
    SuccessGrid(GridArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Table1Args {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted median relative error.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct SuiteArgs {
    /// One suite of this shape; default 20³ and 12⁴ (30³ and 30⁴ with --full-scale).
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<::std::vec::Vec<usize>>,
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    #[arg(long, default_value_t = 10.0)]
    pub sigma_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: u64,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = MaskMode::Full)]
    pub mask: MaskMode,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

impl SuiteArgs {
    fn suites(&self) -> Vec<Vec<usize>> {
        match (&self.dims, self.full_scale) {
            (Some(d), _) => vec![d.clone()],
            (None, false) => vec![vec![20; 3], vec![12; 4]],
            (None, true) => vec![vec![30; 3], vec![30; 4]],
        }
    }

    fn base(&self, dims: &[usize], sigma_n: f64) -> TrialSpec {
        TrialSpec {
            mask: self.mask,
            sweeps: self.iters,
            restarts: self.restarts,
            eps: self.eps,
            ..TrialSpec::new(dims, self.rank, self.sigma_s, sigma_n, self.seed)
        }
    }

    fn seeds(&self) -> Vec<u64> {
        (0..self.trials).map(|i| self.seed + i).collect()
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_n: f64,
    /// Sweep count at which spectral init must beat random init.
    #[arg(long, default_value_t = 3)]
    pub at_iter: usize,
    /// Required fraction of wins.
    #[arg(long, default_value_t = 0.8)]
    pub min_win_rate: f64,
    /// Summary JSON path.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GridArgs {
    #[command(flatten)]
    pub suite: SuiteArgs,
    /// Noise levels, `a:step:b` or a comma list.
    #[arg(long, value_parser = parse_grid, default_value = "0:0.5:5")]
    pub sigma_n: ::std::vec::Vec<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub threshold: f64,
    /// Allowed rise of the success fraction between neighbouring noise levels.
    #[arg(long, default_value_t = 0.1)]
    pub slack: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvertArgs {
    pub input: PathBuf,
    pub output: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Decompose(a) => cmd_decompose(&a).map(|_| ()),
        Command::MpsDemo(a) => cmd_mps_demo(&a),
        Command::Bench(b) => cmd_bench(&b),
        Command::Convert(a) => cmd_convert(&a),
    }
}

/// Parses `std::env::args`, runs, prints errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes)?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GenerateSpec<'a> {
    git_describe: &'a str,
    trial: TrialSpec,
    symmetric: bool,
    noise_field: Option<&'static str>,
    files: [String; 3],
}

pub fn generated_paths(out_dir: &Path, name: &str) -> [PathBuf; 4] {
    [
        out_dir.join(format!("{}.truth.trc", name)),
        out_dir.join(format!("{}.clean.trt", name)),
        out_dir.join(format!("{}.noisy.trt", name)),
        out_dir.join(format!("{}.spec.json", name)),
    ]
}

fn field_name(f: Field) -> &'static str {
    match f {
        Field::Real => "real",
        Field::Complex => "complex",
    }
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    if a.rank == 0 {
        return Err(CliError::Validation("--rank must be positive".into()));
    }
    if !(a.sigma_s >= 0.0 && a.sigma_n >= 0.0) {
        return Err(CliError::Validation(
            "--sigma-s and --sigma-n must be nonnegative".into(),
        ));
    }
    if a.symmetric && a.dims.iter().any(|&n| n != a.dims[0]) {
        return Err(CliError::Validation(
            "--symmetric needs equal dimensions".into(),
        ));
    }
    let mut spec = TrialSpec::new(&a.dims, a.rank, a.sigma_s, a.sigma_n, a.seed);
    spec.field = a.field;
    let (truth, clean, noisy, noise_field) = if a.symmetric {
        let core = random_tensor(
            &mut stream(a.seed, Role::Cores),
            &[a.dims[0], a.rank, a.rank],
            a.sigma_s,
            a.field.into(),
        )?;
        let truth = TrDecomposition::new(vec![core; a.dims.len()])?;
        let clean = tr_reconstruct(&truth, DEFAULT_MEMORY_BOUND)?;
        let mut noisy = clean.clone();
        let nf = (a.sigma_n > 0.0).then(|| {
            trdecomp_core::random::add_noise(
                &mut stream(a.seed, Role::Noise),
                &mut noisy,
                a.sigma_n,
            )
        });
        (truth, clean, noisy, nf)
    } else {
        let inst = generate_instance(&spec)?;
        (inst.truth, inst.clean, inst.noisy, inst.noise_field)
    };
    fs::create_dir_all(&a.out_dir)?;
    let paths = generated_paths(&a.out_dir, &a.name);
    let cores = if a.symmetric {
        CoresFile::symmetric(truth.core(0).clone(), a.dims.len())?
    } else {
        CoresFile::new(truth)
    };
    format::write_cores(&paths[0], &cores)?;
    format::write_tensor(&paths[1], &clean, a.symmetric)?;
    format::write_tensor(&paths[2], &noisy, a.symmetric)?;
    let file_name = |p: &PathBuf| p.file_name().unwrap().to_string_lossy().into_owned();
    let meta = GenerateSpec {
        git_describe: GIT_DESCRIBE,
        trial: spec,
        symmetric: a.symmetric,
        noise_field: noise_field.map(field_name),
        files: [
            file_name(&paths[0]),
            file_name(&paths[1]),
            file_name(&paths[2]),
        ],
    };
    fs::write(&paths[3], serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Which algorithm ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Order2,
    /// r = 1 by successive rank-one SVDs; a convenience outside the main algorithms.
    RankOne,
    Exact,
    Refined,
    Symmetric,
    Robust,
}

pub fn resolve_route(mode: Mode, dims: &[usize], r: usize, symmetric: bool) -> CliResult<Route> {
    let d = dims.len();
    if d < 2 {
        return Err(CliError::Validation(format!(
            "order {} is too small; need at least 2",
            d
        )));
    }
    if r == 0 {
        return Err(CliError::Validation("--rank must be positive".into()));
    }
    let route = match mode {
        Mode::Robust => Route::Robust,
        _ if d == 2 => Route::Order2,
        _ if r == 1 => Route::RankOne,
        Mode::Exact => Route::Exact,
        Mode::Refined => Route::Refined,
        Mode::Symmetric => Route::Symmetric,
        Mode::Auto if symmetric => Route::Symmetric,
        Mode::Auto if dims.iter().all(|&n| n >= r * r) => Route::Exact,
        Mode::Auto => Route::Refined,
    };
    if route == Route::Robust && (d < 3 || r < 2) {
        return Err(CliError::Validation(
            "robust mode needs order >= 3 and rank >= 2".into(),
        ));
    }
    Ok(route)
}

/// Rank-one TR (a product of vectors) by successive leading singular pairs.
pub fn rank_one_decompose(t: &ComplexDenseTensor) -> Result<TrDecomposition, CoreError> {
    let dims = t.dims().to_vec();
    let mut rest = t.as_slice().to_vec();
    let mut cores = Vec::with_capacity(dims.len());
    for (k, &n) in dims.iter().enumerate() {
        if k + 1 == dims.len() {
            cores.push(ComplexDenseTensor::from_data(&[n, 1, 1], rest)?);
            break;
        }
        let cols = rest.len() / n;
        let m = ComplexMatrix::from_col_major(n, cols, rest)?;
        let s = numerics::svd_thin(&m)?;
        let sigma = s.s.first().copied().unwrap_or(0.0);
        cores.push(ComplexDenseTensor::from_data(
            &[n, 1, 1],
            s.u.column(0).to_vec(),
        )?);
        rest = s.v.column(0).iter().map(|z| z.conj() * sigma).collect();
    }
    TrDecomposition::new(cores)
}

#[derive(Debug, Serialize)]
pub struct DecomposeReport {
    pub git_describe: String,
    pub route: Route,
    pub input: PathBuf,
    pub dims: Vec<usize>,
    pub rank: usize,
    /// `‖T − T̂‖ / ‖T‖` over `relative_error_scope`.
    pub relative_error: f64,
    /// `full` or `delta`.
    pub relative_error_scope: &'static str,
    pub entries_read: usize,
    pub mask_entries: Option<usize>,
    pub probes: Option<format::ProbeFile>,
    pub diagnostics: serde_json::Value,
    pub timings_ms: Timings,
    pub config: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct Timings {
    pub read: f64,
    pub decompose: f64,
    pub total: f64,
}

fn rel_error_on(
    dec: &TrDecomposition,
    t: &ComplexDenseTensor,
    mask: Option<&SampleMask>,
) -> CliResult<f64> {
    let (mut diff, mut norm) = (0.0, 0.0);
    match mask {
        Some(m) => {
            for idx in m.indices() {
                let v = t.at(&idx);
                diff += (tr_evaluate(dec, &idx)? - v).norm_sqr();
                norm += v.norm_sqr();
            }
        }
        None => {
            let (d, n) = trdecomp_core::tr::tr_distance_dense(dec, t)?;
            return Ok(if n == 0.0 { d } else { d / n });
        }
    }
    Ok(if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    })
}

fn tolerances(a: &DecomposeArgs, robust: bool) -> CliResult<ToleranceConfig> {
    let mut tol = if robust {
        ToleranceConfig::robust()
    } else {
        ToleranceConfig::exact()
    };
    if let Some(p) = a.pinv_tol {
        tol.pinv_rel_tol = p;
    }
    if let Some(c) = a.cluster_tol {
        tol.cluster_rel_tol = c;
    }
    tol.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(tol)
}

pub fn cmd_decompose(a: &DecomposeArgs) -> CliResult<DecomposeReport> {
    let start = Instant::now();
    let ms = |s: &Instant| s.elapsed().as_secs_f64() * 1e3;
    let input = format::read_tensor(&a.input)?;
    let read_ms = ms(&start);
    let t = &input.tensor;
    let dims = t.dims().to_vec();
    let r = a.rank;
    let route = resolve_route(a.mode, &dims, r, input.symmetric)?;
    if a.csv.is_some() && route != Route::Robust {
        return Err(CliError::Validation(
            "--csv is only produced by --mode robust".into(),
        ));
    }
    if a.mask == MaskMode::Delta && matches!(route, Route::Order2 | Route::RankOne) {
        return Err(CliError::Validation(
            "--mask delta needs order >= 3 and rank >= 2".into(),
        ));
    }
    if !(a.accept_residual > 0.0) {
        return Err(CliError::Validation(
            "--accept-residual must be positive".into(),
        ));
    }
    let given = a.probes.as_deref().map(format::read_probes).transpose()?;
    let tol = tolerances(a, route == Route::Robust)?;
    let exact = ExactConfig {
        tol,
        max_attempts: a.max_attempts,
        seed: a.seed,
        accept_residual: a.accept_residual,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    // Probes (in the coordinates the route works in) and the mask they induce.
    let (probes, mask) = match (route, a.mask) {
        (_, MaskMode::Full) => (given, None),
        (Route::Exact | Route::Robust, MaskMode::Delta) => {
            let p = match given {
                Some(p) => p,
                None => ProbeConfig::draw(&dims, r, &mut rng)?,
            };
            let m = build_sample_mask(&dims, r, &p)?;
            (Some(p), Some(m))
        }
        (Route::Symmetric, MaskMode::Delta) => {
            let p = match given {
                Some(p) => p,
                None => symmetric_probes(&dims, r, a.seed)?,
            };
            let m = build_symmetric_mask(&dims, r, &p)?;
            (Some(p), Some(m))
        }
        (Route::Refined, MaskMode::Delta) => {
            let p = match given {
                Some(p) => p,
                None => {
                    let layout = RefinedLayout::new(&dims, &contraction_plan(&dims, r)?);
                    ProbeConfig::draw(&layout.contracted_dims, r, &mut rng)?
                }
            };
            let m = refined_sample_mask(&dims, r, &p)?;
            (Some(p), Some(m))
        }
        (Route::Order2 | Route::RankOne, MaskMode::Delta) => unreachable!("rejected above"),
    };
    let src: Box<dyn EntrySource + '_> = match &mask {
        Some(m) => Box::new(MaskedTensorView::new(t, m.clone())?),
        None => Box::new(t),
    };
    let rec = RecordingSource::new(src.as_ref());
    let t0 = Instant::now();
    let mut symmetric_out = false;
    let mut robust_trial = None;
    let (dec, used_probes, diagnostics): (TrDecomposition, Option<ProbeConfig>, serde_json::Value) =
        match route {
            Route::Order2 => (order2_decompose(t, r)?, None, serde_json::Value::Null),
            Route::RankOne => (rank_one_decompose(t)?, None, serde_json::Value::Null),
            Route::Exact => {
                let (dec, rep) = blostr_decompose_with_report(&rec, r, probes.as_ref(), &exact)?;
                let p = rep.probes.clone();
                (dec, Some(p), serde_json::to_value(&rep)?)
            }
            Route::Refined => {
                let (dec, rep) = refined_decompose_with_report(&rec, r, probes.as_ref(), &exact)?;
                let diag = serde_json::json!({
                    "contracted_dims": rep.contracted_dims,
                    "blostr": rep.inner,
                });
                (dec, Some(rep.inner.probes.clone()), diag)
            }
            Route::Symmetric => {
                let cfg = SymmetricConfig {
                    exact,
                    verify_seed: a.seed,
                    ..SymmetricConfig::default()
                };
                let (core, rep) = symmetric_decompose_with_report(&rec, r, probes.as_ref(), &cfg)?;
                symmetric_out = true;
                let diag = serde_json::json!({
                    "anchor": rep.anchor,
                    "candidate_residuals": rep.residuals,
                    "k_choices": core.candidate.k_choices,
                    "residual": core.residual,
                    "blostr": rep.blostr,
                });
                (
                    core.to_tr(dims.len())?,
                    Some(rep.blostr.probes.clone()),
                    diag,
                )
            }
            Route::Robust => {
                let m = match &mask {
                    Some(m) => m.clone(),
                    None => SampleMask::full(&dims, 1)?,
                };
                let cfg = RobustConfig {
                    tol,
                    max_attempts: a.max_attempts,
                    accept_residual: a.accept_residual,
                    restarts: a.restarts,
                    eps: a.eps,
                    t_max: a.t_max,
                    init: a.init.into(),
                    seed: a.seed,
                    ..RobustConfig::default()
                };
                let out = robust_decompose(&rec, &m, r, probes.as_ref(), &cfg)?;
                let p = out.init_report.as_ref().map(|rep| rep.probes.clone());
                let diag = serde_json::json!({
                    "eps": out.eps,
                    "iterations": out.state.iteration,
                    "masked_residual": out.state.history,
                    "init": out.init_report,
                });
                robust_trial = Some(out.state.history.clone());
                (out.state.cores, p, diag)
            }
        };
    let decompose_ms = ms(&t0);
    let entries_read = rec.distinct_count();
    drop(rec);
    if let (Some(path), Some(history)) = (&a.csv, &robust_trial) {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seed", "init", "iter", "masked_residual"])?;
        for (i, h) in history.iter().enumerate() {
            w.write_record([
                a.seed.to_string(),
                a.init.name().to_string(),
                i.to_string(),
                format!("{:e}", h),
            ])?;
        }
        w.flush()?;
    }
    if let Some(path) = &a.out {
        let f = if symmetric_out {
            CoresFile::symmetric(dec.core(0).clone(), dims.len())?
        } else {
            CoresFile::new(dec.clone())
        };
        format::write_cores(path, &f)?;
    }
    if let (Some(path), Some(p)) = (&a.save_probes, &used_probes) {
        format::write_probes(path, p)?;
    }
    let relative_error = rel_error_on(&dec, t, mask.as_ref())?;
    let report = DecomposeReport {
        git_describe: GIT_DESCRIBE.to_string(),
        route,
        input: a.input.clone(),
        dims,
        rank: r,
        relative_error,
        relative_error_scope: if mask.is_some() { "delta" } else { "full" },
        entries_read,
        mask_entries: mask.as_ref().map(|m| m.len()),
        probes: used_probes.as_ref().map(format::ProbeFile::from_config),
        diagnostics,
        timings_ms: Timings {
            read: read_ms,
            decompose: decompose_ms,
            total: ms(&start),
        },
        config: serde_json::to_value(a)?,
    };
    write_output(a.report.as_deref(), &serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

fn cmd_mps_demo(a: &MpsDemoArgs) -> CliResult<()> {
    if a.dims.len() < 3 {
        return Err(CliError::Validation(
            "mps-demo needs at least 3 sites".into(),
        ));
    }
    if !(a.noise >= 0.0) {
        return Err(CliError::Validation("--noise must be nonnegative".into()));
    }
    let report = harness::mps_demo(&a.dims, a.rank, a.seed, a.noise)?;
    let json = serde_json::json!({
        "git_describe": GIT_DESCRIBE,
        "config": a,
        "report": &report,
    });
    write_output(a.out.as_deref(), &serde_json::to_vec_pretty(&json)?)?;
    match report.error {
        Some(e) => Err(CliError::Numerical(CoreError::NoConvergence(e))),
        None => Ok(()),
    }
}

fn open_out(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout()),
    })
}

fn cmd_bench(b: &BenchCommand) -> CliResult<()> {
    match b {
        BenchCommand::Table1(a) => {
            let seeds: Vec<u64> = (0..a.seeds).map(|i| a.seed + i).collect();
            let results = run_table1(&table1_rows(), &seeds);
            write_table1_csv(open_out(a.out.as_deref())?, &results)?;
            let bad: Vec<String> = results
                .iter()
                .filter(|r| !(r.median_rel() <= a.tol))
                .map(|r| {
                    format!(
                        "{} r={} median {:e}",
                        harness::dims_label(&r.row.dims),
                        r.row.r,
                        r.median_rel()
                    )
                })
                .collect();
            if !bad.is_empty() {
                return Err(CliError::Assertion(bad.join("; ")));
            }
            Ok(())
        }
        BenchCommand::Compare(a) => {
            let mut all = Vec::new();
            let mut summaries = Vec::new();
            for dims in a.suite.suites() {
                let pairs = run_comparison(&a.suite.base(&dims, a.sigma_n), &a.suite.seeds());
                let s = summarize_comparison(&pairs, a.at_iter, 1e-12);
                summaries.push((dims, s));
                all.extend(pairs);
            }
            let trials: Vec<_> = all.iter().flat_map(|p| [&p.blostr, &p.random]).collect();
            write_trials_csv(open_out(a.suite.out.as_deref())?, &trials)?;
            let json = serde_json::json!({
                "git_describe": GIT_DESCRIBE,
                "config": a,
                "suites": summaries.iter().map(|(d, s)| serde_json::json!({"dims": d, "summary": s})).collect::<Vec<_>>(),
            });
            match &a.summary {
                Some(p) => fs::write(p, serde_json::to_vec_pretty(&json)?)?,
                None => eprintln!("{}", json),
            }
            let mut bad = Vec::new();
            for (dims, s) in &summaries {
                if (s.wins as f64) < a.min_win_rate * s.pairs as f64 {
                    bad.push(format!(
                        "{}: {} of {} wins",
                        harness::dims_label(dims),
                        s.wins,
                        s.pairs
                    ));
                }
                if s.monotonicity_violations > 0 || s.unpaired > 0 {
                    bad.push(format!(
                        "{}: {} monotonicity violations, {} unpaired",
                        harness::dims_label(dims),
                        s.monotonicity_violations,
                        s.unpaired
                    ));
                }
            }
            if !bad.is_empty() {
                return Err(CliError::Assertion(bad.join("; ")));
            }
            Ok(())
        }
        BenchCommand::SuccessGrid(a) => {
            let mut out = open_out(a.suite.out.as_deref())?;
            let mut bad = Vec::new();
            for dims in a.suite.suites() {
                let cells = run_success_grid(
                    &a.suite.base(&dims, 0.0),
                    &a.sigma_n,
                    a.threshold,
                    &a.suite.seeds(),
                );
                let meta = vec![
                    ("git_describe".to_string(), GIT_DESCRIBE.to_string()),
                    ("dims".to_string(), harness::dims_label(&dims)),
                    ("config".to_string(), serde_json::to_string(a)?),
                    (
                        "nonincreasing".to_string(),
                        grid_nonincreasing(&cells, a.slack).to_string(),
                    ),
                ];
                write_grid_csv(&mut out, &cells, &meta)?;
                if !grid_nonincreasing(&cells, a.slack) {
                    bad.push(format!(
                        "{}: success fraction rises with noise",
                        harness::dims_label(&dims)
                    ));
                }
                if let Some(c) = cells
                    .iter()
                    .find(|c| c.sigma_n == 0.0 && c.init == InitMode::Blostr)
                {
                    if c.successes != c.trials {
                        bad.push(format!(
                            "{}: {} of {} noiseless successes",
                            harness::dims_label(&dims),
                            c.successes,
                            c.trials
                        ));
                    }
                }
            }
            out.flush()?;
            if !bad.is_empty() {
                return Err(CliError::Assertion(bad.join("; ")));
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Tensor,
    Cores,
    Json,
}

fn kind_of(p: &Path) -> CliResult<FileKind> {
    match p
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("trt") => Ok(FileKind::Tensor),
        Some("trc") => Ok(FileKind::Cores),
        Some("json") => Ok(FileKind::Json),
        _ => Err(CliError::Validation(format!(
            "{}: expected a .trt, .trc or .json file",
            p.display()
        ))),
    }
}

fn cmd_convert(a: &ConvertArgs) -> CliResult<()> {
    let (from, to) = (kind_of(&a.input)?, kind_of(&a.output)?);
    let input_is_cores = match from {
        FileKind::Tensor => false,
        FileKind::Cores => true,
        FileKind::Json => {
            let v: serde_json::Value = serde_json::from_slice(&fs::read(&a.input)?)?;
            v.get("cores").is_some()
        }
    };
    let target_ok = match to {
        FileKind::Json => true,
        FileKind::Cores => input_is_cores,
        FileKind::Tensor => !input_is_cores,
    };
    if !target_ok || from == to {
        return Err(CliError::Validation(format!(
            "cannot convert {} to {}",
            a.input.display(),
            a.output.display()
        )));
    }
    if input_is_cores {
        let f = format::read_cores(&a.input)?;
        if to == FileKind::Json {
            fs::write(&a.output, serde_json::to_vec(&CoresJson::from_file(&f)?)?)?;
        } else {
            format::write_cores(&a.output, &f)?;
        }
    } else {
        let f = format::read_tensor(&a.input)?;
        if to == FileKind::Json {
            fs::write(
                &a.output,
                serde_json::to_vec(&TensorJson::from_tensor(&f.tensor, f.symmetric)?)?,
            )?;
        } else {
            format::write_tensor(&a.output, &f.tensor, f.symmetric)?;
        }
    }
    Ok(())
}
