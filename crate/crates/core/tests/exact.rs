use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trdecomp_core::error::Error;
use trdecomp_core::exact::*;
use trdecomp_core::mask::provenance;
use trdecomp_core::matrix::ComplexMatrix;
use trdecomp_core::numerics::{self, ToleranceConfig};
use trdecomp_core::random::{random_matrix, random_tr, Field};
use trdecomp_core::source::{EntrySource, MaskedTensorView, RecordingSource};
use trdecomp_core::tensor::{reshape_from_angle, reshape_from_bracket, ComplexDenseTensor};
use trdecomp_core::tr::{
    relative_error, tr_distance, tr_reconstruct, TrDecomposition, TrSource, DEFAULT_MEMORY_BOUND,
};
use trdecomp_core::C64;

fn instance(dims: &[usize], r: usize, seed: u64) -> (TrDecomposition, ComplexDenseTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dec = random_tr(&mut rng, dims, r, 1.0, Field::Complex).unwrap();
    let t = tr_reconstruct(&dec, DEFAULT_MEMORY_BOUND).unwrap();
    (dec, t)
}

fn cfg(seed: u64) -> ExactConfig {
    ExactConfig {
        seed,
        ..ExactConfig::default()
    }
}

#[test]
fn recovers_order3() {
    let (_, t) = instance(&[4, 5, 6], 2, 1);
    let dec = blostr_decompose(&t, 2, None, &cfg(0)).unwrap();
    assert!(relative_error(&dec, &t).unwrap() < 1e-10);
}

#[test]
fn recovers_order4_rank3() {
    let (_, t) = instance(&[9, 10, 9, 11], 3, 2);
    let dec = blostr_decompose(&t, 3, None, &cfg(1)).unwrap();
    assert!(relative_error(&dec, &t).unwrap() < 1e-8);
}

#[test]
fn table1_row_order5_scaled_cores() {
    let dims = [10; 5];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dec = random_tr(&mut rng, &dims, 2, 10.0, Field::Real).unwrap();
    let src = TrSource::new(&dec);
    let rec = blostr_decompose(&src, 2, None, &cfg(3)).unwrap();
    let (diff, norm) = tr_distance(&rec, &dec).unwrap();
    assert!(diff / norm < 1e-8, "relative error {:e}", diff / norm);
}

#[test]
fn small_mode_points_to_refined() {
    let (_, t) = instance(&[12, 5, 6, 7, 10], 3, 4);
    match blostr_decompose(&t, 3, None, &cfg(0)) {
        Err(Error::DimensionTooSmall {
            mode: 1,
            size: 5,
            required: 9,
        }) => {}
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
}

#[test]
fn rank_one_rejected() {
    let (_, t) = instance(&[4, 4, 4], 1, 5);
    assert!(matches!(
        blostr_decompose(&t, 1, None, &cfg(0)),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn forced_equal_probe_pair_rejected() {
    let (_, t) = instance(&[4, 4, 4], 2, 6);
    let mut p = ProbeConfig::default_for(t.dims(), 2).unwrap();
    p.beta = p.alpha.clone();
    assert!(matches!(
        blostr_decompose(&t, 2, Some(&p), &cfg(0)),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn lemma1_spectrum_has_r_clusters_of_r() {
    for r in [2, 3] {
        let (_, t) = instance(&[9, 9, 9, 9], r, 10 + r as u64);
        let p = ProbeConfig::default_for(t.dims(), r).unwrap();
        let m = probe_matrix(&t, &p.alpha, &p.gamma_pair, &p.beta, &p.gamma_pair, 1e-10).unwrap();
        let eig = numerics::eig(&m).unwrap();
        let mut vals = eig.values.clone();
        vals.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
        let top = &vals[..r * r];
        let radius = top[0].norm();
        // each value has exactly r partners (itself included) within 1e-7
        for v in top {
            let close = top
                .iter()
                .filter(|w| (*v - **w).norm() <= 1e-7 * radius)
                .count();
            assert_eq!(close, r);
        }
        if vals.len() > r * r {
            assert!(vals[r * r].norm() < 1e-9 * radius);
        }
    }
}

#[test]
fn eigenbasis_conjugation_is_block_diagonal() {
    let r = 2;
    let (_, t) = instance(&[9, 9, 9, 9], r, 21);
    let p = ProbeConfig::default_for(t.dims(), r).unwrap();
    let tol = ToleranceConfig::exact();
    let b = probe_eigenbasis(&t, &p.alpha, &p.beta, &p.gamma_pair, &p.gamma_pair, r, &tol).unwrap();
    let m = probe_matrix(&t, &p.alpha, &p.gamma_pair, &p.beta, &p.gamma_pair, 1e-10).unwrap();
    let d = &(&numerics::pinv(&b.e, None, 1e-12).unwrap() * &m) * &b.e;
    let expected = ComplexMatrix::diag(
        &(0..r * r)
            .map(|c| b.cluster_values[c % r])
            .collect::<Vec<_>>(),
    );
    assert!((&d - &expected).norm_fro() < 1e-8 * expected.norm_fro());
    for w in b.cluster_values.windows(2) {
        assert!((w[0].re, w[0].im) < (w[1].re, w[1].im));
    }
}

#[test]
fn identity_cores_degenerate_spectrum() {
    let r = 2;
    let dims = [4, 4, 4];
    let eye = ComplexMatrix::identity(r);
    let slices: Vec<Vec<ComplexMatrix>> = dims.iter().map(|&n| vec![eye.clone(); n]).collect();
    let dec = TrDecomposition::from_slices(&slices).unwrap();
    let t = tr_reconstruct(&dec, 1 << 20).unwrap();
    let p = ProbeConfig::default_for(&dims, r).unwrap();
    let res = probe_eigenbasis(
        &t,
        &p.alpha,
        &p.beta,
        &p.gamma_pair,
        &p.gamma_pair,
        r,
        &ToleranceConfig::exact(),
    );
    assert!(matches!(res, Err(Error::ClusterTolerance { .. })));
}

/// E = A (I⊗U) Π(K) from known factors.
fn synthetic_basis(a: &ComplexMatrix, u: &ComplexMatrix, k: &[ComplexMatrix]) -> ComplexMatrix {
    let r = u.rows();
    let iu = ComplexMatrix::identity(r).kron(u);
    let pk = ComplexMatrix::block_diag(k).pi_permute(r, r).unwrap();
    &(a * &iu) * &pk
}

#[test]
fn gauge_fix_matches_known_blocks() {
    let r = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_matrix(&mut rng, 12, r * r, 1.0, Field::Complex);
    let u = random_matrix(&mut rng, r, r, 1.0, Field::Complex);
    let v = random_matrix(&mut rng, r, r, 1.0, Field::Complex);
    let k: Vec<_> = (0..r)
        .map(|_| random_matrix(&mut rng, r, r, 1.0, Field::Complex))
        .collect();
    let kp: Vec<_> = (0..r)
        .map(|_| random_matrix(&mut rng, r, r, 1.0, Field::Complex))
        .collect();
    let e = synthetic_basis(&a, &u, &k);
    let ep = synthetic_basis(&a, &v, &kp);
    let gf = gauge_fix(&e, &ep, r, 1e-12).unwrap();
    let uv = &numerics::inverse(&u).unwrap() * &v;
    let k0inv = numerics::inverse(&k[0]).unwrap();
    assert_eq!(gf.blocks[0], ComplexMatrix::identity(r));
    for l in 1..r {
        let expected = (&k0inv * &k[l]).scale(uv[(0, 0)] / uv[(l, 0)]);
        assert!(gf.blocks[l].rel_diff(&expected) < 1e-9);
    }
}

#[test]
fn gauge_fix_self_probe() {
    let r = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let e = random_matrix(&mut rng, 6, r * r, 1.0, Field::Complex);
    // F = I: every F^(ℓ,0) with ℓ > 0 vanishes, so no K̂_ℓ is defined.
    assert!(matches!(
        gauge_fix(&e, &e, r, 1e-12),
        Err(Error::SingularBlock { block: 1 })
    ));
}

#[test]
fn identity_gauge_returns_e() {
    let r = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let e = random_matrix(&mut rng, 5, r * r, 1.0, Field::Complex);
    let gf = GaugeFix {
        blocks: vec![ComplexMatrix::identity(r); r],
    };
    let q = recover_first_core(&e, &gf).unwrap();
    assert_eq!(q.matricize_angle(0).unwrap(), e);
    let pk = gf.khat().pi_permute(r, r).unwrap();
    let pinv_k = numerics::inverse(&gf.khat())
        .unwrap()
        .pi_permute(r, r)
        .unwrap();
    assert!((&pk * &pinv_k).rel_diff(&ComplexMatrix::identity(r * r)) < 1e-14);
}

#[test]
fn hat_gauge_has_identity_gamma_slices() {
    let (_, t) = instance(&[4, 5, 4, 6, 5], 2, 12);
    let (dec, report) = blostr_decompose_with_report(&t, 2, None, &cfg(2)).unwrap();
    assert!(relative_error(&dec, &t).unwrap() < 1e-8);
    let g = &report.probes.gamma;
    for m in 2..5 {
        let s = dec.slice(m, g[m]);
        assert!(s.rel_diff(&ComplexMatrix::identity(2)) < 1e-8, "mode {}", m);
    }
}

#[test]
fn mask_covers_every_read() {
    let dims = [5, 4, 6, 5];
    let (_, t) = instance(&dims, 2, 13);
    let p = ProbeConfig::default_for(&dims, 2).unwrap();
    let mask = build_sample_mask(&dims, 2, &p).unwrap();
    let view = MaskedTensorView::new(&t, mask.clone()).unwrap();
    let rec = RecordingSource::new(&view);
    let dec = blostr_decompose(
        &rec,
        2,
        Some(&p),
        &ExactConfig {
            max_attempts: 1,
            ..cfg(0)
        },
    )
    .unwrap();
    assert!(relative_error(&dec, &t).unwrap() < 1e-8);
    let reads = rec.distinct_reads();
    assert!(reads.iter().all(|&i| mask.contains_linear(i)));

    // Dropping any read entry must surface as a mask error.
    for &drop in reads.iter().step_by(7) {
        let mut m = mask.clone();
        let mut idx = vec![0; 4];
        trdecomp_core::tensor::unravel_index(&dims, drop, &mut idx);
        m.remove(&idx);
        let v = MaskedTensorView::new(&t, m).unwrap();
        let res = blostr_decompose(
            &v,
            2,
            Some(&p),
            &ExactConfig {
                max_attempts: 1,
                ..cfg(0)
            },
        );
        assert!(matches!(res, Err(Error::MaskViolation { .. })));
    }
}

#[test]
fn mask_size_three_way_figure() {
    let dims = [10, 10, 10];
    let r = 2;
    let p = ProbeConfig::default_for(&dims, r).unwrap();
    let mask = build_sample_mask(&dims, r, &p).unwrap();
    assert!(mask.len() <= 4 * 10 * 4 + 3 * 10 * 4);
    assert_eq!(mask.count_with(provenance::PROBE_PAIR_1), 2 * 10 * 4);
    assert_eq!(mask.count_with(provenance::PROBE_PAIR_2), 2 * 10 * 4);
    // The three families overlap where Γ_k meets γ.
    let seq = mask.count_with(provenance::SEQUENTIAL);
    assert!((3 * 10 * 4 - 3 * 4..=3 * 10 * 4).contains(&seq));
}

#[test]
fn gauge_freedom_realized() {
    let (_, t) = instance(&[5, 5, 5, 5], 2, 14);
    let a = blostr_decompose(&t, 2, None, &cfg(100)).unwrap();
    let b = blostr_decompose(&t, 2, None, &cfg(200)).unwrap();
    assert!(a.core(0).rel_diff(b.core(0)) > 1e-6);
    let (diff, norm) = tr_distance(&a, &b).unwrap();
    assert!(diff / norm < 1e-8);
}

#[test]
fn shifted_tensor_recovers_too() {
    let (_, t) = instance(&[4, 6, 5], 2, 15);
    let shifted = t.circular_shift(1).unwrap();
    let dec = blostr_decompose(&shifted, 2, None, &cfg(0)).unwrap();
    assert!(relative_error(&dec, &shifted).unwrap() < 1e-10);
}

#[test]
fn contraction_plans() {
    let p = contraction_plan(&[12, 5, 6, 7, 10], 3).unwrap();
    assert_eq!((p.valid.clone(), p.start, p.run), (vec![0, 4], 4, 2));
    let p = contraction_plan(&[9, 9, 3, 3], 3).unwrap();
    assert_eq!((p.valid.clone(), p.start, p.run), (vec![0, 1], 0, 2));
    let p = contraction_plan(&[4, 4, 4], 2).unwrap();
    assert_eq!(p.run, 3);
    assert!(matches!(
        contraction_plan(&[9, 3, 9, 3], 3),
        Err(Error::NoValidStart)
    ));
}

#[test]
fn refined_table1_row() {
    let dims = [12, 5, 6, 7, 10];
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let dec = random_tr(&mut rng, &dims, 3, 10.0, Field::Real).unwrap();
    let t = tr_reconstruct(&dec, DEFAULT_MEMORY_BOUND).unwrap();
    let rec = refined_decompose(&t, 3, &cfg(0)).unwrap();
    let err = relative_error(&rec, &t).unwrap();
    assert!(err < 1e-8, "relative error {:e}", err);
}

#[test]
fn refined_small_contracted_mode() {
    let (_, t) = instance(&[9, 9, 2, 2, 2], 3, 17);
    let rec = refined_decompose(&t, 3, &cfg(0)).unwrap();
    assert!(relative_error(&rec, &t).unwrap() < 1e-8);
}

#[test]
fn refined_agrees_with_plain_when_all_valid() {
    let (_, t) = instance(&[4, 5, 4, 4], 2, 18);
    let a = refined_decompose(&t, 2, &cfg(0)).unwrap();
    let b = blostr_decompose(&t, 2, None, &cfg(0)).unwrap();
    assert!(relative_error(&a, &t).unwrap() < 1e-8);
    assert!(relative_error(&b, &t).unwrap() < 1e-8);
}

#[test]
fn refined_mask_covers_reads() {
    let dims = [9, 9, 2, 3];
    let (_, t) = instance(&dims, 3, 19);
    let layout = RefinedLayout::new(&dims, &contraction_plan(&dims, 3).unwrap());
    let p = ProbeConfig::default_for(&layout.contracted_dims, 3).unwrap();
    let mask = refined_sample_mask(&dims, 3, &p).unwrap();
    let view = MaskedTensorView::new(&t, mask).unwrap();
    let (rec, _) = refined_decompose_with_report(
        &view,
        3,
        Some(&p),
        &ExactConfig {
            max_attempts: 1,
            ..cfg(0)
        },
    )
    .unwrap();
    assert!(relative_error(&rec, &t).unwrap() < 1e-8);
}

#[test]
fn order2_zero_matrix() {
    let t = ComplexDenseTensor::zeros(&[3, 4]).unwrap();
    let dec = order2_decompose(&t, 2).unwrap();
    assert_eq!(tr_reconstruct(&dec, 100).unwrap(), t);
}

#[test]
fn order2_generate_then_recover() {
    let r = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let q1 = random_matrix(&mut rng, 8, r * r, 1.0, Field::Complex);
    let q2 = random_matrix(&mut rng, 6, r * r, 1.0, Field::Complex);
    let truth = TrDecomposition::new(vec![
        reshape_from_angle(&q1, &[8, r, r], 0).unwrap(),
        reshape_from_bracket(&q2, &[6, r, r], 0).unwrap(),
    ])
    .unwrap();
    let t = tr_reconstruct(&truth, 1000).unwrap();
    // T = Q1⟨1⟩ Q2[1]ᵀ
    let direct = &q1 * &q2.transpose();
    assert!(
        ComplexMatrix::from_col_major(8, 6, t.as_slice().to_vec())
            .unwrap()
            .rel_diff(&direct)
            < 1e-14
    );
    let dec = order2_decompose(&t, r).unwrap();
    assert!(relative_error(&dec, &t).unwrap() < 1e-10);
}

#[test]
fn order2_padding_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = random_matrix(&mut rng, 3, 3, 1.0, Field::Complex);
    let b = random_matrix(&mut rng, 3, 8, 1.0, Field::Complex);
    let m = &a * &b;
    let t = ComplexDenseTensor::from_data(&[3, 8], m.into_vec()).unwrap();
    let dec = order2_decompose(&t, 2).unwrap();
    assert!(relative_error(&dec, &t).unwrap() < 1e-10);
}

#[test]
fn order2_rank_exceeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let m = random_matrix(&mut rng, 6, 6, 1.0, Field::Complex);
    let t = ComplexDenseTensor::from_data(&[6, 6], m.into_vec()).unwrap();
    assert!(matches!(
        order2_decompose(&t, 2),
        Err(Error::RankExceeded { bound: 4, .. })
    ));
}

#[test]
fn exact_recovery_rate() {
    let mut ok = 0;
    let mut tried = 0;
    for s in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let d = 3 + (s as usize % 4);
        let r = 2 + (s as usize % 3);
        let dims: Vec<usize> = (0..d).map(|k| r * r + (s as usize + k) % 3).collect();
        if dims.iter().product::<usize>() > 400_000 {
            continue;
        }
        let dec = random_tr(&mut rng, &dims, r, 1.0, Field::Complex).unwrap();
        let src = TrSource::new(&dec);
        tried += 1;
        if let Ok(rec) = blostr_decompose(&src, r, None, &cfg(s)) {
            let (diff, norm) = tr_distance(&rec, &dec).unwrap();
            if diff / norm <= 1e-8 {
                ok += 1;
            } else {
                eprintln!("seed {} dims {:?} r {}: {:e}", s, dims, r, diff / norm);
            }
        } else {
            eprintln!("seed {} dims {:?} r {}: failed", s, dims, r);
        }
    }
    assert!(ok * 100 >= 95 * tried, "recovered {} of {}", ok, tried);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exact_recovery_property(seed in 0u64..10_000, r in 2usize..4, d in 3usize..5) {
        let dims: Vec<usize> = (0..d).map(|k| r * r + (seed as usize + k) % 2).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = random_tr(&mut rng, &dims, r, 1.0, Field::Complex).unwrap();
        let src = TrSource::new(&dec);
        let rec = blostr_decompose(&src, r, None, &cfg(seed)).unwrap();
        let (diff, norm) = tr_distance(&rec, &dec).unwrap();
        prop_assert!(diff / norm <= 1e-8);
    }
}

#[allow(dead_code)]
fn entry_of(t: &impl EntrySource, idx: &[usize]) -> C64 {
    t.entry(idx).unwrap()
}
