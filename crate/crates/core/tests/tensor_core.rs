use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trdecomp_core::error::Error;
use trdecomp_core::mask::SampleMask;
use trdecomp_core::matrix::ComplexMatrix;
use trdecomp_core::numerics;
use trdecomp_core::random::{random_matrix, random_tensor, random_tr, Field};
use trdecomp_core::source::{slice_fix_mid, EntrySource, MaskedTensorView};
use trdecomp_core::tensor::{reshape_from_angle, reshape_from_bracket, ComplexDenseTensor};
use trdecomp_core::tr::{tr_evaluate, tr_reconstruct, TrDecomposition, DEFAULT_MEMORY_BOUND};
use trdecomp_core::C64;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tensor(dims: &[usize], seed: u64) -> ComplexDenseTensor {
    random_tensor(&mut rng(seed), dims, 1.0, Field::Complex).unwrap()
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Σ over all bond indices of Q_1(α_1,a_1,a_2) Q_2(α_2,a_2,a_3) ⋯ Q_d(α_d,a_d,a_1).
fn bond_sum(dec: &TrDecomposition, index: &[usize]) -> C64 {
    let d = dec.order();
    let r = dec.rank();
    let mut bonds = vec![0usize; d];
    let mut total = C64::new(0.0, 0.0);
    loop {
        let mut p = c(1.0);
        for k in 0..d {
            p *= dec.core(k).at(&[index[k], bonds[k], bonds[(k + 1) % d]]);
        }
        total += p;
        let mut k = 0;
        loop {
            if k == d {
                return total;
            }
            bonds[k] += 1;
            if bonds[k] < r {
                break;
            }
            bonds[k] = 0;
            k += 1;
        }
    }
}

fn dims_strategy(max_order: usize, max_n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_n, 1..=max_order)
}

fn invertible(r: usize, seed: u64) -> ComplexMatrix {
    let m = random_matrix(&mut rng(seed), r, r, 1.0, Field::Complex);
    &m + &ComplexMatrix::identity(r).scale(c(2.0))
}

// Matricizations

#[test]
fn order1_bracket_is_the_column_of_entries() {
    let t = tensor(&[5], 1);
    let m = t.matricize_bracket(0).unwrap();
    assert_eq!(m.shape(), (5, 1));
    assert_eq!(m.as_slice(), t.as_slice());
}

#[test]
fn order2_bracket_at_first_mode_is_the_matrix() {
    let t = tensor(&[2, 3], 2);
    let m = t.matricize_bracket(0).unwrap();
    assert_eq!(m.shape(), (2, 3));
    for i in 0..2 {
        for j in 0..3 {
            assert_eq!(m[(i, j)], t.at(&[i, j]));
        }
    }
    assert_eq!(t.matricize_angle(0).unwrap(), m);
}

#[test]
fn bracket_column_order_222() {
    let t = tensor(&[2, 2, 2], 3);
    let m = t.matricize_bracket(1).unwrap();
    for a1 in 0..2 {
        for a2 in 0..2 {
            for a3 in 0..2 {
                assert_eq!(m[(a2, a3 + 2 * a1)], t.at(&[a1, a2, a3]));
            }
        }
    }
}

#[test]
fn angle_column_order_222() {
    let t = tensor(&[2, 2, 2], 4);
    let m = t.matricize_angle(0).unwrap();
    for a1 in 0..2 {
        for a2 in 0..2 {
            for a3 in 0..2 {
                assert_eq!(m[(a1, a3 + 2 * a2)], t.at(&[a1, a2, a3]));
            }
        }
    }
}

#[test]
fn angle_column_order_unequal_dims() {
    let dims = [2, 3, 4, 5];
    let t = tensor(&dims, 5);
    let m = t.matricize_angle(2).unwrap();
    // overline(α_2 α_1 α_4) for k = 3 (1-based)
    for a in 0..2 {
        for b in 0..3 {
            for g in 0..4 {
                for e in 0..5 {
                    assert_eq!(m[(g, b + 3 * (a + 2 * e))], t.at(&[a, b, g, e]));
                }
            }
        }
    }
}

#[test]
fn matricize_mode_out_of_range() {
    let t = tensor(&[2, 2], 6);
    assert!(t.matricize_bracket(2).is_err());
    assert!(t.matricize_angle(5).is_err());
}

#[test]
fn reshape_scalar_and_matrix_round_trip() {
    let one = ComplexMatrix::from_fn(1, 1, |_, _| C64::new(2.0, -1.0));
    let t = reshape_from_bracket(&one, &[1, 1], 0).unwrap();
    assert_eq!(t.dims(), &[1, 1]);
    assert_eq!(t.at(&[0, 0]), C64::new(2.0, -1.0));

    let a = random_matrix(&mut rng(7), 3, 4, 1.0, Field::Complex);
    let t = reshape_from_bracket(&a, &[3, 2, 2], 0).unwrap();
    assert_eq!(t.matricize_bracket(0).unwrap(), a);
    let t = reshape_from_angle(&a, &[3, 2, 2], 0).unwrap();
    assert_eq!(t.matricize_angle(0).unwrap(), a);
}

#[test]
fn reshape_shape_mismatch() {
    let a = ComplexMatrix::zeros(3, 5);
    assert!(matches!(
        reshape_from_bracket(&a, &[3, 2, 2], 0),
        Err(Error::ShapeMismatch(_))
    ));
    assert!(matches!(
        reshape_from_angle(&a, &[3, 2, 2], 0),
        Err(Error::ShapeMismatch(_))
    ));
}

// Circular shift

#[test]
fn circular_shift_examples() {
    let t = tensor(&[2, 3, 4], 8);
    assert_eq!(t.circular_shift(0).unwrap(), t);
    let s = t.circular_shift(1).unwrap();
    assert_eq!(s.dims(), &[3, 4, 2]);
    for a in 0..2 {
        for b in 0..3 {
            for g in 0..4 {
                assert_eq!(s.at(&[b, g, a]), t.at(&[a, b, g]));
            }
        }
    }
    assert_eq!(s.circular_shift(2).unwrap(), t);
    assert!(t.circular_shift(3).is_err());
}

// Slices

#[test]
fn slice_fix_mid_full_gamma_is_lateral_slice() {
    let t = tensor(&[4, 3, 5], 9);
    let all: Vec<usize> = (0..5).collect();
    let m = slice_fix_mid(&t, &[2], &all).unwrap();
    for i in 0..4 {
        for j in 0..5 {
            assert_eq!(m[(i, j)], t.at(&[i, 2, j]));
        }
    }
}

#[test]
fn slice_fix_mid_subset_columns() {
    let t = tensor(&[4, 3, 5], 10);
    let m = slice_fix_mid(&t, &[1], &[0, 2]).unwrap();
    assert_eq!(m.shape(), (4, 2));
    for i in 0..4 {
        assert_eq!(m[(i, 0)], t.at(&[i, 1, 0]));
        assert_eq!(m[(i, 1)], t.at(&[i, 1, 2]));
    }
    assert!(slice_fix_mid(&t, &[3], &[0]).is_err());
    assert!(slice_fix_mid(&t, &[0], &[0, 1, 2, 3, 4, 0]).is_err());
}

#[test]
fn slice_fix_mid_respects_mask() {
    let dims = [4, 3, 5];
    let t = tensor(&dims, 11);
    let mut mask = SampleMask::full(&dims, 1).unwrap();
    mask.remove(&[0, 1, 2]);
    let view = MaskedTensorView::new(t.clone(), mask).unwrap();
    assert!(matches!(
        slice_fix_mid(&view, &[1], &[0, 2]),
        Err(Error::MaskViolation { index }) if index == vec![0, 1, 2]
    ));
    assert_eq!(
        slice_fix_mid(&view, &[1], &[0, 1]).unwrap(),
        slice_fix_mid(&t, &[1], &[0, 1]).unwrap()
    );
}

#[test]
fn masked_view_reads() {
    let dims = [3, 3];
    let t = tensor(&dims, 12);
    let mut mask = SampleMask::new(&dims).unwrap();
    mask.insert(&[1, 2], 3).unwrap();
    let view = MaskedTensorView::new(t.clone(), mask).unwrap();
    assert_eq!(view.entry(&[1, 2]).unwrap(), t.at(&[1, 2]));
    assert!(matches!(
        view.entry(&[2, 1]),
        Err(Error::MaskViolation { .. })
    ));
    assert!(matches!(
        view.entry(&[3, 0]),
        Err(Error::IndexOutOfRange { .. })
    ));
    assert!(MaskedTensorView::new(t, SampleMask::new(&[3, 4]).unwrap()).is_err());
}

// Mode product, Kronecker, Π

#[test]
fn mode_product_examples() {
    let t = tensor(&[3, 4, 2], 13);
    assert_eq!(t.mode_k_product(&ComplexMatrix::identity(4), 1).unwrap(), t);
    let z = t.mode_k_product(&ComplexMatrix::zeros(5, 4), 1).unwrap();
    assert_eq!(z.dims(), &[3, 5, 2]);
    assert_eq!(z.norm_fro(), 0.0);
    assert!(matches!(
        t.mode_k_product(&ComplexMatrix::zeros(2, 3), 1),
        Err(Error::ShapeMismatch(_))
    ));

    let m = tensor(&[3, 2], 14);
    let u = random_matrix(&mut rng(15), 2, 3, 1.0, Field::Complex);
    let y = m.mode_k_product(&u, 0).unwrap();
    let want = &u * &m.matricize_bracket(0).unwrap();
    assert!(y.matricize_bracket(0).unwrap().rel_diff(&want) < 1e-15);
}

#[test]
fn mode_product_matches_bracket_formula_every_mode() {
    let dims = [2, 3, 4];
    let t = tensor(&dims, 16);
    for k in 0..3 {
        let u = random_matrix(&mut rng(17 + k as u64), 5, dims[k], 1.0, Field::Complex);
        let y = t.mode_k_product(&u, k).unwrap();
        let want = &u * &t.matricize_bracket(k).unwrap();
        assert!(y.matricize_bracket(k).unwrap().rel_diff(&want) < 1e-14);
    }
}

#[test]
fn kron_examples() {
    assert_eq!(
        ComplexMatrix::identity(2).kron(&ComplexMatrix::identity(3)),
        ComplexMatrix::identity(6)
    );
    let a = random_matrix(&mut rng(20), 2, 3, 1.0, Field::Complex);
    let s = C64::new(0.5, 2.0);
    assert_eq!(a.kron(&ComplexMatrix::diag(&[s])), a.scale(s));

    let a = random_matrix(&mut rng(21), 2, 2, 1.0, Field::Complex);
    let b = random_matrix(&mut rng(22), 3, 3, 1.0, Field::Complex);
    let k = a.kron(&b);
    assert_eq!(k.shape(), (6, 6));
    for j in 0..2 {
        for l in 0..2 {
            for p in 0..3 {
                for q in 0..3 {
                    assert_eq!(k[(j * 3 + p, l * 3 + q)], a[(j, l)] * b[(p, q)]);
                }
            }
        }
    }
}

#[test]
fn pi_examples() {
    for r in 1..4 {
        assert_eq!(
            ComplexMatrix::identity(r * r).pi_permute(r, r).unwrap(),
            ComplexMatrix::identity(r * r)
        );
    }
    let x = random_matrix(&mut rng(23), 6, 6, 1.0, Field::Complex);
    let p = x.pi_permute(2, 3).unwrap();
    for j1 in 0..2 {
        for j2 in 0..3 {
            for k1 in 0..2 {
                for k2 in 0..3 {
                    assert_eq!(p[(j2 * 2 + j1, k2 * 2 + k1)], x[(j1 * 3 + j2, k1 * 3 + k2)]);
                }
            }
        }
    }
    assert_eq!(p.pi_permute(3, 2).unwrap(), x);
    let a = random_matrix(&mut rng(24), 2, 2, 1.0, Field::Complex);
    let b = random_matrix(&mut rng(25), 3, 3, 1.0, Field::Complex);
    assert_eq!(a.kron(&b).pi_permute(2, 3).unwrap(), b.kron(&a));
    assert!(ComplexMatrix::zeros(6, 5).pi_permute(2, 3).is_err());
    assert!(ComplexMatrix::zeros(6, 6).pi_permute(2, 2).is_err());
}

// TR evaluation

#[test]
fn identity_slices_evaluate_to_rank() {
    for r in 1..4 {
        let id = ComplexMatrix::identity(r);
        let dec =
            TrDecomposition::from_slices(&[vec![id.clone(); 2], vec![id.clone(); 3], vec![id; 2]])
                .unwrap();
        let t = tr_reconstruct(&dec, DEFAULT_MEMORY_BOUND).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == c(r as f64)));
    }
}

#[test]
fn order2_entry_is_row_product_of_matricizations() {
    let dec = random_tr(&mut rng(26), &[4, 5], 3, 1.0, Field::Complex).unwrap();
    let a = dec.core(0).matricize_angle(0).unwrap();
    let b = dec.core(1).matricize_bracket(0).unwrap();
    let prod = &a * &b.transpose();
    for i in 0..4 {
        for j in 0..5 {
            let v = tr_evaluate(&dec, &[i, j]).unwrap();
            assert!((v - prod[(i, j)]).norm() < 1e-13 * (1.0 + v.norm()));
        }
    }
}

#[test]
fn evaluate_matches_bond_sum_order3() {
    let dec = random_tr(&mut rng(27), &[3, 4, 2], 2, 1.0, Field::Complex).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            for k in 0..2 {
                let v = tr_evaluate(&dec, &[i, j, k]).unwrap();
                let w = bond_sum(&dec, &[i, j, k]);
                assert!((v - w).norm() <= 1e-13 * w.norm().max(1.0));
            }
        }
    }
    assert!(matches!(
        tr_evaluate(&dec, &[3, 0, 0]),
        Err(Error::IndexOutOfRange { .. })
    ));
}

#[test]
fn reconstruct_examples() {
    let zero = TrDecomposition::from_slices(&[
        vec![ComplexMatrix::zeros(2, 2); 3],
        vec![ComplexMatrix::zeros(2, 2); 2],
    ])
    .unwrap();
    assert_eq!(
        tr_reconstruct(&zero, DEFAULT_MEMORY_BOUND)
            .unwrap()
            .norm_fro(),
        0.0
    );

    let dec = random_tr(&mut rng(28), &[4, 4, 4], 2, 1.0, Field::Complex).unwrap();
    let t = tr_reconstruct(&dec, DEFAULT_MEMORY_BOUND).unwrap();
    let mut idx = vec![0; 3];
    loop {
        let v = tr_evaluate(&dec, &idx).unwrap();
        assert!((t.at(&idx) - v).norm() <= 1e-14 * v.norm().max(1.0));
        if !trdecomp_core::tensor::next_index(&[4, 4, 4], &mut idx) {
            break;
        }
    }
    assert!(matches!(
        tr_reconstruct(&dec, 63),
        Err(Error::MemoryBound {
            entries: 64,
            limit: 63
        })
    ));
}

#[test]
fn tr_rejects_mixed_ranks() {
    let a = ComplexDenseTensor::zeros(&[2, 2, 2]).unwrap();
    let b = ComplexDenseTensor::zeros(&[2, 3, 3]).unwrap();
    assert!(TrDecomposition::new(vec![a.clone(), b]).is_err());
    assert!(TrDecomposition::new(vec![a]).is_err());
}

// Properties

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matricize_round_trips(dims in dims_strategy(6, 3), k in 0usize..6, seed in any::<u64>()) {
        let k = k % dims.len();
        let t = tensor(&dims, seed);
        prop_assert_eq!(&reshape_from_bracket(&t.matricize_bracket(k).unwrap(), &dims, k).unwrap(), &t);
        prop_assert_eq!(&reshape_from_angle(&t.matricize_angle(k).unwrap(), &dims, k).unwrap(), &t);
    }

    #[test]
    fn circular_shift_composes(dims in dims_strategy(5, 3), k in 0usize..5, j in 0usize..5, seed in any::<u64>()) {
        let d = dims.len();
        let (k, j) = (k % d, j % d);
        let t = tensor(&dims, seed);
        let twice = t.circular_shift(k).unwrap().circular_shift(j).unwrap();
        prop_assert_eq!(twice, t.circular_shift((k + j) % d).unwrap());
    }

    #[test]
    fn bracket_is_unfolding_of_shift(dims in dims_strategy(5, 3), k in 0usize..5, seed in any::<u64>()) {
        // T_[k] equals the column-major unfolding of the k-shifted tensor.
        let k = k % dims.len();
        let t = tensor(&dims, seed);
        let s = t.circular_shift(k).unwrap();
        prop_assert_eq!(t.matricize_bracket(k).unwrap(), s.matricize_bracket(0).unwrap());
    }

    #[test]
    fn pi_involution(r1 in 2usize..=4, r2 in 2usize..=4, seed in any::<u64>()) {
        let x = random_matrix(&mut rng(seed), r1 * r2, r1 * r2, 1.0, Field::Complex);
        prop_assert_eq!(x.pi_permute(r1, r2).unwrap().pi_permute(r2, r1).unwrap(), x);
    }

    #[test]
    fn pi_swaps_kronecker(r1 in 1usize..=4, r2 in 1usize..=4, seed in any::<u64>()) {
        let mut g = rng(seed);
        let x = random_matrix(&mut g, r1, r1, 1.0, Field::Complex);
        let y = random_matrix(&mut g, r2, r2, 1.0, Field::Complex);
        prop_assert_eq!(x.kron(&y).pi_permute(r1, r2).unwrap(), y.kron(&x));
    }

    #[test]
    fn pi_block_homomorphism(r1 in 1usize..=4, r2 in 1usize..=4, seed in any::<u64>()) {
        let blocks = |s: u64| -> Vec<ComplexMatrix> { (0..r1).map(|i| invertible(r2, s.wrapping_add(i as u64))).collect() };
        let k = ComplexMatrix::block_diag(&blocks(seed));
        let h = ComplexMatrix::block_diag(&blocks(seed.wrapping_add(1000)));
        let pk = k.pi_permute(r1, r2).unwrap();
        let ph = h.pi_permute(r1, r2).unwrap();
        let pkh = (&k * &h).pi_permute(r1, r2).unwrap();
        prop_assert!((&pk * &ph).rel_diff(&pkh) < 1e-13);
        let pinv = numerics::inverse(&k).unwrap().pi_permute(r1, r2).unwrap();
        prop_assert!(pinv.rel_diff(&numerics::inverse(&pk).unwrap()) < 1e-10);
    }

    #[test]
    fn gauge_invariance(dims in prop::collection::vec(1usize..=4, 2..=4), r in 1usize..=3, seed in any::<u64>()) {
        let dec = random_tr(&mut rng(seed), &dims, r, 1.0, Field::Complex).unwrap();
        let ls: Vec<ComplexMatrix> = (0..dims.len()).map(|k| invertible(r, seed.wrapping_add(k as u64 + 1))).collect();
        let moved = dec.gauge_transform(&ls).unwrap();
        let a = tr_reconstruct(&dec, DEFAULT_MEMORY_BOUND).unwrap();
        let b = tr_reconstruct(&moved, DEFAULT_MEMORY_BOUND).unwrap();
        prop_assert!(b.rel_diff(&a) <= 1e-10);
    }

    #[test]
    fn circular_invariance(dims in prop::collection::vec(1usize..=4, 2..=4), r in 1usize..=3, k in 0usize..4, seed in any::<u64>()) {
        let k = k % dims.len();
        let dec = random_tr(&mut rng(seed), &dims, r, 1.0, Field::Complex).unwrap();
        let t = tr_reconstruct(&dec, DEFAULT_MEMORY_BOUND).unwrap();
        let rotated = tr_reconstruct(&dec.rotate(k), DEFAULT_MEMORY_BOUND).unwrap();
        prop_assert!(rotated.rel_diff(&t.circular_shift(k).unwrap()) <= 1e-12);
    }

    #[test]
    fn evaluate_matches_bond_sum(dims in prop::collection::vec(1usize..=5, 2..=4), r in 1usize..=3, seed in any::<u64>()) {
        let dec = random_tr(&mut rng(seed), &dims, r, 1.0, Field::Complex).unwrap();
        let t = tr_reconstruct(&dec, DEFAULT_MEMORY_BOUND).unwrap();
        let mut idx = vec![0; dims.len()];
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        loop {
            let w = bond_sum(&dec, &idx);
            diff = diff.max((t.at(&idx) - w).norm());
            scale = scale.max(w.norm());
            if !trdecomp_core::tensor::next_index(&dims, &mut idx) {
                break;
            }
        }
        prop_assert!(diff <= 1e-12 * scale);
    }
}
