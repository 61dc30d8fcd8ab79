mod common;

use common::{best_rank_r, reference_mask, singular_values, sq_dist, RefPattern};
use oats::decompose::{
    alternating_thresholding, resume, solve_budget, DecomposeOptions, LayerBudget, ThresholdOrder,
};
use oats::fixtures::{gaussian, gaussian_f32, planted_orthogonal, rng};
use oats::linalg::{frob_norm_sq, truncated_svd, Matrix};
use oats::scaling::{diag_from_activations, scale_weights, ScalingMode};
use oats::thresholding::{hard_threshold, SparsityPattern};

#[test]
fn svd_spectrum_matches_eigen_oracle() {
    let mut r = rng(7);
    for &(m, n) in &[(12, 12), (20, 9), (7, 18), (1, 5), (30, 30)] {
        let a = gaussian(m, n, &mut r);
        let k = m.min(n);
        let svd = truncated_svd(&a, k).unwrap();
        let expected = singular_values(&a);
        for (got, want) in svd.singular_values.iter().zip(&expected) {
            assert!((got - want).abs() <= 1e-8 * expected[0], "{m}x{n}: {got} vs {want}");
        }
        assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn truncated_reconstruction_is_best_rank_r() {
    let mut r = rng(11);
    for &(m, n, rank) in &[(16, 10, 3), (9, 24, 2), (25, 25, 6)] {
        let a = gaussian(m, n, &mut r);
        let ours = truncated_svd(&a, rank).unwrap().reconstruct();
        let oracle = best_rank_r(&a, rank);
        let tail: f64 = singular_values(&a)[rank..].iter().map(|s| s * s).sum();
        assert!(sq_dist(&ours, &oracle) <= 1e-14 * frob_norm_sq(&a));
        assert!((sq_dist(&a, &ours) - tail).abs() <= 1e-10 * frob_norm_sq(&a));
    }
}

#[test]
fn singular_vectors_are_orthonormal() {
    let a = gaussian(40, 25, &mut rng(3));
    let svd = truncated_svd(&a, 10).unwrap();
    let utu = svd.u.transpose().matmul(&svd.u).unwrap();
    let vvt = svd.vt.matmul(&svd.vt.transpose()).unwrap();
    let eye = Matrix::<f64>::identity(10);
    assert!(sq_dist(&utu, &eye) < 1e-24);
    assert!(sq_dist(&vvt, &eye) < 1e-24);
}

#[test]
fn hard_threshold_support_matches_sort_oracle() {
    let mut r = rng(5);
    for trial in 0..40 {
        let (rows, cols) = (3 + trial % 5, 8 * (1 + trial % 3));
        let a = gaussian(rows, cols, &mut r);
        let k = (rows * cols) / 3 + trial;
        let cases = [
            (SparsityPattern::LayerWise(k), RefPattern::Global(k)),
            (SparsityPattern::RowWise(k), RefPattern::PerRow(k)),
            (SparsityPattern::NofM { n: 2, m: 4 }, RefPattern::Groups { n: 2, m: 4 }),
            (SparsityPattern::NofM { n: 1, m: 8 }, RefPattern::Groups { n: 1, m: 8 }),
        ];
        for (ours, theirs) in cases {
            let got = hard_threshold(&a, ours).unwrap();
            assert_eq!(got.mask, reference_mask(a.as_slice(), rows, cols, theirs), "{ours:?}");
            assert_eq!(got.nnz(), ours.kept(rows, cols));
            for ((v, orig), keep) in got.values.as_slice().iter().zip(a.as_slice()).zip(&got.mask) {
                assert_eq!(*v, if *keep { *orig } else { 0.0 });
            }
        }
    }
}

#[test]
fn second_moment_diag_is_column_norm() {
    let x = gaussian_f32(300, 12, &mut rng(9));
    let s = diag_from_activations(&x, ScalingMode::SecondMoment, 0).unwrap();
    for j in 0..12 {
        let norm = (0..300).map(|i| (x[(i, j)] as f64).powi(2)).sum::<f64>().sqrt();
        assert!((s.d[j] as f64 - norm).abs() <= 1e-5 * norm);
        assert!((s.d_inv[j] as f64 * norm - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn robust_median_diag_is_lower_median_of_magnitudes() {
    let x = gaussian_f32(51, 6, &mut rng(2));
    let s = diag_from_activations(&x, ScalingMode::RobustMedian, 4).unwrap();
    for j in 0..6 {
        let mut col: Vec<f32> = (0..51).map(|i| x[(i, j)].abs()).collect();
        col.sort_by(f32::total_cmp);
        assert_eq!(s.d[j], col[25]);
    }
}

#[test]
fn dead_input_channel_is_clamped() {
    let mut x = gaussian_f32(40, 5, &mut rng(1));
    for i in 0..40 {
        x[(i, 2)] = 0.0;
    }
    let s = diag_from_activations(&x, ScalingMode::SecondMoment, 0).unwrap();
    let max = s.d.iter().cloned().fold(0.0f32, f32::max) as f64;
    assert_eq!(s.d[2], 0.0);
    assert!(s.d_inv[2].is_finite());
    assert!(((s.d_inv[2] as f64) * 1e-8 * max - 1.0).abs() < 1e-5);
}

#[test]
fn scaling_multiplies_columns() {
    let w = gaussian(4, 5, &mut rng(8));
    let x = gaussian_f32(64, 5, &mut rng(6));
    let s = diag_from_activations(&x, ScalingMode::SecondMoment, 0).unwrap();
    let wd = scale_weights(&w, &s).unwrap();
    for i in 0..4 {
        for j in 0..5 {
            assert_eq!(wd[(i, j)], w[(i, j)] * s.d[j] as f64);
        }
    }
}

#[test]
fn every_iterate_respects_budget() {
    let w = gaussian(24, 16, &mut rng(4));
    let budget = solve_budget(24, 16, 0.5, 0.3).unwrap();
    let mut state = alternating_thresholding(&w, &budget, &DecomposeOptions::default().with_iterations(1)).unwrap();
    for _ in 0..15 {
        assert!(state.sparse.nnz() <= budget.k);
        assert!(state.low_rank.rank() <= budget.r);
        let obj = state.final_objective();
        state = resume(&w, &budget, &DecomposeOptions::default().with_iterations(1), &state).unwrap();
        assert!(state.final_objective() <= obj * (1.0 + 1e-12));
    }
}

#[test]
fn recovered_instance_is_a_fixed_point() {
    let p = planted_orthogonal(16, 16, 2, 8, 5.0, 21);
    let wd = p.matrix();
    let budget = LayerBudget {
        r: 2,
        k: 8,
        pattern: SparsityPattern::LayerWise(8),
    };
    let opts = DecomposeOptions::default().with_order(ThresholdOrder::HardThresholdFirst);
    let done = alternating_thresholding(&wd, &budget, &opts).unwrap();
    assert!(done.final_objective() <= 1e-20 * frob_norm_sq(&wd));
    assert_eq!(done.sparse.mask, p.sparse.as_slice().iter().map(|v| *v != 0.0).collect::<Vec<_>>());
    let again = resume(&wd, &budget, &opts.with_iterations(3), &done).unwrap();
    assert_eq!(again.sparse.mask, done.sparse.mask);
    assert!(sq_dist(&again.materialize(), &done.materialize()) <= 1e-24 * frob_norm_sq(&wd));
}

#[test]
fn zero_rank_budget_reduces_to_hard_threshold() {
    let w = gaussian(10, 16, &mut rng(13));
    let budget = solve_budget(10, 16, 0.5, 0.0).unwrap();
    assert_eq!(budget.r, 0);
    let res = alternating_thresholding(&w, &budget, &DecomposeOptions::default().with_iterations(5)).unwrap();
    let direct = hard_threshold(&w, budget.pattern).unwrap();
    assert_eq!(res.sparse, direct);
    assert!(res.objective_trace.windows(2).all(|t| t[0] == t[1]));
}
