//! Golden-section step sizes against a dense grid search.

use boostkit_core::{compute_risk, line_search_alpha, LineSearch, Matrix, RiskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn risk_at(f: &Matrix, g: &Matrix, z: &[usize], kind: RiskKind, a: f64) -> f64 {
    let mut p = f.clone();
    p.axpy(a, g).unwrap();
    compute_risk(&p, z, kind).unwrap()
}

#[test]
fn golden_section_matches_grid_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = LineSearch::default();
    for case in 0..50 {
        let kind = if case % 2 == 0 { RiskKind::Exponential } else { RiskKind::CrossEntropy };
        let m = rng.random_range(2..=4);
        let n = rng.random_range(1..=6);
        let rand_mat = |rng: &mut ChaCha8Rng, s: f64| Matrix::new(n, m, (0..n * m).map(|_| rng.random_range(-s..s)).collect()).unwrap();
        let f = rand_mat(&mut rng, 1.0);
        let g = rand_mat(&mut rng, 1.5);
        let z: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let a = line_search_alpha(&f, &g, &z, kind, None, &cfg).unwrap();
        let grid_min = (0..=40_000).map(|k| risk_at(&f, &g, &z, kind, k as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
        let got = risk_at(&f, &g, &z, kind, a);
        assert!(got - grid_min <= 1e-6, "case {case}: {got} vs {grid_min} at alpha {a}");
    }
}

#[test]
fn half_log_two_instance() {
    let g = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let f = Matrix::zeros(3, 2);
    let a = line_search_alpha(&f, &g, &[0, 0, 0], RiskKind::Exponential, None, &LineSearch::default()).unwrap();
    assert!((a - 0.5 * 2f64.ln()).abs() <= 1e-4);
    let grid_arg = (0..=40_000)
        .map(|k| k as f64 * 1e-4)
        .min_by(|x, y| risk_at(&f, &g, &[0, 0, 0], RiskKind::Exponential, *x).total_cmp(&risk_at(&f, &g, &[0, 0, 0], RiskKind::Exponential, *y)))
        .unwrap();
    assert!((grid_arg - 0.5 * 2f64.ln()).abs() <= 1e-4);
}

#[test]
fn weighted_search_with_unit_weights_is_unweighted() {
    let f = Matrix::from_rows(&[vec![0.3, -0.1, 0.0], vec![0.0, 0.2, -0.4]]).unwrap();
    let g = Matrix::from_rows(&[vec![1.0, -0.5, -0.5], vec![-0.2, 0.9, -0.7]]).unwrap();
    let cfg = LineSearch::default();
    let a = line_search_alpha(&f, &g, &[0, 1], RiskKind::CrossEntropy, None, &cfg).unwrap();
    let b = line_search_alpha(&f, &g, &[0, 1], RiskKind::CrossEntropy, Some(&[1.0, 1.0]), &cfg).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}
