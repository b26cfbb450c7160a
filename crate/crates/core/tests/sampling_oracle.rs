//! Monte-Carlo checks of the residual-norm sampler and its reweighted loss.

use boostkit_core::sampling::{
    draw_subset, estimator_variance, estimator_variance_exact, jensen_gap, unbiased_square_loss, SampleDistribution,
};
use boostkit_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn draw_frequencies_follow_probabilities() {
    let d = SampleDistribution::from_norms(vec![3.0, 1.0]).unwrap();
    let draws = 100_000;
    let mut first = 0;
    for seed in 0..draws {
        let sub = draw_subset(&d, 0.5, seed).unwrap();
        assert_eq!(sub.len(), 1);
        first += usize::from(sub.indices()[0] == 0);
    }
    let freq = first as f64 / draws as f64;
    assert!((freq - 0.75).abs() <= 0.01, "{freq}");
}

fn fixture(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (Matrix, Matrix, Vec<f64>) {
    let outputs = Matrix::new(n, m, (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let targets = Matrix::new(n, m, (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let norms = (0..n).map(|i| 0.05 + (i as f64 * 0.37).sin().abs() * if i % 5 == 0 { 6.0 } else { 1.0 }).collect();
    (outputs, targets, norms)
}

#[test]
fn reweighted_loss_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, m) = (40, 3);
    let (outputs, targets, norms) = fixture(&mut rng, n, m);
    let d = SampleDistribution::from_norms(norms).unwrap();
    let full: f64 = outputs
        .iter_rows()
        .zip(targets.iter_rows())
        .map(|(g, w)| g.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    let sigma = 0.25;
    let draws = 10_000;
    let mut mean = 0.0;
    for s in 0..draws {
        let sub = draw_subset(&d, sigma, s).unwrap();
        mean += unbiased_square_loss(&sub, &d, &outputs, &targets).unwrap() * n as f64 / sub.len() as f64;
    }
    mean /= draws as f64;
    assert!((mean - full).abs() / full <= 0.01, "{mean} vs {full}");
}

#[test]
fn jensen_gap_is_minimized_by_residual_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let norms: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..5.0)).collect();
        let star = SampleDistribution::from_norms(norms.clone()).unwrap();
        assert!(jensen_gap(&norms, star.probs()).unwrap().abs() <= 1e-10);
        let q = SampleDistribution::from_norms((0..n).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap();
        assert!(jensen_gap(&norms, q.probs()).unwrap() >= -1e-10);
    }
}

#[test]
fn residual_distribution_lowers_estimator_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, m) = (30, 3);
    let (_, grads, norms) = fixture(&mut rng, n, m);
    // Per-sample gradient rows with the fixture's skewed norms.
    let mut g = grads.clone();
    for (i, r) in (0..n).zip(norms.iter()) {
        let len = g.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        g.row_mut(i).iter_mut().for_each(|v| *v *= r / len);
    }
    let g_norms: Vec<f64> = g.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let star = SampleDistribution::from_norms(g_norms.clone()).unwrap();
    let uniform = SampleDistribution::uniform(n).unwrap();
    let vs = estimator_variance(&star, 0.3, 1000, 1, &g).unwrap();
    let vu = estimator_variance(&uniform, 0.3, 1000, 1, &g).unwrap();
    assert!(vs <= vu, "{vs} vs {vu}");
    let draws = (0.3 * n as f64).ceil() as usize;
    let es = estimator_variance_exact(&star, draws, &g);
    let eu = estimator_variance_exact(&uniform, draws, &g);
    assert!((vs - es).abs() / es < 0.15, "{vs} vs exact {es}");
    assert!((vu - eu).abs() / eu < 0.15, "{vu} vs exact {eu}");

    let doubled = SampleDistribution::from_norms(g_norms.iter().map(|v| 2.0 * v).collect()).unwrap();
    assert_eq!(doubled.probs(), star.probs());
}

proptest! {
    #[test]
    fn scale_invariance(norms in prop::collection::vec(0.0f64..10.0, 1..12), c in 0.01f64..100.0) {
        prop_assume!(norms.iter().any(|v| *v > 0.0));
        let a = SampleDistribution::from_norms(norms.clone()).unwrap();
        let b = SampleDistribution::from_norms(norms.iter().map(|v| v * c).collect()).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert!((a.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn same_seed_same_draw(seed in any::<u64>(), sigma in 0.05f64..1.0) {
        let d = SampleDistribution::from_norms(vec![1.0, 2.0, 3.0, 0.5, 0.0]).unwrap();
        let a = draw_subset(&d, sigma, seed).unwrap();
        prop_assert_eq!(&a, &draw_subset(&d, sigma, seed).unwrap());
        prop_assert_eq!(a.len(), (sigma * 5.0 - 1e-9).ceil().max(1.0) as usize);
        prop_assert!(a.indices().iter().all(|&i| i < 4));
    }
}
