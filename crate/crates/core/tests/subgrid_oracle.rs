//! Pixel importance against finite differences, probe-model composition and
//! subgrid algebra.

use boostkit_core::learners::cnn::{build_probe_model, classify, extract, CnnShape, CnnWeakLearner};
use boostkit_core::subgrid::{
    aggregate_rows_cols, apply_subgrid, compose, pixel_importance, select_subgrid, ImportanceGrid, SubgridMask,
};
use boostkit_core::Matrix;
use boostkit_nn::gradcheck::relative_error;
use boostkit_nn::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_images(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Vec<Tensor> {
    (0..n).map(|_| Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()).collect()
}

fn probe_outputs(learner: &CnnWeakLearner, x: &Tensor) -> Vec<f64> {
    let mut g = Graph::new();
    let probe = build_probe_model(learner, learner).unwrap();
    let v = g.constant(x.reshape(&[1, x.shape()[0], x.shape()[1], x.shape()[2]]).unwrap());
    let y = probe.forward(&mut g, v);
    g.data(y).to_vec()
}

#[test]
fn importance_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (c, h, w, m) = (2, 5, 6, 3);
    let learner = CnnWeakLearner::new(CnnShape::new(c, m), (h, w), 4).unwrap();
    let images = random_images(&mut rng, 3, c, h, w);
    let weights = Matrix::new(3, m, (0..3 * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut grid = ImportanceGrid::new(h, w);
    let probe = build_probe_model(&learner, &learner).unwrap();
    pixel_importance(&mut grid, &images, &weights, &SubgridMask::identity(h, w), 1, |g, x| probe.forward(g, x)).unwrap();

    let eps = 1e-5;
    let loss = |x: &Tensor, i: usize| -> f64 {
        probe_outputs(&learner, x).iter().zip(weights.row(i)).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let mut fd = vec![0.0; h * w];
    for (i, img) in images.iter().enumerate() {
        for ch in 0..c {
            for p in 0..h * w {
                let mut plus = img.clone();
                plus.data_mut()[ch * h * w + p] += eps;
                let mut minus = img.clone();
                minus.data_mut()[ch * h * w + p] -= eps;
                fd[p] += ((loss(&plus, i) - loss(&minus, i)) / (2.0 * eps)).abs();
            }
        }
    }
    fd.iter_mut().for_each(|v| *v /= images.len() as f64);
    let err = relative_error(grid.values(), &fd);
    assert!(err <= 1e-4, "{err}");
    assert!((0..h).all(|j| (0..w).all(|k| grid.refreshed_at(j, k) == 1)));
}

#[test]
fn probe_of_basic_learner_is_the_learner() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g0 = CnnWeakLearner::new(CnnShape::new(1, 3), (8, 8), 9).unwrap();
    let x = &random_images(&mut rng, 1, 1, 8, 8)[0];
    let direct = boostkit_core::Learner::Cnn(g0.clone()).predict(&[boostkit_core::Sample::Image(x.clone())]).unwrap();
    assert_eq!(probe_outputs(&g0, x), direct.row(0));
}

#[test]
fn probe_composes_incumbent_extractor_with_basic_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g0 = CnnWeakLearner::new(CnnShape::new(1, 3), (8, 8), 1).unwrap();
    // An incumbent trained on a 7x7 subgrid with its own extractor still
    // accepts full-size inputs.
    let other = CnnWeakLearner::new(CnnShape::new(1, 3), (8, 8), 77).unwrap();
    let head = g0.successor((7, 7), 5).unwrap().head().clone();
    let incumbent = CnnWeakLearner::from_parts(*g0.shape(), (7, 7), other.extractor().clone(), head).unwrap();
    let x = &random_images(&mut rng, 1, 1, 8, 8)[0];
    let got = {
        let probe = build_probe_model(&incumbent, &g0).unwrap();
        let mut g = Graph::new();
        let v = g.constant(x.reshape(&[1, 1, 8, 8]).unwrap());
        let y = probe.forward(&mut g, v);
        g.data(y).to_vec()
    };
    let manual = {
        let mut g = Graph::new();
        let e = g.bind(incumbent.extractor(), false);
        let h = g.bind(g0.head(), false);
        let v = g.constant(x.reshape(&[1, 1, 8, 8]).unwrap());
        let f = extract(&mut g, &e, v);
        let y = classify(&mut g, &h, f);
        g.data(y).to_vec()
    };
    assert_eq!(got, manual);
    // An extractor with a different output width cannot feed g_0's head.
    let narrow = CnnWeakLearner::new(CnnShape { conv2: 8, ..CnnShape::new(1, 3) }, (8, 8), 2).unwrap();
    assert!(build_probe_model(&narrow, &g0).is_err());
}

#[test]
fn planted_rows_dominate_importance() {
    // g reads only rows 1 and 4, so every other row has zero importance.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let images = random_images(&mut rng, 10, 1, 6, 6);
    let weights = Matrix::new(10, 2, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut grid = ImportanceGrid::new(6, 6);
    let mut sel = vec![0.0; 36];
    for k in 0..6 {
        sel[6 + k] = 1.0;
        sel[24 + k] = -0.5;
    }
    pixel_importance(&mut grid, &images, &weights, &SubgridMask::identity(6, 6), 1, |g, x| {
        let flat = g.reshape(x, &[g.shape(x)[0], 36]);
        let wt = g.constant(Tensor::new(vec![2, 36], sel.iter().chain(sel.iter()).copied().collect()).unwrap());
        let b = g.constant(Tensor::zeros(&[2]));
        g.linear(flat, wt, b)
    })
    .unwrap();
    let (rows, cols) = aggregate_rows_cols(&grid);
    let mask = select_subgrid(&rows, &cols, 2.0 / 6.0).unwrap();
    assert_eq!(mask.rows(), &[1, 4]);
}

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = SubgridMask> {
    (prop::sample::subsequence((0..h).collect::<Vec<_>>(), 1..=h), prop::sample::subsequence((0..w).collect::<Vec<_>>(), 1..=w))
        .prop_map(move |(r, c)| SubgridMask::new(r, c, h, w).unwrap())
}

proptest! {
    #[test]
    fn composition_matches_sequential_application(
        (first, second) in mask_strategy(6, 5).prop_flat_map(|m1| {
            let (h, w) = (m1.rows().len(), m1.cols().len());
            (Just(m1), mask_strategy(h, w))
        }),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = &random_images(&mut rng, 1, 2, 6, 5)[0];
        let seq = apply_subgrid(&apply_subgrid(x, &first).unwrap(), &second).unwrap();
        let one = apply_subgrid(x, &compose(&first, &second).unwrap()).unwrap();
        prop_assert_eq!(seq, one);
    }

    #[test]
    fn subgrid_copies_values_exactly(mask in mask_strategy(4, 7), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = &random_images(&mut rng, 1, 3, 4, 7)[0];
        let y = apply_subgrid(x, &mask).unwrap();
        let (hr, wr) = (mask.rows().len(), mask.cols().len());
        for c in 0..3 {
            for (a, &j) in mask.rows().iter().enumerate() {
                for (b, &k) in mask.cols().iter().enumerate() {
                    prop_assert_eq!(y.data()[(c * hr + a) * wr + b].to_bits(), x.data()[(c * 4 + j) * 7 + k].to_bits());
                }
            }
        }
    }

    #[test]
    fn row_permutation_permutes_row_scores(
        values in prop::collection::vec(0.0f64..10.0, 20),
        perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let grid = ImportanceGrid::from_values(4, 5, values.clone()).unwrap();
        let mut permuted = vec![0.0; 20];
        for (new, &old) in perm.iter().enumerate() {
            permuted[new * 5..new * 5 + 5].copy_from_slice(&values[old * 5..old * 5 + 5]);
        }
        let (r, _) = aggregate_rows_cols(&grid);
        let (rp, _) = aggregate_rows_cols(&ImportanceGrid::from_values(4, 5, permuted).unwrap());
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(rp[new].to_bits(), r[old].to_bits());
        }
    }
}
