//! Central finite-difference gradient checking.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Norm-wise relative error between autodiff gradients and central
/// differences with step `h`, taken over the gradients of all `inputs`
/// concatenated. `f` must build a scalar.
pub fn max_relative_error(inputs: &[Tensor], h: f64, f: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.backward(out).expect("scalar output");
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (k, t) in inputs.iter().enumerate() {
        match g.grad(vars[k]) {
            Some(a) => analytic.extend_from_slice(a),
            None => analytic.extend(std::iter::repeat_n(0.0, t.numel())),
        }
        for i in 0..t.numel() {
            let orig = t.data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe);
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe);
            probe[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    relative_error(&analytic, &numeric)
}

/// `||a - b|| / max(||a||, ||b||, 1e-6)`; the floor keeps exactly-zero
/// gradients from being judged against finite-difference rounding noise.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-6)
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Layer families covered by [`layer_suite`].
pub const LAYERS: [&str; 11] = [
    "linear",
    "conv2d",
    "maxpool2d",
    "relu",
    "layer_norm",
    "softmax",
    "log_softmax",
    "multi_head_attention",
    "embedding",
    "exp_pick",
    "weighted_square_loss",
];

/// Worst relative error of one randomly drawn configuration of `layer`.
/// Outputs are contracted with a fixed random tensor so that normalised
/// layers (softmax rows sum to one) still have informative gradients.
pub fn check_layer(layer: &str, seed: u64, h: f64) -> f64 {
    use crate::encoder::{multi_head_attention, AttentionVars};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rand_t = |shape: &[usize], rng: &mut ChaCha8Rng| -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let contract = |g: &mut Graph, out: Var, probe: &Tensor| -> Var {
        let r = g.constant(probe.reshape(g.shape(out)).unwrap());
        let p = g.mul(out, r);
        g.sum(p)
    };
    match layer {
        "linear" => {
            let (n, i, o) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
            let inputs = [rand_t(&[n, i], &mut rng), rand_t(&[o, i], &mut rng), rand_t(&[o], &mut rng)];
            let probe = rand_t(&[n * o], &mut rng);
            max_relative_error(&inputs, h, |g, v| {
                let y = g.linear(v[0], v[1], v[2]);
                contract(g, y, &probe)
            })
        }
        "conv2d" => {
            let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..3), rng.random_range(1..4));
            let k = rng.random_range(1..4);
            let (stride, pad) = (rng.random_range(1..3), rng.random_range(0..2));
            let (hh, ww) = (rng.random_range(k..6), rng.random_range(k..6));
            let inputs = [rand_t(&[n, c, hh, ww], &mut rng), rand_t(&[o, c, k, k], &mut rng), rand_t(&[o], &mut rng)];
            let oh = (hh + 2 * pad - k) / stride + 1;
            let ow = (ww + 2 * pad - k) / stride + 1;
            let probe = rand_t(&[n * o * oh * ow], &mut rng);
            max_relative_error(&inputs, h, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
                contract(g, y, &probe)
            })
        }
        "maxpool2d" => {
            let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
            let (hh, ww) = (rng.random_range(2..7), rng.random_range(2..7));
            let inputs = [rand_t(&[n, c, hh, ww], &mut rng)];
            let probe = rand_t(&[n * c * (hh / 2) * (ww / 2)], &mut rng);
            max_relative_error(&inputs, h, |g, v| {
                let y = g.maxpool2d(v[0], 2);
                contract(g, y, &probe)
            })
        }
        "relu" => {
            let n = rng.random_range(1..20);
            let inputs = [rand_t(&[n], &mut rng)];
            let probe = rand_t(&[n], &mut rng);
            max_relative_error(&inputs, h, |g, v| {
                let y = g.relu(v[0]);
                contract(g, y, &probe)
            })
        }
        "layer_norm" => {
            let (r, d) = (rng.random_range(1..4), rng.random_range(2..7));
            let inputs = [rand_t(&[r, d], &mut rng), rand_t(&[d], &mut rng), rand_t(&[d], &mut rng)];
            let probe = rand_t(&[r * d], &mut rng);
            max_relative_error(&inputs, h, |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
                contract(g, y, &probe)
            })
        }
        "softmax" | "log_softmax" => {
            let (r, d) = (rng.random_range(1..4), rng.random_range(1..7));
            let inputs = [rand_t(&[r, d], &mut rng)];
            let probe = rand_t(&[r * d], &mut rng);
            let log = layer == "log_softmax";
            max_relative_error(&inputs, h, |g, v| {
                let y = if log { g.log_softmax(v[0]) } else { g.softmax(v[0]) };
                contract(g, y, &probe)
            })
        }
        "multi_head_attention" => {
            let heads = rng.random_range(1..3);
            let d = heads * rng.random_range(1..4);
            let s = rng.random_range(1..5);
            let mut inputs = vec![rand_t(&[s, d], &mut rng)];
            for _ in 0..4 {
                inputs.push(rand_t(&[d, d], &mut rng));
                inputs.push(rand_t(&[d], &mut rng));
            }
            let probe = rand_t(&[s * d], &mut rng);
            max_relative_error(&inputs, h, |g, v| {
                let w = AttentionVars { wq: v[1], bq: v[2], wk: v[3], bk: v[4], wv: v[5], bv: v[6], wo: v[7], bo: v[8] };
                let y = multi_head_attention(g, &w, v[0], heads, &mut Vec::new());
                contract(g, y, &probe)
            })
        }
        "embedding" => {
            let (vocab, d, len) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..8));
            let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab)).collect();
            let inputs = [rand_t(&[vocab, d], &mut rng)];
            let probe = rand_t(&[len * d], &mut rng);
            max_relative_error(&inputs, h, |g, v| {
                let y = g.embedding(v[0], &ids);
                contract(g, y, &probe)
            })
        }
        "exp_pick" => {
            let (n, m) = (rng.random_range(1..5), rng.random_range(2..6));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
            let inputs = [rand_t(&[n, m], &mut rng)];
            max_relative_error(&inputs, h, |g, v| {
                let col = g.pick(v[0], &idx);
                let d = g.sub_col(v[0], col);
                let d = g.scale(d, 0.5);
                let e = g.exp(d);
                g.sum(e)
            })
        }
        "weighted_square_loss" => {
            let (n, m) = (rng.random_range(1..5), rng.random_range(1..5));
            let target: Vec<f64> = (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let inputs = [rand_t(&[n, m], &mut rng)];
            max_relative_error(&inputs, h, |g, v| g.weighted_square_loss(v[0], &target, &weights, 0.7))
        }
        other => panic!("unknown layer `{other}`"),
    }
}

/// Worst relative error per layer family over `configs` random configurations each.
pub fn layer_suite(configs: u64, h: f64) -> Vec<(&'static str, f64)> {
    LAYERS
        .iter()
        .enumerate()
        .map(|(li, &layer)| {
            let worst = (0..configs).map(|c| check_layer(layer, 1000 * li as u64 + c, h)).fold(0.0, f64::max);
            (layer, worst)
        })
        .collect()
}
