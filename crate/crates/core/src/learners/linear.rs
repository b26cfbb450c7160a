//! Closed-form learners used as exact weak learners in tests and diagnostics.

use boostkit_nn::init::fan_in_uniform;
use boostkit_nn::{Bound, Graph, ParamStore, Tensor, Var};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Matrix, Sample};
use crate::error::{CoreError, Result};

/// Input features of a sample: flattened pixels, or token counts for ids
/// below `dim`.
pub fn features(sample: &Sample, dim: usize) -> Result<Vec<f64>> {
    match sample {
        Sample::Image(t) => {
            if t.numel() != dim {
                return Err(CoreError::ExtentMismatch(format!("image with {} values for a {dim}-input linear learner", t.numel())));
            }
            Ok(t.data().to_vec())
        }
        Sample::Sequence(tokens) => {
            let mut x = vec![0.0; dim];
            for &t in tokens {
                let slot = x
                    .get_mut(t as usize)
                    .ok_or_else(|| CoreError::ExtentMismatch(format!("token {t} outside a {dim}-input linear learner")))?;
                *slot += 1.0;
            }
            Ok(x)
        }
    }
}

/// `g(x) = W x + b` with `W` of extents `[M, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLearner {
    dim: usize,
    classes: usize,
    params: ParamStore,
}

impl LinearLearner {
    pub fn new(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        params.insert("linear.w", fan_in_uniform(&[classes, dim], dim, &mut rng))?;
        params.insert("linear.b", fan_in_uniform(&[classes], dim, &mut rng))?;
        Ok(Self { dim, classes, params })
    }

    pub fn from_parts(dim: usize, classes: usize, params: ParamStore) -> Result<Self> {
        let ok = params.get("linear.w").map(Tensor::shape) == Some(&[classes, dim][..])
            && params.get("linear.b").map(Tensor::shape) == Some(&[classes][..]);
        if !ok {
            return Err(CoreError::ExtentMismatch(format!("linear checkpoint does not match {classes}x{dim}")));
        }
        Ok(Self { dim, classes, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Weighted least squares `min sum_i c_i ||W x_i + b - y_i||^2`, solved
    /// exactly (minimum-norm solution when underdetermined).
    pub fn fit_least_squares(&mut self, inputs: &[Sample], targets: &Matrix, weights: Option<&[f64]>) -> Result<()> {
        let n = inputs.len();
        if n == 0 || targets.rows() != n || targets.cols() != self.classes {
            return Err(CoreError::ExtentMismatch(format!("{n} inputs against a {}x{} target", targets.rows(), targets.cols())));
        }
        let d = self.dim + 1;
        let mut a = DMatrix::<f64>::zeros(n, d);
        let mut y = DMatrix::<f64>::zeros(n, self.classes);
        for (i, s) in inputs.iter().enumerate() {
            let c = weights.map_or(1.0, |w| w[i]);
            if !(c >= 0.0 && c.is_finite()) {
                return Err(CoreError::InvalidArgument(format!("loss weight {c} of sample {i}")));
            }
            let r = c.sqrt();
            for (j, v) in features(s, self.dim)?.into_iter().enumerate() {
                a[(i, j)] = r * v;
            }
            a[(i, self.dim)] = r;
            for (k, v) in targets.row(i).iter().enumerate() {
                y[(i, k)] = r * v;
            }
        }
        let sol = a.svd(true, true).solve(&y, 1e-12).map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
        let w = self.params.get_mut("linear.w").expect("linear.w");
        for k in 0..self.classes {
            for j in 0..self.dim {
                w.data_mut()[k * self.dim + j] = sol[(j, k)];
            }
        }
        let b = self.params.get_mut("linear.b").expect("linear.b");
        for k in 0..self.classes {
            b.data_mut()[k] = sol[(self.dim, k)];
        }
        Ok(())
    }

    pub(crate) fn stores(&self) -> [&ParamStore; 1] {
        [&self.params]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut ParamStore; 1] {
        [&mut self.params]
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &[Bound<'_>], batch: &[&Sample]) -> Result<Var> {
        let mut data = Vec::with_capacity(batch.len() * self.dim);
        for s in batch {
            data.extend(features(s, self.dim)?);
        }
        let x = g.constant(Tensor::new(vec![batch.len(), self.dim], data)?);
        Ok(g.linear(x, bound[0].get("linear.w"), bound[0].get("linear.b")))
    }
}

/// Outputs the same vector for every input.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantLearner {
    params: ParamStore,
}

impl ConstantLearner {
    pub fn new(value: Vec<f64>) -> Result<Self> {
        let mut params = ParamStore::new();
        params.insert("const.c", Tensor::from_vec(value))?;
        Ok(Self { params })
    }

    pub fn from_parts(params: ParamStore) -> Result<Self> {
        match params.get("const.c") {
            Some(t) if t.rank() == 1 => Ok(Self { params }),
            _ => Err(CoreError::ExtentMismatch("constant checkpoint needs a vector `const.c`".into())),
        }
    }

    pub fn value(&self) -> &[f64] {
        self.params.get("const.c").expect("const.c").data()
    }

    pub fn classes(&self) -> usize {
        self.value().len()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// The weighted mean of the targets, the exact least-squares constant.
    pub fn fit(&mut self, targets: &Matrix, weights: Option<&[f64]>) -> Result<()> {
        let m = self.classes();
        if targets.cols() != m || targets.rows() == 0 {
            return Err(CoreError::ExtentMismatch(format!("{}x{} targets for {m} classes", targets.rows(), targets.cols())));
        }
        let mut mean = vec![0.0; m];
        let mut total = 0.0;
        for (i, row) in targets.iter_rows().enumerate() {
            let c = weights.map_or(1.0, |w| w[i]);
            total += c;
            for (a, v) in mean.iter_mut().zip(row) {
                *a += c * v;
            }
        }
        if total > 0.0 {
            mean.iter_mut().for_each(|a| *a /= total);
        }
        self.params.get_mut("const.c").expect("const.c").data_mut().copy_from_slice(&mean);
        Ok(())
    }

    pub(crate) fn stores(&self) -> [&ParamStore; 1] {
        [&self.params]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut ParamStore; 1] {
        [&mut self.params]
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &[Bound<'_>], batch: usize) -> Var {
        let zeros = g.constant(Tensor::zeros(&[batch, self.classes()]));
        g.add_row(zeros, bound[0].get("const.c"))
    }
}
