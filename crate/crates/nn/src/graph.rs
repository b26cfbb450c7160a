//! Tape-style reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! already a topological order, so [`Graph::backward`] is a single reverse
//! sweep. Row-wise operations (softmax, layer-norm, bias add) treat their input
//! as a matrix whose row length is the last extent.

use crate::error::{NnError, Result};
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    SubCol(Var, Var),
    Exp(Var),
    Relu(Var),
    Sum(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Pick { x: Var, idx: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Conv2d { x: Var, k: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, arg: Vec<usize> },
    Reshape(Var),
    WeightedSqLoss { pred: Var, target: Vec<f64>, weights: Vec<f64>, scale: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let d = *shape.last().expect("rank >= 1");
    (shape.iter().product::<usize>() / d, d)
}

fn matrix_dims(shape: &[usize], what: &str) -> (usize, usize) {
    assert_eq!(shape.len(), 2, "contract violation: {what} expects a matrix, got {shape:?}");
    (shape[0], shape[1])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, parents: &[Var]) -> Var {
        let requires = parents.iter().any(|p| self.nodes[p.0].value.requires_grad());
        let value = Tensor::new(shape, data)
            .expect("contract violation: op produced inconsistent shape")
            .with_requires_grad(requires);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a tensor as a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let mut t = tensor;
        t.zero_grad();
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Binds every parameter of `store` as a leaf. Frozen bindings never
    /// receive gradients.
    pub fn bind<'s>(&mut self, store: &'s ParamStore, trainable: bool) -> Bound<'s> {
        let vars = store.iter().map(|(_, t)| self.leaf(t.clone().with_requires_grad(trainable))).collect();
        Bound { store, vars }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.zero_grad());
    }

    // ---- elementwise -------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "contract violation: {what} operands differ in shape");
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.data(a).iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let out = self.zip(a, b, |x, y| x + y);
        self.push(out, self.shape(a).to_vec(), Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let out = self.zip(a, b, |x, y| x - y);
        self.push(out, self.shape(a).to_vec(), Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let out = self.zip(a, b, |x, y| x * y);
        self.push(out, self.shape(a).to_vec(), Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x * c);
        self.push(out, self.shape(a).to_vec(), Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x + c);
        self.push(out, self.shape(a).to_vec(), Op::AddScalar(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::exp);
        self.push(out, self.shape(a).to_vec(), Op::Exp(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, self.shape(a).to_vec(), Op::Relu(a), &[a])
    }

    /// Adds a length-`D` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = rows_cols(self.shape(a));
        assert_eq!(self.value(row).numel(), d, "contract violation: add_row width");
        let r = self.data(row);
        let out = self.data(a).chunks(d).flat_map(|c| c.iter().zip(r).map(|(x, y)| x + y)).collect();
        self.push(out, self.shape(a).to_vec(), Op::AddRow(a, row), &[a, row])
    }

    /// Subtracts column vector `col` ([N,1]) from every column of `a` ([N,M]).
    pub fn sub_col(&mut self, a: Var, col: Var) -> Var {
        let (n, m) = matrix_dims(self.shape(a), "sub_col");
        assert_eq!(self.value(col).numel(), n, "contract violation: sub_col height");
        let c = self.data(col);
        let out = self.data(a).chunks(m).zip(c).flat_map(|(row, &cv)| row.iter().map(move |x| x - cv)).collect();
        self.push(out, vec![n, m], Op::SubCol(a, col), &[a, col])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(vec![s], vec![1], Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.value(a).numel(),
            "contract violation: reshape {:?} -> {shape:?}",
            self.shape(a)
        );
        let out = self.data(a).to_vec();
        self.push(out, shape.to_vec(), Op::Reshape(a), &[a])
    }

    // ---- matrix ops --------------------------------------------------

    /// `a` [N,K] times `b` [K,M].
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = matrix_dims(self.shape(a), "matmul");
        let (k2, m) = matrix_dims(self.shape(b), "matmul");
        assert_eq!(k, k2, "contract violation: matmul inner extents {k} vs {k2}");
        let out = mm(self.data(a), self.data(b), n, k, m);
        self.push(out, vec![n, m], Op::MatMul(a, b), &[a, b])
    }

    /// `a` [N,K] times the transpose of `b` [M,K].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = matrix_dims(self.shape(a), "matmul_nt");
        let (m, k2) = matrix_dims(self.shape(b), "matmul_nt");
        assert_eq!(k, k2, "contract violation: matmul_nt inner extents {k} vs {k2}");
        let out = mm_nt(self.data(a), self.data(b), n, k, m);
        self.push(out, vec![n, m], Op::MatMulNt(a, b), &[a, b])
    }

    /// `x` [N,IN] through weight [OUT,IN] and bias [OUT].
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let h = self.matmul_nt(x, weight);
        self.add_row(h, bias)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (n, d) = matrix_dims(self.shape(x), "slice_cols");
        assert!(start < end && end <= d, "contract violation: column range {start}..{end} of {d}");
        let out = self.data(x).chunks(d).flat_map(|r| r[start..end].iter().copied()).collect();
        self.push(out, vec![n, end - start], Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "contract violation: concat of nothing");
        let n = matrix_dims(self.shape(xs[0]), "concat_cols").0;
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let (r, c) = matrix_dims(self.shape(v), "concat_cols");
                assert_eq!(r, n, "contract violation: concat_cols row counts differ");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.data(v)[i * w..(i + 1) * w]);
            }
        }
        self.push(out, vec![n, total], Op::ConcatCols(xs.to_vec()), xs)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "contract violation: concat of nothing");
        let d = matrix_dims(self.shape(xs[0]), "concat_rows").1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &v in xs {
            let (r, c) = matrix_dims(self.shape(v), "concat_rows");
            assert_eq!(c, d, "contract violation: concat_rows widths differ");
            rows += r;
            out.extend_from_slice(self.data(v));
        }
        self.push(out, vec![rows, d], Op::ConcatRows(xs.to_vec()), xs)
    }

    /// Row `i` of a matrix as a [1,D] matrix.
    pub fn select_row(&mut self, x: Var, i: usize) -> Var {
        let (n, d) = matrix_dims(self.shape(x), "select_row");
        assert!(i < n, "contract violation: row {i} of {n}");
        // Expressed as a one-hot embedding lookup so it shares the scatter backward.
        let out = self.data(x)[i * d..(i + 1) * d].to_vec();
        self.push(out, vec![1, d], Op::Embedding { table: x, ids: vec![i] }, &[x])
    }

    /// Gathers `x[i, idx[i]]` into an [N,1] column.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Var {
        let (n, m) = matrix_dims(self.shape(x), "pick");
        assert_eq!(idx.len(), n, "contract violation: pick index count");
        assert!(idx.iter().all(|&j| j < m), "contract violation: pick index out of range");
        let d = self.data(x);
        let out = idx.iter().enumerate().map(|(i, &j)| d[i * m + j]).collect();
        self.push(out, vec![n, 1], Op::Pick { x, idx: idx.to_vec() }, &[x])
    }

    // ---- normalisation ----------------------------------------------

    pub fn softmax(&mut self, x: Var) -> Var {
        let (_, d) = rows_cols(self.shape(x));
        let out = self.data(x).chunks(d).flat_map(softmax_row).collect();
        self.push(out, self.shape(x).to_vec(), Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (_, d) = rows_cols(self.shape(x));
        let out = self
            .data(x)
            .chunks(d)
            .flat_map(|r| {
                let lse = log_sum_exp(r);
                r.iter().map(move |v| v - lse)
            })
            .collect();
        self.push(out, self.shape(x).to_vec(), Op::LogSoftmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (rows, d) = rows_cols(self.shape(x));
        assert_eq!(self.value(gamma).numel(), d, "contract violation: layer_norm gamma width");
        assert_eq!(self.value(beta).numel(), d, "contract violation: layer_norm beta width");
        let mut xhat = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        for r in self.data(x).chunks(d) {
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            xhat.extend(r.iter().map(|v| (v - mean) * inv));
        }
        let g = self.data(gamma);
        let b = self.data(beta);
        let out = xhat.chunks(d).flat_map(|r| r.iter().zip(g).zip(b).map(|((h, g), b)| h * g + b)).collect();
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])
    }

    // ---- lookup / spatial --------------------------------------------

    /// Rows of `table` [V,D] selected by `ids`, giving [len,D].
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = matrix_dims(self.shape(table), "embedding");
        assert!(!ids.is_empty(), "contract violation: empty id list");
        assert!(ids.iter().all(|&i| i < v), "contract violation: embedding id out of range");
        let t = self.data(table);
        let out = ids.iter().flat_map(|&i| t[i * d..(i + 1) * d].iter().copied()).collect();
        self.push(out, vec![ids.len(), d], Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, padding: usize) -> Var {
        let geom = ConvGeom::new(self.shape(x), self.shape(k), stride, padding)
            .unwrap_or_else(|e| panic!("contract violation: {e}"));
        if let Some(b) = b {
            assert_eq!(self.value(b).numel(), geom.c_out, "contract violation: conv bias width");
        }
        let out = kernels::conv2d_raw(&geom, self.data(x), self.data(k), b.map(|b| self.data(b)));
        let shape = geom.out_shape(self.value(x).rank() == 4);
        let mut parents = vec![x, k];
        parents.extend(b);
        self.push(out, shape, Op::Conv2d { x, k, b, geom }, &parents)
    }

    pub fn maxpool2d(&mut self, x: Var, size: usize) -> Var {
        let geom = PoolGeom::new(self.shape(x), size).unwrap_or_else(|e| panic!("contract violation: {e}"));
        let (out, arg) = kernels::maxpool_raw(&geom, self.data(x));
        let shape = geom.out_shape(self.shape(x));
        self.push(out, shape, Op::MaxPool { x, arg }, &[x])
    }

    // ---- losses -------------------------------------------------------

    /// `scale * sum_i weights[i] * ||pred[i] - target[i]||^2` for `pred` [N,M].
    pub fn weighted_square_loss(&mut self, pred: Var, target: &[f64], weights: &[f64], scale: f64) -> Var {
        let (n, m) = matrix_dims(self.shape(pred), "weighted_square_loss");
        assert_eq!(target.len(), n * m, "contract violation: target extent");
        assert_eq!(weights.len(), n, "contract violation: weight count");
        let p = self.data(pred);
        let mut total = 0.0;
        for i in 0..n {
            let row: f64 = (0..m).map(|j| (p[i * m + j] - target[i * m + j]).powi(2)).sum();
            total += weights[i] * row;
        }
        let op = Op::WeightedSqLoss { pred, target: target.to_vec(), weights: weights.to_vec(), scale };
        self.push(vec![scale * total], vec![1], op, &[pred])
    }

    /// Mean negative log-likelihood of `labels` (0-based) under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let n = labels.len();
        let lp = self.log_softmax(logits);
        let picked = self.pick(lp, labels);
        let s = self.sum(picked);
        self.scale(s, -1.0 / n as f64)
    }

    // ---- backward -----------------------------------------------------

    /// Accumulates d`loss`/d`node` into the grad buffer of every node that
    /// requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(NnError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.value(loss).requires_grad() {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            for (v, delta) in self.local_grads(i, &g) {
                if !self.nodes[v.0].value.requires_grad() {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(delta),
                }
            }
            self.nodes[i].value.accumulate_grad(g);
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let da = g.iter().zip(self.data(*b)).map(|(g, y)| g * y).collect();
                let db = g.iter().zip(self.data(*a)).map(|(g, x)| g * x).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|v| v * c).collect())],
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::AddRow(a, row) => {
                let d = self.value(*row).numel();
                let mut dr = vec![0.0; d];
                for chunk in g.chunks(d) {
                    dr.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                }
                vec![(*a, g.to_vec()), (*row, dr)]
            }
            Op::SubCol(a, col) => {
                let m = self.shape(*a)[1];
                let dc = g.chunks(m).map(|r| -r.iter().sum::<f64>()).collect();
                vec![(*a, g.to_vec()), (*col, dc)]
            }
            Op::Exp(a) => vec![(*a, g.iter().zip(out).map(|(g, y)| g * y).collect())],
            Op::Relu(a) => {
                let da = g.iter().zip(self.data(*a)).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                vec![(*a, da)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).numel()])],
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                // dA = G B^T, dB = A^T G
                let da = mm_nt(g, self.data(*b), n, m, k);
                let db = mm_tn(self.data(*a), g, n, k, m);
                vec![(*a, da), (*b, db)]
            }
            Op::MatMulNt(a, b) => {
                let (n, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[0];
                // dA = G B, dB = G^T A
                let da = mm(g, self.data(*b), n, m, k);
                let db = mm_tn(g, self.data(*a), n, m, k);
                vec![(*a, da), (*b, db)]
            }
            Op::SliceCols { x, start } => {
                let d = self.shape(*x)[1];
                let w = node.value.shape()[1];
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (r, gr) in g.chunks(w).enumerate() {
                    dx[r * d + start..r * d + start + w].copy_from_slice(gr);
                }
                vec![(*x, dx)]
            }
            Op::ConcatCols(xs) => {
                let total = node.value.shape()[1];
                let n = node.value.shape()[0];
                let mut off = 0;
                xs.iter()
                    .map(|&v| {
                        let w = self.shape(v)[1];
                        let dv = (0..n).flat_map(|r| g[r * total + off..r * total + off + w].iter().copied()).collect();
                        off += w;
                        (v, dv)
                    })
                    .collect()
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                xs.iter()
                    .map(|&v| {
                        let len = self.value(v).numel();
                        let dv = g[off..off + len].to_vec();
                        off += len;
                        (v, dv)
                    })
                    .collect()
            }
            Op::Pick { x, idx } => {
                let m = self.shape(*x)[1];
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * m + j] += g[i];
                }
                vec![(*x, dx)]
            }
            Op::Softmax(x) => {
                let d = *self.shape(*x).last().unwrap();
                let dx = out
                    .chunks(d)
                    .zip(g.chunks(d))
                    .flat_map(|(y, gr)| {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        y.iter().zip(gr).map(move |(y, g)| y * (g - dot))
                    })
                    .collect();
                vec![(*x, dx)]
            }
            Op::LogSoftmax(x) => {
                let d = *self.shape(*x).last().unwrap();
                let dx = out
                    .chunks(d)
                    .zip(g.chunks(d))
                    .flat_map(|(y, gr)| {
                        let s: f64 = gr.iter().sum();
                        y.iter().zip(gr).map(move |(y, g)| g - y.exp() * s)
                    })
                    .collect();
                vec![(*x, dx)]
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = self.value(*gamma).numel();
                let gm = self.data(*gamma);
                let mut dx = Vec::with_capacity(g.len());
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for ((gr, hr), inv) in g.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        dg[j] += gr[j] * hr[j];
                        db[j] += gr[j];
                        let dh = gr[j] * gm[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    let df = d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gm[j];
                        dx.push(inv / df * (df * dh - sum_dh - hr[j] * sum_dh_h));
                    }
                }
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![0.0; self.value(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    dt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(a, b)| *a += b);
                }
                vec![(*table, dt)]
            }
            Op::Conv2d { x, k, b, geom } => {
                let (dx, dk, db) = kernels::conv2d_backward(geom, self.data(*x), self.data(*k), g);
                let mut v = vec![(*x, dx), (*k, dk)];
                if let Some(b) = b {
                    v.push((*b, db));
                }
                v
            }
            Op::MaxPool { x, arg } => {
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (&src, gv) in arg.iter().zip(g) {
                    dx[src] += gv;
                }
                vec![(*x, dx)]
            }
            Op::WeightedSqLoss { pred, target, weights, scale } => {
                let m = self.shape(*pred)[1];
                let p = self.data(*pred);
                let dp = p
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(idx, (p, t))| 2.0 * scale * g[0] * weights[idx / m] * (p - t))
                    .collect();
                vec![(*pred, dp)]
            }
        }
    }
}

/// Parameters of a [`ParamStore`] bound into a graph, in store order.
pub struct Bound<'s> {
    store: &'s ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        let i = self.store.index_of(name).unwrap_or_else(|| panic!("contract violation: no parameter `{name}`"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients aligned with the store; parameters the loss does not reach
    /// get zeros.
    pub fn grads(&self, graph: &Graph) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| graph.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; graph.value(v).numel()]))
            .collect()
    }
}

pub(crate) fn softmax_row(r: &[f64]) -> Vec<f64> {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn log_sum_exp(r: &[f64]) -> f64 {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// [n,k] x [k,m]
fn mm(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            orow.iter_mut().zip(&b[p * m..(p + 1) * m]).for_each(|(o, bv)| *o += av * bv);
        }
    }
    out
}

/// [n,k] x [m,k]^T
fn mm_nt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out.push(ar.iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum());
        }
    }
    out
}

/// [n,k]^T x [n,m] -> [k,m]
fn mm_tn(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for r in 0..n {
        let brow = &b[r * m..(r + 1) * m];
        for p in 0..k {
            let av = a[r * k + p];
            if av == 0.0 {
                continue;
            }
            out[p * m..(p + 1) * m].iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
    out
}
