//! Pixel importance and row/column subgrid selection for image learners.

use boostkit_nn::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{CoreError, Result};

const IMPORTANCE_BATCH: usize = 32;

/// Persistent per-pixel importance over the full image grid, with the round
/// at which each entry was last refreshed.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceGrid {
    h: usize,
    w: usize,
    values: Vec<f64>,
    refreshed: Vec<usize>,
}

impl ImportanceGrid {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, values: vec![0.0; h * w], refreshed: vec![0; h * w] }
    }

    pub fn from_values(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(CoreError::InvalidArgument("importance grid needs h*w nonnegative values".into()));
        }
        Ok(Self { h, w, values, refreshed: vec![0; h * w] })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.w + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Round at which pixel `(j, k)` was last refreshed.
    pub fn refreshed_at(&self, j: usize, k: usize) -> usize {
        self.refreshed[j * self.w + k]
    }
}

/// Kept rows and columns, both strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgridMask {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn check_axis(idx: &[usize], extent: usize, what: &str) -> Result<()> {
    if idx.is_empty() {
        return Err(CoreError::InvalidArgument(format!("subgrid keeps no {what}")));
    }
    if idx.windows(2).any(|p| p[0] >= p[1]) {
        return Err(CoreError::InvalidArgument(format!("subgrid {what} must be strictly increasing")));
    }
    if idx[idx.len() - 1] >= extent {
        return Err(CoreError::InvalidArgument(format!(
            "subgrid {what} index {} outside extent {extent}",
            idx[idx.len() - 1]
        )));
    }
    Ok(())
}

impl SubgridMask {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, h: usize, w: usize) -> Result<Self> {
        check_axis(&rows, h, "rows")?;
        check_axis(&cols, w, "columns")?;
        Ok(Self { rows, cols })
    }

    pub fn identity(h: usize, w: usize) -> Self {
        Self { rows: (0..h).collect(), cols: (0..w).collect() }
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn pixel_count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        self.rows.binary_search(&j).is_ok() && self.cols.binary_search(&k).is_ok()
    }

    /// Checks that the mask indexes into an `h x w` grid.
    pub fn fits(&self, h: usize, w: usize) -> Result<()> {
        check_axis(&self.rows, h, "rows")?;
        check_axis(&self.cols, w, "columns")
    }
}

/// Refreshes the entries of `grid` inside `refresh` with the mean over samples
/// of `sum_c |d L / d x_i[c, j, k]|`, where `L = sum_i ||probe(x_i) - w_i||^2`.
/// Entries outside `refresh` keep their previous values.
///
/// `probe` maps a `[B,C,H,W]` batch to `[B,M]` outputs. Samples do not
/// interact, so one backward pass per batch yields every per-sample input
/// gradient.
pub fn pixel_importance(
    grid: &mut ImportanceGrid,
    images: &[Tensor],
    weights: &Matrix,
    refresh: &SubgridMask,
    round: usize,
    probe: impl Fn(&mut Graph, Var) -> Var,
) -> Result<()> {
    let (h, w) = (grid.h, grid.w);
    if images.len() != weights.rows() || images.is_empty() {
        return Err(CoreError::ExtentMismatch(format!("{} images for {} weight rows", images.len(), weights.rows())));
    }
    let shape = images[0].shape().to_vec();
    if shape.len() != 3 || shape[1] != h || shape[2] != w {
        return Err(CoreError::ExtentMismatch(format!("images {shape:?} vs importance grid {h}x{w}")));
    }
    refresh.fits(h, w)?;
    let c = shape[0];
    let m = weights.cols();
    let plane = h * w;
    let mut acc = vec![0.0; plane];
    let mut start = 0;
    while start < images.len() {
        let end = (start + IMPORTANCE_BATCH).min(images.len());
        let b = end - start;
        let mut data = Vec::with_capacity(b * c * plane);
        for img in &images[start..end] {
            if img.shape() != shape.as_slice() {
                return Err(CoreError::ExtentMismatch("images differ in extents".into()));
            }
            data.extend_from_slice(img.data());
        }
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![b, c, h, w], data)?);
        let out = probe(&mut g, x);
        if g.shape(out) != [b, m] {
            return Err(CoreError::ExtentMismatch(format!("probe output {:?}, expected [{b}, {m}]", g.shape(out))));
        }
        let target = weights.data()[start * m..end * m].to_vec();
        let loss = g.weighted_square_loss(out, &target, &vec![1.0; b], 1.0);
        g.backward(loss)?;
        let grad = g.grad(x).unwrap_or(&[]);
        for i in 0..b {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for (a, gv) in acc.iter_mut().zip(grad.get(base..base + plane).unwrap_or(&[])) {
                    *a += gv.abs();
                }
            }
        }
        start = end;
    }
    let n = images.len() as f64;
    for &j in refresh.rows() {
        for &k in refresh.cols() {
            grid.values[j * w + k] = acc[j * w + k] / n;
            grid.refreshed[j * w + k] = round;
        }
    }
    Ok(())
}

/// Row score = row sum / W, column score = column sum / H.
pub fn aggregate_rows_cols(grid: &ImportanceGrid) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (grid.h, grid.w);
    let mut rows = vec![0.0; h];
    let mut cols = vec![0.0; w];
    for j in 0..h {
        for k in 0..w {
            let v = grid.get(j, k);
            rows[j] += v;
            cols[k] += v;
        }
    }
    rows.iter_mut().for_each(|r| *r /= w as f64);
    cols.iter_mut().for_each(|c| *c /= h as f64);
    (rows, cols)
}

/// `ceil(fraction * n)`, guarded against representation error so that for
/// instance `0.8 * 10` keeps 8.
pub fn keep_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Indices of the `k` highest scores, lower index first on ties, returned in
/// increasing order.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Keeps the `ceil(rho H)` best rows and `ceil(rho W)` best columns.
pub fn select_subgrid(row_scores: &[f64], col_scores: &[f64], rho: f64) -> Result<SubgridMask> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(CoreError::InvalidArgument(format!("keep fraction must lie in (0, 1], got {rho}")));
    }
    if row_scores.is_empty() || col_scores.is_empty() {
        return Err(CoreError::InvalidArgument("empty score vector".into()));
    }
    let rows = top_k(row_scores, keep_count(rho, row_scores.len()));
    let cols = top_k(col_scores, keep_count(rho, col_scores.len()));
    Ok(SubgridMask { rows, cols })
}

/// `out[c, a, b] = x[c, rows[a], cols[b]]`.
pub fn apply_subgrid(x: &Tensor, mask: &SubgridMask) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(CoreError::ExtentMismatch(format!("subgrid expects [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    mask.fits(h, w)?;
    let d = x.data();
    let mut out = Vec::with_capacity(c * mask.pixel_count());
    for ch in 0..c {
        for &j in &mask.rows {
            let base = (ch * h + j) * w;
            out.extend(mask.cols.iter().map(|&k| d[base + k]));
        }
    }
    Ok(Tensor::new(vec![c, mask.rows.len(), mask.cols.len()], out)?)
}

/// The single mask equivalent to applying `first` and then `second`, where
/// `second` indexes into the output of `first`.
pub fn compose(first: &SubgridMask, second: &SubgridMask) -> Result<SubgridMask> {
    second.fits(first.rows.len(), first.cols.len())?;
    Ok(SubgridMask {
        rows: second.rows.iter().map(|&r| first.rows[r]).collect(),
        cols: second.cols.iter().map(|&k| first.cols[k]).collect(),
    })
}
