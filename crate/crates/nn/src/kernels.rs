//! Plain loop kernels for the spatial layers. The graph ops in
//! [`crate::graph`] call into these for both passes.

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (batch, c_in, h, w) = match *input {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(NnError::Shape(format!("conv2d input must be [C,H,W] or [N,C,H,W], got {input:?}"))),
        };
        let [c_out, kc, kh, kw] = *kernels else {
            return Err(NnError::Shape(format!("conv2d kernels must be [O,C,KH,KW], got {kernels:?}")));
        };
        if kc != c_in {
            return Err(NnError::Shape(format!("kernel expects {kc} input channels, input has {c_in}")));
        }
        if stride == 0 {
            return Err(NnError::Shape("conv2d stride must be positive".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(NnError::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        Ok(Self { batch, c_in, h, w, c_out, kh, kw, stride, padding, oh, ow })
    }

    pub fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.batch, self.c_out, self.oh, self.ow]
        } else {
            vec![self.c_out, self.oh, self.ow]
        }
    }

    #[inline]
    fn src(&self, oy: usize, ky: usize, ox: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

pub(crate) fn conv2d_raw(g: &ConvGeom, input: &[f64], kernels: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.c_out * g.oh * g.ow];
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let k_plane = g.kh * g.kw;
    for n in 0..g.batch {
        let src = &input[n * g.c_in * in_plane..][..g.c_in * in_plane];
        for o in 0..g.c_out {
            let ker = &kernels[o * g.c_in * k_plane..][..g.c_in * k_plane];
            let dst = &mut out[(n * g.c_out + o) * out_plane..][..out_plane];
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for c in 0..g.c_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, x)) = g.src(oy, ky, ox, kx) {
                                    acc += src[c * in_plane + y * g.w + x] * ker[c * k_plane + ky * g.kw + kx];
                                }
                            }
                        }
                    }
                    dst[oy * g.ow + ox] = match bias {
                        Some(b) => acc + b[o],
                        None => acc,
                    };
                }
            }
        }
    }
    out
}

/// Returns (d_input, d_kernels, d_bias).
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernels: &[f64],
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d_in = vec![0.0; input.len()];
    let mut d_k = vec![0.0; kernels.len()];
    let mut d_b = vec![0.0; g.c_out];
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let k_plane = g.kh * g.kw;
    for n in 0..g.batch {
        for o in 0..g.c_out {
            let go = &d_out[(n * g.c_out + o) * out_plane..][..out_plane];
            d_b[o] += go.iter().sum::<f64>();
            for c in 0..g.c_in {
                let in_off = (n * g.c_in + c) * in_plane;
                let k_off = (o * g.c_in + c) * k_plane;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let grad = go[oy * g.ow + ox];
                        if grad == 0.0 {
                            continue;
                        }
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((y, x)) = g.src(oy, ky, ox, kx) {
                                    d_k[k_off + ky * g.kw + kx] += grad * input[in_off + y * g.w + x];
                                    d_in[in_off + y * g.w + x] += grad * kernels[k_off + ky * g.kw + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (d_in, d_k, d_b)
}

/// Cross-correlation of `input` ([C,H,W] or [N,C,H,W]) with `kernels`
/// ([O,C,KH,KW]); output extents follow `floor((H + 2p - K) / s) + 1`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let geom = ConvGeom::new(input.shape(), kernels.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.numel() != geom.c_out {
            return Err(NnError::Shape(format!("bias has {} entries for {} output channels", b.numel(), geom.c_out)));
        }
    }
    let out = conv2d_raw(&geom, input.data(), kernels.data(), bias.map(|b| b.data()));
    Tensor::new(geom.out_shape(input.rank() == 4), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub size: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    pub fn new(shape: &[usize], size: usize) -> Result<Self> {
        if shape.len() < 3 {
            return Err(NnError::Shape(format!("max-pool input must be [..,C,H,W], got {shape:?}")));
        }
        let r = shape.len();
        let (h, w) = (shape[r - 2], shape[r - 1]);
        if size == 0 || h < size || w < size {
            return Err(NnError::Shape(format!("pool window {size} does not fit a {h}x{w} plane")));
        }
        let planes = shape[..r - 2].iter().product();
        Ok(Self { planes, h, w, size, oh: h / size, ow: w / size })
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Vec<usize> {
        let mut s = in_shape.to_vec();
        let r = s.len();
        s[r - 2] = self.oh;
        s[r - 1] = self.ow;
        s
    }
}

/// Non-overlapping max pooling with floor semantics. Returns values and the
/// flat input index of each winner (first maximum on ties).
pub(crate) fn maxpool_raw(g: &PoolGeom, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n_out = g.planes * g.oh * g.ow;
    let mut out = Vec::with_capacity(n_out);
    let mut arg = Vec::with_capacity(n_out);
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + oy * g.size * g.w + ox * g.size;
                for dy in 0..g.size {
                    for dx in 0..g.size {
                        let i = base + (oy * g.size + dy) * g.w + ox * g.size + dx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2d_forward(input: &Tensor, size: usize) -> Result<Tensor> {
    let geom = PoolGeom::new(input.shape(), size)?;
    let (out, _) = maxpool_raw(&geom, input.data());
    Tensor::new(geom.out_shape(input.shape()), out)
}
