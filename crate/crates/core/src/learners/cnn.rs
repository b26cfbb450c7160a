//! Small CNN weak learner split into an extent-agnostic feature extractor and
//! a grid-specific linear classifier.

use boostkit_nn::init::fan_in_uniform;
use boostkit_nn::{Bound, Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Channels of the two convolution stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnShape {
    pub in_channels: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub classes: usize,
}

impl CnnShape {
    pub fn new(in_channels: usize, classes: usize) -> Self {
        Self { in_channels, conv1: 8, conv2: 16, classes }
    }

    /// Smallest input height or width the extractor accepts: both 2x2 pools
    /// must fit.
    pub const MIN_EXTENT: usize = 4;

    /// Width of the flattened extractor output on an `h x w` grid.
    pub fn feature_width(&self, h: usize, w: usize) -> Result<usize> {
        if h < Self::MIN_EXTENT || w < Self::MIN_EXTENT {
            return Err(CoreError::ExtentMismatch(format!(
                "{h}x{w} grid is below the extractor minimum of {0}x{0}",
                Self::MIN_EXTENT
            )));
        }
        Ok(self.conv2 * (h / 4) * (w / 4))
    }
}

/// Convolutions `conv1.*`, `conv2.*` in the extractor store and `head.w`,
/// `head.b` in the classifier store.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnWeakLearner {
    shape: CnnShape,
    grid: (usize, usize),
    extractor: ParamStore,
    head: ParamStore,
}

pub fn init_extractor(shape: &CnnShape, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let fan1 = shape.in_channels * 9;
    s.insert("conv1.k", fan_in_uniform(&[shape.conv1, shape.in_channels, 3, 3], fan1, &mut rng))?;
    s.insert("conv1.b", fan_in_uniform(&[shape.conv1], fan1, &mut rng))?;
    let fan2 = shape.conv1 * 9;
    s.insert("conv2.k", fan_in_uniform(&[shape.conv2, shape.conv1, 3, 3], fan2, &mut rng))?;
    s.insert("conv2.b", fan_in_uniform(&[shape.conv2], fan2, &mut rng))?;
    Ok(s)
}

/// A fresh linear classifier sized for `grid`, uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn new_head(shape: &CnnShape, grid: (usize, usize), seed: u64) -> Result<ParamStore> {
    let width = shape.feature_width(grid.0, grid.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    s.insert("head.w", fan_in_uniform(&[shape.classes, width], width, &mut rng))?;
    s.insert("head.b", fan_in_uniform(&[shape.classes], width, &mut rng))?;
    Ok(s)
}

/// Extractor forward on a `[B,C,H,W]` batch, flattened to `[B,F]`.
pub fn extract(g: &mut Graph, p: &Bound<'_>, x: Var) -> Var {
    let h = g.conv2d(x, p.get("conv1.k"), Some(p.get("conv1.b")), 1, 1);
    let h = g.maxpool2d(h, 2);
    let h = g.relu(h);
    let h = g.conv2d(h, p.get("conv2.k"), Some(p.get("conv2.b")), 1, 1);
    let h = g.maxpool2d(h, 2);
    let h = g.relu(h);
    let s = g.shape(h).to_vec();
    g.reshape(h, &[s[0], s[1] * s[2] * s[3]])
}

pub fn classify(g: &mut Graph, p: &Bound<'_>, features: Var) -> Var {
    g.linear(features, p.get("head.w"), p.get("head.b"))
}

impl CnnWeakLearner {
    pub fn new(shape: CnnShape, grid: (usize, usize), seed: u64) -> Result<Self> {
        let extractor = init_extractor(&shape, seed)?;
        let head = new_head(&shape, grid, seed.wrapping_add(1))?;
        Ok(Self { shape, grid, extractor, head })
    }

    /// Assembles a learner from an extractor and a head sized for `grid`.
    pub fn from_parts(shape: CnnShape, grid: (usize, usize), extractor: ParamStore, head: ParamStore) -> Result<Self> {
        let width = shape.feature_width(grid.0, grid.1)?;
        let hw = head.get("head.w").ok_or_else(|| CoreError::ExtentMismatch("head is missing head.w".into()))?;
        if hw.shape() != [shape.classes, width] {
            return Err(CoreError::ExtentMismatch(format!(
                "head {:?} does not fit a {}x{} grid ({} features)",
                hw.shape(),
                grid.0,
                grid.1,
                width
            )));
        }
        for name in ["conv1.k", "conv1.b", "conv2.k", "conv2.b"] {
            if extractor.get(name).is_none() {
                return Err(CoreError::ExtentMismatch(format!("extractor is missing {name}")));
            }
        }
        Ok(Self { shape, grid, extractor, head })
    }

    /// Next additive learner: this learner's extractor followed by a fresh
    /// head for `grid`.
    pub fn successor(&self, grid: (usize, usize), seed: u64) -> Result<Self> {
        let head = new_head(&self.shape, grid, seed)?;
        Self::from_parts(self.shape, grid, self.transfer_extractor(), head)
    }

    /// Deep copy of the extractor parameters with fresh optimizer state.
    pub fn transfer_extractor(&self) -> ParamStore {
        let mut e = self.extractor.clone();
        e.reset_state();
        e
    }

    pub fn shape(&self) -> &CnnShape {
        &self.shape
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn extractor(&self) -> &ParamStore {
        &self.extractor
    }

    pub fn head(&self) -> &ParamStore {
        &self.head
    }

    pub fn head_width(&self) -> usize {
        self.head.get("head.w").map_or(0, |t| t.shape()[1])
    }

    pub(crate) fn stores(&self) -> [&ParamStore; 2] {
        [&self.extractor, &self.head]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut ParamStore; 2] {
        [&mut self.extractor, &mut self.head]
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &[Bound<'_>], images: &[&Tensor]) -> Result<Var> {
        let x = stack(images, self.grid)?;
        let x = g.constant(x);
        let f = extract(g, &bound[0], x);
        Ok(classify(g, &bound[1], f))
    }
}

/// Stacks `[C,H,W]` images into one `[B,C,H,W]` tensor, checking the grid.
pub fn stack(images: &[&Tensor], grid: (usize, usize)) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| CoreError::InvalidArgument("empty batch".into()))?;
    let s = first.shape();
    if s.len() != 3 || (s[1], s[2]) != grid {
        return Err(CoreError::ExtentMismatch(format!("image {s:?} does not match learner grid {grid:?}")));
    }
    let mut data = Vec::with_capacity(images.len() * first.numel());
    for img in images {
        if img.shape() != s {
            return Err(CoreError::ExtentMismatch("images in a batch differ in extents".into()));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::new(vec![images.len(), s[0], s[1], s[2]], data)?)
}

/// The extractor of one learner composed with the classifier of another,
/// both borrowed read-only.
pub struct ProbeModel<'a> {
    extractor: &'a ParamStore,
    head: &'a ParamStore,
}

/// Pairs the extractor of `incumbent` with the classifier of `basic`. The
/// classifier must accept the extractor's output on `basic`'s full grid.
pub fn build_probe_model<'a>(incumbent: &'a CnnWeakLearner, basic: &'a CnnWeakLearner) -> Result<ProbeModel<'a>> {
    let (h, w) = basic.grid;
    let width = incumbent.shape.feature_width(h, w)?;
    if width != basic.head_width() || incumbent.shape.in_channels != basic.shape.in_channels {
        return Err(CoreError::ExtentMismatch(format!(
            "incumbent extractor yields {width} features on {h}x{w}, basic classifier expects {}",
            basic.head_width()
        )));
    }
    Ok(ProbeModel { extractor: &incumbent.extractor, head: &basic.head })
}

impl ProbeModel<'_> {
    /// `[B,C,H,W]` to `[B,M]` with frozen parameters.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let e = g.bind(self.extractor, false);
        let h = g.bind(self.head, false);
        let f = extract(g, &e, x);
        classify(g, &h, f)
    }
}
