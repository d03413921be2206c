//! Anchor-free single-scale grid detector: conv backbone, per-cell class
//! logits and per-side discrete box distributions, center-in-box target
//! assignment and expectation decoding.

mod assign;
pub mod checkpoint;
mod decode;
pub mod nn;

use ndarray::{Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use assign::{assign_targets, TargetAssignment};
pub use decode::{decode_boxes, expected_side, side_distances};

use crate::error::{Error, Result};
use crate::rng;
use nn::{leaky_relu_backward, leaky_relu_inplace, Conv2d, ConvCache, FeatureMap};

pub const NUM_SIDES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub image_size: usize,
    pub num_classes: usize,
    /// Discrete bins per box side.
    pub bins: usize,
    /// Backbone blocks as (output channels, stride); 3×3 kernels.
    pub blocks: Vec<(usize, usize)>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            num_classes: 6,
            bins: 16,
            blocks: vec![(16, 2), (32, 2), (48, 2), (48, 1), (48, 1)],
        }
    }
}

impl DetectorConfig {
    pub fn stride(&self) -> usize {
        self.blocks.iter().map(|&(_, s)| s).product()
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            grid: self.image_size / self.stride(),
            stride: self.stride(),
            image_size: self.image_size,
            bins: self.bins,
        }
    }

    pub fn head_channels(&self) -> usize {
        self.num_classes + NUM_SIDES * self.bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|&(c, s)| c == 0 || !(s == 1 || s == 2)) {
            return Err(Error::Config("backbone blocks need positive channels and stride 1 or 2".into()));
        }
        if self.num_classes == 0 || self.bins < 2 {
            return Err(Error::Config("need at least one class and two bins".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.stride()) {
            return Err(Error::Config(format!(
                "image size {} is not a multiple of the backbone stride {}",
                self.image_size,
                self.stride()
            )));
        }
        Ok(())
    }
}

/// Grid layout shared by assignment, decoding and loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridGeometry {
    pub grid: usize,
    pub stride: usize,
    pub image_size: usize,
    pub bins: usize,
}

impl GridGeometry {
    pub fn num_cells(&self) -> usize {
        self.grid * self.grid
    }

    /// Cell center `(x, y)` of row `i`, column `j` in normalized coordinates.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.stride as f64;
        let n = self.image_size as f64;
        ((j as f64 + 0.5) * s / n, (i as f64 + 0.5) * s / n)
    }

    /// One stride in normalized units.
    pub fn stride_norm(&self) -> f64 {
        self.stride as f64 / self.image_size as f64
    }
}

/// Raw head output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    /// G×G×C class logits.
    pub class_scores: Array3<f32>,
    /// G×G×4×B logits over side-distance bins (left, top, right, bottom).
    pub box_dists: Array4<f32>,
}

impl PredictionGrid {
    pub fn is_finite(&self) -> bool {
        self.class_scores.iter().chain(self.box_dists.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub backbone: Vec<Conv2d>,
    pub head: Conv2d,
}

/// Per-layer gradient buffers with the same layout as the detector parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `(weight, bias)` per layer; the head is last.
    pub layers: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Gradients {
    pub fn zeros_like(det: &Detector) -> Self {
        Self {
            layers: det.layers().map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()])).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, b)| *a += b);
            b.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
        }
    }
}

/// Activations saved for the backward pass of one image.
pub struct ForwardCache {
    input: FeatureMap,
    /// Pre-activation output of each backbone block.
    pre: Vec<FeatureMap>,
    /// Post-activation output of each backbone block.
    post: Vec<FeatureMap>,
    convs: Vec<ConvCache>,
    head: ConvCache,
}

impl Detector {
    /// He-uniform backbone, zero head (all logits start at exactly 0).
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[rng::TAG_INIT]);
        let mut cin = 3;
        let mut backbone = Vec::with_capacity(config.blocks.len());
        for &(cout, stride) in &config.blocks {
            let mut conv = Conv2d::zeros(cin, cout, 3, stride);
            let gain = 2.0 / (1.0 + nn::LEAKY_SLOPE * nn::LEAKY_SLOPE);
            let bound = (3.0 * gain / conv.fan_in() as f32).sqrt();
            conv.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            backbone.push(conv);
            cin = cout;
        }
        let head = Conv2d::zeros(cin, config.head_channels(), 1, 1);
        Ok(Self { config, backbone, head })
    }

    pub fn geometry(&self) -> GridGeometry {
        self.config.geometry()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Conv2d> + '_ {
        self.backbone.iter().chain(std::iter::once(&self.head))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> + '_ {
        self.backbone.iter_mut().chain(std::iter::once(&mut self.head))
    }

    pub fn layer_names(&self) -> Vec<String> {
        (0..self.backbone.len())
            .map(|i| format!("conv{i}"))
            .chain(std::iter::once("head".to_string()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn to_input(&self, image: &Array3<f32>) -> Result<FeatureMap> {
        let (h, w, c) = image.dim();
        let n = self.config.image_size;
        if h != n || w != n || c != 3 {
            return Err(Error::Shape {
                expected: format!("{n}x{n}x3"),
                actual: format!("{h}x{w}x{c}"),
            });
        }
        let mut x = FeatureMap::zeros(3, h, w);
        for ((y, xx, ch), v) in image.indexed_iter() {
            x.data[(ch * h + y) * w + xx] = v - 0.5;
        }
        Ok(x)
    }

    fn to_grid(&self, out: &FeatureMap) -> PredictionGrid {
        let g = out.h;
        let nc = self.config.num_classes;
        let b = self.config.bins;
        let plane = g * g;
        let class_scores = Array3::from_shape_fn((g, g, nc), |(i, j, c)| out.data[c * plane + i * g + j]);
        let box_dists = Array4::from_shape_fn((g, g, NUM_SIDES, b), |(i, j, s, k)| out.data[(nc + s * b + k) * plane + i * g + j]);
        PredictionGrid { class_scores, box_dists }
    }

    pub fn forward(&self, image: &Array3<f32>) -> Result<PredictionGrid> {
        let mut x = self.to_input(image)?;
        for conv in &self.backbone {
            let (mut y, _) = conv.forward(&x);
            leaky_relu_inplace(&mut y);
            x = y;
        }
        let (out, _) = self.head.forward(&x);
        Ok(self.to_grid(&out))
    }

    pub fn forward_train(&self, image: &Array3<f32>) -> Result<(PredictionGrid, ForwardCache)> {
        let input = self.to_input(image)?;
        let mut pre = Vec::with_capacity(self.backbone.len());
        let mut post: Vec<FeatureMap> = Vec::with_capacity(self.backbone.len());
        let mut convs = Vec::with_capacity(self.backbone.len());
        for conv in &self.backbone {
            let x = post.last().unwrap_or(&input);
            let (z, cache) = conv.forward(x);
            let mut a = z.clone();
            leaky_relu_inplace(&mut a);
            pre.push(z);
            post.push(a);
            convs.push(cache);
        }
        let (out, head) = self.head.forward(post.last().unwrap());
        let grid = self.to_grid(&out);
        Ok((grid, ForwardCache { input, pre, post, convs, head }))
    }

    /// Parameter gradients given loss gradients w.r.t. the grid outputs.
    pub fn backward(&self, cache: &ForwardCache, grad_scores: &Array3<f32>, grad_dists: &Array4<f32>) -> Gradients {
        let g = self.geometry().grid;
        let nc = self.config.num_classes;
        let b = self.config.bins;
        let plane = g * g;
        let mut grad_out = FeatureMap::zeros(self.config.head_channels(), g, g);
        for ((i, j, c), v) in grad_scores.indexed_iter() {
            grad_out.data[c * plane + i * g + j] = *v;
        }
        for ((i, j, s, k), v) in grad_dists.indexed_iter() {
            grad_out.data[(nc + s * b + k) * plane + i * g + j] = *v;
        }

        let mut grads = Gradients::zeros_like(self);
        let n = self.backbone.len();
        let (hw, hb) = &mut grads.layers[n];
        let mut grad = self
            .head
            .backward(&cache.post[n - 1], &cache.head, &grad_out, hw, hb, true)
            .expect("input gradient requested");
        for l in (0..n).rev() {
            leaky_relu_backward(&cache.pre[l], &mut grad);
            let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let (gw, gb) = &mut grads.layers[l];
            match self.backbone[l].backward(input, &cache.convs[l], &grad, gw, gb, l > 0) {
                Some(next) => grad = next,
                None => break,
            }
        }
        grads
    }
}
