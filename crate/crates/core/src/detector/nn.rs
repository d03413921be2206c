//! Convolution layers with explicit backward passes (im2col + GEMM).

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// Channel-major feature map (C×H×W).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }
}

pub const LEAKY_SLOPE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `cout × (cin·k·k)`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Values saved by a training forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    /// Unfolded input `(cin·k·k) × (oh·ow)`; empty for 1×1 stride-1 layers,
    /// which read the input map directly.
    col: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
            weight: vec![0.0; cout * cin * kernel * kernel],
            bias: vec![0.0; cout],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &FeatureMap, oh: usize, ow: usize) -> Vec<f32> {
        let k = self.kernel;
        let p = oh * ow;
        let mut col = vec![0.0f32; self.fan_in() * p];
        for c in 0..x.c {
            let plane = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> FeatureMap {
        let k = self.kernel;
        let p = oh * ow;
        let mut x = FeatureMap::zeros(c, h, w);
        for ci in 0..c {
            let plane = &mut x.data[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Pre-activation output, plus the cache needed by [`Conv2d::backward`].
    pub fn forward(&self, x: &FeatureMap) -> (FeatureMap, ConvCache) {
        assert_eq!(x.c, self.cin, "input channel mismatch");
        let (oh, ow) = self.out_size(x.h, x.w);
        let p = oh * ow;
        let col = if self.is_pointwise() { Vec::new() } else { self.im2col(x, oh, ow) };
        let input = if self.is_pointwise() { &x.data } else { &col };
        let mut out = FeatureMap::zeros(self.cout, oh, ow);
        for (o, b) in out.data.chunks_mut(p).zip(&self.bias) {
            o.fill(*b);
        }
        let w = ArrayView2::from_shape((self.cout, self.fan_in()), &self.weight).unwrap();
        let colv = ArrayView2::from_shape((self.fan_in(), p), input).unwrap();
        let mut outv = ArrayViewMut2::from_shape((self.cout, p), &mut out.data).unwrap();
        general_mat_mul(1.0, &w, &colv, 1.0, &mut outv);
        (out, ConvCache { col })
    }

    /// Accumulates parameter gradients and returns the input gradient when requested.
    pub fn backward(
        &self,
        input: &FeatureMap,
        cache: &ConvCache,
        grad_out: &FeatureMap,
        grad_w: &mut [f32],
        grad_b: &mut [f32],
        want_input_grad: bool,
    ) -> Option<FeatureMap> {
        let p = grad_out.h * grad_out.w;
        let k = self.fan_in();
        for (gb, go) in grad_b.iter_mut().zip(grad_out.data.chunks(p)) {
            *gb += go.iter().sum::<f32>();
        }
        let col = if self.is_pointwise() { &input.data } else { &cache.col };
        let gov = ArrayView2::from_shape((self.cout, p), &grad_out.data).unwrap();
        let colv = ArrayView2::from_shape((k, p), col.as_slice()).unwrap();
        let mut gw = ArrayViewMut2::from_shape((self.cout, k), grad_w).unwrap();
        general_mat_mul(1.0, &gov, &colv.t(), 1.0, &mut gw);
        if !want_input_grad {
            return None;
        }
        let w = ArrayView2::from_shape((self.cout, k), &self.weight).unwrap();
        let mut gcol = vec![0.0f32; k * p];
        {
            let mut gcv = ArrayViewMut2::from_shape((k, p), &mut gcol).unwrap();
            general_mat_mul(1.0, &w.t(), &gov, 0.0, &mut gcv);
        }
        if self.is_pointwise() {
            return Some(FeatureMap {
                c: input.c,
                h: input.h,
                w: input.w,
                data: gcol,
            });
        }
        Some(self.col2im(&gcol, input.c, input.h, input.w, grad_out.h, grad_out.w))
    }
}

pub fn leaky_relu_inplace(x: &mut FeatureMap) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Gradient through leaky ReLU given the pre-activation values.
pub fn leaky_relu_backward(pre: &FeatureMap, grad: &mut FeatureMap) {
    for (g, &z) in grad.data.iter_mut().zip(&pre.data) {
        if z < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}
