use super::config::OptimizerConfig;
use crate::detector::{Detector, Gradients};

/// Adam with decoupled weight decay. Biases are not decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<(Vec<f64>, Vec<f64>)>,
    v: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, detector: &Detector) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = detector.layers().map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()])).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Scale that brings the global gradient norm under the clipping ceiling.
    fn clip_scale(&self, grads: &Gradients) -> f64 {
        if self.cfg.grad_clip <= 0.0 {
            return 1.0;
        }
        let sq: f64 = grads.layers.iter().flat_map(|(w, b)| w.iter().chain(b)).map(|&g| (g as f64) * (g as f64)).sum();
        let norm = sq.sqrt();
        if norm > self.cfg.grad_clip {
            self.cfg.grad_clip / norm
        } else {
            1.0
        }
    }

    pub fn step(&mut self, detector: &mut Detector, grads: &Gradients) {
        self.step += 1;
        let c = self.cfg;
        let scale = self.clip_scale(grads);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let update = |p: &mut f32, g: f32, m: &mut f64, v: &mut f64, decay: bool| {
            let g = g as f64 * scale;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let mut x = *p as f64;
            if decay {
                x -= c.learning_rate * c.weight_decay * x;
            }
            x -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            *p = x as f32;
        };
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in detector.layers_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            for (k, p) in layer.weight.iter_mut().enumerate() {
                update(p, gw[k], &mut mw[k], &mut vw[k], true);
            }
            for (k, p) in layer.bias.iter_mut().enumerate() {
                update(p, gb[k], &mut mb[k], &mut vb[k], false);
            }
        }
    }
}
