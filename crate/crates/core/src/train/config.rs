use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::loss::{CfplConfig, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_p: f64,
    pub vflip_p: f64,
    /// Additive brightness drawn uniformly from `[-delta, delta]`.
    pub brightness_delta: f64,
    /// Contrast factor drawn uniformly from `[contrast_min, contrast_max]`.
    pub contrast_min: f64,
    pub contrast_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.5,
            brightness_delta: 0.2,
            contrast_min: 0.8,
            contrast_max: 1.25,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip_p: 0.0,
            vflip_p: 0.0,
            brightness_delta: 0.0,
            contrast_min: 1.0,
            contrast_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("hflip_p", self.hflip_p), ("vflip_p", self.vflip_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("augment.{name} = {p} is not a probability")));
            }
        }
        if !(self.brightness_delta >= 0.0 && self.brightness_delta.is_finite()) {
            return Err(Error::Config("augment.brightness_delta must be finite and non-negative".into()));
        }
        if !(self.contrast_min > 0.0 && self.contrast_min <= self.contrast_max && self.contrast_max.is_finite()) {
            return Err(Error::Config("augment contrast range must satisfy 0 < min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to convolution weights only.
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3.13e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub detector: DetectorConfig,
    pub weights: LossWeights,
    pub cfpl: CfplConfig,
    pub augment: AugmentConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            optimizer: OptimizerConfig::default(),
            detector: DetectorConfig::default(),
            weights: LossWeights::default(),
            cfpl: CfplConfig::default(),
            augment: AugmentConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0 && o.grad_clip >= 0.0) {
            return Err(Error::Config("optimizer parameters out of range".into()));
        }
        self.detector.validate()?;
        self.weights.validate()?;
        self.cfpl.validate(self.detector.num_classes)?;
        self.augment.validate()
    }

    /// The same configuration with masking switched on or off.
    pub fn with_cfpl_enabled(&self, enabled: bool) -> Self {
        let mut c = self.clone();
        c.cfpl.enabled = enabled;
        c
    }
}
