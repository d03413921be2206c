use rand::Rng;

use super::config::AugmentConfig;
use crate::scene::SceneSample;

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f32,
    pub contrast: f32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        hflip: false,
        vflip: false,
        brightness: 0.0,
        contrast: 1.0,
    };

    /// Always consumes the same number of draws, whatever the configuration.
    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let hflip = rng.random::<f64>() < cfg.hflip_p;
        let vflip = rng.random::<f64>() < cfg.vflip_p;
        let b: f64 = rng.random();
        let c: f64 = rng.random();
        Self {
            hflip,
            vflip,
            brightness: ((2.0 * b - 1.0) * cfg.brightness_delta) as f32,
            contrast: (cfg.contrast_min + c * (cfg.contrast_max - cfg.contrast_min)) as f32,
        }
    }

    /// Flips move the image and every box (visible and oracle) together;
    /// brightness and contrast touch pixels only.
    pub fn apply(&self, sample: &SceneSample) -> SceneSample {
        let mut out = sample.clone();
        if self.hflip {
            out.image.invert_axis(ndarray::Axis(1));
            out.full_gt.iter_mut().for_each(|a| a.bbox.cx = 1.0 - a.bbox.cx);
        }
        if self.vflip {
            out.image.invert_axis(ndarray::Axis(0));
            out.full_gt.iter_mut().for_each(|a| a.bbox.cy = 1.0 - a.bbox.cy);
        }
        if self.hflip || self.vflip {
            out.image = out.image.as_standard_layout().into_owned();
        }
        // x·c + (0.5·(1 − c) + b): identity parameters leave pixels bit-exact
        let offset = 0.5 * (1.0 - self.contrast) + self.brightness;
        let c = self.contrast;
        out.image.mapv_inplace(|x| (x * c + offset).clamp(0.0, 1.0));
        out
    }
}

pub fn augment<R: Rng>(sample: &SceneSample, cfg: &AugmentConfig, rng: &mut R) -> SceneSample {
    AugmentParams::sample(cfg, rng).apply(sample)
}
