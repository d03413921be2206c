//! Synthetic dense-scene renderer: rows of cavities packed with brood-cell-like
//! rounded rectangles whose color and texture identify the class.

use ndarray::Array3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::catalog::{ClassCatalog, ClassGroup, ClassSpec, StatusCode};
use crate::error::{Error, Result};
use crate::geometry::CxCyWh;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    Solid,
    HStripes,
    VStripes,
    Dots,
    Checker,
    Ring,
}

impl Texture {
    const CYCLE: [Texture; 6] = [
        Texture::HStripes,
        Texture::Solid,
        Texture::Dots,
        Texture::VStripes,
        Texture::Checker,
        Texture::Ring,
    ];

    /// Multiplicative brightness modulation at local pixel `(u, v)` of a `w`×`h` cell.
    fn modulation(self, u: usize, v: usize, w: usize, h: usize, phase: usize) -> f32 {
        match self {
            Texture::Solid => 0.0,
            Texture::HStripes => {
                if ((v + phase) / 3).is_multiple_of(2) {
                    0.15
                } else {
                    -0.15
                }
            }
            Texture::VStripes => {
                if ((u + phase) / 3).is_multiple_of(2) {
                    0.15
                } else {
                    -0.15
                }
            }
            Texture::Dots => {
                let du = ((u + phase) % 6) as f32 - 2.5;
                let dv = ((v + phase) % 6) as f32 - 2.5;
                if du * du + dv * dv < 3.0 {
                    -0.35
                } else {
                    0.05
                }
            }
            Texture::Checker => {
                if (((u + phase) / 4) + (v / 4)).is_multiple_of(2) {
                    0.18
                } else {
                    -0.18
                }
            }
            Texture::Ring => {
                let edge = u.min(v).min(w - 1 - u).min(h - 1 - v);
                if (3..6).contains(&edge) {
                    -0.4
                } else {
                    0.05
                }
            }
        }
    }
}

/// One class as rendered by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneClass {
    pub name: String,
    pub status: StatusCode,
    /// Relative frequency; normalized over all classes.
    pub weight: f64,
    pub color: [f32; 3],
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub num_images: usize,
    /// Square image side in pixels.
    pub image_size: usize,
    /// Number of horizontal cavity rows.
    pub rows: usize,
    pub min_cells: usize,
    pub max_cells: usize,
    pub min_cell_width: usize,
    pub max_cell_width: usize,
    /// Uniform per-pixel noise amplitude.
    pub noise: f32,
    /// Per-instance base color jitter amplitude.
    pub color_jitter: f32,
    /// Placement attempts per cell before the config is rejected.
    pub max_retries: usize,
    pub classes: Vec<SceneClass>,
}

const TAXA: [&str; 8] = [
    "Osmia bicornis",
    "Osmia cornuta",
    "Hylaeus",
    "Heriades",
    "Trypoxylon",
    "Chelostoma florisomne",
    "Passaloecus",
    "Psenulus",
];

const BASE_COLORS: [[f32; 3]; 6] = [
    [0.88, 0.64, 0.20],
    [0.94, 0.91, 0.80],
    [0.32, 0.70, 0.34],
    [0.30, 0.44, 0.86],
    [0.80, 0.30, 0.62],
    [0.24, 0.76, 0.80],
];

const WOOD: [f32; 3] = [0.60, 0.47, 0.32];
const CAVITY: [f32; 3] = [0.22, 0.16, 0.11];

/// Palette color for class `i`; beyond the fixed palette, hues are spaced around the wheel.
fn palette(i: usize) -> [f32; 3] {
    if i < BASE_COLORS.len() {
        return BASE_COLORS[i];
    }
    let hue = (i as f32 * 0.618_034).fract() * 6.0;
    let x = 1.0 - ((hue % 2.0) - 1.0).abs();
    let (r, g, b) = match hue as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.2 + 0.7 * r, 0.2 + 0.7 * g, 0.2 + 0.7 * b]
}

impl SceneConfig {
    /// Builds `weights.len()` classes with default names and appearance.
    pub fn with_weights(weights: &[f64]) -> Self {
        Self {
            classes: default_classes(weights),
            ..Self::default()
        }
    }
}

fn default_classes(weights: &[f64]) -> Vec<SceneClass> {
    weights
        .iter()
        .enumerate()
        .map(|(i, &weight)| {
            let status = StatusCode::ALL[(i * 3 + 4) % StatusCode::ALL.len()];
            let taxon = TAXA[i % TAXA.len()];
            let name = if i < TAXA.len() {
                format!("{taxon} - {}", status.label())
            } else {
                format!("{taxon} {} - {}", i / TAXA.len() + 1, status.label())
            };
            SceneClass {
                name,
                status,
                weight,
                color: palette(i),
                texture: Texture::CYCLE[i % Texture::CYCLE.len()],
            }
        })
        .collect()
}

impl SceneConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Catalog before any label cap: every class minority, nothing whitelisted.
    pub fn catalog(&self) -> ClassCatalog {
        let classes = self
            .classes
            .iter()
            .enumerate()
            .map(|(id, c)| ClassSpec {
                id,
                name: c.name.clone(),
                status_code: c.status,
                group: ClassGroup::Minority,
                whitelisted: false,
            })
            .collect();
        ClassCatalog::new(classes).expect("generated ids are contiguous")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.classes.is_empty() {
            return err("at least one class is required".into());
        }
        if self.image_size < 32 {
            return err(format!("image_size {} is below the 32 px minimum", self.image_size));
        }
        if self.rows == 0 || self.image_size / self.rows < 12 {
            return err(format!("{} rows do not fit in {} px", self.rows, self.image_size));
        }
        if self.min_cells > self.max_cells {
            return err("min_cells exceeds max_cells".into());
        }
        if self.min_cell_width < 4 || self.min_cell_width > self.max_cell_width || self.max_cell_width > self.image_size {
            return err(format!(
                "cell width range [{}, {}] is invalid for {} px images",
                self.min_cell_width, self.max_cell_width, self.image_size
            ));
        }
        if self.classes.iter().any(|c| !(c.weight.is_finite() && c.weight >= 0.0)) || self.classes.iter().all(|c| c.weight == 0.0) {
            return err("class weights must be finite, non-negative and not all zero".into());
        }
        if !(0.0..=0.5).contains(&self.noise) || !(0.0..=0.5).contains(&self.color_jitter) {
            return err("noise and color_jitter must lie in [0, 0.5]".into());
        }
        if self.max_retries == 0 {
            return err("max_retries must be at least 1".into());
        }
        Ok(())
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            num_images: 290,
            image_size: 256,
            rows: 6,
            min_cells: 20,
            max_cells: 30,
            min_cell_width: 22,
            max_cell_width: 38,
            noise: 0.04,
            color_jitter: 0.04,
            max_retries: 200,
            classes: default_classes(&[0.36, 0.32, 0.10, 0.09, 0.07, 0.06]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    pub bbox: CxCyWh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// Position in the generated dataset; names files on disk.
    pub id: usize,
    pub seed: u64,
    /// H×W×3, values in `[0, 1]`.
    pub image: Array3<f32>,
    /// Oracle ground truth. Never modified by label capping.
    pub full_gt: Vec<Annotation>,
    /// Sorted indices into `full_gt` that remain labeled.
    pub visible_labels: Vec<usize>,
}

impl SceneSample {
    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    pub fn visible(&self) -> impl Iterator<Item = &Annotation> + '_ {
        self.visible_labels.iter().map(move |&i| &self.full_gt[i])
    }

    pub fn visible_annotations(&self) -> Vec<Annotation> {
        self.visible().copied().collect()
    }

    pub fn set_fully_labeled(&mut self) {
        self.visible_labels = (0..self.full_gt.len()).collect();
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.visible_labels.len() == self.full_gt.len()
    }
}

/// Renders `config.num_images` scenes. Each sample's randomness derives from
/// `(seed, index)` only, so the result is identical for any thread count.
pub fn generate_dataset(config: &SceneConfig, seed: u64) -> Result<Vec<SceneSample>> {
    config.validate()?;
    let weights: Vec<f64> = config.classes.iter().map(|c| c.weight).collect();
    let class_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("class weights: {e}")))?;
    (0..config.num_images)
        .into_par_iter()
        .map(|i| render_sample(config, &class_dist, seed, i))
        .collect()
}

struct Placed {
    class_id: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn band(config: &SceneConfig, row: usize) -> (usize, usize) {
    let pitch = config.image_size as f64 / config.rows as f64;
    let top = (row as f64 * pitch + pitch * 0.08).round() as usize;
    let bottom = ((row + 1) as f64 * pitch - pitch * 0.08).round() as usize;
    (top, bottom)
}

fn render_sample(config: &SceneConfig, class_dist: &WeightedIndex<f64>, seed: u64, index: usize) -> Result<SceneSample> {
    let sample_seed = rng::derive_seed(seed, &[rng::TAG_SCENE, index as u64]);
    let mut rng = rng::stream(sample_seed, &[]);
    let size = config.image_size;
    let n_cells = rng.random_range(config.min_cells..=config.max_cells);

    let mut per_row: Vec<Vec<(usize, usize)>> = vec![Vec::new(); config.rows];
    let mut placed = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let mut attempt = 0;
        loop {
            if attempt == config.max_retries {
                return Err(Error::Packing {
                    image: index,
                    requested: n_cells,
                    retries: config.max_retries,
                });
            }
            attempt += 1;
            let row = rng.random_range(0..config.rows);
            let w = rng.random_range(config.min_cell_width..=config.max_cell_width);
            let Some(x0) = free_slot(&per_row[row], size, w, &mut rng) else {
                continue;
            };
            per_row[row].push((x0, x0 + w));
            let (top, bottom) = band(config, row);
            let y0 = top + rng.random_range(1..=3);
            let y1 = bottom - rng.random_range(1..=3);
            placed.push(Placed {
                class_id: class_dist.sample(&mut rng),
                x0,
                y0,
                w,
                h: y1 - y0,
            });
            break;
        }
    }
    // reading order keeps label files stable and human-friendly
    placed.sort_by_key(|p| (p.y0, p.x0));

    let mut img = Array3::<f32>::zeros((size, size, 3));
    let grain_phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let mut bands = vec![false; size];
    for row in 0..config.rows {
        let (top, bottom) = band(config, row);
        bands[top..bottom].iter_mut().for_each(|b| *b = true);
    }
    for y in 0..size {
        for x in 0..size {
            let base = if bands[y] {
                CAVITY
            } else {
                let grain = 0.06 * ((y as f32 * 0.35 + grain_phase).sin() + 0.5 * (x as f32 * 0.05).sin());
                [WOOD[0] + grain, WOOD[1] + grain, WOOD[2] + grain * 0.7]
            };
            for ch in 0..3 {
                img[[y, x, ch]] = base[ch];
            }
        }
    }

    for p in &placed {
        let class = &config.classes[p.class_id];
        let jitter: [f32; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0) * config.color_jitter);
        let phase = rng.random_range(0..6);
        let radius = 0.3 * p.w.min(p.h) as f32;
        for v in 0..p.h {
            for u in 0..p.w {
                if outside_rounded(u, v, p.w, p.h, radius) {
                    continue;
                }
                let m = class.texture.modulation(u, v, p.w, p.h, phase);
                for ch in 0..3 {
                    img[[p.y0 + v, p.x0 + u, ch]] = (class.color[ch] + jitter[ch]) * (1.0 + m);
                }
            }
        }
    }

    for px in img.iter_mut() {
        let noisy = *px + rng.random_range(-1.0..=1.0) * config.noise;
        *px = quantize(noisy);
    }

    let full_gt: Vec<Annotation> = placed
        .iter()
        .map(|p| Annotation {
            class_id: p.class_id,
            bbox: CxCyWh::new(
                (p.x0 as f64 + p.w as f64 / 2.0) / size as f64,
                (p.y0 as f64 + p.h as f64 / 2.0) / size as f64,
                p.w as f64 / size as f64,
                p.h as f64 / size as f64,
            ),
        })
        .collect();
    let visible_labels = (0..full_gt.len()).collect();
    Ok(SceneSample {
        id: index,
        seed: sample_seed,
        image: img,
        full_gt,
        visible_labels,
    })
}

/// Uniformly chosen left edge for a `w`-wide cell among the gaps of one row;
/// abutting neighbours are allowed, overlap is not.
fn free_slot(occupied: &[(usize, usize)], size: usize, w: usize, rng: &mut impl Rng) -> Option<usize> {
    let mut taken = occupied.to_vec();
    taken.sort_unstable();
    let mut gaps = Vec::new();
    let mut cursor = 0;
    for &(a, b) in taken.iter().chain(std::iter::once(&(size, size))) {
        if a >= cursor + w {
            gaps.push((cursor, a - w));
        }
        cursor = cursor.max(b);
    }
    let total: usize = gaps.iter().map(|&(lo, hi)| hi - lo + 1).sum();
    if total == 0 {
        return None;
    }
    let mut pick = rng.random_range(0..total);
    for (lo, hi) in gaps {
        let n = hi - lo + 1;
        if pick < n {
            return Some(lo + pick);
        }
        pick -= n;
    }
    unreachable!("pick is below the total slot count")
}

/// Snaps a value to the nearest 8-bit level so PNG storage is lossless.
pub(crate) fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn outside_rounded(u: usize, v: usize, w: usize, h: usize, r: f32) -> bool {
    let fu = u as f32 + 0.5;
    let fv = v as f32 + 0.5;
    let cx = fu.clamp(r, w as f32 - r);
    let cy = fv.clamp(r, h as f32 - r);
    let (dx, dy) = (fu - cx, fv - cy);
    dx * dx + dy * dy > r * r
}
