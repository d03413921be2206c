//! On-disk dataset layout:
//!
//! ```text
//! <dir>/catalog.txt
//! <dir>/index.tsv                       id, partition, sample seed
//! <dir>/<part>/images/<id>.png          8-bit RGB
//! <dir>/<part>/labels/<id>.txt          visible boxes: `<class> <cx> <cy> <w> <h>`
//! <dir>/<part>/labels/<id>.full         oracle boxes, same format
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array3;
use sha2::{Digest, Sha256};

use super::catalog::ClassCatalog;
use super::generate::{Annotation, SceneSample};
use super::split::DatasetSplit;
use crate::error::{Error, Result};
use crate::geometry::CxCyWh;

pub const CATALOG_FILE: &str = "catalog.txt";
pub const INDEX_FILE: &str = "index.tsv";
pub const PARTITIONS: [&str; 3] = ["train", "val", "test"];

fn stem(id: usize) -> String {
    format!("{id:06}")
}

pub fn format_label_line(a: &Annotation) -> String {
    format!("{} {:.6} {:.6} {:.6} {:.6}", a.class_id, a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h)
}

pub fn format_labels<'a>(anns: impl IntoIterator<Item = &'a Annotation>) -> String {
    anns.into_iter().map(|a| format_label_line(a) + "\n").collect()
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format(path, format!("line {}: expected `<class_id> <cx> <cy> <w> <h>`", lineno + 1));
        let mut it = line.split_whitespace();
        let class_id: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let mut vals = [0.0f64; 4];
        for v in &mut vals {
            *v = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        }
        if it.next().is_some() {
            return Err(bad());
        }
        let bbox = CxCyWh::new(vals[0], vals[1], vals[2], vals[3]);
        if !(bbox.w > 0.0 && bbox.h > 0.0) || vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format(path, format!("line {}: box out of range", lineno + 1)));
        }
        out.push(Annotation { class_id, bbox });
    }
    Ok(out)
}

fn to_rgb8(image: &Array3<f32>) -> RgbImage {
    let (h, w, _) = image.dim();
    let raw: Vec<u8> = image.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions")
}

fn from_rgb8(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let data: Vec<f32> = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Array3::from_shape_vec((h as usize, w as usize, 3), data).expect("buffer matches dimensions")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(dir: &Path, split: &DatasetSplit, catalog: &ClassCatalog) -> Result<()> {
    let mut index = String::from("# id\tpartition\tseed\n");
    for (part, samples) in PARTITIONS.iter().zip([&split.train, &split.val, &split.test]) {
        let images = dir.join(part).join("images");
        let labels = dir.join(part).join("labels");
        for d in [&images, &labels] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for s in samples {
            let png = images.join(format!("{}.png", stem(s.id)));
            to_rgb8(&s.image).save(&png).map_err(|source| Error::Image { path: png.clone(), source })?;
            write(&labels.join(format!("{}.txt", stem(s.id))), format_labels(s.visible()))?;
            write(&labels.join(format!("{}.full", stem(s.id))), format_labels(&s.full_gt))?;
            index.push_str(&format!("{}\t{}\t{}\n", s.id, part, s.seed));
        }
    }
    write(&dir.join(INDEX_FILE), index)?;
    write(&dir.join(CATALOG_FILE), catalog.to_manifest())
}

pub fn read_catalog(dir: &Path) -> Result<ClassCatalog> {
    ClassCatalog::from_manifest(&read_string(&dir.join(CATALOG_FILE))?)
}

/// Which label files the reader may open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelAccess {
    /// Only `.txt` (visible) labels; samples come back with `full_gt` equal to
    /// the visible set. This is all a trainer ever sees.
    VisibleOnly,
    /// Also read `.full` oracle files.
    WithOracle,
}

fn read_sample(dir: &Path, part: &str, id: usize, seed: u64, access: LabelAccess) -> Result<SceneSample> {
    let png: PathBuf = dir.join(part).join("images").join(format!("{}.png", stem(id)));
    let img = image::open(&png).map_err(|source| Error::Image { path: png.clone(), source })?.to_rgb8();
    let txt = dir.join(part).join("labels").join(format!("{}.txt", stem(id)));
    let visible = parse_labels(&read_string(&txt)?, &txt)?;
    let (full_gt, visible_labels) = match access {
        LabelAccess::VisibleOnly => {
            let n = visible.len();
            (visible, (0..n).collect())
        }
        LabelAccess::WithOracle => {
            let full = dir.join(part).join("labels").join(format!("{}.full", stem(id)));
            let full_gt = parse_labels(&read_string(&full)?, &full)?;
            // visible labels are written as an ordered subset of the oracle lines
            let mut vis_idx = Vec::with_capacity(visible.len());
            let mut cursor = 0;
            for v in &visible {
                let line = format_label_line(v);
                while cursor < full_gt.len() && format_label_line(&full_gt[cursor]) != line {
                    cursor += 1;
                }
                if cursor == full_gt.len() {
                    return Err(Error::format(&txt, "visible label not found in oracle file"));
                }
                vis_idx.push(cursor);
                cursor += 1;
            }
            (full_gt, vis_idx)
        }
    };
    Ok(SceneSample {
        id,
        seed,
        image: from_rgb8(&img),
        full_gt,
        visible_labels,
    })
}

/// Reads the split written by [`write_dataset`]. `train_access` governs the
/// train partition; val and test are fully labeled so their `.txt` files are complete.
pub fn read_dataset(dir: &Path, train_access: LabelAccess) -> Result<(DatasetSplit, ClassCatalog)> {
    let catalog = read_catalog(dir)?;
    let index_path = dir.join(INDEX_FILE);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (lineno, line) in read_string(&index_path)?.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::format(&index_path, format!("line {}", lineno + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        let id: usize = f[0].parse().map_err(|_| bad())?;
        let seed: u64 = f[2].parse().map_err(|_| bad())?;
        match f[1] {
            "train" => split.train.push(read_sample(dir, "train", id, seed, train_access)?),
            "val" => split.val.push(read_sample(dir, "val", id, seed, LabelAccess::VisibleOnly)?),
            "test" => split.test.push(read_sample(dir, "test", id, seed, LabelAccess::VisibleOnly)?),
            _ => return Err(bad()),
        }
    }
    Ok((split, catalog))
}

/// Content hash of everything a trainer can observe: catalog, pixels (8-bit)
/// and visible labels at file precision.
pub fn fingerprint(split: &DatasetSplit, catalog: &ClassCatalog) -> String {
    let mut h = Sha256::new();
    h.update(catalog.to_manifest().as_bytes());
    for (part, samples) in PARTITIONS.iter().zip([&split.train, &split.val, &split.test]) {
        for s in samples {
            h.update(format!("{part}/{}\n", s.id).as_bytes());
            h.update(to_rgb8(&s.image).as_raw());
            h.update(format_labels(s.visible()).as_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn catalog_fingerprint(catalog: &ClassCatalog) -> String {
    hex::encode(Sha256::digest(catalog.to_manifest().as_bytes()))
}
