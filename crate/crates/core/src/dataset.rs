//! MVTec-style directory trees:
//!
//! ```text
//! <root>/<class>/train/good/*.png
//! <root>/<class>/test/<defect>/*.png
//! <root>/<class>/ground_truth/<defect>/<stem>_mask.png
//! ```
//!
//! plus image and mask preprocessing at the evaluation resolution.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadeError};
use crate::types::{GroundTruthMask, Grid, ImageTensor, PipelineConfig};

pub const NORMAL_DEFECT: &str = "good";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainItem {
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestItem {
    pub image_id: String,
    pub path: PathBuf,
    pub defect_type: String,
    pub mask_path: Option<PathBuf>,
}

impl TestItem {
    pub fn is_anomalous(&self) -> bool {
        self.defect_type != NORMAL_DEFECT
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_name: String,
    pub train_items: Vec<TrainItem>,
    pub test_items: Vec<TestItem>,
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| SpadeError::io(dir, e))? {
        entries.push(entry.map_err(|e| SpadeError::io(dir, e))?.path());
    }
    entries.sort();
    Ok(entries)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn images_in(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(list_dir(dir)?.into_iter().filter(|p| is_image(p)).collect())
}

/// Enumerate one class. Everything is sorted by path, so the manifest does
/// not depend on filesystem enumeration order.
pub fn scan_dataset(root: &Path, class_name: &str) -> Result<DatasetManifest> {
    let class_dir = root.join(class_name);
    let train_dir = class_dir.join("train").join(NORMAL_DEFECT);
    if !train_dir.is_dir() {
        return Err(SpadeError::Dataset(format!("missing {}", train_dir.display())));
    }
    let train_items = images_in(&train_dir)?
        .into_iter()
        .map(|path| TrainItem {
            image_id: format!("{class_name}/train/{NORMAL_DEFECT}/{}", stem(&path)),
            path,
        })
        .collect();

    let test_dir = class_dir.join("test");
    let mut test_items = Vec::new();
    if test_dir.is_dir() {
        for defect_dir in list_dir(&test_dir)?.into_iter().filter(|p| p.is_dir()) {
            let defect = defect_dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            for path in images_in(&defect_dir)? {
                let s = stem(&path);
                let mask_path = if defect == NORMAL_DEFECT {
                    None
                } else {
                    let mask = class_dir
                        .join("ground_truth")
                        .join(&defect)
                        .join(format!("{s}_mask.png"));
                    if !mask.is_file() {
                        return Err(SpadeError::Dataset(format!(
                            "anomalous image {} has no mask at {}",
                            path.display(),
                            mask.display()
                        )));
                    }
                    Some(mask)
                };
                test_items.push(TestItem {
                    image_id: format!("{class_name}/test/{defect}/{s}"),
                    path,
                    defect_type: defect.clone(),
                    mask_path,
                });
            }
        }
    }
    Ok(DatasetManifest {
        class_name: class_name.to_string(),
        train_items,
        test_items,
    })
}

/// Class directories under `root` that contain `train/good`, sorted.
pub fn list_classes(root: &Path) -> Result<Vec<String>> {
    Ok(list_dir(root)?
        .into_iter()
        .filter(|p| p.join("train").join(NORMAL_DEFECT).is_dir())
        .filter_map(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
        .collect())
}

/// Area-interpolation weights along one axis: output cell `o` covers the
/// input interval `[o·s, (o+1)·s)` with `s = n_in / n_out`, and each input
/// cell contributes its overlap with that interval.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let overlap = b.min(i as f64 + 1.0) - a.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Resize one `h × w` plane by area interpolation (separable box coverage).
pub fn resize_area(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let wx = area_weights(w, ow);
    let wy = area_weights(h, oh);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for (x, taps) in wx.iter().enumerate() {
            rows[y * ow + x] = taps.iter().map(|&(i, c)| c * src[y * w + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for (y, taps) in wy.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().map(|&(i, c)| c * rows[i * ow + x]).sum();
        }
    }
    out
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| SpadeError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Decode, area-resize to `eval_resolution`, center-crop to `crop_to` if set,
/// scale to `[0, 1]`. Always three channels; grayscale is replicated.
pub fn preprocess(path: &Path, image_id: &str, config: &PipelineConfig) -> Result<ImageTensor> {
    let rgb = decode(path)?.into_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let (eh, ew) = config.eval_resolution;
    let (ch, cw) = config.crop_to.unwrap_or((eh, ew));
    if ch > eh || cw > ew {
        return Err(SpadeError::Config(format!("crop {ch}x{cw} exceeds {eh}x{ew}")));
    }
    let (top, left) = ((eh - ch) / 2, (ew - cw) / 2);
    let raw = rgb.as_raw();
    let mut data = Vec::with_capacity(3 * ch * cw);
    for c in 0..3 {
        let plane: Vec<f64> = (0..h * w).map(|p| f64::from(raw[p * 3 + c])).collect();
        let resized = resize_area(&plane, (h, w), (eh, ew));
        for y in top..top + ch {
            data.extend(resized[y * ew + left..y * ew + left + cw].iter().map(|&v| v.clamp(0.0, 1.0) as f32));
        }
    }
    Ok(ImageTensor::new(image_id, 3, ch, cw, data)?.with_source(path.to_string_lossy()))
}

/// Nearest-neighbor resize (`src = ⌊d · in / out⌋`) then binarize at `> 0`.
pub fn load_mask(path: &Path, image_id: &str, eval_resolution: (usize, usize)) -> Result<GroundTruthMask> {
    let gray = decode(path)?.into_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let (eh, ew) = eval_resolution;
    let raw = gray.as_raw();
    let grid = Grid::from_fn(eh, ew, |y, x| {
        let sy = (y * h / eh).min(h - 1);
        let sx = (x * w / ew).min(w - 1);
        u8::from(raw[sy * w + sx] > 0)
    });
    GroundTruthMask::new(image_id, grid)
}

/// Ground truth for a test item: its mask, or all zeros for normal items.
pub fn ground_truth(item: &TestItem, eval_resolution: (usize, usize)) -> Result<GroundTruthMask> {
    match &item.mask_path {
        Some(p) => load_mask(p, &item.image_id, eval_resolution),
        None => Ok(GroundTruthMask::empty(&item.image_id, eval_resolution.0, eval_resolution.1)),
    }
}

/// Uniform sample without replacement, deterministic per seed, original
/// order preserved.
pub fn subsample<T: Clone>(items: &[T], max_count: usize, seed: u64) -> Vec<T> {
    if max_count >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), max_count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Every `factor`-th item starting at the first.
pub fn subsample_every<T: Clone>(items: &[T], factor: usize) -> Vec<T> {
    items.iter().step_by(factor.max(1)).cloned().collect()
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| SpadeError::json(path, e))?;
    fs::write(path, json).map_err(|e| SpadeError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| SpadeError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| SpadeError::json(path, e))
}
