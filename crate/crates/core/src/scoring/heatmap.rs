//! Heatmap export: a 16-bit grayscale PNG of the min-max normalized scores,
//! a JSON sidecar with the raw range, and the raw `f64` scores for evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::archive::encode_component;
use crate::error::{Result, SpadeError};
use crate::types::{AnomalyMap, Grid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub image_id: String,
    pub image_score: f64,
    pub raw_min: f64,
    pub raw_max: f64,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct HeatmapPaths {
    pub png: PathBuf,
    pub sidecar: PathBuf,
    pub raw: PathBuf,
}

pub fn heatmap_paths(dir: &Path, image_id: &str) -> HeatmapPaths {
    let stem = encode_component(image_id);
    HeatmapPaths {
        png: dir.join(format!("{stem}.png")),
        sidecar: dir.join(format!("{stem}.json")),
        raw: dir.join(format!("{stem}.f64")),
    }
}

/// Scores scaled to `[0, 65535]`; a constant map becomes all zeros.
pub fn normalize_u16(scores: &Grid<f64>) -> Vec<u16> {
    let (lo, hi) = scores.min_max().unwrap_or((0.0, 0.0));
    let span = hi - lo;
    scores
        .as_slice()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect()
}

pub fn write_heatmap(dir: &Path, map: &AnomalyMap) -> Result<HeatmapPaths> {
    fs::create_dir_all(dir).map_err(|e| SpadeError::io(dir, e))?;
    let paths = heatmap_paths(dir, &map.image_id);
    let (h, w) = map.scores.shape();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, normalize_u16(&map.scores))
            .expect("buffer matches dimensions");
    img.save(&paths.png).map_err(|source| SpadeError::Image {
        path: paths.png.clone(),
        source,
    })?;

    let (raw_min, raw_max) = map.scores.min_max().unwrap_or((0.0, 0.0));
    let sidecar = HeatmapSidecar {
        image_id: map.image_id.clone(),
        image_score: map.image_score,
        raw_min,
        raw_max,
        height: h,
        width: w,
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| SpadeError::json(&paths.sidecar, e))?;
    fs::write(&paths.sidecar, json).map_err(|e| SpadeError::io(&paths.sidecar, e))?;

    let mut raw = Vec::with_capacity(h * w * 8);
    for v in map.scores.as_slice() {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&paths.raw, raw).map_err(|e| SpadeError::io(&paths.raw, e))?;
    Ok(paths)
}

/// Read back the raw scores written by [`write_heatmap`].
pub fn read_heatmap(dir: &Path, image_id: &str) -> Result<AnomalyMap> {
    let paths = heatmap_paths(dir, image_id);
    let text = fs::read(&paths.sidecar).map_err(|e| SpadeError::io(&paths.sidecar, e))?;
    let sidecar: HeatmapSidecar =
        serde_json::from_slice(&text).map_err(|e| SpadeError::json(&paths.sidecar, e))?;
    let bytes = fs::read(&paths.raw).map_err(|e| SpadeError::io(&paths.raw, e))?;
    if bytes.len() != sidecar.height * sidecar.width * 8 {
        return Err(SpadeError::Shape(format!(
            "{} holds {} bytes, sidecar declares {}x{} scores",
            paths.raw.display(),
            bytes.len(),
            sidecar.height,
            sidecar.width
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(AnomalyMap {
        image_id: sidecar.image_id,
        scores: Grid::new(sidecar.height, sidecar.width, data)?,
        image_score: sidecar.image_score,
    })
}
