//! On-disk feature archive.
//!
//! One directory per image (the percent-encoded image id) holding one raw
//! little-endian `f32` file per layer, the global embedding, and
//! `sidecar.json` describing them:
//!
//! ```json
//! {
//!   "image_id": "bottle/train/good/000",
//!   "layers": [
//!     {"image_id": "bottle/train/good/000", "layer_name": "layer1",
//!      "shape": [256, 56, 56], "stride": 4, "file": "layer1.f32"}
//!   ],
//!   "global_embedding": {"file": "global_embedding.f32", "len": 2048}
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadeError};
use crate::retrieval::PyramidStore;
use crate::types::{FeatureMap, FeaturePyramid};

pub const SIDECAR_NAME: &str = "sidecar.json";
const EMBEDDING_FILE: &str = "global_embedding.f32";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub image_id: String,
    pub layer_name: String,
    pub shape: [usize; 3],
    pub stride: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingEntry {
    pub file: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub image_id: String,
    pub layers: Vec<LayerEntry>,
    pub global_embedding: EmbeddingEntry,
}

/// Percent-encode everything outside `[A-Za-z0-9._-]` so any id maps to a
/// single, reversible path component.
pub fn encode_component(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-' => out.push(b as char),
            // a leading '.' would make "." and ".." reachable
            b'.' if !out.is_empty() => out.push('.'),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    if out.is_empty() {
        out.push_str("%");
    }
    out
}

pub fn image_dir(archive_dir: &Path, image_id: &str) -> PathBuf {
    archive_dir.join(encode_component(image_id))
}

pub fn write_f32_le(path: &Path, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| SpadeError::io(path, e))
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| SpadeError::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(SpadeError::Shape(format!(
            "{} has {} bytes, not a whole number of f32 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_pyramid(archive_dir: &Path, pyramid: &FeaturePyramid) -> Result<()> {
    let dir = image_dir(archive_dir, &pyramid.image_id);
    fs::create_dir_all(&dir).map_err(|e| SpadeError::io(&dir, e))?;
    let mut layers = Vec::with_capacity(pyramid.levels().len());
    for level in pyramid.levels() {
        let file = format!("{}.f32", encode_component(&level.layer_name));
        write_f32_le(&dir.join(&file), level.data())?;
        layers.push(LayerEntry {
            image_id: pyramid.image_id.clone(),
            layer_name: level.layer_name.clone(),
            shape: level.shape(),
            stride: level.stride(),
            file,
        });
    }
    write_f32_le(&dir.join(EMBEDDING_FILE), pyramid.global_embedding())?;
    let sidecar = Sidecar {
        image_id: pyramid.image_id.clone(),
        layers,
        global_embedding: EmbeddingEntry {
            file: EMBEDDING_FILE.to_string(),
            len: pyramid.global_embedding().len(),
        },
    };
    let path = dir.join(SIDECAR_NAME);
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| SpadeError::json(&path, e))?;
    fs::write(&path, json).map_err(|e| SpadeError::io(&path, e))
}

fn read_sized(dir: &Path, file: &str, expected: usize, what: &str) -> Result<Vec<f32>> {
    if file.contains('/') || file.contains('\\') || file.starts_with('.') {
        return Err(SpadeError::Dataset(format!("sidecar file name `{file}` escapes the archive")));
    }
    let values = read_f32_le(&dir.join(file))?;
    if values.len() != expected {
        return Err(SpadeError::Shape(format!(
            "{what}: sidecar declares {expected} values but {file} holds {}",
            values.len()
        )));
    }
    Ok(values)
}

/// Load the pyramid stored for `image_id`.
pub fn read_pyramid(archive_dir: &Path, image_id: &str) -> Result<FeaturePyramid> {
    let dir = image_dir(archive_dir, image_id);
    if !dir.is_dir() {
        return Err(SpadeError::UnknownImage(image_id.to_string()));
    }
    let path = dir.join(SIDECAR_NAME);
    if !path.is_file() {
        return Err(SpadeError::Dataset(format!("missing sidecar {}", path.display())));
    }
    let text = fs::read(&path).map_err(|e| SpadeError::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_slice(&text).map_err(|e| SpadeError::json(&path, e))?;
    if sidecar.image_id != image_id {
        return Err(SpadeError::Dataset(format!(
            "sidecar {} belongs to `{}`, not `{image_id}`",
            path.display(),
            sidecar.image_id
        )));
    }
    let mut levels = Vec::with_capacity(sidecar.layers.len());
    for entry in &sidecar.layers {
        let [c, h, w] = entry.shape;
        let data = read_sized(&dir, &entry.file, c * h * w, &entry.layer_name)?;
        levels.push(FeatureMap::new(entry.layer_name.clone(), entry.shape, entry.stride, data)?);
    }
    let emb = &sidecar.global_embedding;
    let embedding = read_sized(&dir, &emb.file, emb.len, "global_embedding")?;
    FeaturePyramid::new(sidecar.image_id, levels, embedding)
}

/// Pyramid store backed by an archive directory; reads on demand.
#[derive(Clone, Debug)]
pub struct ArchiveStore {
    dir: PathBuf,
}

impl ArchiveStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ArchiveStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl PyramidStore for ArchiveStore {
    fn load(&self, image_id: &str) -> Result<Arc<FeaturePyramid>> {
        read_pyramid(&self.dir, image_id).map(Arc::new)
    }
}
