//! Shared data model: tensors, pyramids, masks and configuration.
//!
//! Everything here is plain data, immutable once constructed and `Send + Sync`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadeError};
use crate::parallel::Execution;
use crate::retrieval::SearchBackend;

/// Dense row-major 2-D grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(SpadeError::Shape(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid<f64> {
    /// (min, max) over all cells; `None` for an empty grid.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

/// A preprocessed image, channels × height × width, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub id: String,
    pub source_path: Option<String>,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(
        id: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(SpadeError::Shape(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(SpadeError::Shape("image has an empty dimension".into()));
        }
        if data.len() != channels * height * width {
            return Err(SpadeError::Shape(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SpadeError::Shape("image contains non-finite values".into()));
        }
        Ok(ImageTensor {
            id: id.into(),
            source_path: None,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn with_source(mut self, path: impl Into<String>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// One layer's activations for one image, channels × height × width.
///
/// Cell `(i, j)` covers input pixels `[i·s, (i+1)·s)` and is anchored at the
/// continuous input coordinate `(i·s + s/2, j·s + s/2)`, `s` being the stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub layer_name: String,
    channels: usize,
    height: usize,
    width: usize,
    stride: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        layer_name: impl Into<String>,
        shape: [usize; 3],
        stride: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let layer_name = layer_name.into();
        let [channels, height, width] = shape;
        if stride == 0 {
            return Err(SpadeError::Shape(format!("layer `{layer_name}` has zero stride")));
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(SpadeError::Shape(format!(
                "layer `{layer_name}` has an empty dimension"
            )));
        }
        if data.len() != channels * height * width {
            return Err(SpadeError::Shape(format!(
                "layer `{layer_name}` shape [{channels},{height},{width}] needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SpadeError::NonFinite { layer: layer_name });
        }
        Ok(FeatureMap {
            layer_name,
            channels,
            height,
            width,
            stride,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// The feature vector at cell `(y, x)`.
    pub fn pixel_vector(&self, y: usize, x: usize, out: &mut Vec<f32>) {
        out.clear();
        let plane = self.height * self.width;
        let offset = y * self.width + x;
        out.extend((0..self.channels).map(|c| self.data[c * plane + offset]));
    }

    /// All cell vectors as an `(H·W) × C` row-major matrix, cells in row-major order.
    pub fn pixel_rows(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut rows = vec![0f32; plane * self.channels];
        for c in 0..self.channels {
            let src = &self.data[c * plane..(c + 1) * plane];
            for (p, &v) in src.iter().enumerate() {
                rows[p * self.channels + c] = v;
            }
        }
        rows
    }

    /// Spatial mean of every channel.
    pub fn average_pool(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        self.data
            .chunks_exact(plane)
            .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect()
    }
}

/// Multi-level features of one image plus its pooled global embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePyramid {
    pub image_id: String,
    levels: Vec<FeatureMap>,
    global_embedding: Vec<f32>,
}

impl FeaturePyramid {
    pub fn new(
        image_id: impl Into<String>,
        levels: Vec<FeatureMap>,
        global_embedding: Vec<f32>,
    ) -> Result<Self> {
        if levels.is_empty() {
            return Err(SpadeError::Shape("pyramid has no levels".into()));
        }
        if levels.windows(2).any(|w| w[0].stride >= w[1].stride) {
            return Err(SpadeError::Shape(
                "pyramid level strides must be strictly increasing".into(),
            ));
        }
        if global_embedding.is_empty() {
            return Err(SpadeError::Shape("global embedding is empty".into()));
        }
        if global_embedding.iter().any(|v| !v.is_finite()) {
            return Err(SpadeError::NonFinite {
                layer: "global_embedding".into(),
            });
        }
        Ok(FeaturePyramid {
            image_id: image_id.into(),
            levels,
            global_embedding,
        })
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn level(&self, name: &str) -> Option<&FeatureMap> {
        self.levels.iter().find(|l| l.layer_name == name)
    }

    pub fn global_embedding(&self) -> &[f32] {
        &self.global_embedding
    }
}

/// How images are picked for the pixel gallery.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Knn,
    Random,
}

/// How per-level information is combined into one score map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Independent kNN per level, distance maps averaged with `level_weights`.
    #[default]
    Mean,
    /// Features upsampled to the finest level and concatenated; one kNN.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of retrieved normal images.
    pub k: usize,
    /// Number of gallery features averaged per pixel.
    pub kappa: usize,
    pub levels_selected: Vec<String>,
    pub level_weights: Vec<f64>,
    /// Gaussian smoothing width, in evaluation-grid pixels.
    pub sigma: f64,
    pub eval_resolution: (usize, usize),
    pub crop_to: Option<(usize, usize)>,
    pub retrieval_mode: RetrievalMode,
    pub random_seed: u64,
    pub fusion: FusionMode,
    pub search: SearchBackend,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 50,
            kappa: 1,
            levels_selected: vec!["layer1".into(), "layer2".into(), "layer3".into()],
            level_weights: vec![1.0; 3],
            sigma: 4.0,
            eval_resolution: (256, 256),
            crop_to: None,
            retrieval_mode: RetrievalMode::Knn,
            random_seed: 0,
            fusion: FusionMode::Mean,
            search: SearchBackend::Exact,
            execution: Execution::Parallel,
        }
    }
}

impl PipelineConfig {
    /// Replace the selected levels and reset weights to equal.
    pub fn with_levels<S: Into<String>>(mut self, levels: impl IntoIterator<Item = S>) -> Self {
        self.levels_selected = levels.into_iter().map(Into::into).collect();
        self.level_weights = vec![1.0; self.levels_selected.len()];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(SpadeError::Config("k must be positive".into()));
        }
        if self.kappa == 0 {
            return Err(SpadeError::Config("kappa must be positive".into()));
        }
        if self.levels_selected.is_empty() {
            return Err(SpadeError::Config("no levels selected".into()));
        }
        if self.level_weights.len() != self.levels_selected.len() {
            return Err(SpadeError::Config(format!(
                "{} level weights for {} levels",
                self.level_weights.len(),
                self.levels_selected.len()
            )));
        }
        if self
            .level_weights
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(SpadeError::Config("level weights must be finite and >= 0".into()));
        }
        if self.level_weights.iter().sum::<f64>() <= 0.0 {
            return Err(SpadeError::Config("level weights sum to zero".into()));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(SpadeError::Config("sigma must be finite and >= 0".into()));
        }
        let (eh, ew) = self.eval_resolution;
        if eh == 0 || ew == 0 {
            return Err(SpadeError::Config("eval_resolution must be positive".into()));
        }
        if let Some((ch, cw)) = self.crop_to {
            if ch == 0 || cw == 0 || ch > eh || cw > ew {
                return Err(SpadeError::Config(format!(
                    "crop {ch}x{cw} does not fit in eval resolution {eh}x{ew}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    /// Image-level threshold on the kNN distance.
    pub tau: f64,
    /// Pixel-level threshold on the anomaly map.
    pub theta: f64,
}

/// Binary anomaly mask at evaluation resolution (1 = anomalous).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMask {
    pub image_id: String,
    pub data: Grid<u8>,
}

impl GroundTruthMask {
    pub fn new(image_id: impl Into<String>, data: Grid<u8>) -> Result<Self> {
        if data.as_slice().iter().any(|&v| v > 1) {
            return Err(SpadeError::Shape("mask values must be 0 or 1".into()));
        }
        Ok(GroundTruthMask {
            image_id: image_id.into(),
            data,
        })
    }

    pub fn empty(image_id: impl Into<String>, height: usize, width: usize) -> Self {
        GroundTruthMask {
            image_id: image_id.into(),
            data: Grid::filled(height, width, 0),
        }
    }

    pub fn is_anomalous(&self) -> bool {
        self.data.as_slice().iter().any(|&v| v == 1)
    }
}

/// Per-pixel anomaly scores at evaluation resolution plus the image score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMap {
    pub image_id: String,
    pub scores: Grid<f64>,
    pub image_score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.k, 50);
        assert_eq!(c.kappa, 1);
        assert_eq!(c.sigma, 4.0);
        assert_eq!(c.eval_resolution, (256, 256));
        assert_eq!(c.levels_selected.len(), 3);
        assert!(c.crop_to.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_weights_and_unknown_keys() {
        let mut c = PipelineConfig::default();
        c.level_weights = vec![1.0];
        assert!(c.validate().is_err());
        c.level_weights = vec![0.0; 3];
        assert!(c.validate().is_err());
        let err = serde_json::from_str::<PipelineConfig>(r#"{"k": 3, "bogus": 1}"#);
        assert!(err.is_err());
        let ok: PipelineConfig = serde_json::from_str(r#"{"k": 3}"#).unwrap();
        assert_eq!(ok.k, 3);
        assert_eq!(ok.kappa, 1);
    }

    #[test]
    fn tensors_reject_bad_shapes() {
        assert!(ImageTensor::new("a", 2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageTensor::new("a", 1, 2, 2, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new("a", 1, 1, 1, vec![f32::NAN]).is_err());
        let err = FeatureMap::new("l", [1, 1, 1], 1, vec![f32::INFINITY]).unwrap_err();
        assert!(matches!(err, SpadeError::NonFinite { ref layer } if layer == "l"));
    }

    #[test]
    fn pyramid_requires_increasing_strides() {
        let a = FeatureMap::new("a", [1, 2, 2], 4, vec![0.0; 4]).unwrap();
        let b = FeatureMap::new("b", [1, 1, 1], 8, vec![0.0]).unwrap();
        assert!(FeaturePyramid::new("x", vec![a.clone(), b.clone()], vec![0.0]).is_ok());
        assert!(FeaturePyramid::new("x", vec![b, a], vec![0.0]).is_err());
    }

    #[test]
    fn pixel_rows_transposes_chw() {
        let m = FeatureMap::new("l", [2, 1, 2], 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.pixel_rows(), vec![1.0, 3.0, 2.0, 4.0]);
        let mut v = Vec::new();
        m.pixel_vector(0, 1, &mut v);
        assert_eq!(v, vec![2.0, 4.0]);
    }

    #[test]
    fn json_round_trip() {
        let m = FeatureMap::new("l", [1, 1, 2], 2, vec![0.5, -1.25]).unwrap();
        let p = FeaturePyramid::new("img", vec![m], vec![0.1, 0.2]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<FeaturePyramid>(&s).unwrap(), p);

        let map = AnomalyMap {
            image_id: "q".into(),
            scores: Grid::new(1, 2, vec![0.0, 3.5]).unwrap(),
            image_score: 1.5,
        };
        let s = serde_json::to_string(&map).unwrap();
        assert_eq!(serde_json::from_str::<AnomalyMap>(&s).unwrap(), map);

        let cfg = PipelineConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), cfg);
    }
}
