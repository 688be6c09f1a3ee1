//! Images to feature pyramids through pluggable backends.
//!
//! Every backend produces a set of named `C × H × W` activations; the taps
//! become pyramid levels (strides inferred from their widths) and the pooled
//! layer is average-pooled into the global embedding.

#[cfg(feature = "onnx")]
mod onnx;
mod toy;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use toy::{ConvLayer, ToyNetwork, TOY_LAYERS};

use crate::archive;
use crate::error::{Result, SpadeError};
use crate::types::{FeatureMap, FeaturePyramid, ImageTensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Pretrained backbone exported to a portable model file.
    PortableModel,
    /// Features read back from a feature archive, keyed by image id.
    Precomputed,
    #[default]
    Toy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorSpec {
    pub backend: BackendKind,
    /// Model file for `portable_model`, archive directory for `precomputed`.
    pub model_path: Option<PathBuf>,
    pub tap_names: Vec<String>,
    pub pooled_name: String,
    pub toy_seed: u64,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::toy(0)
    }
}

impl ExtractorSpec {
    pub fn toy(seed: u64) -> Self {
        ExtractorSpec {
            backend: BackendKind::Toy,
            model_path: None,
            tap_names: TOY_LAYERS.iter().map(|s| s.to_string()).collect(),
            pooled_name: "layer3".into(),
            toy_seed: seed,
        }
    }

    /// Wide-ResNet style export: three residual-stage taps, pooled from the last stage.
    pub fn portable_model(path: impl Into<PathBuf>) -> Self {
        ExtractorSpec {
            backend: BackendKind::PortableModel,
            model_path: Some(path.into()),
            tap_names: vec!["layer1".into(), "layer2".into(), "layer3".into()],
            pooled_name: "layer4".into(),
            toy_seed: 0,
        }
    }

    pub fn precomputed(archive_dir: impl Into<PathBuf>, tap_names: Vec<String>, pooled_name: &str) -> Self {
        ExtractorSpec {
            backend: BackendKind::Precomputed,
            model_path: Some(archive_dir.into()),
            tap_names,
            pooled_name: pooled_name.into(),
            toy_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tap_names.is_empty() {
            return Err(SpadeError::Config("extractor needs at least one tap".into()));
        }
        if self.pooled_name.is_empty() {
            return Err(SpadeError::Config("extractor needs a pooled layer name".into()));
        }
        match self.backend {
            BackendKind::PortableModel | BackendKind::Precomputed if self.model_path.is_none() => {
                Err(SpadeError::Config(format!(
                    "backend {:?} requires model_path",
                    self.backend
                )))
            }
            _ => Ok(()),
        }
    }
}

/// One named activation produced by a backend, `C × H × W`.
#[derive(Clone, Debug)]
pub(crate) struct RawOutput {
    pub name: String,
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

enum Backend {
    Toy(ToyNetwork),
    Precomputed(PathBuf),
    #[cfg(feature = "onnx")]
    Onnx(onnx::OnnxModel),
}

/// A loaded, read-only extractor. `extract` may be called from many threads.
pub struct Extractor {
    spec: ExtractorSpec,
    backend: Backend,
}

impl std::fmt::Debug for Extractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Extractor").field("spec", &self.spec).finish()
    }
}

impl Extractor {
    pub fn load(spec: &ExtractorSpec) -> Result<Self> {
        spec.validate()?;
        let backend = match spec.backend {
            BackendKind::Toy => {
                for name in spec.tap_names.iter().chain([&spec.pooled_name]) {
                    if !TOY_LAYERS.contains(&name.as_str()) {
                        return Err(SpadeError::Config(format!(
                            "toy backend has no output `{name}` (available: {})",
                            TOY_LAYERS.join(", ")
                        )));
                    }
                }
                Backend::Toy(ToyNetwork::new(spec.toy_seed))
            }
            BackendKind::Precomputed => {
                let dir = spec.model_path.clone().expect("validated");
                if !dir.is_dir() {
                    return Err(SpadeError::ModelLoad(format!(
                        "feature archive {} not found",
                        dir.display()
                    )));
                }
                Backend::Precomputed(dir)
            }
            BackendKind::PortableModel => Self::load_portable(spec)?,
        };
        Ok(Extractor {
            spec: spec.clone(),
            backend,
        })
    }

    #[cfg(feature = "onnx")]
    fn load_portable(spec: &ExtractorSpec) -> Result<Backend> {
        let path = spec.model_path.as_deref().expect("validated");
        let mut outputs = spec.tap_names.clone();
        if !outputs.contains(&spec.pooled_name) {
            outputs.push(spec.pooled_name.clone());
        }
        Ok(Backend::Onnx(onnx::OnnxModel::load(path, &outputs)?))
    }

    #[cfg(not(feature = "onnx"))]
    fn load_portable(_spec: &ExtractorSpec) -> Result<Backend> {
        Err(SpadeError::ModelLoad(
            "portable model support not compiled in (enable the `onnx` feature)".into(),
        ))
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn extract(&self, image: &ImageTensor) -> Result<FeaturePyramid> {
        let outputs = match &self.backend {
            Backend::Toy(net) => net.run(image)?,
            Backend::Precomputed(dir) => return self.from_archive(dir, &image.id),
            #[cfg(feature = "onnx")]
            Backend::Onnx(model) => model.run(image)?,
        };
        assemble(&image.id, image.width(), &outputs, &self.spec)
    }

    fn from_archive(&self, dir: &Path, image_id: &str) -> Result<FeaturePyramid> {
        let stored = archive::read_pyramid(dir, image_id)?;
        let levels = self
            .spec
            .tap_names
            .iter()
            .map(|name| {
                stored.level(name).cloned().ok_or_else(|| {
                    SpadeError::Config(format!("tap `{name}` absent from archived `{image_id}`"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeaturePyramid::new(image_id, levels, stored.global_embedding().to_vec())
    }
}

fn assemble(
    image_id: &str,
    input_width: usize,
    outputs: &[RawOutput],
    spec: &ExtractorSpec,
) -> Result<FeaturePyramid> {
    let find = |name: &str| {
        outputs.iter().find(|o| o.name == name).ok_or_else(|| {
            SpadeError::Config(format!(
                "tap `{name}` not among model outputs ({})",
                outputs.iter().map(|o| o.name.as_str()).collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let mut levels = Vec::with_capacity(spec.tap_names.len());
    for name in &spec.tap_names {
        let out = find(name)?;
        let width = out.shape[2];
        if width == 0 {
            return Err(SpadeError::Shape(format!("output `{name}` has zero width")));
        }
        let stride = ((input_width as f64 / width as f64).round() as usize).max(1);
        if stride * width > input_width + stride {
            return Err(SpadeError::Shape(format!(
                "output `{name}` ({width} cells at stride {stride}) overruns a {input_width}-pixel input"
            )));
        }
        levels.push(FeatureMap::new(name.clone(), out.shape, stride, out.data.clone())?);
    }
    let pooled = find(&spec.pooled_name)?;
    if pooled.data.iter().any(|v| !v.is_finite()) {
        return Err(SpadeError::NonFinite {
            layer: pooled.name.clone(),
        });
    }
    let pooled = FeatureMap::new(pooled.name.clone(), pooled.shape, 1, pooled.data.clone())?;
    FeaturePyramid::new(image_id, levels, pooled.average_pool())
}

/// Load the extractor described by `spec` and run it once.
pub fn extract(image: &ImageTensor, spec: &ExtractorSpec) -> Result<FeaturePyramid> {
    Extractor::load(spec)?.extract(image)
}

/// Read back a pyramid written to a feature archive.
pub fn extract_precomputed(archive_dir: &Path, image_id: &str) -> Result<FeaturePyramid> {
    archive::read_pyramid(archive_dir, image_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(id: &str, h: usize, w: usize, seed: u64) -> ImageTensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
        ImageTensor::new(id, 3, h, w, data).unwrap()
    }

    #[test]
    fn toy_shapes_and_strides() {
        let p = extract(&noise_image("a", 64, 64, 1), &ExtractorSpec::toy(0)).unwrap();
        let shapes: Vec<_> = p.levels().iter().map(|l| (l.shape(), l.stride())).collect();
        assert_eq!(
            shapes,
            vec![([16, 16, 16], 4), ([32, 8, 8], 8), ([64, 4, 4], 16)]
        );
        assert_eq!(p.global_embedding().len(), 64);
    }

    #[test]
    fn toy_on_224_matches_backbone_grid_sizes() {
        let p = extract(&noise_image("a", 224, 224, 1), &ExtractorSpec::toy(0)).unwrap();
        let sizes: Vec<_> = p.levels().iter().map(|l| l.height()).collect();
        assert_eq!(sizes, vec![56, 28, 14]);
    }

    #[test]
    fn deterministic() {
        let img = noise_image("a", 48, 48, 3);
        let ex = Extractor::load(&ExtractorSpec::toy(5)).unwrap();
        let a = ex.extract(&img).unwrap();
        let b = ex.extract(&img.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pooled_embedding_is_spatial_mean() {
        let img = noise_image("a", 64, 48, 9);
        let ex = Extractor::load(&ExtractorSpec::toy(2)).unwrap();
        let p = ex.extract(&img).unwrap();
        let l3 = p.level("layer3").unwrap();
        for c in 0..l3.channels() {
            let mut sum = 0.0f64;
            for y in 0..l3.height() {
                for x in 0..l3.width() {
                    sum += l3.at(c, y, x) as f64;
                }
            }
            let mean = sum / (l3.height() * l3.width()) as f64;
            let got = p.global_embedding()[c] as f64;
            assert!((got - mean).abs() <= 1e-5 * mean.abs().max(1e-12), "channel {c}: {got} vs {mean}");
        }
    }

    #[test]
    fn unknown_tap_is_config_error() {
        let mut spec = ExtractorSpec::toy(0);
        spec.tap_names.push("layer9".into());
        assert!(matches!(Extractor::load(&spec), Err(SpadeError::Config(_))));
        let outputs = vec![RawOutput {
            name: "a".into(),
            shape: [1, 2, 2],
            data: vec![0.0; 4],
        }];
        let mut spec = ExtractorSpec::toy(0);
        spec.tap_names = vec!["b".into()];
        spec.pooled_name = "a".into();
        assert!(matches!(assemble("x", 8, &outputs, &spec), Err(SpadeError::Config(_))));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let outputs = vec![RawOutput {
            name: "stage2".into(),
            shape: [1, 2, 2],
            data: vec![0.0, f32::NAN, 0.0, 0.0],
        }];
        let mut spec = ExtractorSpec::toy(0);
        spec.tap_names = vec!["stage2".into()];
        spec.pooled_name = "stage2".into();
        let err = assemble("x", 8, &outputs, &spec).unwrap_err();
        assert!(matches!(err, SpadeError::NonFinite { ref layer } if layer == "stage2"));
    }

    #[test]
    fn portable_model_requires_path() {
        let mut spec = ExtractorSpec::portable_model("m.onnx");
        spec.model_path = None;
        assert!(matches!(spec.validate(), Err(SpadeError::Config(_))));
        let spec = ExtractorSpec::portable_model("/nonexistent/model.onnx");
        assert!(matches!(Extractor::load(&spec), Err(SpadeError::ModelLoad(_))));
    }

    #[test]
    fn precomputed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ex = Extractor::load(&ExtractorSpec::toy(0)).unwrap();
        let imgs = [noise_image("c/0", 32, 32, 1), noise_image("c/1", 32, 32, 2)];
        let pyrs: Vec<_> = imgs.iter().map(|i| ex.extract(i).unwrap()).collect();
        for p in &pyrs {
            archive::write_pyramid(dir.path(), p).unwrap();
        }
        let spec = ExtractorSpec::precomputed(dir.path(), ExtractorSpec::toy(0).tap_names, "layer3");
        let pre = Extractor::load(&spec).unwrap();
        assert_eq!(pre.extract(&imgs[1]).unwrap(), pyrs[1]);
        assert_eq!(extract_precomputed(dir.path(), "c/0").unwrap(), pyrs[0]);
    }
}
