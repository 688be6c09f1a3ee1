//! Sub-image anomaly detection by kNN over deep feature pyramids.
//!
//! An image is scored by its mean distance to the `k` nearest normal training
//! images in a pooled embedding space. Those neighbors then form a gallery of
//! pixel features at every selected pyramid level; each test pixel is scored
//! by its mean distance to its `kappa` nearest gallery features, the levels
//! are fused and upsampled to the evaluation resolution, and the result is
//! Gaussian smoothed.
//!
//! ```
//! use spade_core::{build_image_index, score_image, Extractor, ExtractorSpec, PipelineConfig};
//! use spade_core::synthetic::{generate, SynthSpec};
//!
//! let set = generate(&SynthSpec::localization(4, 1, 0, 64, 0)).unwrap();
//! let extractor = Extractor::load(&ExtractorSpec::toy(0)).unwrap();
//! let pyramids = set.train.iter().map(|im| extractor.extract(im)).collect::<Result<Vec<_>, _>>().unwrap();
//! let config = PipelineConfig { k: 2, eval_resolution: (64, 64), ..PipelineConfig::default() };
//! let index = build_image_index(pyramids, config.search).unwrap();
//! let map = score_image(&set.test[0], &extractor, &index, &config).unwrap();
//! assert_eq!(map.scores.shape(), (64, 64));
//! assert!(map.image_score >= 0.0);
//! ```

pub mod archive;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod extractor;
pub mod parallel;
pub mod pipeline;
pub mod retrieval;
pub mod scoring;
pub mod synthetic;
pub mod types;

pub use error::{Result, SpadeError};
pub use evaluation::{evaluate, roc_auc, EvalReport};
pub use extractor::{BackendKind, Extractor, ExtractorSpec};
pub use parallel::Execution;
pub use retrieval::{build_image_index, build_pixel_gallery, GalleryIndex, SearchBackend};
pub use scoring::{classify, score_image, score_pyramid, ScoredImage};
pub use types::{
    AnomalyMap, FeatureMap, FeaturePyramid, FusionMode, Grid, GroundTruthMask, ImageTensor, PipelineConfig,
    RetrievalMode, ThresholdConfig,
};
