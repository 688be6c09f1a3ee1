//! Whole-set helpers: extract a training set into an index, score a test set,
//! and run a scanned dataset class end to end.

use std::sync::Arc;

use crate::archive::{self, ArchiveStore};
use crate::dataset::{self, DatasetManifest};
use crate::error::Result;
use crate::evaluation::{self, EvalReport};
use crate::extractor::Extractor;
use crate::retrieval::{build_image_index, GalleryIndex, VectorSet};
use crate::scoring::{score_pyramid, ScoredImage};
use crate::types::{AnomalyMap, FeaturePyramid, GroundTruthMask, ImageTensor, PipelineConfig};

/// Extract every image (in parallel under `config.execution`) and index the
/// pyramids in memory.
pub fn fit(images: &[ImageTensor], extractor: &Extractor, config: &PipelineConfig) -> Result<GalleryIndex> {
    let pyramids = config
        .execution
        .map_slice(images, |im| extractor.extract(im))
        .into_iter()
        .collect::<Result<Vec<FeaturePyramid>>>()?;
    build_image_index(pyramids, config.search)
}

/// Like [`fit`], but pyramids go to a feature archive on disk and are loaded
/// back on demand, so memory holds only the global embeddings.
pub fn fit_archived(
    images: impl IntoIterator<Item = Result<ImageTensor>>,
    extractor: &Extractor,
    archive_dir: &std::path::Path,
    config: &PipelineConfig,
) -> Result<GalleryIndex> {
    let (mut ids, mut rows, mut dim) = (Vec::new(), Vec::new(), 0);
    for image in images {
        let pyramid = extractor.extract(&image?)?;
        archive::write_pyramid(archive_dir, &pyramid)?;
        dim = pyramid.global_embedding().len();
        rows.extend_from_slice(pyramid.global_embedding());
        ids.push(pyramid.image_id.clone());
    }
    GalleryIndex::from_parts(
        ids,
        VectorSet::new(dim, rows)?,
        Arc::new(ArchiveStore::new(archive_dir)),
        config.search,
    )
}

/// Score test images one after another; the per-pixel work inside each is
/// what runs in parallel.
pub fn score_all(
    images: &[ImageTensor],
    extractor: &Extractor,
    index: &GalleryIndex,
    config: &PipelineConfig,
) -> Result<Vec<ScoredImage>> {
    images
        .iter()
        .map(|im| score_pyramid(&extractor.extract(im)?, im.shape(), index, config))
        .collect()
}

/// Maps, masks and metrics for one dataset class.
#[derive(Clone, Debug)]
pub struct ClassRun {
    pub maps: Vec<AnomalyMap>,
    pub masks: Vec<GroundTruthMask>,
    pub defect_types: Vec<String>,
    pub report: EvalReport,
}

/// Preprocess, fit, score and evaluate one scanned class, holding all
/// training pyramids in memory.
pub fn run_class(manifest: &DatasetManifest, extractor: &Extractor, config: &PipelineConfig) -> Result<ClassRun> {
    let train = manifest
        .train_items
        .iter()
        .map(|it| dataset::preprocess(&it.path, &it.image_id, config))
        .collect::<Result<Vec<_>>>()?;
    let index = fit(&train, extractor, config)?;
    drop(train);

    let (mut maps, mut masks, mut defect_types) = (Vec::new(), Vec::new(), Vec::new());
    for item in &manifest.test_items {
        let image = dataset::preprocess(&item.path, &item.image_id, config)?;
        let pyramid = extractor.extract(&image)?;
        maps.push(score_pyramid(&pyramid, image.shape(), &index, config)?.map);
        masks.push(dataset::ground_truth(item, config.eval_resolution)?);
        defect_types.push(item.defect_type.clone());
    }
    let labels: Vec<bool> = manifest.test_items.iter().map(|t| t.is_anomalous()).collect();
    let report = evaluation::evaluate(&maps, &masks, &labels)?;
    Ok(ClassRun {
        maps,
        masks,
        defect_types,
        report,
    })
}
