//! Per-pixel anomaly maps: kNN distance maps per pyramid level, fused with
//! level weights, upsampled to the evaluation grid and Gaussian smoothed.

mod gaussian;
mod heatmap;
mod resample;

use std::sync::Arc;

pub use gaussian::{gaussian_kernel, reflect_index, smooth};
pub use heatmap::{heatmap_paths, normalize_u16, read_heatmap, write_heatmap, HeatmapPaths, HeatmapSidecar};
pub use resample::{embed_replicate, resize_bilinear, resize_plane};

use crate::error::{Result, SpadeError};
use crate::extractor::Extractor;
use crate::parallel::Execution;
use crate::retrieval::{
    build_pixel_gallery, query_image_knn, select_neighbors, GalleryIndex, GalleryLevel, PixelGallery,
    PyramidStore, VectorSet,
};
use crate::types::{
    AnomalyMap, FeaturePyramid, FusionMode, Grid, ImageTensor, PipelineConfig, RetrievalMode,
    ThresholdConfig,
};

/// Name given to the single distance map produced by concatenated features.
pub const CONCAT_LEVEL: &str = "concat";

/// kNN distances of one level's cells to the gallery.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelDistanceMap {
    pub layer_name: String,
    pub data: Grid<f64>,
}

/// Score every cell of `level` in `query` against the same level of `gallery`.
pub fn score_level(
    query: &FeaturePyramid,
    gallery: &PixelGallery,
    level: &str,
    kappa: usize,
    exec: Execution,
) -> Result<LevelDistanceMap> {
    let map = query
        .level(level)
        .ok_or_else(|| SpadeError::Config(format!("level `{level}` missing from query pyramid")))?;
    let g = gallery
        .level(level)
        .ok_or_else(|| SpadeError::Config(format!("level `{level}` missing from gallery")))?;
    score_rows(level, &map.pixel_rows(), (map.height(), map.width()), g, kappa, exec)
}

fn score_rows(
    name: &str,
    rows: &[f32],
    (h, w): (usize, usize),
    gallery: &GalleryLevel,
    kappa: usize,
    exec: Execution,
) -> Result<LevelDistanceMap> {
    let dim = gallery.rows().dim();
    if rows.len() != h * w * dim {
        return Err(SpadeError::Shape(format!(
            "level `{name}`: query has {} values for {h}x{w} cells, gallery dimension is {dim}",
            rows.len()
        )));
    }
    let scores = exec
        .map_range(h * w, |p| gallery.score(&rows[p * dim..(p + 1) * dim], kappa))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelDistanceMap {
        layer_name: name.to_string(),
        data: Grid::new(h, w, scores)?,
    })
}

/// Upsample each map to `target` and take the weighted mean `Σ wᵢ·upᵢ / Σ wᵢ`.
pub fn fuse_levels(
    maps: &[LevelDistanceMap],
    weights: &[f64],
    target: (usize, usize),
) -> Result<Grid<f64>> {
    if maps.is_empty() {
        return Err(SpadeError::Parameter("no level maps to fuse".into()));
    }
    if weights.len() != maps.len() {
        return Err(SpadeError::Parameter(format!(
            "{} weights for {} maps",
            weights.len(),
            maps.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(SpadeError::Parameter("weights must be >= 0 with a positive sum".into()));
    }
    for m in maps {
        let (h, w) = m.data.shape();
        if h > target.0 || w > target.1 {
            return Err(SpadeError::Shape(format!(
                "level `{}` ({h}x{w}) is larger than the target {}x{}",
                m.layer_name, target.0, target.1
            )));
        }
    }
    let mut acc = vec![0.0; target.0 * target.1];
    for (m, &wt) in maps.iter().zip(weights) {
        if wt == 0.0 {
            continue;
        }
        let up = resize_plane(m.data.as_slice(), m.data.shape(), target);
        for (a, u) in acc.iter_mut().zip(up) {
            *a += wt * u;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Grid::new(target.0, target.1, acc)
}

/// Per-image seed for random retrieval, so each test image draws its own set.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in image_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Everything computed while scoring one image.
#[derive(Clone, Debug)]
pub struct ScoredImage {
    pub neighbor_ids: Vec<String>,
    pub level_maps: Vec<LevelDistanceMap>,
    /// Fused map in the evaluation frame, before smoothing.
    pub unsmoothed: Grid<f64>,
    pub map: AnomalyMap,
}

/// Score an already-extracted query pyramid. `image_shape` is the size of the
/// tensor the pyramid was extracted from.
pub fn score_pyramid(
    query: &FeaturePyramid,
    image_shape: (usize, usize),
    index: &GalleryIndex,
    config: &PipelineConfig,
) -> Result<ScoredImage> {
    config.validate()?;
    let knn = query_image_knn(index, query.global_embedding(), config.k)?;
    let neighbor_ids = match config.retrieval_mode {
        RetrievalMode::Knn => knn.neighbor_ids.clone(),
        RetrievalMode::Random => select_neighbors(
            index,
            query.global_embedding(),
            config.k,
            RetrievalMode::Random,
            image_seed(config.random_seed, &query.image_id),
        )?,
    };

    let (level_maps, weights) = match config.fusion {
        FusionMode::Mean => {
            let gallery = build_pixel_gallery(
                &neighbor_ids,
                index.store(),
                &config.levels_selected,
                config.search,
            )?;
            let maps = config
                .levels_selected
                .iter()
                .map(|name| score_level(query, &gallery, name, config.kappa, config.execution))
                .collect::<Result<Vec<_>>>()?;
            (maps, config.level_weights.clone())
        }
        FusionMode::Concat => {
            let map = score_concat(query, &neighbor_ids, index.store(), config)?;
            (vec![map], vec![1.0])
        }
    };

    let fused = fuse_levels(&level_maps, &weights, image_shape)?;
    let unsmoothed = if image_shape == config.eval_resolution {
        fused
    } else if config.crop_to == Some(image_shape) {
        embed_replicate(&fused, config.eval_resolution)
    } else {
        resize_bilinear(&fused, config.eval_resolution)
    };
    let scores = smooth(&unsmoothed, config.sigma);
    Ok(ScoredImage {
        neighbor_ids,
        level_maps,
        unsmoothed,
        map: AnomalyMap {
            image_id: query.image_id.clone(),
            scores,
            image_score: knn.score,
        },
    })
}

/// Extract and score one test image.
pub fn score_image(
    image: &ImageTensor,
    extractor: &Extractor,
    index: &GalleryIndex,
    config: &PipelineConfig,
) -> Result<AnomalyMap> {
    let pyramid = extractor.extract(image)?;
    Ok(score_pyramid(&pyramid, image.shape(), index, config)?.map)
}

/// Selected levels upsampled to the finest selected grid and concatenated per
/// cell. Each level is scaled by `sqrt(wᵢ / Σw)` so squared distances become
/// the weighted sum of per-level squared distances.
pub fn concat_features(
    pyramid: &FeaturePyramid,
    levels: &[String],
    weights: &[f64],
) -> Result<(usize, usize, VectorSet)> {
    let maps = levels
        .iter()
        .map(|name| {
            pyramid.level(name).ok_or_else(|| {
                SpadeError::Config(format!("level `{name}` missing from `{}`", pyramid.image_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let finest = maps
        .iter()
        .max_by_key(|m| m.height() * m.width())
        .expect("levels validated nonempty");
    let (fh, fw) = (finest.height(), finest.width());
    let total: f64 = weights.iter().sum();
    let dim: usize = maps.iter().map(|m| m.channels()).sum();
    let mut rows = vec![0f32; fh * fw * dim];
    let mut offset = 0;
    for (m, &wt) in maps.iter().zip(weights) {
        let scale = (wt / total).sqrt();
        let plane = m.height() * m.width();
        for c in 0..m.channels() {
            let src: Vec<f64> = m.data()[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| v as f64)
                .collect();
            let up = resize_plane(&src, (m.height(), m.width()), (fh, fw));
            for (p, v) in up.into_iter().enumerate() {
                rows[p * dim + offset + c] = (v * scale) as f32;
            }
        }
        offset += m.channels();
    }
    Ok((fh, fw, VectorSet::new(dim, rows)?))
}

fn score_concat(
    query: &FeaturePyramid,
    neighbor_ids: &[String],
    store: &dyn PyramidStore,
    config: &PipelineConfig,
) -> Result<LevelDistanceMap> {
    let (qh, qw, qrows) = concat_features(query, &config.levels_selected, &config.level_weights)?;
    let neighbors: Vec<Arc<FeaturePyramid>> = neighbor_ids
        .iter()
        .map(|id| store.load(id))
        .collect::<Result<_>>()?;
    let parts = config.execution.map_slice(&neighbors, |p| {
        concat_features(p, &config.levels_selected, &config.level_weights)
    });
    let mut data = Vec::new();
    let mut grid = None;
    for (p, part) in neighbors.iter().zip(parts) {
        let (h, w, rows) = part?;
        match grid {
            None => grid = Some((h, w)),
            Some(g) if g != (h, w) => {
                return Err(SpadeError::Shape(format!(
                    "neighbor `{}` has a {h}x{w} finest grid, expected {}x{}",
                    p.image_id, g.0, g.1
                )))
            }
            Some(_) => {}
        }
        data.extend_from_slice(rows.as_slice());
    }
    let gallery = GalleryLevel::new(
        CONCAT_LEVEL,
        grid.expect("k >= 1"),
        neighbors.len(),
        VectorSet::new(qrows.dim(), data)?,
        config.search,
    )?;
    score_rows(
        CONCAT_LEVEL,
        qrows.as_slice(),
        (qh, qw),
        &gallery,
        config.kappa,
        config.execution,
    )
}

/// Image label `image_score > tau` and pixel mask `score > theta`.
pub fn classify(map: &AnomalyMap, thresholds: ThresholdConfig) -> (bool, Grid<u8>) {
    (
        map.image_score > thresholds.tau,
        map.scores.map(|s| u8::from(s > thresholds.theta)),
    )
}
