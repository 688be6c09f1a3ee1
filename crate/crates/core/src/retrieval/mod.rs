//! Nearest-neighbor machinery: the image-level index over global embeddings and
//! the per-level pixel galleries built from retrieved normal images.
//!
//! All distances are squared Euclidean accumulated in `f64`; no square root is
//! ever taken. Ties are broken by the lowest insertion index.

mod exact;
mod kdtree;
mod vectors;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use exact::ExactSearch;
pub use kdtree::KdTree;
pub use vectors::{mean_distance, squared_distance, Neighbor, VectorSet};

use crate::error::{Result, SpadeError};
use crate::types::{FeaturePyramid, RetrievalMode};

/// An immutable searchable set of vectors.
pub trait NeighborSearch: Send + Sync {
    fn rows(&self) -> &VectorSet;

    /// The `k` nearest rows sorted by (distance, index).
    fn knn(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>>;

    fn len(&self) -> usize {
        self.rows().len()
    }

    fn is_empty(&self) -> bool {
        self.rows().is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchBackend {
    #[default]
    Exact,
    KdTree,
}

impl SearchBackend {
    pub fn build(self, rows: Arc<VectorSet>) -> Box<dyn NeighborSearch> {
        match self {
            SearchBackend::Exact => Box::new(ExactSearch::new(rows)),
            SearchBackend::KdTree => Box::new(KdTree::build(rows)),
        }
    }
}

/// Resolves image ids to their stored feature pyramids.
pub trait PyramidStore: Send + Sync {
    fn load(&self, image_id: &str) -> Result<Arc<FeaturePyramid>>;
}

#[derive(Default)]
pub struct MemoryStore {
    pyramids: HashMap<String, Arc<FeaturePyramid>>,
}

impl MemoryStore {
    pub fn insert(&mut self, pyramid: FeaturePyramid) {
        self.pyramids
            .insert(pyramid.image_id.clone(), Arc::new(pyramid));
    }
}

impl PyramidStore for MemoryStore {
    fn load(&self, image_id: &str) -> Result<Arc<FeaturePyramid>> {
        self.pyramids
            .get(image_id)
            .cloned()
            .ok_or_else(|| SpadeError::UnknownImage(image_id.to_string()))
    }
}

/// Global embeddings of the normal training images, searchable by kNN, plus a
/// handle to their full pyramids.
pub struct GalleryIndex {
    image_ids: Vec<String>,
    search: Box<dyn NeighborSearch>,
    store: Arc<dyn PyramidStore>,
}

impl fmt::Debug for GalleryIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GalleryIndex")
            .field("len", &self.image_ids.len())
            .field("dim", &self.search.rows().dim())
            .finish()
    }
}

impl GalleryIndex {
    pub fn from_parts(
        image_ids: Vec<String>,
        embeddings: VectorSet,
        store: Arc<dyn PyramidStore>,
        backend: SearchBackend,
    ) -> Result<Self> {
        if image_ids.is_empty() {
            return Err(SpadeError::Parameter("cannot index zero images".into()));
        }
        if image_ids.len() != embeddings.len() {
            return Err(SpadeError::Shape(format!(
                "{} ids for {} embeddings",
                image_ids.len(),
                embeddings.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = image_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(SpadeError::Parameter(format!("duplicate image id `{dup}`")));
        }
        Ok(GalleryIndex {
            image_ids,
            search: backend.build(Arc::new(embeddings)),
            store,
        })
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.search.rows().dim()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn embeddings(&self) -> &VectorSet {
        self.search.rows()
    }

    pub fn store(&self) -> &dyn PyramidStore {
        self.store.as_ref()
    }
}

/// Index the given training pyramids, keeping them in memory.
pub fn build_image_index(
    pyramids: Vec<FeaturePyramid>,
    backend: SearchBackend,
) -> Result<GalleryIndex> {
    let first = pyramids
        .first()
        .ok_or_else(|| SpadeError::Parameter("cannot index zero images".into()))?;
    let dim = first.global_embedding().len();
    let mut data = Vec::with_capacity(dim * pyramids.len());
    let mut ids = Vec::with_capacity(pyramids.len());
    for p in &pyramids {
        if p.global_embedding().len() != dim {
            return Err(SpadeError::Shape(format!(
                "embedding of `{}` has dimension {}, expected {dim}",
                p.image_id,
                p.global_embedding().len()
            )));
        }
        data.extend_from_slice(p.global_embedding());
        ids.push(p.image_id.clone());
    }
    let mut store = MemoryStore::default();
    for p in pyramids {
        store.insert(p);
    }
    GalleryIndex::from_parts(ids, VectorSet::new(dim, data)?, Arc::new(store), backend)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageKnn {
    /// Mean squared distance to the `k` nearest embeddings.
    pub score: f64,
    pub neighbor_ids: Vec<String>,
    pub neighbors: Vec<Neighbor>,
}

pub fn query_image_knn(index: &GalleryIndex, query: &[f32], k: usize) -> Result<ImageKnn> {
    let neighbors = index.search.knn(query, k)?;
    Ok(ImageKnn {
        score: mean_distance(&neighbors),
        neighbor_ids: neighbors
            .iter()
            .map(|n| index.image_ids[n.index].clone())
            .collect(),
        neighbors,
    })
}

/// Pick the `k` images whose pixels form the gallery: the kNN images, or `k`
/// distinct images drawn uniformly with `seed`.
pub fn select_neighbors(
    index: &GalleryIndex,
    query: &[f32],
    k: usize,
    mode: RetrievalMode,
    seed: u64,
) -> Result<Vec<String>> {
    match mode {
        RetrievalMode::Knn => Ok(query_image_knn(index, query, k)?.neighbor_ids),
        RetrievalMode::Random => {
            if k == 0 || k > index.len() {
                return Err(SpadeError::Parameter(format!(
                    "requested {k} random neighbors from an index of {}",
                    index.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(rand::seq::index::sample(&mut rng, index.len(), k)
                .into_iter()
                .map(|i| index.image_ids[i].clone())
                .collect())
        }
    }
}

/// Where a gallery row came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    /// Position in the gallery's neighbor list.
    pub neighbor: usize,
    pub row: usize,
    pub col: usize,
}

/// All cell features of one level across the retrieved neighbors:
/// `(K·H·W) × C` rows, neighbors in retrieval order, cells row-major.
pub struct GalleryLevel {
    pub layer_name: String,
    height: usize,
    width: usize,
    neighbor_count: usize,
    search: Box<dyn NeighborSearch>,
}

impl fmt::Debug for GalleryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GalleryLevel")
            .field("layer_name", &self.layer_name)
            .field("rows", &self.search.len())
            .field("dim", &self.search.rows().dim())
            .finish()
    }
}

impl GalleryLevel {
    pub fn new(
        layer_name: impl Into<String>,
        grid: (usize, usize),
        neighbor_count: usize,
        rows: VectorSet,
        backend: SearchBackend,
    ) -> Result<Self> {
        let (height, width) = grid;
        if rows.len() != neighbor_count * height * width {
            return Err(SpadeError::Shape(format!(
                "gallery has {} rows, expected {neighbor_count}x{height}x{width}",
                rows.len()
            )));
        }
        Ok(GalleryLevel {
            layer_name: layer_name.into(),
            height,
            width,
            neighbor_count,
            search: backend.build(Arc::new(rows)),
        })
    }

    pub fn rows(&self) -> &VectorSet {
        self.search.rows()
    }

    pub fn len(&self) -> usize {
        self.search.len()
    }

    pub fn is_empty(&self) -> bool {
        self.search.is_empty()
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbor_count
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn provenance(&self, row: usize) -> Provenance {
        let plane = self.height * self.width;
        let cell = row % plane;
        Provenance {
            neighbor: row / plane,
            row: cell / self.width,
            col: cell % self.width,
        }
    }

    /// Mean squared distance from `query` to its `kappa` nearest gallery rows.
    pub fn score(&self, query: &[f32], kappa: usize) -> Result<f64> {
        Ok(mean_distance(&self.search.knn(query, kappa)?))
    }
}

#[derive(Debug)]
pub struct PixelGallery {
    pub neighbor_ids: Vec<String>,
    pub levels: Vec<GalleryLevel>,
}

impl PixelGallery {
    pub fn level(&self, name: &str) -> Option<&GalleryLevel> {
        self.levels.iter().find(|l| l.layer_name == name)
    }
}

pub fn build_pixel_gallery(
    neighbor_ids: &[String],
    store: &dyn PyramidStore,
    levels_selected: &[String],
    backend: SearchBackend,
) -> Result<PixelGallery> {
    if neighbor_ids.is_empty() {
        return Err(SpadeError::Parameter("gallery needs at least one neighbor".into()));
    }
    let pyramids = neighbor_ids
        .iter()
        .map(|id| store.load(id))
        .collect::<Result<Vec<_>>>()?;
    let mut levels = Vec::with_capacity(levels_selected.len());
    for name in levels_selected {
        let mut shape = None;
        let mut data = Vec::new();
        for p in &pyramids {
            let map = p.level(name).ok_or_else(|| {
                SpadeError::Config(format!("level `{name}` missing from `{}`", p.image_id))
            })?;
            match shape {
                None => shape = Some(map.shape()),
                Some(s) if s != map.shape() => {
                    return Err(SpadeError::Shape(format!(
                        "level `{name}` of `{}` is {:?}, other neighbors are {:?}",
                        p.image_id,
                        map.shape(),
                        s
                    )))
                }
                Some(_) => {}
            }
            data.extend(map.pixel_rows());
        }
        let [c, h, w] = shape.expect("at least one neighbor");
        levels.push(GalleryLevel::new(
            name.clone(),
            (h, w),
            pyramids.len(),
            VectorSet::new(c, data)?,
            backend,
        )?);
    }
    Ok(PixelGallery {
        neighbor_ids: neighbor_ids.to_vec(),
        levels,
    })
}

/// Mean squared distance from `query` to its `kappa` nearest rows of `gallery`,
/// by exhaustive scan.
pub fn query_pixel_knn(gallery: &VectorSet, query: &[f32], kappa: usize) -> Result<f64> {
    vectors::check_query(gallery, query, kappa)?;
    Ok(mean_distance(&exact::scan(gallery, query, kappa)))
}
