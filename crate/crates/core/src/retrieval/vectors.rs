use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Result, SpadeError};

/// Row-major `len × dim` matrix of `f32` feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f32>,
}

impl VectorSet {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(SpadeError::Shape("vectors must have positive dimension".into()));
        }
        if data.len() % dim != 0 {
            return Err(SpadeError::Shape(format!(
                "{} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SpadeError::Shape("vector set contains non-finite values".into()));
        }
        Ok(VectorSet { dim, data })
    }

    pub fn from_rows<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let mut data = Vec::new();
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(SpadeError::Shape(format!(
                    "row {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        VectorSet::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Squared Euclidean distance, accumulated in `f64` in dimension order.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc
}

const ABANDON_CHUNK: usize = 16;

/// Same accumulation as [`squared_distance`], giving up once the partial sum
/// reaches `bound` (`>=`) or exceeds it (`>`), per `inclusive`. Partial sums are
/// nondecreasing, so an abandoned row can never end below the bound.
#[inline]
pub(crate) fn squared_distance_bounded(a: &[f32], b: &[f32], bound: f64, inclusive: bool) -> Option<f64> {
    let mut acc = 0.0f64;
    for (ca, cb) in a.chunks(ABANDON_CHUNK).zip(b.chunks(ABANDON_CHUNK)) {
        for (&x, &y) in ca.iter().zip(cb) {
            let d = x as f64 - y as f64;
            acc += d * d;
        }
        if acc > bound || (inclusive && acc >= bound) {
            return None;
        }
    }
    Some(acc)
}

/// A search hit: row index into the searched set and its squared distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Clone, Copy, Debug)]
struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

/// Bounded max-heap keeping the `k` best hits under the order
/// (distance, insertion index).
pub(crate) struct Candidates {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl Candidates {
    pub(crate) fn new(k: usize) -> Self {
        Candidates {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    /// Distance of the current k-th best hit once `k` hits are held.
    #[inline]
    pub(crate) fn worst(&self) -> Option<f64> {
        if self.heap.len() < self.k {
            None
        } else {
            self.heap.peek().map(|r| r.0.dist)
        }
    }

    #[inline]
    pub(crate) fn offer(&mut self, index: usize, dist: f64) {
        let cand = Ranked(Neighbor { index, dist });
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(top) = self.heap.peek() {
            if cand < *top {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    pub(crate) fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
    }
}

/// Mean of the hit distances, summed in ascending order.
pub fn mean_distance(neighbors: &[Neighbor]) -> f64 {
    if neighbors.is_empty() {
        return 0.0;
    }
    neighbors.iter().map(|n| n.dist).sum::<f64>() / neighbors.len() as f64
}

pub(crate) fn check_query(rows: &VectorSet, query: &[f32], k: usize) -> Result<()> {
    if k == 0 {
        return Err(SpadeError::Parameter("neighbor count must be positive".into()));
    }
    if k > rows.len() {
        return Err(SpadeError::Parameter(format!(
            "requested {k} neighbors from a set of {}",
            rows.len()
        )));
    }
    if query.len() != rows.dim() {
        return Err(SpadeError::Shape(format!(
            "query dimension {} does not match {}",
            query.len(),
            rows.dim()
        )));
    }
    Ok(())
}
