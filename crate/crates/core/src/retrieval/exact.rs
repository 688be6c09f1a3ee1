use std::sync::Arc;

use super::vectors::{check_query, squared_distance_bounded, Candidates, Neighbor, VectorSet};
use super::NeighborSearch;
use crate::error::Result;

/// Exhaustive O(N·D) scan. Rows are visited in insertion order, so a row whose
/// partial distance already equals the current k-th best can be dropped: it
/// would lose the index tie-break anyway.
#[derive(Clone, Debug)]
pub struct ExactSearch {
    rows: Arc<VectorSet>,
}

impl ExactSearch {
    pub fn new(rows: Arc<VectorSet>) -> Self {
        ExactSearch { rows }
    }
}

pub(crate) fn scan(rows: &VectorSet, query: &[f32], k: usize) -> Vec<Neighbor> {
    let mut cands = Candidates::new(k);
    for (i, row) in rows.rows().enumerate() {
        match cands.worst() {
            None => cands.offer(i, super::squared_distance(query, row)),
            Some(bound) => {
                if let Some(d) = squared_distance_bounded(query, row, bound, true) {
                    cands.offer(i, d);
                }
            }
        }
    }
    cands.into_sorted()
}

impl NeighborSearch for ExactSearch {
    fn rows(&self) -> &VectorSet {
        &self.rows
    }

    fn knn(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        check_query(&self.rows, query, k)?;
        Ok(scan(&self.rows, query, k))
    }
}
