//! Exact k-d tree.
//!
//! Splits on the dimension of widest spread at the median. A subtree is only
//! skipped when its axis lower bound is strictly greater than the current k-th
//! best distance, so equal-distance rows with a lower index are still found and
//! results match [`super::ExactSearch`] exactly, including the tie-break.

use std::sync::Arc;

use super::vectors::{
    check_query, squared_distance, squared_distance_bounded, Candidates, Neighbor, VectorSet,
};
use super::NeighborSearch;
use crate::error::Result;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f32,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    rows: Arc<VectorSet>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(rows: Arc<VectorSet>) -> Self {
        let mut tree = KdTree {
            order: (0..rows.len()).collect(),
            nodes: Vec::new(),
            rows,
        };
        if !tree.order.is_empty() {
            tree.build_node(0, tree.order.len());
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.widest_dimension(start, end);
        let Some(dim) = dim else {
            // all rows identical
            self.nodes.push(Node::Leaf { start, end });
            return id;
        };
        let mid = start + (end - start) / 2;
        let rows = Arc::clone(&self.rows);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            rows.row(a)[dim].total_cmp(&rows.row(b)[dim])
        });
        let value = rows.row(self.order[mid])[dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn widest_dimension(&self, start: usize, end: usize) -> Option<usize> {
        let dim = self.rows.dim();
        let mut lo = vec![f32::INFINITY; dim];
        let mut hi = vec![f32::NEG_INFINITY; dim];
        for &i in &self.order[start..end] {
            for (d, &v) in self.rows.row(i).iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let (best, spread) = (0..dim)
            .map(|d| (d, hi[d] - lo[d]))
            .fold((0, f32::NEG_INFINITY), |acc, (d, s)| if s > acc.1 { (d, s) } else { acc });
        (spread > 0.0).then_some(best)
    }

    fn search(&self, node: usize, query: &[f32], cands: &mut Candidates) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let row = self.rows.row(i);
                    match cands.worst() {
                        None => cands.offer(i, squared_distance(query, row)),
                        Some(bound) => {
                            if let Some(d) = squared_distance_bounded(query, row, bound, false) {
                                cands.offer(i, d);
                            }
                        }
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] as f64 - value as f64;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, cands);
                let axis_bound = diff * diff;
                if cands.worst().is_none_or(|w| axis_bound <= w) {
                    self.search(far, query, cands);
                }
            }
        }
    }
}

impl NeighborSearch for KdTree {
    fn rows(&self) -> &VectorSet {
        &self.rows
    }

    fn knn(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        check_query(&self.rows, query, k)?;
        let mut cands = Candidates::new(k);
        self.search(0, query, &mut cands);
        Ok(cands.into_sorted())
    }
}
