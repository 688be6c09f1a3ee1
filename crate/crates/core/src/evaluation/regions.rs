//! 8-connected component labeling by two-pass union-find.

use crate::types::Grid;

/// One connected anomaly region: row-major linear pixel indices, ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub pixels: Vec<usize>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Regions of nonzero pixels under 8-connectivity, ordered by their first
/// pixel in a row-major scan.
pub fn connected_components(mask: &Grid<u8>) -> Vec<Region> {
    let (h, w) = mask.shape();
    let on = |y: usize, x: usize| mask.get(y, x) != 0;
    let mut sets = DisjointSet {
        parent: (0..h * w).collect(),
    };
    for y in 0..h {
        for x in 0..w {
            if !on(y, x) {
                continue;
            }
            let p = y * w + x;
            if x > 0 && on(y, x - 1) {
                sets.union(p, p - 1);
            }
            if y > 0 {
                let up = p - w;
                if x > 0 && on(y - 1, x - 1) {
                    sets.union(p, up - 1);
                }
                if on(y - 1, x) {
                    sets.union(p, up);
                }
                if x + 1 < w && on(y - 1, x + 1) {
                    sets.union(p, up + 1);
                }
            }
        }
    }

    // roots are the smallest index in each set, so label order follows the scan
    let mut label_of_root = vec![usize::MAX; h * w];
    let mut regions: Vec<Region> = Vec::new();
    for p in 0..h * w {
        if mask.as_slice()[p] == 0 {
            continue;
        }
        let root = sets.find(p);
        if label_of_root[root] == usize::MAX {
            label_of_root[root] = regions.len();
            regions.push(Region { pixels: Vec::new() });
        }
        regions[label_of_root[root]].pixels.push(p);
    }
    regions
}
