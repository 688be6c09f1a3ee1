//! Independent brute-force oracles shared by the integration tests. None of
//! these reuse library code beyond plain data types.
#![allow(dead_code)]

use std::collections::VecDeque;

use spade_core::{AnomalyMap, Grid, GroundTruthMask};

/// Fraction of positive/negative pairs ordered correctly, ties counted half.
pub fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0f64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}

/// Full sort of every squared distance by (distance, index); first `k`.
pub fn naive_knn(rows: &[Vec<f32>], query: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = r
                .iter()
                .zip(query)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .fold(0.0, |acc, v| acc + v);
            (i, d)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Breadth-first flood fill with 8-connectivity; regions in row-major order of
/// their first pixel, each region's pixels sorted.
pub fn flood_fill_regions(mask: &Grid<u8>) -> Vec<Vec<usize>> {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut regions = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.as_slice()[start] == 0 {
            continue;
        }
        let mut region = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            region.push(p);
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && mask.as_slice()[q] != 0 {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    regions
}

/// (fpr, pro) at threshold `t`, counting pixel by pixel.
pub fn direct_pro_point(maps: &[AnomalyMap], masks: &[GroundTruthMask], t: f64) -> (f64, f64) {
    let (mut fp, mut normal) = (0usize, 0usize);
    let mut coverage = Vec::new();
    for (map, mask) in maps.iter().zip(masks) {
        let s = map.scores.as_slice();
        for (i, &m) in mask.data.as_slice().iter().enumerate() {
            if m == 0 {
                normal += 1;
                if s[i] > t {
                    fp += 1;
                }
            }
        }
        for region in flood_fill_regions(&mask.data) {
            let hit = region.iter().filter(|&&p| s[p] > t).count();
            coverage.push(hit as f64 / region.len() as f64);
        }
    }
    let fpr = if normal == 0 { 0.0 } else { fp as f64 / normal as f64 };
    (fpr, coverage.iter().sum::<f64>() / coverage.len() as f64)
}

/// PRO integral evaluated at every distinct score (and just below the
/// minimum), integrated by trapezoids up to `limit`, normalized.
pub fn exhaustive_pro_score(maps: &[AnomalyMap], masks: &[GroundTruthMask], limit: f64) -> f64 {
    let mut values: Vec<f64> = maps.iter().flat_map(|m| m.scores.as_slice().to_vec()).collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    values.dedup();
    let lowest = *values.last().unwrap();
    values.push(lowest - 1.0);
    let curve: Vec<(f64, f64)> = values.iter().map(|&t| direct_pro_point(maps, masks, t)).collect();

    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += 0.5 * (x1 - x0) * (y0 + y1);
        } else {
            let frac = (limit - x0) / (x1 - x0);
            area += 0.5 * (limit - x0) * (y0 + y0 + frac * (y1 - y0));
            break;
        }
    }
    area / limit
}
