//! Per-region overlap: coverage of each ground-truth region as a function of
//! the false positive rate on normal pixels, integrated up to an FPR limit.

use serde::{Deserialize, Serialize};

use super::regions::connected_components;
use crate::error::{Result, SpadeError};
use crate::parallel::Execution;
use crate::types::{AnomalyMap, GroundTruthMask};

/// One threshold of the sweep. A pixel is flagged when `score > threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub pro: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProCurve {
    pub pro_score: f64,
    /// Descending threshold, so `fpr` and `pro` are nondecreasing.
    pub sweep: Vec<SweepPoint>,
}

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
pub const DEFAULT_THRESHOLDS: usize = 200;

fn check_aligned(maps: &[AnomalyMap], masks: &[GroundTruthMask]) -> Result<()> {
    if maps.len() != masks.len() {
        return Err(SpadeError::Parameter(format!(
            "{} maps for {} masks",
            maps.len(),
            masks.len()
        )));
    }
    for (map, mask) in maps.iter().zip(masks) {
        if map.image_id != mask.image_id {
            return Err(SpadeError::Parameter(format!(
                "map {:?} paired with mask {:?}",
                map.image_id, mask.image_id
            )));
        }
        if map.scores.shape() != mask.data.shape() {
            return Err(SpadeError::Shape(format!(
                "{}: map is {:?}, mask is {:?}",
                map.image_id,
                map.scores.shape(),
                mask.data.shape()
            )));
        }
        if map.scores.as_slice().iter().any(|v| v.is_nan()) {
            return Err(SpadeError::Parameter(format!("{}: NaN score", map.image_id)));
        }
    }
    Ok(())
}

fn no_regions() -> SpadeError {
    SpadeError::UndefinedMetric("PRO needs at least one anomalous region".into())
}

/// Scores pooled into sorted arrays so any threshold is answered by binary search.
struct PooledScores {
    normal: Vec<f64>,
    anomalous: Vec<f64>,
    regions: Vec<Vec<f64>>,
}

fn count_above(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= t)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl PooledScores {
    fn new(maps: &[AnomalyMap], masks: &[GroundTruthMask]) -> Self {
        let mut pooled = PooledScores {
            normal: Vec::new(),
            anomalous: Vec::new(),
            regions: Vec::new(),
        };
        for (map, mask) in maps.iter().zip(masks) {
            let scores = map.scores.as_slice();
            for (&s, &m) in scores.iter().zip(mask.data.as_slice()) {
                if m == 0 {
                    pooled.normal.push(s);
                } else {
                    pooled.anomalous.push(s);
                }
            }
            for region in connected_components(&mask.data) {
                pooled.regions.push(region.pixels.iter().map(|&p| scores[p]).collect());
            }
        }
        pooled.normal.sort_unstable_by(f64::total_cmp);
        pooled.anomalous.sort_unstable_by(f64::total_cmp);
        for r in &mut pooled.regions {
            r.sort_unstable_by(f64::total_cmp);
        }
        pooled
    }

    fn point(&self, t: f64) -> SweepPoint {
        let coverage: f64 = self
            .regions
            .iter()
            .map(|r| ratio(count_above(r, t), r.len()))
            .sum();
        SweepPoint {
            threshold: t,
            fpr: ratio(count_above(&self.normal, t), self.normal.len()),
            pro: coverage / self.regions.len() as f64,
            tpr: ratio(count_above(&self.anomalous, t), self.anomalous.len()),
        }
    }
}

/// FPR and PRO at a single threshold.
pub fn pro_at_threshold(maps: &[AnomalyMap], masks: &[GroundTruthMask], t: f64) -> Result<(f64, f64)> {
    check_aligned(maps, masks)?;
    let pooled = PooledScores::new(maps, masks);
    if pooled.regions.is_empty() {
        return Err(no_regions());
    }
    let p = pooled.point(t);
    Ok((p.fpr, p.pro))
}

/// `n` evenly spaced order statistics of the pooled scores, plus the exact
/// endpoints `max` (nothing flagged) and just below `min` (everything
/// flagged); descending and deduplicated.
fn threshold_grid(pooled: &PooledScores, n: usize) -> Vec<f64> {
    let mut all: Vec<f64> = pooled.normal.iter().chain(&pooled.anomalous).copied().collect();
    all.sort_unstable_by(f64::total_cmp);
    let last = all.len() - 1;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| {
            let idx = if n > 1 { (i * last + (n - 1) / 2) / (n - 1) } else { last };
            all[idx]
        })
        .collect();
    grid.push(all[last]);
    grid.push(all[0].next_down());
    grid.sort_unstable_by(|a, b| b.total_cmp(a));
    grid.dedup();
    grid
}

/// Trapezoidal area under `pro(fpr)` on `[0, limit]`, the last segment cut by
/// linear interpolation, normalized by `limit`. Points must be sorted by fpr.
pub fn normalized_area(points: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for pair in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cut = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_cut) / 2.0;
            break;
        }
    }
    area / limit
}

/// PRO curve on a quantile threshold grid and its normalized integral up to
/// `fpr_limit`.
pub fn pro_curve(
    maps: &[AnomalyMap],
    masks: &[GroundTruthMask],
    fpr_limit: f64,
    n_thresholds: usize,
) -> Result<ProCurve> {
    pro_curve_with(maps, masks, fpr_limit, n_thresholds, Execution::default())
}

pub fn pro_curve_with(
    maps: &[AnomalyMap],
    masks: &[GroundTruthMask],
    fpr_limit: f64,
    n_thresholds: usize,
    exec: Execution,
) -> Result<ProCurve> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(SpadeError::Parameter(format!("fpr_limit {fpr_limit} outside (0, 1]")));
    }
    if n_thresholds == 0 {
        return Err(SpadeError::Parameter("n_thresholds must be positive".into()));
    }
    check_aligned(maps, masks)?;
    let pooled = PooledScores::new(maps, masks);
    if pooled.regions.is_empty() {
        return Err(no_regions());
    }

    let lo = pooled.anomalous[0].min(pooled.normal.first().copied().unwrap_or(f64::INFINITY));
    let hi = pooled.anomalous[pooled.anomalous.len() - 1]
        .max(pooled.normal.last().copied().unwrap_or(f64::NEG_INFINITY));
    if lo == hi {
        log::warn!("constant score maps: PRO curve collapses to (fpr 1, pro 1), scored as 1.0");
        let threshold = lo.next_down();
        return Ok(ProCurve {
            pro_score: 1.0,
            sweep: vec![pooled.point(threshold)],
        });
    }

    let grid = threshold_grid(&pooled, n_thresholds);
    let sweep = exec.map_slice(&grid, |&t| pooled.point(t));
    let points: Vec<(f64, f64)> = sweep.iter().map(|p| (p.fpr, p.pro)).collect();
    Ok(ProCurve {
        pro_score: normalized_area(&points, fpr_limit),
        sweep,
    })
}
