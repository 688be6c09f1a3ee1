//! Image ROCAUC, pixel ROCAUC and the PRO integral.

pub mod pro;
pub mod regions;
pub mod roc;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pro::{pro_at_threshold, pro_curve, pro_curve_with, ProCurve, SweepPoint, DEFAULT_FPR_LIMIT, DEFAULT_THRESHOLDS};
pub use regions::{connected_components, Region};
pub use roc::roc_auc;

use crate::error::{Result, SpadeError};
use crate::types::{AnomalyMap, GroundTruthMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub image_rocauc: f64,
    pub pixel_rocauc: f64,
    pub pro_score: f64,
    pub sweep: Vec<SweepPoint>,
}

/// Score all three metrics for one set of test images. Maps, masks and labels
/// are aligned by position; `image_labels[i]` is true for anomalous images.
pub fn evaluate(maps: &[AnomalyMap], masks: &[GroundTruthMask], image_labels: &[bool]) -> Result<EvalReport> {
    if maps.is_empty() {
        return Err(SpadeError::Parameter("nothing to evaluate".into()));
    }
    if image_labels.len() != maps.len() {
        return Err(SpadeError::Parameter(format!(
            "{} image labels for {} maps",
            image_labels.len(),
            maps.len()
        )));
    }
    let curve = pro_curve(maps, masks, DEFAULT_FPR_LIMIT, DEFAULT_THRESHOLDS)?;

    let image_scores: Vec<f64> = maps.iter().map(|m| m.image_score).collect();
    let image_rocauc = roc_auc(&image_scores, image_labels)?;

    let total: usize = maps.iter().map(|m| m.scores.as_slice().len()).sum();
    let mut pixel_scores = Vec::with_capacity(total);
    let mut pixel_labels = Vec::with_capacity(total);
    for (map, mask) in maps.iter().zip(masks) {
        pixel_scores.extend_from_slice(map.scores.as_slice());
        pixel_labels.extend(mask.data.as_slice().iter().map(|&m| m != 0));
    }
    let pixel_rocauc = roc_auc(&pixel_scores, &pixel_labels)?;

    Ok(EvalReport {
        image_rocauc,
        pixel_rocauc,
        pro_score: curve.pro_score,
        sweep: curve.sweep,
    })
}

/// Image labels derived from the masks: an image is anomalous when its mask
/// has any positive pixel.
pub fn labels_from_masks(masks: &[GroundTruthMask]) -> Vec<bool> {
    masks.iter().map(GroundTruthMask::is_anomalous).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub image_rocauc: f64,
    pub pixel_rocauc: f64,
    pub pro_score: f64,
}

/// Per-class metrics followed by their unweighted mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub classes: Vec<ClassScores>,
    pub mean: ClassScores,
}

pub const MEAN_ROW: &str = "mean";

pub fn summarize(reports: &[(String, EvalReport)]) -> Result<Summary> {
    if reports.is_empty() {
        return Err(SpadeError::Parameter("no class reports to summarize".into()));
    }
    let classes: Vec<ClassScores> = reports
        .iter()
        .map(|(class, r)| ClassScores {
            class: class.clone(),
            image_rocauc: r.image_rocauc,
            pixel_rocauc: r.pixel_rocauc,
            pro_score: r.pro_score,
        })
        .collect();
    let n = classes.len() as f64;
    let mean = ClassScores {
        class: MEAN_ROW.into(),
        image_rocauc: classes.iter().map(|c| c.image_rocauc).sum::<f64>() / n,
        pixel_rocauc: classes.iter().map(|c| c.pixel_rocauc).sum::<f64>() / n,
        pro_score: classes.iter().map(|c| c.pro_score).sum::<f64>() / n,
    };
    Ok(Summary { classes, mean })
}

impl Summary {
    /// Fixed-width table in percent, one row per class plus the mean.
    pub fn table(&self) -> String {
        let mut out = format!("{:<16} {:>10} {:>10} {:>10}\n", "class", "image_auc", "pixel_auc", "pro");
        for row in self.classes.iter().chain(std::iter::once(&self.mean)) {
            let _ = writeln!(
                out,
                "{:<16} {:>10.1} {:>10.1} {:>10.1}",
                row.class,
                row.image_rocauc * 100.0,
                row.pixel_rocauc * 100.0,
                row.pro_score * 100.0
            );
        }
        out
    }
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_vec_pretty(report).map_err(|e| SpadeError::json(path, e))?;
    fs::write(path, json).map_err(|e| SpadeError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let bytes = fs::read(path).map_err(|e| SpadeError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| SpadeError::json(path, e))
}

/// `threshold,fpr,pro,tpr` with a header row.
pub fn sweep_csv(sweep: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,fpr,pro,tpr\n");
    for p in sweep {
        let _ = writeln!(out, "{},{},{},{}", p.threshold, p.fpr, p.pro, p.tpr);
    }
    out
}

pub fn write_sweep_csv(path: &Path, sweep: &[SweepPoint]) -> Result<()> {
    fs::write(path, sweep_csv(sweep)).map_err(|e| SpadeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Grid;

    fn fixture(invert: bool) -> (Vec<AnomalyMap>, Vec<GroundTruthMask>, Vec<bool>) {
        let masks = vec![
            GroundTruthMask::new("a", Grid::new(2, 3, vec![0, 1, 1, 0, 0, 0]).unwrap()).unwrap(),
            GroundTruthMask::empty("b", 2, 3),
            GroundTruthMask::new("c", Grid::new(2, 3, vec![0, 0, 0, 0, 0, 1]).unwrap()).unwrap(),
        ];
        let maps = masks
            .iter()
            .map(|g| AnomalyMap {
                image_id: g.image_id.clone(),
                scores: g.data.map(f64::from),
                image_score: if g.is_anomalous() { 1.0 } else { 0.0 },
            })
            .collect();
        let mut labels = labels_from_masks(&masks);
        if invert {
            labels.iter_mut().for_each(|l| *l = !*l);
        }
        (maps, masks, labels)
    }

    #[test]
    fn maps_equal_to_masks_score_perfectly() {
        let (maps, masks, labels) = fixture(false);
        let r = evaluate(&maps, &masks, &labels).unwrap();
        assert_eq!((r.image_rocauc, r.pixel_rocauc, r.pro_score), (1.0, 1.0, 1.0));
    }

    #[test]
    fn inverted_labels_flip_image_auc() {
        let (maps, masks, labels) = fixture(true);
        let r = evaluate(&maps, &masks, &labels).unwrap();
        assert_eq!(r.image_rocauc, 0.0);
    }

    #[test]
    fn summary_mean_and_table() {
        let mk = |v: f64| EvalReport {
            image_rocauc: v,
            pixel_rocauc: v,
            pro_score: v,
            sweep: vec![],
        };
        let s = summarize(&[("bottle".into(), mk(0.9)), ("cable".into(), mk(0.8))]).unwrap();
        assert!((s.mean.pixel_rocauc - 0.85).abs() < 1e-15);
        let t = s.table();
        assert_eq!(t.lines().count(), 4);
        assert!(t.lines().last().unwrap().starts_with("mean"));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let (maps, masks, labels) = fixture(false);
        let r = evaluate(&maps, &masks, &labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.json");
        write_report(&p, &r).unwrap();
        assert_eq!(read_report(&p).unwrap(), r);
        let csv = sweep_csv(&r.sweep);
        assert_eq!(csv.lines().count(), r.sweep.len() + 1);
        assert!(csv.starts_with("threshold,fpr,pro,tpr\n"));
    }
}
