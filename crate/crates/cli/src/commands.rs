use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use spade_core::archive::{self, ArchiveStore};
use spade_core::dataset::{self, DatasetManifest};
use spade_core::evaluation::{self, EvalReport, Summary};
use spade_core::pipeline::fit_archived;
use spade_core::retrieval::{GalleryIndex, VectorSet};
use spade_core::scoring::{read_heatmap, score_pyramid, write_heatmap};
use spade_core::synthetic::{self, SynthSpec};
use spade_core::{AnomalyMap, Extractor, ExtractorSpec};

use crate::config::RunConfig;
use crate::UsageError;

/// Settings that determine the index contents; a stored index is reused only
/// when these match exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexMeta {
    pub class_name: String,
    pub extractor: ExtractorSpec,
    pub eval_resolution: (usize, usize),
    pub crop_to: Option<(usize, usize)>,
    pub image_ids: Vec<String>,
    pub embedding_dim: usize,
}

pub struct ClassPaths {
    pub root: PathBuf,
}

impl ClassPaths {
    pub fn new(output_dir: &Path, class: &str) -> Self {
        ClassPaths {
            root: output_dir.join(class),
        }
    }
    pub fn index(&self) -> PathBuf {
        self.root.join("index")
    }
    pub fn archive(&self) -> PathBuf {
        self.index().join("archive")
    }
    pub fn meta(&self) -> PathBuf {
        self.index().join("index.json")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.index().join("embeddings.f32")
    }
    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }
    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }
}

pub fn classes(cfg: &RunConfig) -> Result<Vec<String>> {
    if !cfg.classes.is_empty() {
        return Ok(cfg.classes.clone());
    }
    let found = dataset::list_classes(cfg.data_root())?;
    if found.is_empty() {
        bail!(UsageError(format!(
            "no dataset classes (directories with train/good) under {}",
            cfg.data_root().display()
        )));
    }
    Ok(found)
}

/// Scan a class and apply the configured subsampling.
pub fn manifest(cfg: &RunConfig, class: &str) -> Result<DatasetManifest> {
    let mut m = dataset::scan_dataset(cfg.data_root(), class)?;
    if m.train_items.is_empty() {
        let dir = cfg.data_root().join(class).join("train").join(dataset::NORMAL_DEFECT);
        bail!(UsageError(format!("no training images in {}", dir.display())));
    }
    if let Some(max) = cfg.max_train {
        m.train_items = dataset::subsample(&m.train_items, max, cfg.subsample_seed);
    }
    if let Some(every) = cfg.test_every {
        m.test_items = dataset::subsample_every(&m.test_items, every);
    }
    Ok(m)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

pub enum IndexOutcome {
    Built(usize),
    CacheHit(usize),
}

/// Extract and persist the training set of one class unless an index built
/// with the same settings already exists.
pub fn build_index(cfg: &RunConfig, class: &str, extractor: &Extractor) -> Result<IndexOutcome> {
    let paths = ClassPaths::new(&cfg.output_dir, class);
    let m = manifest(cfg, class)?;
    let ids: Vec<String> = m.train_items.iter().map(|t| t.image_id.clone()).collect();

    if cfg.reuse_index && paths.meta().is_file() && paths.embeddings().is_file() {
        let stored: IndexMeta = read_json(&paths.meta())?;
        if stored.class_name == class
            && stored.extractor == cfg.extractor
            && stored.eval_resolution == cfg.pipeline.eval_resolution
            && stored.crop_to == cfg.pipeline.crop_to
            && stored.image_ids == ids
        {
            return Ok(IndexOutcome::CacheHit(ids.len()));
        }
        info!("{class}: stored index settings differ, rebuilding");
    }

    if paths.index().exists() {
        fs::remove_dir_all(paths.index()).with_context(|| format!("clearing {}", paths.index().display()))?;
    }
    let images = m
        .train_items
        .iter()
        .map(|t| dataset::preprocess(&t.path, &t.image_id, &cfg.pipeline));
    let index = fit_archived(images, extractor, &paths.archive(), &cfg.pipeline)?;
    archive::write_f32_le(&paths.embeddings(), index.embeddings().as_slice())?;
    write_json(
        &paths.meta(),
        &IndexMeta {
            class_name: class.to_string(),
            extractor: cfg.extractor.clone(),
            eval_resolution: cfg.pipeline.eval_resolution,
            crop_to: cfg.pipeline.crop_to,
            image_ids: ids.clone(),
            embedding_dim: index.dim(),
        },
    )?;
    Ok(IndexOutcome::Built(ids.len()))
}

/// Open a stored index, refusing one built with different settings.
pub fn load_index(cfg: &RunConfig, class: &str) -> Result<GalleryIndex> {
    let paths = ClassPaths::new(&cfg.output_dir, class);
    if !paths.meta().is_file() {
        bail!(UsageError(format!(
            "no index for class `{class}` at {}; run `spade index` first",
            paths.index().display()
        )));
    }
    let meta: IndexMeta = read_json(&paths.meta())?;
    if meta.extractor != cfg.extractor
        || meta.eval_resolution != cfg.pipeline.eval_resolution
        || meta.crop_to != cfg.pipeline.crop_to
    {
        bail!(UsageError(format!(
            "index at {} was built with different extractor or resolution settings; re-run `spade index`",
            paths.index().display()
        )));
    }
    let data = archive::read_f32_le(&paths.embeddings())?;
    let embeddings = VectorSet::new(meta.embedding_dim, data)?;
    Ok(GalleryIndex::from_parts(
        meta.image_ids,
        embeddings,
        Arc::new(ArchiveStore::new(paths.archive())),
        cfg.pipeline.search,
    )?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    image_id: String,
    defect_type: String,
    image_score: f64,
}

/// Score every test image of a class into `maps_dir` and write `scores_csv`.
pub fn score_class(
    cfg: &RunConfig,
    class: &str,
    extractor: &Extractor,
    maps_dir: &Path,
    scores_csv: &Path,
) -> Result<Vec<AnomalyMap>> {
    let m = manifest(cfg, class)?;
    let index = load_index(cfg, class)?;
    let maps = cfg
        .pipeline
        .execution
        .map_slice(&m.test_items, |item| -> Result<AnomalyMap> {
            let image = dataset::preprocess(&item.path, &item.image_id, &cfg.pipeline)?;
            let pyramid = extractor.extract(&image)?;
            Ok(score_pyramid(&pyramid, image.shape(), &index, &cfg.pipeline)?.map)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(maps_dir).with_context(|| format!("creating {}", maps_dir.display()))?;
    let mut csv = csv::Writer::from_path(scores_csv).with_context(|| format!("writing {}", scores_csv.display()))?;
    for (item, map) in m.test_items.iter().zip(&maps) {
        write_heatmap(maps_dir, map)?;
        csv.serialize(ScoreRow {
            image_id: item.image_id.clone(),
            defect_type: item.defect_type.clone(),
            image_score: map.image_score,
        })?;
    }
    csv.flush()?;
    Ok(maps)
}

/// Evaluate stored maps of one class against its ground truth.
pub fn eval_class(cfg: &RunConfig, class: &str, maps_dir: &Path) -> Result<EvalReport> {
    let m = manifest(cfg, class)?;
    if m.test_items.is_empty() {
        bail!(UsageError(format!("class `{class}` has no test images")));
    }
    let mut maps = Vec::with_capacity(m.test_items.len());
    let mut masks = Vec::with_capacity(m.test_items.len());
    for item in &m.test_items {
        let map = read_heatmap(maps_dir, &item.image_id).map_err(|e| {
            UsageError(format!(
                "no anomaly map for {} in {} ({e}); run `spade score` first",
                item.image_id,
                maps_dir.display()
            ))
        })?;
        let mask = dataset::ground_truth(item, cfg.pipeline.eval_resolution)?;
        if map.scores.shape() != mask.data.shape() {
            bail!(UsageError(format!(
                "map for {} is {:?} but the evaluation resolution is {:?}; re-run `spade score`",
                item.image_id,
                map.scores.shape(),
                mask.data.shape()
            )));
        }
        maps.push(map);
        masks.push(mask);
    }
    let labels: Vec<bool> = m.test_items.iter().map(|t| t.is_anomalous()).collect();
    Ok(evaluation::evaluate(&maps, &masks, &labels)?)
}

pub fn write_class_report(report: &EvalReport, report_path: &Path, sweep_path: &Path) -> Result<()> {
    evaluation::write_report(report_path, report)?;
    evaluation::write_sweep_csv(sweep_path, &report.sweep)?;
    Ok(())
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    write_json(&dir.join("summary.json"), summary)?;
    fs::write(dir.join("table.txt"), summary.table()).with_context(|| format!("writing table in {}", dir.display()))
}

/// Layer sets compared by `ablate`: each tap alone, deepest first, then all.
pub fn default_layer_sets(taps: &[String]) -> Vec<Vec<String>> {
    let mut sets: Vec<Vec<String>> = taps.iter().rev().map(|t| vec![t.clone()]).collect();
    if taps.len() > 1 {
        sets.push(taps.to_vec());
    }
    sets
}

/// Label such as `layer2+layer3 (28,14)`, sizes read from the stored index.
pub fn layer_set_label(cfg: &RunConfig, class: &str, set: &[String]) -> String {
    let name = set.join("+");
    let sizes = load_index(cfg, class).ok().and_then(|index| {
        let first = index.image_ids().first()?.clone();
        let pyramid = index.store().load(&first).ok()?;
        set.iter()
            .map(|l| pyramid.level(l).map(|m| m.width().to_string()))
            .collect::<Option<Vec<_>>>()
    });
    match sizes {
        Some(s) => format!("{name} ({})", s.join(",")),
        None => name,
    }
}

pub fn ablation_table(labels: &[String], summaries: &[Summary]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let metrics: [(&str, fn(&evaluation::ClassScores) -> f64); 3] = [
        ("image ROCAUC %", |c| c.image_rocauc),
        ("pixel ROCAUC %", |c| c.pixel_rocauc),
        ("PRO %", |c| c.pro_score),
    ];
    for (title, get) in metrics {
        let _ = write!(out, "{title:<16}");
        for l in labels {
            let _ = write!(out, " {l:>22}");
        }
        out.push('\n');
        let classes = summaries[0].classes.iter().map(|c| c.class.clone()).chain([evaluation::MEAN_ROW.to_string()]);
        for (row, class) in classes.enumerate() {
            let _ = write!(out, "{class:<16}");
            for s in summaries {
                let c = s.classes.get(row).unwrap_or(&s.mean);
                let _ = write!(out, " {:>22.1}", get(c) * 100.0);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn synth(root: &Path, spec: &SynthSpec, test_equals_train: bool) -> Result<()> {
    let mut set = synthetic::generate(spec)?;
    if test_equals_train {
        set.test = set
            .train
            .iter()
            .map(|t| {
                let id = t.id.replacen("/train/", "/test/", 1);
                spade_core::ImageTensor::new(id, t.channels(), t.height(), t.width(), t.data().to_vec())
            })
            .collect::<Result<Vec<_>, _>>()?;
        set.masks = set
            .test
            .iter()
            .map(|t| spade_core::GroundTruthMask::empty(&t.id, t.height(), t.width()))
            .collect();
    }
    synthetic::write_mvtec(root, &set)?;
    Ok(())
}
