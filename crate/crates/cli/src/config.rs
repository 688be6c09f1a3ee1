use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use spade_core::{
    BackendKind, Execution, ExtractorSpec, FusionMode, PipelineConfig, RetrievalMode, SearchBackend,
};

use crate::UsageError;

/// Everything a run needs. Loaded from `--config`, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub extractor: ExtractorSpec,
    pub data_root: Option<PathBuf>,
    /// Empty means every class found under `data_root`.
    pub classes: Vec<String>,
    pub output_dir: PathBuf,
    /// Reuse an index whose stored settings match; `--force` turns this off.
    pub reuse_index: bool,
    pub workers: Option<usize>,
    /// Uniformly subsample the training set to at most this many images.
    pub max_train: Option<usize>,
    pub subsample_seed: u64,
    /// Keep every n-th test image.
    pub test_every: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            extractor: ExtractorSpec::default(),
            data_root: None,
            classes: Vec::new(),
            output_dir: PathBuf::from("out"),
            reuse_index: true,
            workers: None,
            max_train: None,
            subsample_seed: 0,
            test_every: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.extractor.validate()?;
        if self.data_root.is_none() {
            bail!(UsageError("no dataset root given (--data-root or `data_root`)".into()));
        }
        if self.workers == Some(0) {
            bail!(UsageError("workers must be positive".into()));
        }
        if self.max_train == Some(0) || self.test_every == Some(0) {
            bail!(UsageError("max_train and test_every must be positive".into()));
        }
        for level in &self.pipeline.levels_selected {
            if !self.extractor.tap_names.contains(level) {
                bail!(UsageError(format!(
                    "level `{level}` is not an extractor tap ({})",
                    self.extractor.tap_names.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn data_root(&self) -> &Path {
        self.data_root.as_deref().expect("validated")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BackendArg {
    Toy,
    PortableModel,
    Precomputed,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Toy => BackendKind::Toy,
            BackendArg::PortableModel => BackendKind::PortableModel,
            BackendArg::Precomputed => BackendKind::Precomputed,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RetrievalArg {
    Knn,
    Random,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    Mean,
    Concat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SearchArg {
    Exact,
    KdTree,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

/// Flags shared by every pipeline command. Unset flags leave the config file
/// (or the defaults) untouched.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Dataset class to process (repeatable); default: all classes found
    #[arg(long = "class")]
    pub classes: Vec<String>,
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,

    /// Retrieved normal images per test image
    #[arg(long)]
    pub k: Option<usize>,
    /// Gallery features averaged per pixel
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Comma-separated pyramid levels, e.g. layer1,layer2,layer3
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<String>>,
    /// Comma-separated level weights, one per level
    #[arg(long, value_delimiter = ',')]
    pub level_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Evaluation resolution, `HxW` or `N`
    #[arg(long, value_parser = parse_pair)]
    pub resolution: Option<(usize, usize)>,
    /// Center crop after resizing, `HxW` or `N`
    #[arg(long, value_parser = parse_pair)]
    pub crop: Option<(usize, usize)>,
    #[arg(long, value_enum)]
    pub retrieval: Option<RetrievalArg>,
    /// Seed for random retrieval
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    #[arg(long, value_enum)]
    pub search: Option<SearchArg>,
    /// Disable data-parallel execution
    #[arg(long)]
    pub sequential: bool,
    /// Worker threads for the parallel pool
    #[arg(long)]
    pub workers: Option<usize>,

    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Model file (portable-model) or feature archive (precomputed)
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub taps: Option<Vec<String>>,
    #[arg(long)]
    pub pooled: Option<String>,
    #[arg(long)]
    pub toy_seed: Option<u64>,

    #[arg(long)]
    pub max_train: Option<usize>,
    #[arg(long)]
    pub subsample_seed: Option<u64>,
    #[arg(long)]
    pub test_every: Option<usize>,
    /// Rebuild the index even when a matching one exists
    #[arg(long)]
    pub force: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(backend) = self.backend {
            let kind = BackendKind::from(backend);
            if kind != cfg.extractor.backend {
                // switching backends resets tap names to that backend's defaults
                cfg.extractor = match kind {
                    BackendKind::Toy => ExtractorSpec::toy(cfg.extractor.toy_seed),
                    BackendKind::PortableModel => ExtractorSpec::portable_model(PathBuf::new()),
                    BackendKind::Precomputed => {
                        ExtractorSpec::precomputed(PathBuf::new(), cfg.extractor.tap_names.clone(), &cfg.extractor.pooled_name)
                    }
                };
                cfg.extractor.model_path = None;
            }
        }
        let e = &mut cfg.extractor;
        set(&mut e.model_path, self.model.clone().map(Some));
        set(&mut e.tap_names, self.taps.clone());
        set(&mut e.pooled_name, self.pooled.clone());
        set(&mut e.toy_seed, self.toy_seed);

        let p = &mut cfg.pipeline;
        set(&mut p.k, self.k);
        set(&mut p.kappa, self.kappa);
        if let Some(levels) = &self.levels {
            *p = p.clone().with_levels(levels.clone());
        }
        set(&mut p.level_weights, self.level_weights.clone());
        set(&mut p.sigma, self.sigma);
        set(&mut p.eval_resolution, self.resolution);
        set(&mut p.crop_to, self.crop.map(Some));
        set(
            &mut p.retrieval_mode,
            self.retrieval.map(|r| match r {
                RetrievalArg::Knn => RetrievalMode::Knn,
                RetrievalArg::Random => RetrievalMode::Random,
            }),
        );
        set(&mut p.random_seed, self.seed);
        set(
            &mut p.fusion,
            self.fusion.map(|f| match f {
                FusionArg::Mean => FusionMode::Mean,
                FusionArg::Concat => FusionMode::Concat,
            }),
        );
        set(
            &mut p.search,
            self.search.map(|s| match s {
                SearchArg::Exact => SearchBackend::Exact,
                SearchArg::KdTree => SearchBackend::KdTree,
            }),
        );
        if self.sequential {
            p.execution = Execution::Sequential;
        }

        set(&mut cfg.data_root, self.data_root.clone().map(Some));
        if !self.classes.is_empty() {
            cfg.classes = self.classes.clone();
        }
        set(&mut cfg.output_dir, self.output_dir.clone());
        set(&mut cfg.workers, self.workers.map(Some));
        set(&mut cfg.max_train, self.max_train.map(Some));
        set(&mut cfg.subsample_seed, self.subsample_seed);
        set(&mut cfg.test_every, self.test_every.map(Some));
        if self.force {
            cfg.reuse_index = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
