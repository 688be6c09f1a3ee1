//! `spade`: build indexes, score test sets, evaluate and run ablations over
//! MVTec-style datasets.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use spade_core::synthetic::SynthSpec;
use spade_core::{Extractor, SpadeError};

use crate::commands::{ClassPaths, IndexOutcome};
use crate::config::{RunArgs, RunConfig};

/// An error caused by how the tool was invoked rather than by the data or
/// the environment.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "spade", version, about = "Sub-image anomaly detection with deep pyramid correspondences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract and store training features for each class
    Index(RunArgs),
    /// Score test images into heatmaps and scores.csv (needs an index)
    Score(RunArgs),
    /// Compute ROCAUC and PRO from stored maps
    Eval(RunArgs),
    /// Score and evaluate once per pyramid-level set
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Level sets separated by `;`, levels by `,` (default: each tap alone, then all)
        #[arg(long)]
        sets: Option<String>,
    },
    /// Write a procedural MVTec-style dataset
    Synth(SynthArgs),
}

#[derive(clap::Args, Debug)]
struct SynthArgs {
    #[arg(long = "out")]
    root: PathBuf,
    #[arg(long = "class", default_value = "synth")]
    class_name: String,
    #[arg(long, default_value_t = 20)]
    train: usize,
    #[arg(long, default_value_t = 10)]
    anomalous: usize,
    #[arg(long, default_value_t = 5)]
    normal: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Two training texture modes (most images in one, a few in the other)
    #[arg(long)]
    bimodal: bool,
    /// Test set made of copies of the training images, no anomalies
    #[arg(long)]
    test_equals_train: bool,
}

fn prepare(args: &RunArgs) -> Result<(RunConfig, Extractor)> {
    let cfg = configure(args)?;
    let extractor = Extractor::load(&cfg.extractor)?;
    Ok((cfg, extractor))
}

/// Resolve and validate the run configuration and record it in the output
/// directory.
fn configure(args: &RunArgs) -> Result<RunConfig> {
    let cfg = args.resolve()?;
    if let Some(n) = cfg.workers {
        if !spade_core::parallel::configure_threads(n) {
            log::warn!("worker pool already initialized or parallelism not compiled in; ignoring --workers");
        }
    }
    cfg.write(&cfg.output_dir.join("config.json"))?;
    Ok(cfg)
}

fn run_index(args: &RunArgs) -> Result<()> {
    let (cfg, extractor) = prepare(args)?;
    for class in commands::classes(&cfg)? {
        match commands::build_index(&cfg, &class, &extractor)? {
            IndexOutcome::Built(n) => info!("{class}: indexed {n} training images"),
            IndexOutcome::CacheHit(n) => info!("{class}: cache hit, reusing index of {n} images"),
        }
    }
    Ok(())
}

fn run_score(args: &RunArgs) -> Result<()> {
    let (cfg, extractor) = prepare(args)?;
    for class in commands::classes(&cfg)? {
        let paths = ClassPaths::new(&cfg.output_dir, &class);
        let maps = commands::score_class(&cfg, &class, &extractor, &paths.maps(), &paths.scores())?;
        info!("{class}: scored {} test images", maps.len());
    }
    Ok(())
}

fn evaluate_into(cfg: &RunConfig, out_dir: &std::path::Path, maps_root: &std::path::Path) -> Result<spade_core::evaluation::Summary> {
    let mut reports = Vec::new();
    for class in commands::classes(cfg)? {
        let maps = ClassPaths::new(maps_root, &class).maps();
        let report = commands::eval_class(cfg, &class, &maps)?;
        let paths = ClassPaths::new(out_dir, &class);
        commands::write_class_report(&report, &paths.report(), &paths.sweep())?;
        reports.push((class, report));
    }
    let summary = spade_core::evaluation::summarize(&reports)?;
    commands::write_summary(out_dir, &summary)?;
    Ok(summary)
}

fn run_eval(args: &RunArgs) -> Result<()> {
    let cfg = configure(args)?;
    let summary = evaluate_into(&cfg, &cfg.output_dir, &cfg.output_dir)?;
    print!("{}", summary.table());
    Ok(())
}

fn run_ablate(args: &RunArgs, sets: Option<&str>) -> Result<()> {
    let (cfg, extractor) = prepare(args)?;
    let classes = commands::classes(&cfg)?;
    for class in &classes {
        commands::build_index(&cfg, class, &extractor)?;
    }
    let sets: Vec<Vec<String>> = match sets {
        Some(s) => s
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.split(',').map(|l| l.trim().to_string()).collect())
            .collect(),
        None => commands::default_layer_sets(&cfg.extractor.tap_names),
    };
    let mut labels = Vec::new();
    let mut summaries = Vec::new();
    for set in &sets {
        let mut run = cfg.clone();
        run.pipeline = run.pipeline.with_levels(set.clone());
        run.validate()?;
        let dir = cfg.output_dir.join("ablate").join(set.join("+"));
        for class in &classes {
            let paths = ClassPaths::new(&dir, class);
            commands::score_class(&run, class, &extractor, &paths.maps(), &paths.scores())?;
        }
        let summary = evaluate_into(&run, &dir, &dir)?;
        labels.push(commands::layer_set_label(&cfg, &classes[0], set));
        summaries.push(summary);
    }
    let table = commands::ablation_table(&labels, &summaries);
    let path = cfg.output_dir.join("ablate").join("table.txt");
    std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    print!("{table}");
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = if a.bimodal {
        SynthSpec::bimodal(a.train.saturating_sub(a.train / 5), a.train / 5, a.anomalous, a.size, a.seed)
    } else {
        SynthSpec::localization(a.train, a.anomalous, a.normal, a.size, a.seed)
    };
    spec.class_name = a.class_name.clone();
    spec.patch = a.patch;
    commands::synth(&a.root, &spec, a.test_equals_train)?;
    info!("wrote {} under {}", a.class_name, a.root.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<SpadeError>() {
        Some(e) if e.is_user_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Index(a) => run_index(a),
        Command::Score(a) => run_score(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate { run, sets } => run_ablate(run, sets.as_deref()),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
