//! The `dosesim` pipeline commands. Each command reads the artifacts of
//! the previous one from the output directory and writes its own there.
//!
//! ```text
//! <out>/dataset.csv             generate
//! <out>/processed.csv           preprocess (+ preprocess.json, repairs.csv)
//! <out>/tune/<model>.{csv,json} tune: trial ledger and best point
//! <out>/models/<model>.ckpt     train (+ _epochs.csv, _metrics.json)
//! <out>/rollouts/*.csv          rollout (+ index.json)
//! <out>/report/summary.csv      report (+ one SVG per cell)
//! ```

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dosesim::data::{preprocess, Part, Prepared, TimeSeriesDataset};
use dosesim::diagnostics::{multi_sequence_eval, render_report, Cell, ErrorCurve, SequenceSuite};
use dosesim::env::{LearnedDynamics, RolloutTrace};
use dosesim::models::{ModelKind, ModelSpec};
use dosesim::plant::generate_dataset;
use dosesim::training::{evaluate, train, tune, Checkpoint, HyperParams, Metrics};
use serde::{Deserialize, Serialize};

pub use config::RunConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DOSESIM_OUT";
pub const DEFAULT_OUT: &str = "dosesim-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration; exit status 1.
    #[error("{0}")]
    Usage(String),
    /// The pipeline failed; exit status 2.
    #[error(transparent)]
    Runtime(#[from] dosesim::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dosesim", version, about = "Learned plant simulators for dosing control")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: $DOSESIM_OUT, then ./dosesim-out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate the plant and write the raw dataset.
    Generate,
    /// Clean, select features, add time encodings and split.
    Preprocess,
    /// Search hyper-parameters for each configured model.
    Tune,
    /// Train each configured model and save checkpoints.
    Train,
    /// Replay recorded actions through each trained model.
    Rollout,
    /// Error curves, plots and the summary table.
    Report,
}

/// Paths of every artifact under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csv")
    }
    pub fn processed(&self) -> PathBuf {
        self.root.join("processed.csv")
    }
    pub fn tune_dir(&self) -> PathBuf {
        self.root.join("tune")
    }
    pub fn best_hyper(&self, kind: ModelKind) -> PathBuf {
        self.tune_dir().join(format!("{kind}.json"))
    }
    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.models_dir().join(format!("{kind}.ckpt"))
    }
    pub fn metrics(&self, kind: ModelKind) -> PathBuf {
        self.models_dir().join(format!("{kind}_metrics.json"))
    }
    pub fn rollouts_dir(&self) -> PathBuf {
        self.root.join("rollouts")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Flags win over the config file, which wins over the environment.
pub fn resolve(common: &Common) -> Result<(RunConfig, Layout), CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let root = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((cfg, Layout { root }))
}

/// Runs one command and returns the files it wrote.
pub fn run(command: Command, cfg: &RunConfig, layout: &Layout) -> Result<Vec<PathBuf>, CliError> {
    create_dir(&layout.root)?;
    let files = match command {
        Command::Generate => cmd_generate(cfg, layout)?,
        Command::Preprocess => cmd_preprocess(cfg, layout)?,
        Command::Tune => cmd_tune(cfg, layout)?,
        Command::Train => cmd_train(cfg, layout)?,
        Command::Rollout => cmd_rollout(cfg, layout)?,
        Command::Report => cmd_report(cfg, layout)?,
    };
    Ok(files)
}

fn create_dir(path: &Path) -> dosesim::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| dosesim::Error::io(path, e))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> dosesim::Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| dosesim::Error::io(&path, e))?;
    Ok(path)
}

fn read(path: &Path) -> dosesim::Result<String> {
    std::fs::read_to_string(path).map_err(|e| dosesim::Error::io(path, e))
}

fn write_json(path: PathBuf, value: &impl Serialize) -> dosesim::Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

pub fn cmd_generate(cfg: &RunConfig, layout: &Layout) -> dosesim::Result<Vec<PathBuf>> {
    let gen = cfg.plant.generate_config(cfg.seed);
    let ds = generate_dataset(&gen)?;
    ds.write_csv(layout.dataset())?;
    log::info!("generated {} rows", ds.len());
    Ok(vec![layout.dataset()])
}

pub fn cmd_preprocess(cfg: &RunConfig, layout: &Layout) -> dosesim::Result<Vec<PathBuf>> {
    let raw = TimeSeriesDataset::load_csv(layout.dataset())?;
    let (prep, summary, repairs) = preprocess(&raw, &cfg.preprocess)?;
    prep.data().write_csv(layout.processed())?;
    let repairs_path = layout.root.join("repairs.csv");
    repairs.write_csv(&repairs_path)?;
    log::info!("kept features {:?}", summary.features);
    Ok(vec![
        layout.processed(),
        write_json(layout.root.join("preprocess.json"), &summary)?,
        repairs_path,
    ])
}

/// The processed dataset with the split and scaler the preprocess step
/// used (refitted on the same training rows).
pub fn load_prepared(cfg: &RunConfig, layout: &Layout) -> dosesim::Result<Prepared> {
    let data = TimeSeriesDataset::load_csv(layout.processed())?;
    Prepared::new(data, &cfg.preprocess.split, cfg.preprocess.window)
}

/// Distinct, reproducible seed per model kind.
fn kind_seed(seed: u64, kind: ModelKind) -> u64 {
    let ix = ModelKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) as u64;
    seed.wrapping_mul(31).wrapping_add(ix)
}

pub fn cmd_tune(cfg: &RunConfig, layout: &Layout) -> dosesim::Result<Vec<PathBuf>> {
    let prep = load_prepared(cfg, layout)?;
    let (tr, va) = (prep.windows(Part::Train)?, prep.windows(Part::Validation)?);
    create_dir(&layout.tune_dir())?;
    let mut files = Vec::new();
    for &kind in &cfg.tune.models {
        let seed = kind_seed(cfg.seed, kind);
        let train_cfg = cfg.tune.schedule.train_config(seed);
        let base = ModelSpec::default_for(kind);
        let outcome = tune(&cfg.tune.space.space(kind), cfg.tune.trials, seed, &cfg.tune.tpe, |hp| {
            let (_, report) = train(&base, hp, &tr, &va, &train_cfg)?;
            Ok(report.best_val_mse)
        })?;
        log::info!("{kind}: best validation mse {} at {:?}", outcome.best_val_mse, outcome.best);
        let ledger = layout.tune_dir().join(format!("{kind}.csv"));
        outcome.write_ledger(&ledger)?;
        files.push(ledger);
        files.push(write_json(layout.best_hyper(kind), &outcome.best)?);
    }
    Ok(files)
}

/// Test-split metrics of a trained model, written next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub kind: ModelKind,
    pub hyper: HyperParams,
    pub test: Metrics,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

fn hyper_for(cfg: &RunConfig, layout: &Layout, kind: ModelKind) -> dosesim::Result<HyperParams> {
    if let Some(hp) = cfg.train.preset(kind) {
        return Ok(hp);
    }
    let path = layout.best_hyper(kind);
    if path.exists() {
        let hp: HyperParams = serde_json::from_str(&read(&path)?)?;
        if hp.kind != kind {
            return Err(dosesim::Error::config(format!("{} holds {} parameters", path.display(), hp.kind)));
        }
        return Ok(hp);
    }
    match cfg.train.hyper {
        config::HyperSource::Tuned => Err(dosesim::Error::config(format!(
            "no tuned parameters for {kind}; run `tune` first ({} missing)",
            path.display()
        ))),
        _ => Ok(HyperParams::desk(kind)),
    }
}

pub fn cmd_train(cfg: &RunConfig, layout: &Layout) -> dosesim::Result<Vec<PathBuf>> {
    let prep = load_prepared(cfg, layout)?;
    let (tr, va, te) = (
        prep.windows(Part::Train)?,
        prep.windows(Part::Validation)?,
        prep.windows(Part::Test)?,
    );
    create_dir(&layout.models_dir())?;
    let mut files = Vec::new();
    for &kind in &cfg.train.models {
        let hp = hyper_for(cfg, layout, kind)?;
        let train_cfg = cfg.train.schedule.train_config(kind_seed(cfg.seed, kind));
        let (model, report) = train(&ModelSpec::default_for(kind), &hp, &tr, &va, &train_cfg)?;
        let test = evaluate(&model, &te, None)?;
        log::info!("{kind}: test accuracy {:.4}", test.accuracy);
        let ck = Checkpoint::new(&model, hp.clone(), prep.scaler().clone())?;
        ck.save(layout.checkpoint(kind))?;
        files.push(layout.checkpoint(kind));
        let epochs = layout.models_dir().join(format!("{kind}_epochs.csv"));
        report.write_csv(&epochs)?;
        files.push(epochs);
        let metrics = ModelMetrics {
            kind,
            hyper: hp,
            test,
            best_epoch: report.best_epoch,
            best_val_mse: report.best_val_mse,
        };
        files.push(write_json(layout.metrics(kind), &metrics)?);
    }
    Ok(files)
}

/// The rollout starts for a prepared dataset, preferring the test split.
pub fn sequence_suite(cfg: &RunConfig, prep: &Prepared) -> dosesim::Result<SequenceSuite> {
    let (test, len, l, m) = (
        prep.range(Part::Test),
        prep.data().len(),
        prep.window(),
        cfg.env.episode_length * cfg.env.stride,
    );
    let suite = match cfg.report.sequences {
        config::Sequences::Regimes => SequenceSuite::regimes(test, len, l, m),
        config::Sequences::EvenlySpaced => SequenceSuite::evenly_spaced(test, l, m, cfg.report.count)?,
    };
    if suite.entries.is_empty() {
        return Err(dosesim::Error::TooShort {
            what: "dataset for any rollout sequence".into(),
            required: l + m,
            actual: len,
        });
    }
    Ok(suite)
}

/// One line of `rollouts/index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutEntry {
    pub model: String,
    pub sequence: String,
    pub start: usize,
    /// Trace file relative to the rollouts directory; absent on failure.
    pub file: Option<String>,
    pub error: Option<String>,
}

pub fn cmd_rollout(cfg: &RunConfig, layout: &Layout) -> dosesim::Result<Vec<PathBuf>> {
    let prep = load_prepared(cfg, layout)?;
    let suite = sequence_suite(cfg, &prep)?;
    let mut models = Vec::new();
    for &kind in &cfg.train.models {
        let ck = Checkpoint::load(layout.checkpoint(kind))?;
        ck.check_schema(prep.features())?;
        models.push((kind.to_string(), LearnedDynamics::new(ck)?));
    }
    let cells = multi_sequence_eval(&models, prep.data(), &suite, &cfg.env, cfg.report.normalization)?;
    let dir = layout.rollouts_dir();
    create_dir(&dir)?;
    let mut files = Vec::new();
    let mut index = Vec::new();
    for (cell, seq) in cells.iter().zip(suite.entries.iter().cycle()) {
        let mut entry = RolloutEntry {
            model: cell.model.clone(),
            sequence: cell.sequence.clone(),
            start: seq.start,
            file: None,
            error: None,
        };
        match &cell.outcome {
            Ok((trace, _)) => {
                let name = format!("{}_{}.csv", cell.model, cell.sequence);
                files.push(write(dir.join(&name), trace.to_csv_string())?);
                entry.file = Some(name);
            }
            Err(e) => entry.error = Some(e.clone()),
        }
        index.push(entry);
    }
    files.push(write_json(dir.join("index.json"), &index)?);
    Ok(files)
}

pub fn cmd_report(cfg: &RunConfig, layout: &Layout) -> dosesim::Result<Vec<PathBuf>> {
    let dir = layout.rollouts_dir();
    let index: Vec<RolloutEntry> = serde_json::from_str(&read(&dir.join("index.json"))?)?;
    let mut cells = Vec::with_capacity(index.len());
    for e in index {
        let outcome = match (&e.file, &e.error) {
            (Some(file), _) => {
                let trace = RolloutTrace::from_csv_str(&read(&dir.join(file))?, e.start)?;
                let curve = ErrorCurve::from_recorded(&e.model, &e.sequence, &trace, cfg.report.normalization)?;
                Ok((trace, curve))
            }
            (None, err) => Err(err.clone().unwrap_or_else(|| "no trace".into())),
        };
        cells.push(Cell {
            model: e.model,
            sequence: e.sequence,
            outcome,
        });
    }
    render_report(&cells, &layout.report_dir())
}
