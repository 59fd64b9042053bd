//! Command-line front end. Every command roots its outputs at
//! `<runs_root>/<run-name>/`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::ablation::{format_table, run_ablation, save_rows, AblationRow};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_predictions_csv, OraclePredictor, Predictor};
use crate::explain::{explain_clip, prototype_gallery, write_index};
use crate::push::push_prototypes;
use crate::synth::{generate_dataset, Dataset, GeneratorSpec, Split, MANIFEST_FILE};
use crate::train::{score_kind, train, Checkpoint, BEST_FILE, PUSH_REPORT_FILE};

#[derive(Debug, Parser)]
#[command(name = "protoasnet", version, about = "Prototype video classifier with uncertainty prototypes")]
pub struct Cli {
    /// JSON run config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config entry by dotted key, e.g. `--set lambdas.clst=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true, default_value = "default")]
    pub run_name: String,
    /// Force deterministic mode regardless of the config.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset and its manifest.
    GenerateData {
        /// Output directory; defaults to `data.root`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from scratch.
    Train,
    /// Push a checkpoint's prototypes onto the training set.
    Push(CheckpointArg),
    /// Metrics at clip, cine and study level.
    Eval {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "model")]
        predictor: PredictorArg,
    },
    /// Reasoning reports, overlays and the prototype gallery.
    Explain {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Explain at most this many clips.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train and test the full model and its three ablations.
    Ablate,
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Checkpoint directory or file; defaults to the run's best checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PredictorArg {
    Model,
    /// Answers with the ground truth.
    Oracle,
}

pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut config = base.with_overrides(&cli.overrides)?;
    if cli.deterministic {
        config.deterministic = true;
    }
    config.validate()?;
    Ok(config)
}

fn run_dir(config: &RunConfig, name: &str) -> PathBuf {
    config.runs_root.join(name)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the dataset at `data.root`, refusing one rendered from a different
/// generator spec.
pub fn open_dataset(config: &RunConfig) -> Result<Dataset> {
    let root = &config.data.root;
    if !root.join(MANIFEST_FILE).exists() {
        return Err(Error::Config(format!(
            "no dataset at {}; run generate-data first",
            root.display()
        )));
    }
    let marker = root.join("generator.json");
    let text = std::fs::read_to_string(&marker).map_err(|e| Error::io(&marker, e))?;
    let spec: GeneratorSpec = serde_json::from_str(&text).map_err(|e| Error::json(&marker, e))?;
    if spec != config.data.generator {
        return Err(Error::Config(format!(
            "dataset at {} was generated from a different generator spec",
            root.display()
        )));
    }
    Dataset::load(root, &config.data.generator)
}

fn resolve_checkpoint(config: &RunConfig, cli: &Cli, arg: &CheckpointArg) -> Result<Checkpoint> {
    if let Some(p) = &arg.checkpoint {
        return Checkpoint::load(p);
    }
    let dir = run_dir(config, &cli.run_name);
    let best = dir.join(BEST_FILE);
    let text = std::fs::read_to_string(&best).map_err(|e| Error::io(&best, e))?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(&best, e))?;
    let name = doc["checkpoint"]
        .as_str()
        .ok_or_else(|| Error::Config(format!("{} names no checkpoint", best.display())))?;
    Checkpoint::load(&dir.join(name))
}

/// Runs one command and returns a one-line JSON summary for stdout.
pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    let config = effective_config(cli)?;
    let dir = run_dir(&config, &cli.run_name);
    let hash = config.hash();
    match &cli.command {
        Command::GenerateData { out } => {
            let root = out.clone().unwrap_or_else(|| config.data.root.clone());
            let manifest = generate_dataset(&config.data.generator, &root)?;
            Ok(json!({ "command": "generate-data", "root": root, "clips": manifest.entries.len() }))
        }
        Command::Train => {
            let dataset = open_dataset(&config)?;
            let outcome = train(&config, &dataset, Some(&dir))?;
            Ok(json!({
                "command": "train",
                "run_dir": dir,
                "config_hash": hash,
                "best_epoch": outcome.best.epoch,
                "steps": outcome.steps,
            }))
        }
        Command::Push(arg) => {
            let mut ckpt = resolve_checkpoint(&config, cli, arg)?;
            let dataset = open_dataset(&config)?;
            let report = push_prototypes(&mut ckpt.model, &dataset.split(Split::Train), ckpt.epoch)?;
            let out = dir.join("push");
            let path = ckpt.save(&out)?;
            report.save(&out.join(PUSH_REPORT_FILE))?;
            Ok(json!({
                "command": "push",
                "checkpoint": path,
                "max_distance": report.max_distance(),
            }))
        }
        Command::Eval { checkpoint, split, predictor } => {
            let split = Split::from(*split);
            let dataset = open_dataset(&config)?;
            let records = dataset.split(split);
            let (evaluation, ckpt_hash) = match predictor {
                PredictorArg::Oracle => {
                    let p = OraclePredictor { num_classes: config.num_classes };
                    (evaluate(&p, split.name(), &records, score_kind(&config), &config.eval)?, None)
                }
                PredictorArg::Model => {
                    let ckpt = resolve_checkpoint(&config, cli, checkpoint)?;
                    let model = &ckpt.model;
                    let kind = score_kind(&ckpt.config);
                    let e = evaluate(model as &dyn Predictor, split.name(), &records, kind, &config.eval)?;
                    (e, Some(ckpt.config_hash))
                }
            };
            let out = dir.join("eval");
            let metrics_path = out.join(format!("metrics_{}.json", split.name()));
            write_json(&metrics_path, &evaluation.metrics)?;
            write_predictions_csv(&evaluation.records, &out.join(format!("predictions_{}.csv", split.name())))?;
            write_json(
                &out.join(format!("run_{}.json", split.name())),
                &json!({ "config_hash": hash, "checkpoint_config_hash": ckpt_hash }),
            )?;
            Ok(json!({
                "command": "eval",
                "metrics": metrics_path,
                "clip_balanced_accuracy": evaluation.metrics.clip.balanced_accuracy,
                "study_balanced_accuracy": evaluation.metrics.study.balanced_accuracy,
            }))
        }
        Command::Explain { checkpoint, split, limit } => {
            let ckpt = resolve_checkpoint(&config, cli, checkpoint)?;
            let dataset = open_dataset(&config)?;
            let root = dir.join("explain");
            let gallery = prototype_gallery(&ckpt.model, &dataset.split(Split::Train), &root)?;
            let records = dataset.split(Split::from(*split));
            let take = limit.unwrap_or(records.len());
            let reports = records
                .iter()
                .take(take)
                .map(|r| explain_clip(&ckpt.model, r, &root))
                .collect::<Result<Vec<_>>>()?;
            write_index(&root, &gallery, &reports)?;
            Ok(json!({ "command": "explain", "root": root, "reports": reports.len(), "gallery": gallery.len() }))
        }
        Command::Ablate => {
            let dataset = open_dataset(&config)?;
            let out = dir.join("ablate");
            let runs = run_ablation(&config, &dataset, Some(&out))?;
            let rows: Vec<AblationRow> = runs.iter().map(|r| r.row()).collect();
            save_rows(&rows, &out)?;
            eprint!("{}", format_table(&rows));
            Ok(json!({ "command": "ablate", "table": out.join("ablation.md"), "rows": rows.len() }))
        }
    }
}

/// Single-line machine-readable error.
pub fn error_line(err: &Error) -> String {
    json!({ "error": err.kind(), "message": err.to_string() }).to_string()
}
