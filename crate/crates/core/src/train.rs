//! Mini-batch training with periodic push, validation and checkpoints.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::Affine;
use crate::config::{Lambdas, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, ScoreKind, SplitMetrics};
use crate::losses::{total_loss, LossBreakdown};
use crate::model::{Grads, Model, Sample, SampleTerms};
use crate::optim::Adam;
use crate::push::{push_prototypes, PushReport};
use crate::synth::{derive_seed, Dataset, Split};
use crate::types::{ClipRecord, Diagnostics};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PUSH_REPORT_FILE: &str = "push_report.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const BEST_FILE: &str = "best.json";

/// Batch order and augmentations are drawn from streams derived from the
/// seed and the epoch, so these two numbers are the whole random state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Adam,
    pub epoch: usize,
    pub config: RunConfig,
    pub config_hash: String,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn dir_name(epoch: usize) -> String {
        format!("ckpt_{epoch}")
    }

    /// Writes `dir/checkpoint.json` through a temporary file so an
    /// interrupted write never replaces a good checkpoint.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CHECKPOINT_FILE);
        let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        let text = serde_json::to_vec(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Accepts a checkpoint directory or the checkpoint file itself.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
        let text = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        serde_json::from_slice(&text).map_err(|e| Error::json(&file, e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub epoch: usize,
    pub split: String,
    pub loss: LossBreakdown,
    pub metrics: Option<SplitMetrics>,
    pub pushed: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub log: Vec<LogLine>,
    pub pushes: Vec<PushReport>,
    pub steps: u64,
    pub diagnostics: Diagnostics,
}

/// Epochs (1-based) after which prototypes are pushed: every `period`
/// epochs and once more after the last epoch.
pub fn push_epochs(epochs: usize, period: usize, enabled: bool) -> Vec<usize> {
    if !enabled || epochs == 0 {
        return Vec::new();
    }
    let mut out: Vec<usize> = (1..=epochs).filter(|e| e % period.max(1) == 0).collect();
    if out.last() != Some(&epochs) {
        out.push(epochs);
    }
    out
}

/// Number of optimizer steps in one epoch.
pub fn steps_per_epoch(train_clips: usize, batch_size: usize) -> usize {
    train_clips.div_ceil(batch_size.max(1))
}

pub fn score_kind(config: &RunConfig) -> ScoreKind {
    ScoreKind::for_predictor(config.uncertainty)
}

fn sample_affine(config: &RunConfig, epoch: usize, clip_id: &str) -> Affine {
    if !config.augment && config.lambdas.trns == 0.0 {
        return Affine::identity();
    }
    let seed = derive_seed(config.seed, &format!("affine/{epoch}/{clip_id}"));
    Affine::sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn epoch_order(config: &RunConfig, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let seed = derive_seed(config.seed, &format!("order/{epoch}"));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Default)]
struct TermSums {
    abs: f64,
    clst: f64,
    sep: f64,
    trns: f64,
    orth: f64,
    norm: f64,
    samples: usize,
    batches: usize,
}

impl TermSums {
    fn add(&mut self, t: &SampleTerms) {
        self.abs += t.abs;
        self.clst += t.clst;
        self.sep += t.sep;
        self.trns += t.trns;
        self.samples += 1;
    }

    fn mean(&self, lambdas: &Lambdas) -> LossBreakdown {
        let n = self.samples.max(1) as f64;
        let b = self.batches.max(1) as f64;
        total_loss(
            self.abs / n,
            self.clst / n,
            self.sep / n,
            self.orth / b,
            self.trns / n,
            self.norm / b,
            lambdas,
        )
    }
}

/// One pass over `train` in seeded batch order. Returns the mean loss terms
/// and the number of optimizer steps taken.
pub fn train_epoch(
    model: &mut Model,
    optimizer: &mut Adam,
    config: &RunConfig,
    train: &[&ClipRecord],
    epoch: usize,
) -> Result<(LossBreakdown, Diagnostics, u64)> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let lambdas = &config.lambdas;
    let order = epoch_order(config, epoch, train.len());
    let mut sums = TermSums::default();
    let mut diagnostics = Diagnostics::default();
    let mut steps = 0;
    for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
        let mut grads = Grads::zeros_like(model);
        let mut batch_sum = SampleTerms::default();
        for &i in chunk {
            let record = train[i];
            let sample = Sample {
                clip: &record.clip,
                label: record.label,
                affine: sample_affine(config, epoch, &record.clip_id),
                augment: config.augment,
            };
            let (terms, g, d) = model.sample_objective(&sample, lambdas).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss { epoch, batch },
                e => e,
            })?;
            grads.add_assign(&g);
            diagnostics.merge(&d);
            sums.add(&terms);
            batch_sum.abs += terms.abs;
            batch_sum.clst += terms.clst;
            batch_sum.sep += terms.sep;
            batch_sum.trns += terms.trns;
        }
        grads.scale(1.0 / chunk.len() as f64);
        let (orth, norm, skipped) = model.regularizers(lambdas, &mut grads);
        diagnostics.zero_norm_pairs += skipped;
        sums.orth += orth;
        sums.norm += norm;
        sums.batches += 1;
        let n = chunk.len() as f64;
        let total = total_loss(
            batch_sum.abs / n,
            batch_sum.clst / n,
            batch_sum.sep / n,
            orth,
            batch_sum.trns / n,
            norm,
            lambdas,
        )
        .total;
        let finite_grads = grads.slices().iter().all(|s| s.iter().all(|v| v.is_finite()));
        if !total.is_finite() || !finite_grads {
            return Err(Error::NonFiniteLoss { epoch, batch });
        }
        optimizer.update(model, &grads);
        steps += 1;
    }
    Ok((sums.mean(lambdas), diagnostics, steps))
}

/// Mean loss terms over `records` without augmentation or parameter updates.
pub fn split_loss(model: &Model, records: &[&ClipRecord], lambdas: &Lambdas) -> Result<LossBreakdown> {
    let mut sums = TermSums::default();
    for r in records {
        sums.add(&model.sample_terms(&r.clip, r.label, lambdas)?);
    }
    let mut scratch = Grads::zeros_like(model);
    let (orth, norm, _) = model.regularizers(&Lambdas { orth: 0.0, norm: 0.0, ..*lambdas }, &mut scratch);
    sums.orth = orth;
    sums.norm = norm;
    sums.batches = 1;
    Ok(sums.mean(lambdas))
}

/// Clip metrics plus cine and study aggregates on one split.
pub fn evaluate_epoch(model: &Model, config: &RunConfig, split: Split, records: &[&ClipRecord]) -> Result<Evaluation> {
    evaluate(model, split.name(), records, score_kind(config), &config.eval)
}

fn selection_score(metrics: &SplitMetrics) -> f64 {
    metrics.clip.macro_f1.unwrap_or(-1.0)
}

struct RunWriter {
    dir: PathBuf,
}

impl RunWriter {
    fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        config.save(&dir.join("config.json"))?;
        let log = dir.join(LOG_FILE);
        fs::write(&log, b"").map_err(|e| Error::io(&log, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn log(&self, line: &LogLine) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        let mut text = serde_json::to_vec(line).map_err(|e| Error::json(&path, e))?;
        text.push(b'\n');
        let mut file = fs::OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        file.write_all(&text).map_err(|e| Error::io(&path, e))
    }

    fn checkpoint(&self, ckpt: &Checkpoint) -> Result<PathBuf> {
        ckpt.save(&self.dir.join(Checkpoint::dir_name(ckpt.epoch)))
    }

    fn push_report(&self, report: &PushReport) -> Result<()> {
        let dir = self.dir.join(Checkpoint::dir_name(report.epoch));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        report.save(&dir.join(PUSH_REPORT_FILE))
    }

    fn best(&self, epoch: usize, score: f64) -> Result<()> {
        let path = self.dir.join(BEST_FILE);
        let doc = serde_json::json!({ "epoch": epoch, "checkpoint": Checkpoint::dir_name(epoch), "val_macro_f1": score });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Trains from scratch. When `run_dir` is given, writes the config, the log,
/// push reports and checkpoints (push epochs, new bests and the last epoch)
/// beneath it.
pub fn train(config: &RunConfig, dataset: &Dataset, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = dataset.split(Split::Train);
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let val_set = dataset.split(Split::Val);
    let writer = run_dir.map(|d| RunWriter::create(d, config)).transpose()?;
    let pushes_at = push_epochs(config.epochs, config.push_period, config.push_enabled);

    let mut model = Model::init(config)?;
    let mut optimizer = Adam::new(config.learning_rate, model.num_params());
    let hash = config.hash();
    let snapshot = |model: &Model, optimizer: &Adam, epoch: usize| Checkpoint {
        model: model.clone(),
        optimizer: optimizer.clone(),
        epoch,
        config: config.clone(),
        config_hash: hash.clone(),
        rng: RngState { seed: config.seed, next_epoch: epoch + 1 },
    };

    let mut log = Vec::new();
    let mut pushes = Vec::new();
    let mut steps = 0;
    let mut diagnostics = Diagnostics::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    for epoch in 1..=config.epochs {
        let (loss, diag, n) = train_epoch(&mut model, &mut optimizer, config, &train_set, epoch)?;
        steps += n;
        diagnostics.merge(&diag);

        let pushed = pushes_at.contains(&epoch);
        if pushed {
            let report = push_prototypes(&mut model, &train_set, epoch)?;
            if let Some(w) = &writer {
                w.push_report(&report)?;
            }
            pushes.push(report);
        }
        let train_line = LogLine { epoch, split: Split::Train.name().into(), loss, metrics: None, pushed };
        if let Some(w) = &writer {
            w.log(&train_line)?;
        }
        log.push(train_line);

        let candidate = pushed || !config.push_enabled;
        let mut saved = false;
        if !val_set.is_empty() {
            let metrics = evaluate_epoch(&model, config, Split::Val, &val_set)?.metrics;
            let score = selection_score(&metrics);
            let line = LogLine {
                epoch,
                split: Split::Val.name().into(),
                loss: split_loss(&model, &val_set, &config.lambdas)?,
                metrics: Some(metrics),
                pushed,
            };
            if let Some(w) = &writer {
                w.log(&line)?;
            }
            log.push(line);
            // Later epochs win ties.
            if candidate && best.as_ref().is_none_or(|(s, _)| score >= *s) {
                let ckpt = snapshot(&model, &optimizer, epoch);
                if let Some(w) = &writer {
                    w.checkpoint(&ckpt)?;
                    w.best(epoch, score)?;
                    saved = true;
                }
                best = Some((score, ckpt));
            }
        }
        if let Some(w) = &writer {
            if !saved && (pushed || epoch == config.epochs) {
                w.checkpoint(&snapshot(&model, &optimizer, epoch))?;
            }
        }
    }
    let last = snapshot(&model, &optimizer, config.epochs);
    let best = match best {
        Some((_, ckpt)) => ckpt,
        None => {
            if let Some(w) = &writer {
                w.best(config.epochs, f64::NAN)?;
            }
            last.clone()
        }
    };
    Ok(TrainOutcome {
        last,
        best,
        log,
        pushes,
        steps,
        diagnostics,
    })
}
