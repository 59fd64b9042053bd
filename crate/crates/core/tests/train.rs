//! Training loop, checkpoints and epoch evaluation.

mod common;

use common::*;
use protoasnet::error::Error;
use protoasnet::eval::{evaluate, OraclePredictor, Prediction, Predictor, ScoreKind};
use protoasnet::model::Model;
use protoasnet::optim::Adam;
use protoasnet::synth::{Dataset, Split};
use protoasnet::train::{evaluate_epoch, train, train_epoch, Checkpoint, LogLine, BEST_FILE, LOG_FILE, PUSH_REPORT_FILE};
use protoasnet::types::ClipRecord;

#[test]
fn one_epoch_of_sixteen_clips_in_batches_of_four_is_four_steps() {
    let config = small_run_config(0);
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let clips: Vec<&ClipRecord> = dataset.records.iter().take(16).collect();
    let mut model = Model::init(&config).unwrap();
    let mut adam = Adam::new(config.learning_rate, model.num_params());
    let (_, _, steps) = train_epoch(&mut model, &mut adam, &config, &clips, 1).unwrap();
    assert_eq!(steps, 4);
    assert_eq!(adam.step, 4);
}

#[test]
fn same_seed_gives_identical_runs() {
    let config = small_run_config(1);
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let a = train(&config, &dataset, None).unwrap();
    let b = train(&config, &dataset, None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.last, b.last);
    let mut other = config.clone();
    other.seed = 2;
    let c = train(&other, &dataset, None).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn training_loss_falls_over_five_epochs() {
    let mut config = small_run_config(3);
    config.epochs = 5;
    config.push_period = 5;
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let out = train(&config, &dataset, None).unwrap();
    let train_losses: Vec<f64> = out.log.iter().filter(|l| l.split == "train").map(|l| l.loss.total).collect();
    assert_eq!(train_losses.len(), 5);
    assert!(train_losses[4] < train_losses[0], "{train_losses:?}");
}

#[test]
fn checkpoint_round_trip_reproduces_outputs_bit_for_bit() {
    let config = small_run_config(5);
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let out = train(&config, &dataset, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.last.save(dir.path()).unwrap();
    let loaded = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(loaded, out.last);
    for r in dataset.split(Split::Test) {
        assert_eq!(loaded.model.forward(&r.clip).unwrap(), out.last.model.forward(&r.clip).unwrap());
    }
    assert_eq!(loaded.config_hash, config.hash());
}

#[test]
fn run_directory_layout() {
    let config = small_run_config(6);
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = train(&config, &dataset, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let lines: Vec<LogLine> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines, out.log);
    assert_eq!(lines.len(), 2 * config.epochs);
    for epoch in [2, 3] {
        let ckpt = dir.path().join(format!("ckpt_{epoch}"));
        assert!(ckpt.join("checkpoint.json").exists());
        assert!(ckpt.join(PUSH_REPORT_FILE).exists());
    }
    let best: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(BEST_FILE)).unwrap()).unwrap();
    let best_epoch = best["epoch"].as_u64().unwrap() as usize;
    assert_eq!(best_epoch, out.best.epoch);
    // Best is picked among post-push evaluations only.
    assert!([2, 3].contains(&best_epoch));
    let loaded = Checkpoint::load(&dir.path().join(best["checkpoint"].as_str().unwrap())).unwrap();
    assert_eq!(loaded, out.best);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let config = small_run_config(0);
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let train_set = dataset.split(Split::Train);
    let mut model = Model::init(&config).unwrap();
    model.head.weights[[0, 0]] = f64::NAN;
    let mut adam = Adam::new(config.learning_rate, model.num_params());
    let err = train_epoch(&mut model, &mut adam, &config, &train_set, 1).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 0 }), "{err}");
}

#[test]
fn evaluate_epoch_is_side_effect_free() {
    let config = small_run_config(0);
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let model = Model::init(&config).unwrap();
    let before = model.clone();
    let val = dataset.split(Split::Val);
    let a = evaluate_epoch(&model, &config, Split::Val, &val).unwrap();
    let b = evaluate_epoch(&model, &config, Split::Val, &val).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(model, before);
    assert!(matches!(evaluate_epoch(&model, &config, Split::Val, &[]), Err(Error::Empty(_))));
}

struct Constant(usize);

impl Predictor for Constant {
    fn num_classes(&self) -> usize {
        3
    }
    fn num_prototypes(&self) -> usize {
        0
    }
    fn predict(&self, _: &ClipRecord) -> protoasnet::error::Result<Prediction> {
        let mut joint = vec![0.0; 4];
        joint[self.0] = 1.0;
        Ok(Prediction { joint_probs: joint, alpha: 0.0, contributions: None })
    }
}

#[test]
fn perfect_and_constant_predictors() {
    let config = small_run_config(0);
    let dataset = Dataset::in_memory(&config.data.generator).unwrap();
    let records: Vec<&ClipRecord> = dataset.records.iter().collect();
    let e = evaluate(&OraclePredictor { num_classes: 3 }, "all", &records, ScoreKind::Alpha, &config.eval).unwrap();
    assert_eq!(e.metrics.clip.balanced_accuracy, Some(1.0));
    assert_eq!(e.metrics.clean_clip.balanced_accuracy, Some(1.0));
    let e = evaluate(&Constant(1), "all", &records, ScoreKind::Alpha, &config.eval).unwrap();
    assert!((e.metrics.clip.balanced_accuracy.unwrap() - 1.0 / 3.0).abs() < 1e-12);
}
