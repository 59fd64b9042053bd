//! Run configuration: one JSON document, dotted-key overrides, stable hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::encoder::StageConfig;
use crate::error::{Error, Result};
use crate::synth::GeneratorSpec;

/// Weights of the terms in the total training objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lambdas {
    pub abs: f64,
    pub clst: f64,
    pub sep: f64,
    pub orth: f64,
    pub trns: f64,
    pub norm: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            abs: 0.3,
            clst: 0.8,
            sep: 0.08,
            orth: 1e-2,
            trns: 1e-3,
            norm: 1e-4,
        }
    }
}

impl Lambdas {
    fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> {
        [
            ("abs", self.abs),
            ("clst", self.clst),
            ("sep", self.sep),
            ("orth", self.orth),
            ("trns", self.trns),
            ("norm", self.norm),
        ]
        .into_iter()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fraction of positive contribution an explanation must cover.
    pub sparsity_coverage: f64,
    /// Size of the per-sample prototype set counted by the diversity score.
    pub diversity_top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sparsity_coverage: 0.9,
            diversity_top_k: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root holding `manifest.jsonl` and the frame tree.
    pub root: PathBuf,
    pub generator: GeneratorSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/synthetic"),
            generator: GeneratorSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub num_classes: usize,
    pub protos_per_class: usize,
    pub feature_dim: usize,
    /// Trunk stages, applied in order before the feature and ROI heads.
    pub stages: Vec<StageConfig>,
    /// Uncertainty prototypes and the abstention objective. Disabling this
    /// drops the extra head row and trains with plain cross-entropy.
    pub uncertainty: bool,
    pub lambdas: Lambdas,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub push_period: usize,
    pub push_enabled: bool,
    pub augment: bool,
    pub seed: u64,
    pub deterministic: bool,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub runs_root: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            protos_per_class: 10,
            feature_dim: 64,
            stages: StageConfig::default_trunk(),
            uncertainty: true,
            lambdas: Lambdas::default(),
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 8,
            push_period: 5,
            push_enabled: true,
            augment: true,
            seed: 0,
            deterministic: true,
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            runs_root: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Number of prototypes, uncertainty prototypes included when enabled.
    pub fn num_prototypes(&self) -> usize {
        self.num_classes * self.protos_per_class
            + if self.uncertainty {
                self.protos_per_class
            } else {
                0
            }
    }

    /// Rows of the head: one per class plus the uncertainty row.
    pub fn num_outputs(&self) -> usize {
        self.num_classes + usize::from(self.uncertainty)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.lambdas.iter() {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("lambda `{name}` must be >= 0, got {value}")));
            }
        }
        if self.push_period < 1 {
            return Err(Error::Config("push_period must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.protos_per_class < 1 {
            return Err(Error::Config("protos_per_class must be >= 1".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be >= 2".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.data.generator.num_classes != self.num_classes {
            return Err(Error::Config(format!(
                "generator has {} classes but the model expects {}",
                self.data.generator.num_classes, self.num_classes
            )));
        }
        if !(0.0 < self.eval.sparsity_coverage && self.eval.sparsity_coverage <= 1.0) {
            return Err(Error::Config("eval.sparsity_coverage must lie in (0, 1]".into()));
        }
        self.data.generator.validate()?;
        crate::encoder::EncoderConfig::from_run(self).validate_input(
            self.data.generator.height,
            self.data.generator.width,
            self.data.generator.clip_len,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Applies `key=value` overrides where `key` is a dotted path into the
    /// JSON form of the config. Values parse as JSON, falling back to a
    /// plain string. Keys that do not already exist are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = match slot {
                    Value::Object(map) => map
                        .get_mut(part)
                        .ok_or_else(|| Error::UnknownOverride(key.to_string()))?,
                    Value::Array(items) => part
                        .parse::<usize>()
                        .ok()
                        .and_then(|i| items.get_mut(i))
                        .ok_or_else(|| Error::UnknownOverride(key.to_string()))?,
                    _ => return Err(Error::UnknownOverride(key.to_string())),
                };
            }
            *slot = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.protos_per_class, 10);
        assert_eq!(c.push_period, 5);
        assert_eq!(c.lambdas.clst, 0.8);
        assert_eq!(c.lambdas.sep, 0.08);
        assert_eq!(c.lambdas.norm, 1e-4);
        assert_eq!(c.lambdas.abs, 0.3);
        assert_eq!(c.lambdas.orth, 1e-2);
        assert_eq!(c.lambdas.trns, 1e-3);
        assert_eq!(c.data.generator.clip_len, 32);
        assert_eq!(c.num_prototypes(), 40);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let c = RunConfig::default();
        let o = c
            .with_overrides(&["lambdas.abs=0.5", "epochs=3", "runs_root=/tmp/x"])
            .unwrap();
        assert_eq!(o.lambdas.abs, 0.5);
        assert_eq!(o.epochs, 3);
        assert_eq!(o.runs_root, PathBuf::from("/tmp/x"));
        assert_ne!(c.hash(), o.hash());
        assert_eq!(o.hash(), o.clone().hash());
    }

    #[test]
    fn unknown_override_is_rejected() {
        let err = RunConfig::default()
            .with_overrides(&["lambdas.nope=1"])
            .unwrap_err();
        assert!(matches!(err, Error::UnknownOverride(ref k) if k == "lambdas.nope"));
    }

    #[test]
    fn negative_lambda_is_invalid() {
        let c = RunConfig::default().with_overrides(&["lambdas.sep=-1"]).unwrap();
        assert!(c.validate().is_err());
        let c = RunConfig::default().with_overrides(&["push_period=0"]).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
    }
}
