//! Shared data model and the output-normalization rule.

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// One video clip, `[height, width, frames, channels]`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub voxels: Array4<f32>,
    /// Frames per heart cycle. Informational only.
    pub frame_rate: f64,
}

impl Clip {
    pub fn new(voxels: Array4<f32>, frame_rate: f64) -> Result<Self> {
        if voxels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("clip voxels must lie in [0, 1]".into()));
        }
        Ok(Self { voxels, frame_rate })
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.voxels.dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip: Clip,
    pub label: usize,
    pub study_id: String,
    pub cine_id: String,
    pub clip_id: String,
    /// Ground-truth flag from the generator: the clip sits in an ambiguity gap.
    pub ambiguous: bool,
}

/// Encoder feature field `F(x)`, `[H, W, T, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    pub values: Array4<f64>,
}

/// One occurrence map per prototype, `[P, H, W, T]`. Entries may be negative.
#[derive(Clone, Debug, PartialEq)]
pub struct OccurrenceVolume {
    pub values: Array4<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeTag {
    Class(usize),
    Uncertainty,
}

impl PrototypeTag {
    /// Head row this prototype feeds at initialization.
    pub fn head_row(self, num_classes: usize) -> usize {
        match self {
            PrototypeTag::Class(c) => c,
            PrototypeTag::Uncertainty => num_classes,
        }
    }
}

impl std::fmt::Display for PrototypeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrototypeTag::Class(c) => write!(f, "class{c}"),
            PrototypeTag::Uncertainty => write!(f, "uncertainty"),
        }
    }
}

/// Fixed prototype layout: `K` per class in class order, then `K` uncertainty
/// prototypes when enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankLayout {
    pub num_classes: usize,
    pub protos_per_class: usize,
    pub uncertainty: bool,
}

impl BankLayout {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            num_classes: config.num_classes,
            protos_per_class: config.protos_per_class,
            uncertainty: config.uncertainty,
        }
    }

    pub fn num_prototypes(&self) -> usize {
        (self.num_classes + usize::from(self.uncertainty)) * self.protos_per_class
    }

    pub fn num_outputs(&self) -> usize {
        self.num_classes + usize::from(self.uncertainty)
    }

    pub fn class_of(&self, index: usize) -> Result<PrototypeTag> {
        let len = self.num_prototypes();
        if index >= len {
            return Err(Error::PrototypeIndex { index, len });
        }
        let group = index / self.protos_per_class;
        Ok(if group < self.num_classes {
            PrototypeTag::Class(group)
        } else {
            PrototypeTag::Uncertainty
        })
    }

    pub fn tags(&self) -> Vec<PrototypeTag> {
        (0..self.num_prototypes())
            .map(|i| self.class_of(i).expect("index in range"))
            .collect()
    }
}

pub fn prototype_class_of(index: usize, config: &RunConfig) -> Result<PrototypeTag> {
    BankLayout::from_config(config).class_of(index)
}

/// Where a prototype vector was last pushed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub clip_id: String,
    pub label: usize,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    /// `[P, D]`
    pub vectors: Array2<f64>,
    pub assignment: Vec<PrototypeTag>,
    pub provenance: Vec<Option<Provenance>>,
}

impl PrototypeBank {
    pub fn new(vectors: Array2<f64>, layout: &BankLayout) -> Result<Self> {
        let p = layout.num_prototypes();
        if vectors.nrows() != p {
            return Err(Error::shape("prototype bank", p, vectors.nrows()));
        }
        if vectors.rows().into_iter().any(|r| r.dot(&r) == 0.0) {
            return Err(Error::Config("prototype vectors must have nonzero norm".into()));
        }
        Ok(Self {
            vectors,
            assignment: layout.tags(),
            provenance: vec![None; p],
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[(C + 1), P]`; the last row drives the uncertainty output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub weights: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub similarities: Array1<f64>,
    pub logits: Array1<f64>,
    pub class_probs: Array1<f64>,
    pub joint_probs: Array1<f64>,
    pub alpha: f64,
}

/// Counters for degenerate cases that are handled rather than rejected.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Similarities evaluated with a zero-norm operand (reported as 0.5).
    pub zero_norm_similarities: u64,
    /// Abstention losses whose alpha was clamped below 1.
    pub alpha_saturations: u64,
    /// Prototype pairs skipped by the orthogonality term.
    pub zero_norm_pairs: u64,
    /// Hard predictions decided by an argmax tie.
    pub argmax_ties: u64,
    /// Explanations without positive contribution, skipped by sparsity.
    pub skipped_sparsity_samples: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.zero_norm_similarities += other.zero_norm_similarities;
        self.alpha_saturations += other.alpha_saturations;
        self.zero_norm_pairs += other.zero_norm_pairs;
        self.argmax_ties += other.argmax_ties;
        self.skipped_sparsity_samples += other.skipped_sparsity_samples;
    }
}

/// Probabilities derived from head logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    /// Softmax over the class logits only.
    pub class_probs: Array1<f64>,
    /// Softmax over all logits, length `C + 1`. Without an uncertainty row the
    /// class distribution is padded with a zero uncertainty entry.
    pub joint_probs: Array1<f64>,
    pub alpha: f64,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Normalizes head logits. `logits` has `num_classes + 1` entries when the
/// model carries an uncertainty row, `num_classes` otherwise.
pub fn normalize_outputs(logits: &[f64], num_classes: usize) -> Result<Normalized> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    if logits.len() != num_classes && logits.len() != num_classes + 1 {
        return Err(Error::shape("logits", num_classes + 1, logits.len()));
    }
    let class_probs = Array1::from(softmax(&logits[..num_classes]));
    if logits.len() == num_classes {
        let mut joint = class_probs.to_vec();
        joint.push(0.0);
        return Ok(Normalized {
            class_probs,
            joint_probs: Array1::from(joint),
            alpha: 0.0,
        });
    }
    let joint_probs = Array1::from(softmax(logits));
    let alpha = joint_probs[num_classes];
    Ok(Normalized {
        class_probs,
        joint_probs,
        alpha,
    })
}
