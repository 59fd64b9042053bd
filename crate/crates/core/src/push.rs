//! Prototype projection onto real training embeddings.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::types::{ClipRecord, PrototypeTag, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushEntry {
    pub prototype: usize,
    pub tag: PrototypeTag,
    pub old: Vec<f64>,
    pub new: Vec<f64>,
    pub source_clip_id: String,
    pub source_label: usize,
    /// Euclidean distance between `old` and `new`.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushReport {
    pub epoch: usize,
    pub entries: Vec<PushEntry>,
}

impl PushReport {
    pub fn max_distance(&self) -> f64 {
        self.entries.iter().map(|e| e.distance).fold(0.0, f64::max)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Candidate closest to `p` in Euclidean distance; equal distances go to the
/// lexicographically lowest id. Returns the index into `candidates`.
pub fn nearest_index(p: ArrayView1<f64>, candidates: &[(&str, ArrayView1<f64>)]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (id, z)) in candidates.iter().enumerate() {
        if z.len() != p.len() {
            return Err(Error::shape("push candidate", p.len(), z.len()));
        }
        let d = squared_distance(p, *z);
        best = match best {
            None => Some((i, d)),
            Some((j, bd)) if d < bd || (d == bd && *id < candidates[j].0) => Some((i, d)),
            keep => keep,
        };
    }
    best.map(|(i, _)| i).ok_or(Error::Empty("push candidates"))
}

pub fn nearest_embedding(p: ArrayView1<f64>, candidates: &[(&str, ArrayView1<f64>)]) -> Result<(String, Array1<f64>)> {
    let i = nearest_index(p, candidates)?;
    Ok((candidates[i].0.to_string(), candidates[i].1.to_owned()))
}

/// Replaces every prototype by its nearest pooled training feature. Class
/// prototypes search clips of their own class; uncertainty prototypes search
/// every clip.
pub fn push_prototypes(model: &mut Model, train: &[&ClipRecord], epoch: usize) -> Result<PushReport> {
    let num_classes = model.num_classes();
    for c in 0..num_classes {
        if !train.iter().any(|r| r.label == c) {
            return Err(Error::EmptyPushClass(c));
        }
    }
    let pooled: Vec<Array2<f64>> = train
        .iter()
        .map(|r| model.pooled_features(&r.clip))
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(model.bank.len());
    for p in 0..model.bank.len() {
        let tag = model.bank.assignment[p];
        let members: Vec<usize> = (0..train.len())
            .filter(|&i| match tag {
                PrototypeTag::Class(c) => train[i].label == c,
                PrototypeTag::Uncertainty => true,
            })
            .collect();
        let candidates: Vec<(&str, ArrayView1<f64>)> = members
            .iter()
            .map(|&i| (train[i].clip_id.as_str(), pooled[i].row(p)))
            .collect();
        let chosen = members[nearest_index(model.bank.vectors.row(p), &candidates)?];
        let old = model.bank.vectors.row(p).to_vec();
        let new = pooled[chosen].row(p);
        let distance = squared_distance(model.bank.vectors.row(p), new).sqrt();
        model.bank.vectors.row_mut(p).assign(&new);
        let source = train[chosen];
        model.bank.provenance[p] = Some(Provenance {
            clip_id: source.clip_id.clone(),
            label: source.label,
            epoch,
        });
        entries.push(PushEntry {
            prototype: p,
            tag,
            old,
            new: new.to_vec(),
            source_clip_id: source.clip_id.clone(),
            source_label: source.label,
            distance,
        });
    }
    Ok(PushReport { epoch, entries })
}
