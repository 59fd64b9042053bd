//! Classification and explanation metrics, and clip → cine → study aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::synth::group_label;
use crate::types::{ClipRecord, Diagnostics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub cine_id: String,
    pub study_id: String,
    pub label: usize,
    /// Length `C + 1`; the last entry is the uncertainty probability.
    pub joint_probs: Vec<f64>,
    pub alpha: f64,
    pub ambiguous: bool,
}

/// What a predictor says about one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub joint_probs: Vec<f64>,
    pub alpha: f64,
    /// Per-prototype contribution toward the predicted class, if the
    /// predictor has prototypes.
    pub contributions: Option<Vec<f64>>,
}

pub trait Predictor {
    fn num_classes(&self) -> usize;
    fn num_prototypes(&self) -> usize;
    fn predict(&self, record: &ClipRecord) -> Result<Prediction>;
}

/// Answers with the ground truth. Used to exercise the evaluation plumbing.
#[derive(Clone, Copy, Debug)]
pub struct OraclePredictor {
    pub num_classes: usize,
}

impl Predictor for OraclePredictor {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn num_prototypes(&self) -> usize {
        0
    }

    fn predict(&self, record: &ClipRecord) -> Result<Prediction> {
        let mut joint = vec![0.0; self.num_classes + 1];
        *joint.get_mut(record.label).ok_or(Error::MissingClass(record.label))? = 1.0;
        Ok(Prediction {
            joint_probs: joint,
            alpha: 0.0,
            contributions: None,
        })
    }
}

impl Predictor for Model {
    fn num_classes(&self) -> usize {
        self.layout.num_classes
    }

    fn num_prototypes(&self) -> usize {
        self.layout.num_prototypes()
    }

    fn predict(&self, record: &ClipRecord) -> Result<Prediction> {
        let out = self.forward(&record.clip)?;
        let joint = out.joint_probs.to_vec();
        let (predicted, _) = argmax_class(&joint, self.layout.num_classes);
        let row = self.head.weights.row(predicted);
        let contributions = row.iter().zip(out.similarities.iter()).map(|(w, g)| w * g).collect();
        Ok(Prediction {
            joint_probs: joint,
            alpha: out.alpha,
            contributions: Some(contributions),
        })
    }
}

/// How misclassification is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// The uncertainty probability.
    Alpha,
    /// Entropy of the renormalized class probabilities.
    Entropy,
}

impl ScoreKind {
    pub fn for_predictor(uncertainty: bool) -> Self {
        if uncertainty {
            ScoreKind::Alpha
        } else {
            ScoreKind::Entropy
        }
    }

    pub fn score(self, joint: &[f64], num_classes: usize) -> f64 {
        match self {
            ScoreKind::Alpha => joint[num_classes],
            ScoreKind::Entropy => prediction_entropy(&joint[..num_classes]),
        }
    }
}

pub fn prediction_entropy(class_probs: &[f64]) -> f64 {
    let total: f64 = class_probs.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    class_probs
        .iter()
        .map(|&p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

/// Argmax over the first `num_classes` entries; ties go to the lower index.
/// The flag reports whether a tie occurred.
pub fn argmax_class(probs: &[f64], num_classes: usize) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for c in 1..num_classes {
        if probs[c] > probs[best] {
            best = c;
            tie = false;
        } else if probs[c] == probs[best] {
            tie = true;
        }
    }
    (best, tie)
}

/// Arithmetic mean of the members' probability vectors.
pub fn aggregate(members: &[&[f64]]) -> Result<Vec<f64>> {
    let first = members.first().ok_or(Error::Empty("aggregation group"))?;
    let mut mean = vec![0.0; first.len()];
    for m in members {
        if m.len() != mean.len() {
            return Err(Error::shape("aggregated probabilities", mean.len(), m.len()));
        }
        for (acc, v) in mean.iter_mut().zip(m.iter()) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(mean)
}

fn check_classes(labels: &[usize], num_classes: usize) -> Result<()> {
    for c in 0..num_classes {
        if !labels.contains(&c) {
            return Err(Error::MissingClass(c));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::MissingClass(bad));
    }
    Ok(())
}

fn check_lengths(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::shape("predictions", labels.len(), preds.len()));
    }
    Ok(())
}

/// Mean over classes of per-class recall.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(preds, labels)?;
    check_classes(labels, num_classes)?;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        totals[l] += 1;
        hits[l] += usize::from(p == l);
    }
    let recall: f64 = hits.iter().zip(&totals).map(|(&h, &t)| h as f64 / t as f64).sum();
    Ok(recall / num_classes as f64)
}

/// Unweighted mean of per-class F1; a class with no precision and no recall
/// scores 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(preds, labels)?;
    check_classes(labels, num_classes)?;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[l] += 1;
        } else {
            fn_[l] += 1;
            if p < num_classes {
                fp[p] += 1;
            }
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

/// Mean over classes of the absolute error between predicted and true class
/// indices, treating labels as ordinal.
pub fn balanced_mae(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_lengths(preds, labels)?;
    check_classes(labels, num_classes)?;
    let mut err = vec![0.0; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        totals[l] += 1;
        err[l] += (p as f64 - l as f64).abs();
    }
    let sum: f64 = err.iter().zip(&totals).map(|(&e, &t)| e / t as f64).sum();
    Ok(sum / num_classes as f64)
}

/// Rank AUROC of `scores` separating positives from negatives; ties count one
/// half.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::shape("auroc scores", positive.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auroc scores"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassFlags);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks over runs of equal scores.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += midrank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// AUROC of detecting misclassified samples (`correct == false`) from scores.
pub fn misclassification_auroc(scores: &[f64], correct: &[bool]) -> Result<f64> {
    let wrong: Vec<bool> = correct.iter().map(|c| !c).collect();
    auroc(scores, &wrong)
}

/// Number of prototypes whose sorted positive contributions first reach
/// `coverage` of the positive total, or `None` without positive evidence.
pub fn prototypes_to_cover(contributions: &[f64], coverage: f64) -> Option<usize> {
    let mut positive: Vec<f64> = contributions.iter().copied().filter(|&c| c > 0.0).collect();
    let total: f64 = positive.iter().sum();
    if total <= 0.0 {
        return None;
    }
    positive.sort_by(|a, b| b.total_cmp(a));
    let target = coverage * total;
    let mut acc = 0.0;
    for (k, c) in positive.iter().enumerate() {
        acc += c;
        if acc >= target {
            return Some(k + 1);
        }
    }
    Some(positive.len())
}

/// Mean covering count over samples, divided by `num_prototypes`. Samples
/// without positive evidence are skipped and counted.
pub fn sparsity_score(contributions: &[Vec<f64>], num_prototypes: usize, coverage: f64) -> Result<(f64, u64)> {
    let mut skipped = 0u64;
    let mut counts = Vec::with_capacity(contributions.len());
    for c in contributions {
        if c.len() != num_prototypes {
            return Err(Error::shape("contributions", num_prototypes, c.len()));
        }
        match prototypes_to_cover(c, coverage) {
            Some(k) => counts.push(k as f64),
            None => skipped += 1,
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty("sparsity samples"));
    }
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    Ok((mean / num_prototypes as f64, skipped))
}

/// Indices of the `k` largest contributions; ties go to the lower index.
pub fn top_k(contributions: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..contributions.len()).collect();
    order.sort_by(|&a, &b| contributions[b].total_cmp(&contributions[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Fraction of prototypes appearing in some sample's top-`k` set.
pub fn diversity_score(contributions: &[Vec<f64>], num_prototypes: usize, k: usize) -> Result<f64> {
    let mut used = BTreeSet::new();
    for c in contributions {
        if c.len() != num_prototypes {
            return Err(Error::shape("contributions", num_prototypes, c.len()));
        }
        used.extend(top_k(c, k));
    }
    Ok(used.len() as f64 / num_prototypes as f64)
}

/// One aggregated unit at some level of the recording hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPrediction {
    pub id: String,
    pub label: usize,
    pub probs: Vec<f64>,
    pub predicted: usize,
    /// Every member is ambiguous.
    pub ambiguous: bool,
}

fn clip_groups(records: &[PredictionRecord], num_classes: usize, diag: &mut Diagnostics) -> Vec<GroupPrediction> {
    records
        .iter()
        .map(|r| {
            let (predicted, tie) = argmax_class(&r.joint_probs, num_classes);
            diag.argmax_ties += u64::from(tie);
            GroupPrediction {
                id: r.clip_id.clone(),
                label: r.label,
                probs: r.joint_probs.clone(),
                predicted,
                ambiguous: r.ambiguous,
            }
        })
        .collect()
}

/// Averages `members` into groups keyed by `key`.
fn regroup<'a>(
    members: impl IntoIterator<Item = (String, &'a GroupPrediction)>,
    num_classes: usize,
    diag: &mut Diagnostics,
) -> Result<Vec<GroupPrediction>> {
    let mut groups: BTreeMap<String, Vec<&GroupPrediction>> = BTreeMap::new();
    for (key, m) in members {
        groups.entry(key).or_default().push(m);
    }
    groups
        .into_iter()
        .map(|(id, ms)| {
            let probs = aggregate(&ms.iter().map(|m| m.probs.as_slice()).collect::<Vec<_>>())?;
            let (predicted, tie) = argmax_class(&probs, num_classes);
            diag.argmax_ties += u64::from(tie);
            Ok(GroupPrediction {
                id,
                label: group_label(ms.iter().map(|m| (m.label, m.ambiguous))).ok_or(Error::Empty("aggregation group"))?,
                probs,
                predicted,
                ambiguous: ms.iter().all(|m| m.ambiguous),
            })
        })
        .collect()
}

/// Metrics of one hierarchy level. Entries are `null` when their
/// precondition fails on this data (a class absent, or a single outcome).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub count: usize,
    pub balanced_accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub balanced_mae: Option<f64>,
    pub accuracy: f64,
    /// Misclassification detection from the uncertainty score.
    pub misclassification_auroc: Option<f64>,
    /// Ambiguous versus clean separation from the uncertainty score.
    pub ambiguity_auroc: Option<f64>,
    pub mean_score: f64,
}

pub fn level_metrics(groups: &[GroupPrediction], num_classes: usize, score: ScoreKind) -> LevelMetrics {
    let preds: Vec<usize> = groups.iter().map(|g| g.predicted).collect();
    let labels: Vec<usize> = groups.iter().map(|g| g.label).collect();
    let scores: Vec<f64> = groups.iter().map(|g| score.score(&g.probs, num_classes)).collect();
    let correct: Vec<bool> = preds.iter().zip(&labels).map(|(p, l)| p == l).collect();
    let ambiguous: Vec<bool> = groups.iter().map(|g| g.ambiguous).collect();
    let n = groups.len();
    LevelMetrics {
        count: n,
        balanced_accuracy: balanced_accuracy(&preds, &labels, num_classes).ok(),
        macro_f1: macro_f1(&preds, &labels, num_classes).ok(),
        balanced_mae: balanced_mae(&preds, &labels, num_classes).ok(),
        accuracy: if n == 0 { 0.0 } else { correct.iter().filter(|&&c| c).count() as f64 / n as f64 },
        misclassification_auroc: misclassification_auroc(&scores, &correct).ok(),
        ambiguity_auroc: auroc(&scores, &ambiguous).ok(),
        mean_score: if n == 0 { 0.0 } else { scores.iter().sum::<f64>() / n as f64 },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub score: ScoreKind,
    pub clip: LevelMetrics,
    /// Clip level restricted to non-ambiguous clips.
    pub clean_clip: LevelMetrics,
    pub cine: LevelMetrics,
    pub study: LevelMetrics,
    pub sparsity: Option<f64>,
    pub diversity: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl SplitMetrics {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub records: Vec<PredictionRecord>,
    /// Per clip, present when the predictor has prototypes.
    pub contributions: Vec<Vec<f64>>,
    pub metrics: SplitMetrics,
}

/// Computes every metric from already collected predictions.
pub fn summarize(
    split: &str,
    records: &[PredictionRecord],
    contributions: &[Vec<f64>],
    num_classes: usize,
    num_prototypes: usize,
    score: ScoreKind,
    config: &EvalConfig,
) -> Result<SplitMetrics> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut diagnostics = Diagnostics::default();
    let clips = clip_groups(records, num_classes, &mut diagnostics);
    let cines = regroup(records.iter().zip(&clips).map(|(r, g)| (r.cine_id.clone(), g)), num_classes, &mut diagnostics)?;
    let cine_study: BTreeMap<&str, &str> = records.iter().map(|r| (r.cine_id.as_str(), r.study_id.as_str())).collect();
    let studies = regroup(cines.iter().map(|g| (cine_study[g.id.as_str()].to_string(), g)), num_classes, &mut diagnostics)?;
    let clean: Vec<GroupPrediction> = clips.iter().filter(|g| !g.ambiguous).cloned().collect();

    let (sparsity, diversity) = if contributions.is_empty() || num_prototypes == 0 {
        (None, None)
    } else {
        let sparsity = match sparsity_score(contributions, num_prototypes, config.sparsity_coverage) {
            Ok((s, skipped)) => {
                diagnostics.skipped_sparsity_samples += skipped;
                Some(s)
            }
            Err(Error::Empty(_)) => {
                diagnostics.skipped_sparsity_samples += contributions.len() as u64;
                None
            }
            Err(e) => return Err(e),
        };
        (sparsity, Some(diversity_score(contributions, num_prototypes, config.diversity_top_k)?))
    };
    Ok(SplitMetrics {
        split: split.to_string(),
        score,
        clip: level_metrics(&clips, num_classes, score),
        clean_clip: level_metrics(&clean, num_classes, score),
        cine: level_metrics(&cines, num_classes, score),
        study: level_metrics(&studies, num_classes, score),
        sparsity,
        diversity,
        diagnostics,
    })
}

/// Runs `predictor` on every record and summarizes.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    split: &str,
    records: &[&ClipRecord],
    score: ScoreKind,
    config: &EvalConfig,
) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut preds = Vec::with_capacity(records.len());
    let mut contributions = Vec::new();
    for r in records {
        let p = predictor.predict(r)?;
        if let Some(c) = p.contributions {
            contributions.push(c);
        }
        preds.push(PredictionRecord {
            clip_id: r.clip_id.clone(),
            cine_id: r.cine_id.clone(),
            study_id: r.study_id.clone(),
            label: r.label,
            joint_probs: p.joint_probs,
            alpha: p.alpha,
            ambiguous: r.ambiguous,
        });
    }
    if !contributions.is_empty() && contributions.len() != preds.len() {
        return Err(Error::shape("contributions", preds.len(), contributions.len()));
    }
    let metrics = summarize(
        split,
        &preds,
        &contributions,
        predictor.num_classes(),
        predictor.num_prototypes(),
        score,
        config,
    )?;
    Ok(Evaluation {
        records: preds,
        contributions,
        metrics,
    })
}

pub fn write_predictions_csv(records: &[PredictionRecord], path: &Path) -> Result<()> {
    let width = records.first().map_or(0, |r| r.joint_probs.len());
    let mut out = String::from("clip_id,cine_id,study_id,label,ambiguous,alpha");
    for i in 0..width {
        let _ = write!(out, ",p{i}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{},{},{}", r.clip_id, r.cine_id, r.study_id, r.label, r.ambiguous, r.alpha);
        for p in &r.joint_probs {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn cine_mean_example() {
        let a = [0.2, 0.5, 0.3, 0.0];
        let b = [0.4, 0.3, 0.3, 0.0];
        let m = aggregate(&[&a, &b]).unwrap();
        for (x, y) in m.iter().zip([0.3, 0.4, 0.3, 0.0]) {
            assert!(close(*x, y));
        }
        assert_eq!(argmax_class(&m, 3), (1, false));
        assert_eq!(aggregate(&[&a]).unwrap(), a.to_vec());
        assert!(matches!(aggregate(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn uncertain_member_barely_moves_argmax() {
        let confident = [0.1, 0.8, 0.1, 0.0];
        let uncertain = [1e-4, 1e-4, 2e-4, 0.9996];
        let m = aggregate(&[&confident, &uncertain]).unwrap();
        assert_eq!(argmax_class(&m, 3).0, 1);
    }

    #[test]
    fn balanced_accuracy_examples() {
        // recalls 1.0, 0.5, 0.75
        let labels = [0, 0, 1, 1, 2, 2, 2, 2];
        let preds = [0, 0, 1, 0, 2, 2, 2, 1];
        assert!(close(balanced_accuracy(&preds, &labels, 3).unwrap(), 0.75));
        assert!(close(balanced_accuracy(&labels, &labels, 3).unwrap(), 1.0));
        let balanced = [0, 1, 2, 0, 1, 2];
        assert!(close(balanced_accuracy(&[1; 6], &balanced, 3).unwrap(), 1.0 / 3.0));
        assert!(matches!(balanced_accuracy(&[0, 1], &[0, 1], 3), Err(Error::MissingClass(2))));
    }

    #[test]
    fn macro_f1_examples() {
        let labels = [0, 1, 2];
        assert!(close(macro_f1(&labels, &labels, 3).unwrap(), 1.0));
        assert!(close(macro_f1(&[1, 2, 0], &labels, 3).unwrap(), 0.0));
        // class 0: TP 1 FP 1 FN 0; class 1: TP 1 FP 0 FN 1
        assert!(close(macro_f1(&[0, 0, 1], &[0, 1, 1], 2).unwrap(), 2.0 / 3.0));
    }

    #[test]
    fn balanced_mae_examples() {
        let labels = [0, 0, 1, 1, 2, 2];
        let preds = [0, 1, 1, 1, 0, 2];
        assert!(close(balanced_mae(&preds, &labels, 3).unwrap(), 0.5));
        assert!(close(balanced_mae(&labels, &labels, 3).unwrap(), 0.0));
        assert!(close(balanced_mae(&[1, 1, 0, 2, 1, 1], &labels, 3).unwrap(), 1.0));
    }

    #[test]
    fn auroc_examples() {
        assert!(close(misclassification_auroc(&[0.9, 0.1], &[false, true]).unwrap(), 1.0));
        assert!(close(misclassification_auroc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5));
        let scores = [0.8, 0.4, 0.6, 0.2];
        let correct = [false, false, true, true];
        assert!(close(misclassification_auroc(&scores, &correct).unwrap(), 0.75));
        assert!(matches!(misclassification_auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClassFlags)));
    }

    #[test]
    fn sparsity_examples() {
        let mut one = vec![0.0; 5];
        one[2] = 3.0;
        assert!(close(sparsity_score(&[one], 5, 0.9).unwrap().0, 0.2));
        assert!(close(sparsity_score(&[vec![1.0; 10]], 10, 0.9).unwrap().0, 0.9));
        assert!(close(sparsity_score(&[vec![0.6, 0.35, 0.05]], 3, 0.9).unwrap().0, 2.0 / 3.0));
        let (s, skipped) = sparsity_score(&[vec![0.0, -1.0], vec![1.0, 0.0]], 2, 0.9).unwrap();
        assert!(close(s, 0.5));
        assert_eq!(skipped, 1);
    }

    #[test]
    fn diversity_examples() {
        let mut a = vec![0.0; 40];
        a[0] = 3.0;
        a[1] = 2.0;
        a[2] = 1.0;
        assert!(close(diversity_score(&[a.clone(), a.clone()], 40, 3).unwrap(), 3.0 / 40.0));
        let mut b = vec![0.0; 40];
        b[10] = 3.0;
        b[11] = 2.0;
        b[12] = 1.0;
        assert!(close(diversity_score(&[a, b], 40, 3).unwrap(), 6.0 / 40.0));
        let cover: Vec<Vec<f64>> = (0..2).map(|s| (0..6).map(|p| f64::from(u8::from(p / 3 == s))).collect()).collect();
        assert!(close(diversity_score(&cover, 6, 3).unwrap(), 1.0));
    }

    #[test]
    fn entropy_of_uniform_and_onehot() {
        assert!(close(prediction_entropy(&[1.0, 0.0, 0.0]), 0.0));
        assert!(close(prediction_entropy(&[0.2, 0.2, 0.2]), 3f64.ln()));
    }
}
