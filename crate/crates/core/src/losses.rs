//! Training objective terms and their gradients.
//!
//! Each term comes as a value function plus a gradient routine with respect
//! to the quantity it consumes (logits, similarities, bank vectors, head
//! weights or occurrence maps). Composition into encoder gradients happens in
//! [`crate::model`].

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::Lambdas;
use crate::types::{softmax, BankLayout, HeadWeights, PrototypeTag};

/// Lower bound applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Alpha is clamped to `1 - ALPHA_EPS` inside the abstention loss.
pub const ALPHA_EPS: f64 = 1e-7;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub abs: f64,
    pub clst: f64,
    pub sep: f64,
    pub orth: f64,
    pub trns: f64,
    pub norm: f64,
    pub total: f64,
}

/// Weighted sum of the terms; the abstention term enters unweighted since
/// its own regularizer is already inside it.
pub fn total_loss(abs: f64, clst: f64, sep: f64, orth: f64, trns: f64, norm: f64, l: &Lambdas) -> LossBreakdown {
    LossBreakdown {
        abs,
        clst,
        sep,
        orth,
        trns,
        norm,
        total: abs + l.clst * clst + l.sep * sep + l.orth * orth + l.trns * trns + l.norm * norm,
    }
}

/// Value of the abstention loss and whether alpha had to be clamped.
///
/// `CrsEnt((1 - a) p + a y, y) - lambda * ln(1 - a)` with `y` one-hot.
pub fn abstention_loss(class_probs: &[f64], alpha: f64, label: usize, lambda_abs: f64) -> (f64, bool) {
    let saturated = alpha >= 1.0 - ALPHA_EPS;
    let a = alpha.min(1.0 - ALPHA_EPS);
    let mixed = (1.0 - a) * class_probs[label] + a;
    (-mixed.max(PROB_FLOOR).ln() - lambda_abs * (1.0 - a).ln(), saturated)
}

/// Abstention loss evaluated from head logits (`C + 1` entries) with its
/// gradient with respect to those logits.
pub fn abstention_from_logits(logits: &[f64], label: usize, lambda_abs: f64) -> (f64, Array1<f64>, bool) {
    let c = logits.len() - 1;
    let class_probs = softmax(&logits[..c]);
    let joint = softmax(logits);
    let alpha = joint[c];
    let (loss, saturated) = abstention_loss(&class_probs, alpha, label, lambda_abs);

    let mut grad = Array1::zeros(c + 1);
    let a = alpha.min(1.0 - ALPHA_EPS);
    let py = class_probs[label];
    let raw = (1.0 - a) * py + a;
    let q = raw.max(PROB_FLOOR);
    let d_py = if raw > PROB_FLOOR { -(1.0 - a) / q } else { 0.0 };
    let mut d_alpha = if raw > PROB_FLOOR { -(1.0 - py) / q } else { 0.0 };
    d_alpha += lambda_abs / (1.0 - a);
    if saturated {
        d_alpha = 0.0;
    }
    for j in 0..c {
        let kron = if j == label { 1.0 } else { 0.0 };
        grad[j] += d_py * py * (kron - class_probs[j]);
    }
    for j in 0..=c {
        let kron = if j == c { 1.0 } else { 0.0 };
        grad[j] += d_alpha * alpha * (kron - joint[j]);
    }
    (loss, grad, saturated)
}

/// Plain cross-entropy on class logits with its gradient, used when the
/// model has no uncertainty row.
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> (f64, Array1<f64>) {
    let probs = softmax(logits);
    let loss = -probs[label].max(PROB_FLOOR).ln();
    let mut grad = Array1::from(probs);
    grad[label] -= 1.0;
    (loss, grad)
}

/// Indices achieving the cluster and separation maxima (lowest index on ties).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterArgmax {
    pub own: Option<usize>,
    pub other: Option<usize>,
}

/// `(-max own-class similarity, max other-class similarity)`; uncertainty
/// prototypes take part in neither maximum.
pub fn cluster_sep_losses(similarities: &[f64], label: usize, tags: &[PrototypeTag]) -> (f64, f64, ClusterArgmax) {
    let mut own: Option<usize> = None;
    let mut other: Option<usize> = None;
    for (p, (&g, tag)) in similarities.iter().zip(tags).enumerate() {
        let slot = match tag {
            PrototypeTag::Class(c) if *c == label => &mut own,
            PrototypeTag::Class(_) => &mut other,
            PrototypeTag::Uncertainty => continue,
        };
        if slot.is_none_or(|best| g > similarities[best]) {
            *slot = Some(p);
        }
    }
    let clst = own.map_or(0.0, |p| -similarities[p]);
    let sep = other.map_or(0.0, |p| similarities[p]);
    (clst, sep, ClusterArgmax { own, other })
}

/// Gradient of `w_clst * clst + w_sep * sep` with respect to the similarities.
pub fn cluster_sep_grad(num: usize, argmax: ClusterArgmax, w_clst: f64, w_sep: f64) -> Array1<f64> {
    let mut g = Array1::zeros(num);
    if let Some(p) = argmax.own {
        g[p] -= w_clst;
    }
    if let Some(p) = argmax.other {
        g[p] += w_sep;
    }
    g
}

/// Sum of pairwise cosine similarities over the whole bank, and the number of
/// pairs skipped because one side has zero norm.
pub fn orthogonality_loss(bank: &Array2<f64>) -> (f64, u64) {
    let norms: Vec<f64> = bank.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
    let mut total = 0.0;
    let mut skipped = 0;
    for i in 0..bank.nrows() {
        for j in 0..i {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                skipped += 1;
                continue;
            }
            total += bank.row(i).dot(&bank.row(j)) / (norms[i] * norms[j]);
        }
    }
    (total, skipped)
}

/// Gradient of [`orthogonality_loss`]. With unit rows `u_i` and `s = sum u_j`,
/// `d/dp_i = (s - u_i - ((s - u_i) . u_i) u_i) / |p_i|`.
pub fn orthogonality_grad(bank: &Array2<f64>) -> Array2<f64> {
    let mut units = bank.clone();
    let mut norms = Vec::with_capacity(bank.nrows());
    for mut row in units.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        norms.push(n);
        if n > 0.0 {
            row /= n;
        } else {
            row.fill(0.0);
        }
    }
    let s = units.sum_axis(Axis(0));
    let mut grad = Array2::zeros(bank.raw_dim());
    for (i, mut g) in grad.axis_iter_mut(Axis(0)).enumerate() {
        if norms[i] == 0.0 {
            continue;
        }
        let u = units.row(i);
        let rest = &s - &u;
        let radial = rest.dot(&u);
        g.assign(&((&rest - &(&u * radial)) / norms[i]));
    }
    grad
}

/// Mean squared discrepancy between maps computed on the transformed input
/// and transformed maps of the original input, with gradients for both.
pub fn transformation_loss(
    maps_of_transformed: &Array2<f64>,
    transformed_maps: &Array2<f64>,
) -> (f64, Array2<f64>, Array2<f64>) {
    let diff = maps_of_transformed - transformed_maps;
    let n = diff.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let d_a = &diff * (2.0 / n);
    let d_b = -&d_a;
    (loss, d_a, d_b)
}

fn off_class(layout: &BankLayout, row: usize, p: usize) -> bool {
    layout.class_of(p).expect("index within head").head_row(layout.num_classes) != row
}

/// L1 norm of the head entries that connect a prototype to a row other than
/// its own.
pub fn head_norm_loss(head: &HeadWeights, layout: &BankLayout) -> f64 {
    head.weights
        .indexed_iter()
        .filter(|&((r, p), _)| off_class(layout, r, p))
        .map(|(_, w)| w.abs())
        .sum()
}

pub fn head_norm_grad(head: &HeadWeights, layout: &BankLayout) -> Array2<f64> {
    let mut g = Array2::zeros(head.weights.raw_dim());
    for ((r, p), &w) in head.weights.indexed_iter() {
        if off_class(layout, r, p) && w != 0.0 {
            g[[r, p]] = w.signum();
        }
    }
    g
}
