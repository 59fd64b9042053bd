//! Occurrence-weighted pooling, shifted cosine similarity and the linear head.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::maps_to_cells;
use crate::error::{Error, Result};
use crate::types::{BankLayout, FeatureVolume, HeadWeights, OccurrenceVolume, PrototypeBank};

/// Pooled feature per prototype, `[P, D]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledFeatures {
    pub vectors: Array2<f64>,
}

/// Mean over cells of `|M_p| * F`, one row per prototype.
pub fn pool(features: &FeatureVolume, maps: &OccurrenceVolume) -> Result<PooledFeatures> {
    let (h, w, t, d) = features.values.dim();
    let (p, mh, mw, mt) = maps.values.dim();
    if (h, w, t) != (mh, mw, mt) {
        return Err(Error::shape("pool (H, W, T)", format!("{:?}", (h, w, t)), format!("{:?}", (mh, mw, mt))));
    }
    let f = features
        .values
        .to_owned()
        .into_shape_with_order((h * w * t, d))
        .expect("contiguous");
    let m = maps_to_cells(&maps.values);
    debug_assert_eq!(m.ncols(), p);
    Ok(PooledFeatures {
        vectors: pool_cells(&f, &m),
    })
}

/// [`pool`] on the `[cells, D]` / `[cells, P]` layout.
pub fn pool_cells(features: &Array2<f64>, maps: &Array2<f64>) -> Array2<f64> {
    let n = features.nrows() as f64;
    let abs = maps.mapv(f64::abs);
    abs.t().dot(features) / n
}

/// Gradients of a scalar with respect to the pooling inputs, given its
/// gradient `d_pooled` (`[P, D]`). The subgradient of `|m|` at zero is zero.
pub fn pool_backward(
    features: &Array2<f64>,
    maps: &Array2<f64>,
    d_pooled: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let n = features.nrows() as f64;
    let abs = maps.mapv(f64::abs);
    let d_features = abs.dot(d_pooled) / n;
    let mut d_maps = features.dot(&d_pooled.t()) / n;
    ndarray::Zip::from(&mut d_maps).and(maps).for_each(|g, &m| {
        *g *= if m > 0.0 {
            1.0
        } else if m < 0.0 {
            -1.0
        } else {
            0.0
        }
    });
    (d_features, d_maps)
}

/// Cosine similarity shifted to `[0, 1]`. Returns `None` when either operand
/// has zero norm; callers report 0.5 for that case.
pub fn try_similarity(f: ArrayView1<f64>, p: ArrayView1<f64>) -> Option<f64> {
    let nf = f.dot(&f).sqrt();
    let np = p.dot(&p).sqrt();
    if nf == 0.0 || np == 0.0 {
        return None;
    }
    let cos = (f.dot(&p) / (nf * np)).clamp(-1.0, 1.0);
    Some(0.5 * (1.0 + cos))
}

pub fn similarity(f: ArrayView1<f64>, p: ArrayView1<f64>) -> f64 {
    try_similarity(f, p).unwrap_or(0.5)
}

/// Gradient of [`similarity`] with respect to both operands; zero at the
/// degenerate point.
pub fn similarity_grad(f: ArrayView1<f64>, p: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
    let nf = f.dot(&f).sqrt();
    let np = p.dot(&p).sqrt();
    if nf == 0.0 || np == 0.0 {
        return (Array1::zeros(f.len()), Array1::zeros(p.len()));
    }
    let cos = f.dot(&p) / (nf * np);
    let df = (&p / (nf * np) - &f * (cos / (nf * nf))) * 0.5;
    let dp = (&f / (nf * np) - &p * (cos / (np * np))) * 0.5;
    (df, dp)
}

/// Similarity of every pooled row to its own prototype, plus the number of
/// degenerate (zero-norm) evaluations.
pub fn similarities(pooled: &Array2<f64>, bank: &PrototypeBank) -> (Array1<f64>, u64) {
    let mut degenerate = 0;
    let g = pooled
        .axis_iter(Axis(0))
        .zip(bank.vectors.axis_iter(Axis(0)))
        .map(|(f, p)| {
            try_similarity(f, p).unwrap_or_else(|| {
                degenerate += 1;
                0.5
            })
        })
        .collect();
    (g, degenerate)
}

/// Ones between each output row and its own prototypes, zeros elsewhere.
pub fn init_head(layout: &BankLayout) -> HeadWeights {
    let mut weights = Array2::zeros((layout.num_outputs(), layout.num_prototypes()));
    for (p, tag) in layout.tags().into_iter().enumerate() {
        weights[[tag.head_row(layout.num_classes), p]] = 1.0;
    }
    HeadWeights { weights }
}

/// `logits = W g`, no bias.
pub fn head_forward(similarities: &Array1<f64>, head: &HeadWeights) -> Array1<f64> {
    head.weights.dot(similarities)
}
