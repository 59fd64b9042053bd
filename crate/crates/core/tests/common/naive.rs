//! Brute-force metric definitions, written loop by loop from the metric
//! descriptions and independent of the library code.

pub fn balanced_accuracy(preds: &[usize], labels: &[usize], c: usize) -> f64 {
    let mut sum = 0.0;
    for class in 0..c {
        let mut total = 0usize;
        let mut hit = 0usize;
        for i in 0..labels.len() {
            if labels[i] == class {
                total += 1;
                if preds[i] == class {
                    hit += 1;
                }
            }
        }
        sum += hit as f64 / total as f64;
    }
    sum / c as f64
}

pub fn macro_f1(preds: &[usize], labels: &[usize], c: usize) -> f64 {
    let mut sum = 0.0;
    for class in 0..c {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for i in 0..labels.len() {
            match (preds[i] == class, labels[i] == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        // Harmonic mean of precision and recall, in count form.
        if tp > 0 {
            sum += (2 * tp) as f64 / (2 * tp + fp + fneg) as f64;
        }
    }
    sum / c as f64
}

pub fn balanced_mae(preds: &[usize], labels: &[usize], c: usize) -> f64 {
    let mut sum = 0.0;
    for class in 0..c {
        let mut total = 0usize;
        let mut err = 0usize;
        for i in 0..labels.len() {
            if labels[i] == class {
                total += 1;
                err += preds[i].abs_diff(class);
            }
        }
        sum += err as f64 / total as f64;
    }
    sum / c as f64
}

/// Pairwise count: a positive scored above a negative counts 1, a tie 1/2.
pub fn auroc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs as f64
}

/// Smallest k such that the k largest positive contributions reach the
/// coverage fraction of the positive total, averaged and divided by P.
pub fn sparsity(contributions: &[Vec<f64>], p: usize, coverage: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in contributions {
        let positive: Vec<f64> = c.iter().copied().filter(|v| *v > 0.0).collect();
        let total: f64 = positive.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let mut sorted = positive.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for k in 1..=sorted.len() {
            let top: f64 = sorted[..k].iter().sum();
            if top >= coverage * total {
                sum += k as f64;
                break;
            }
        }
        n += 1;
    }
    (n > 0).then(|| sum / n as f64 / p as f64)
}

/// A prototype is in a sample's top-k when fewer than k prototypes beat it,
/// where beating means a larger value, or an equal value at a lower index.
pub fn diversity(contributions: &[Vec<f64>], p: usize, k: usize) -> f64 {
    let mut used = 0usize;
    for q in 0..p {
        let mut appears = false;
        for c in contributions {
            let beaten_by = (0..p).filter(|&o| c[o] > c[q] || (c[o] == c[q] && o < q)).count();
            if beaten_by < k {
                appears = true;
            }
        }
        if appears {
            used += 1;
        }
    }
    used as f64 / p as f64
}
