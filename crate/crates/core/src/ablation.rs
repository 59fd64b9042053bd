//! The four-row ablation grid: the full model and three single-mechanism removals.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{Evaluation, SplitMetrics};
use crate::synth::{Dataset, Split};
use crate::train::{evaluate_epoch, train, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// No uncertainty prototypes or row; cross-entropy replaces the
    /// abstention loss and misclassification is scored by entropy.
    NoUncertainty,
    /// Cluster and separation weights set to zero.
    NoClusterSep,
    /// Trained end-to-end without ever projecting prototypes.
    NoPush,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoUncertainty, Variant::NoClusterSep, Variant::NoPush];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoUncertainty => "no_uncertainty",
            Variant::NoClusterSep => "no_cluster_sep",
            Variant::NoPush => "no_push",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full model",
            Variant::NoUncertainty => "w/o L_abs, uncertainty prototypes",
            Variant::NoClusterSep => "w/o L_clst, L_sep",
            Variant::NoPush => "w/o push",
        }
    }

    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoUncertainty => c.uncertainty = false,
            Variant::NoClusterSep => {
                c.lambdas.clst = 0.0;
                c.lambdas.sep = 0.0;
            }
            Variant::NoPush => c.push_enabled = false,
        }
        c
    }
}

/// Test-split clip-level numbers for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub balanced_accuracy: Option<f64>,
    pub balanced_mae: Option<f64>,
    pub misclassification_auroc: Option<f64>,
    pub sparsity: Option<f64>,
    pub diversity: Option<f64>,
    pub metrics: SplitMetrics,
}

pub struct AblationRun {
    pub variant: Variant,
    pub config: RunConfig,
    pub outcome: TrainOutcome,
    pub test: Evaluation,
}

impl AblationRun {
    pub fn row(&self) -> AblationRow {
        let m = &self.test.metrics;
        AblationRow {
            variant: self.variant,
            balanced_accuracy: m.clip.balanced_accuracy,
            balanced_mae: m.clip.balanced_mae,
            misclassification_auroc: m.clip.misclassification_auroc,
            sparsity: m.sparsity,
            diversity: m.diversity,
            metrics: m.clone(),
        }
    }
}

/// Trains and tests one variant; artifacts go to `root/<variant>/` when a
/// root is given.
pub fn run_variant(base: &RunConfig, variant: Variant, dataset: &Dataset, root: Option<&Path>) -> Result<AblationRun> {
    let config = variant.apply(base);
    let dir = root.map(|r| r.join(variant.name()));
    let outcome = train(&config, dataset, dir.as_deref())?;
    let test_set = dataset.split(Split::Test);
    let test = evaluate_epoch(&outcome.best.model, &config, Split::Test, &test_set)?;
    if let Some(d) = &dir {
        test.metrics.save(&d.join("metrics_test.json"))?;
    }
    Ok(AblationRun {
        variant,
        config,
        outcome,
        test,
    })
}

pub fn run_ablation(base: &RunConfig, dataset: &Dataset, root: Option<&Path>) -> Result<Vec<AblationRun>> {
    Variant::ALL.iter().map(|&v| run_variant(base, v, dataset, root)).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

/// Markdown table with one row per variant.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| configuration | bACC | bMAE | AUROC(y!=y_hat) | sparsity | diversity |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            r.variant.label(),
            cell(r.balanced_accuracy),
            cell(r.balanced_mae),
            cell(r.misclassification_auroc),
            cell(r.sparsity),
            cell(r.diversity)
        );
    }
    out
}

pub fn save_rows(rows: &[AblationRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("ablation.json");
    let text = serde_json::to_string_pretty(rows).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let md = dir.join("ablation.md");
    std::fs::write(&md, format_table(rows)).map_err(|e| Error::io(&md, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_variant_changes_one_mechanism() {
        let base = RunConfig::default();
        assert_eq!(Variant::Full.apply(&base), base);
        let a = Variant::NoUncertainty.apply(&base);
        assert!(!a.uncertainty);
        assert_eq!(a.lambdas, base.lambdas);
        let b = Variant::NoClusterSep.apply(&base);
        assert_eq!((b.lambdas.clst, b.lambdas.sep), (0.0, 0.0));
        assert_eq!(b.lambdas.orth, base.lambdas.orth);
        assert!(b.push_enabled && b.uncertainty);
        let c = Variant::NoPush.apply(&base);
        assert!(!c.push_enabled);
        assert_eq!(c.lambdas, base.lambdas);
    }
}
