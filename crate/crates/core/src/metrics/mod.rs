//! Evaluation of synthetic sequences against held-out real data.
//!
//! | metric | direction | range |
//! |---|---|---|
//! | LDS: `|0.5 − accuracy|` of a transformer real/synthetic classifier | lower | [0, 0.5] |
//! | LPS: next-step MAE of a predictor trained on synthetic, tested on real | lower | ≥ 0 |
//! | +5 steps: the same with a five-step horizon | lower | ≥ 0 |
//! | JSD: base-2 Jensen–Shannon divergence of per-feature histograms | lower | [0, 1] |
//! | α-precision, β-recall, coverage | higher | [0, 1] |
//!
//! Every metric model and distance is computed in scaled space, using the
//! scaler attached to the [`EvalPair`].

mod jsd;
mod lds;
mod lps;
mod models;
mod prc;
mod report;

pub use jsd::{histogram, js_divergence, jsd};
pub use lds::{discriminative_score, lds, LdsRun};
pub use lps::{lps, mae_last_value_copy};
pub use models::{MetricModelConfig, SequenceClassifier, SequencePredictor};
pub use prc::{alpha_precision_curve, coverage, precision_recall_coverage, PrcReports};
pub use report::{render_table, MetricReport, TableRow};

use serde::{Deserialize, Serialize};

use crate::batch::SequenceBatch;
use crate::dataset::{self, ScalerState, DEFAULT_RANGE};
use crate::error::{Error, Result};

/// Held-out real sequences and synthetic sequences, both in original units,
/// plus the scaler that maps them into model space.
#[derive(Debug, Clone)]
pub struct EvalPair {
    real: SequenceBatch,
    synthetic: SequenceBatch,
    scaler: ScalerState,
    scaled_real: SequenceBatch,
    scaled_synthetic: SequenceBatch,
}

impl EvalPair {
    /// Fits the scaler on the real side.
    pub fn new(real: SequenceBatch, synthetic: SequenceBatch) -> Result<Self> {
        if real.is_empty() {
            return Err(Error::InsufficientData("real set is empty".into()));
        }
        let scaler = ScalerState::fit(&real, DEFAULT_RANGE.0, DEFAULT_RANGE.1)?;
        Self::with_scaler(real, synthetic, scaler)
    }

    pub fn with_scaler(real: SequenceBatch, synthetic: SequenceBatch, scaler: ScalerState) -> Result<Self> {
        if real.is_empty() || synthetic.is_empty() {
            return Err(Error::InsufficientData(format!(
                "evaluation needs non-empty sets, got {} real and {} synthetic sequences",
                real.len(),
                synthetic.len()
            )));
        }
        real.check_compatible(&synthetic)?;
        scaler.validate()?;
        let scaled_real = dataset::scale(&real, &scaler)?;
        let scaled_synthetic = dataset::scale(&synthetic, &scaler)?;
        Ok(EvalPair { real, synthetic, scaler, scaled_real, scaled_synthetic })
    }

    pub fn real(&self) -> &SequenceBatch {
        &self.real
    }

    pub fn synthetic(&self) -> &SequenceBatch {
        &self.synthetic
    }

    pub fn scaler(&self) -> &ScalerState {
        &self.scaler
    }

    pub fn scaled_real(&self) -> &SequenceBatch {
        &self.scaled_real
    }

    pub fn scaled_synthetic(&self) -> &SequenceBatch {
        &self.scaled_synthetic
    }

    /// The same data with the roles exchanged (scaler unchanged).
    pub fn swapped(&self) -> EvalPair {
        EvalPair {
            real: self.synthetic.clone(),
            synthetic: self.real.clone(),
            scaler: self.scaler.clone(),
            scaled_real: self.scaled_synthetic.clone(),
            scaled_synthetic: self.scaled_real.clone(),
        }
    }
}

/// Which metrics to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Lds,
    Lps,
    PlusFiveSteps,
    Jsd,
    PrecisionRecallCoverage,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Lds,
        MetricKind::Lps,
        MetricKind::Jsd,
        MetricKind::PrecisionRecallCoverage,
        MetricKind::PlusFiveSteps,
    ];

    pub fn parse(name: &str) -> Option<MetricKind> {
        match name {
            "lds" => Some(MetricKind::Lds),
            "lps" => Some(MetricKind::Lps),
            "plus_five_steps" | "+5" | "plus5" => Some(MetricKind::PlusFiveSteps),
            "jsd" => Some(MetricKind::Jsd),
            "prc" | "precision_recall_coverage" => Some(MetricKind::PrecisionRecallCoverage),
            _ => None,
        }
    }
}

/// Settings for the whole suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Independent repetitions of the model-based metrics.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub model: MetricModelConfig,
    #[serde(default = "default_bins")]
    pub jsd_bins: usize,
    /// Neighbourhood size for coverage.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    /// Worker threads for repetitions; 1 keeps runs byte-reproducible.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_repetitions() -> usize {
    10
}

fn default_bins() -> usize {
    50
}

fn default_k() -> usize {
    5
}

fn default_parallelism() -> usize {
    1
}

/// {0.05, 0.10, ..., 0.95}
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            repetitions: default_repetitions(),
            model: MetricModelConfig::default(),
            jsd_bins: default_bins(),
            k: default_k(),
            alpha_grid: default_alpha_grid(),
            parallelism: default_parallelism(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("metrics.repetitions", "must be at least 1"));
        }
        if self.jsd_bins < 2 {
            return Err(Error::config("metrics.jsd_bins", "must be at least 2"));
        }
        if self.k == 0 {
            return Err(Error::config("metrics.k", "must be at least 1"));
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::config("metrics.alpha_grid", "values must lie in (0, 1)"));
        }
        if self.parallelism == 0 {
            return Err(Error::config("metrics.parallelism", "must be at least 1"));
        }
        self.model.validate()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Runs `f(run)` for every repetition, on `parallelism` threads when > 1.
/// Results keep run order.
pub(crate) fn repeat<T: Send>(
    runs: usize,
    parallelism: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if parallelism <= 1 || runs <= 1 {
        return (0..runs).map(f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::config("metrics.parallelism", e.to_string()))?;
    pool.install(|| (0..runs).into_par_iter().map(f).collect())
}

/// Runs the selected metrics and returns their reports in a fixed order.
pub fn evaluate(pair: &EvalPair, config: &MetricsConfig, kinds: &[MetricKind], seed: u64) -> Result<Vec<MetricReport>> {
    config.validate()?;
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let mut reports = Vec::new();
    for kind in kinds {
        match kind {
            MetricKind::Lds => reports.push(lds(pair, config, seed)?),
            MetricKind::Lps => reports.push(lps(pair, 1, config, seed)?),
            MetricKind::PlusFiveSteps => reports.push(lps(pair, 5, config, seed)?),
            MetricKind::Jsd => reports.push(jsd(pair, config.jsd_bins, config)?),
            MetricKind::PrecisionRecallCoverage => {
                let prc = precision_recall_coverage(pair, config.k, &config.alpha_grid, config)?;
                reports.extend([prc.alpha_precision, prc.beta_recall, prc.coverage]);
            }
        }
    }
    Ok(reports)
}
