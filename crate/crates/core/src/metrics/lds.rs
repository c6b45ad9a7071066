use std::cmp::Ordering;

use super::models::SequenceClassifier;
use super::report::MetricReport;
use super::{repeat, EvalPair, MetricsConfig};
use crate::batch::SequenceBatch;
use crate::error::{Error, Result};
use crate::rng::{self, SeedRng};

const MIN_PER_SIDE: usize = 32;
const MAX_IMBALANCE: f64 = 0.10;

/// `|0.5 − accuracy|`
pub fn discriminative_score(accuracy: f64) -> f64 {
    (0.5 - accuracy).abs()
}

/// Outcome of one classifier run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdsRun {
    pub accuracy: f64,
    pub score: f64,
    pub f1_real: f64,
    pub f1_synthetic: f64,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn f1(tp: f64, fp: f64, fn_: f64) -> f64 {
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

/// Pools both sides in a content-defined order, so that exchanging which side
/// is called "real" changes only the labels. Returns the pooled batch and
/// labels (+1 real, −1 synthetic).
fn pooled(pair: &EvalPair) -> Result<(SequenceBatch, Vec<f64>)> {
    let all = pair.scaled_real().concat(pair.scaled_synthetic())?;
    let n_real = pair.real().len();
    let flat: Vec<Vec<f64>> = (0..all.len()).map(|i| all.flat_sequence(i)).collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&flat[a], &flat[b]));
    let labels = order.iter().map(|&i| if i < n_real { 1.0 } else { -1.0 }).collect();
    Ok((all.select(&order), labels))
}

/// One train/test split, training and scoring.
pub(crate) fn lds_run(pair: &EvalPair, config: &MetricsConfig, rng: &mut SeedRng) -> Result<LdsRun> {
    let (data, labels) = pooled(pair)?;
    let n_real = labels.iter().filter(|&&y| y > 0.0).count();
    let n_syn = labels.len() - n_real;
    let frac = config.model.test_fraction;
    let quota_real = (frac * n_real as f64).round() as usize;
    let quota_syn = (frac * n_syn as f64).round() as usize;

    let order = rng::permutation(rng, labels.len());
    let (mut test, mut train) = (Vec::new(), Vec::new());
    let (mut taken_real, mut taken_syn) = (0, 0);
    for i in order {
        let slot = if labels[i] > 0.0 { &mut taken_real } else { &mut taken_syn };
        let quota = if labels[i] > 0.0 { quota_real } else { quota_syn };
        if *slot < quota {
            *slot += 1;
            test.push(i);
        } else {
            train.push(i);
        }
    }
    let (train_real, train_syn) = (n_real - quota_real, n_syn - quota_syn);
    let imbalance = train_real.abs_diff(train_syn) as f64 / train_real.max(train_syn) as f64;
    if imbalance > MAX_IMBALANCE {
        return Err(Error::Data(format!(
            "class imbalance {:.3} exceeds {MAX_IMBALANCE} ({train_real} real vs {train_syn} synthetic training sequences)",
            imbalance
        )));
    }

    let train_labels: Vec<f64> = train.iter().map(|&i| labels[i]).collect();
    let mut model = SequenceClassifier::new(&config.model, data.seq_len(), data.dims(), rng)?;
    model.fit(&data, &train, &train_labels, &config.model, rng)?;
    let margins = model.margins(&data, &test)?;

    // A margin of exactly zero is a tie and counts as half right either way.
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&i, &z) in test.iter().zip(&margins) {
        let real = labels[i] > 0.0;
        let (p1, p0) = match z.partial_cmp(&0.0) {
            Some(Ordering::Greater) => (1.0, 0.0),
            Some(Ordering::Less) => (0.0, 1.0),
            _ => (0.5, 0.5),
        };
        if real {
            tp += p1;
            fn_ += p0;
        } else {
            fp += p1;
            tn += p0;
        }
    }
    let accuracy = (tp + tn) / test.len() as f64;
    Ok(LdsRun {
        accuracy,
        score: discriminative_score(accuracy),
        f1_real: f1(tp, fp, fn_),
        f1_synthetic: f1(tn, fn_, fp),
    })
}

/// Discriminative score over `config.repetitions` runs. Run `r` uses the
/// child seed `(seed, "lds", r)`.
pub fn lds(pair: &EvalPair, config: &MetricsConfig, seed: u64) -> Result<MetricReport> {
    config.validate()?;
    let (n_real, n_syn) = (pair.real().len(), pair.synthetic().len());
    if n_real < MIN_PER_SIDE || n_syn < MIN_PER_SIDE {
        return Err(Error::InsufficientData(format!(
            "LDS needs at least {MIN_PER_SIDE} sequences per side, got {n_real} real and {n_syn} synthetic"
        )));
    }
    let runs = repeat(config.repetitions, config.parallelism, |r| {
        lds_run(pair, config, &mut rng::child(seed, "lds", r as u64))
    })?;
    Ok(MetricReport::from_runs("lds", runs.iter().map(|r| r.score).collect(), config.digest(), seed)
        .with_aux("accuracy", runs.iter().map(|r| r.accuracy).collect())
        .with_aux("f1_real", runs.iter().map(|r| r.f1_real).collect())
        .with_aux("f1_synthetic", runs.iter().map(|r| r.f1_synthetic).collect()))
}
