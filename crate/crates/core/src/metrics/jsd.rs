use super::report::MetricReport;
use super::{EvalPair, MetricsConfig};
use crate::error::{Error, Result};

/// Normalized histogram of `values` over `bins` equal-width bins on `[lo, hi]`.
/// The last bin is closed; a degenerate range puts everything in bin 0.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let width = hi - lo;
    for &v in values {
        let b = if width > 0.0 { (((v - lo) / width) * bins as f64).floor() as isize } else { 0 };
        counts[b.clamp(0, bins as isize - 1) as usize] += 1.0;
    }
    let total = values.len() as f64;
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / (0.5 * (pi + qi))).log2())
        .sum()
}

/// Base-2 Jensen–Shannon divergence, `½KL(P‖M) + ½KL(Q‖M)` with `M = (P+Q)/2`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions need the same support");
    // Summing the two halves in a fixed canonical order makes the result
    // exactly symmetric in floating point.
    let (a, b) = (0.5 * kl_to_mixture(p, q), 0.5 * kl_to_mixture(q, p));
    let (small, large) = if a <= b { (a, b) } else { (b, a) };
    (small + large).clamp(0.0, 1.0)
}

/// Mean over features of the JSD between pooled real and synthetic values.
/// Deterministic, so the report holds a single run.
pub fn jsd(pair: &EvalPair, bins: usize, config: &MetricsConfig) -> Result<MetricReport> {
    if bins < 2 {
        return Err(Error::config("metrics.jsd_bins", "must be at least 2"));
    }
    let (real, syn) = (pair.scaled_real().values(), pair.scaled_synthetic().values());
    if real.is_empty() || syn.is_empty() {
        return Err(Error::InsufficientData("JSD needs non-empty inputs".into()));
    }
    let dims = pair.real().dims();
    let mut per_feature = Vec::with_capacity(dims);
    for f in 0..dims {
        let r: Vec<f64> = real.index_axis(ndarray::Axis(2), f).iter().copied().collect();
        let s: Vec<f64> = syn.index_axis(ndarray::Axis(2), f).iter().copied().collect();
        let lo = r.iter().chain(&s).copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().chain(&s).copied().fold(f64::NEG_INFINITY, f64::max);
        per_feature.push(js_divergence(&histogram(&r, bins, lo, hi), &histogram(&s, bins, lo, hi)));
    }
    let mean = per_feature.iter().sum::<f64>() / dims as f64;
    Ok(MetricReport::from_runs("jsd", vec![mean], config.digest(), 0)
        .with_aux("per_feature", per_feature)
        .with_note("deterministic: a single evaluation stands for every repetition"))
}
