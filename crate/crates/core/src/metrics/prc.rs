use super::report::MetricReport;
use super::{EvalPair, MetricsConfig};
use crate::error::{Error, Result};

const COMPARABILITY_NOTE: &str =
    "summary is the mean of P(alpha) over the alpha grid; absolute values are only approximately comparable to curve-based reports";

fn embeddings(batch: &crate::SequenceBatch) -> Vec<Vec<f64>> {
    (0..batch.len()).map(|i| batch.flat_sequence(i)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_point(points: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; points[0].len()];
    for p in points {
        m.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= points.len() as f64);
    m
}

/// Fraction of `probe` inside the α-support of `reference`, per α. The
/// α-support is the ball around the reference mean whose radius is the
/// ⌈α·n⌉-th smallest reference distance to that mean (boundary included).
pub fn alpha_precision_curve(reference: &[Vec<f64>], probe: &[Vec<f64>], alphas: &[f64]) -> Vec<f64> {
    let center = mean_point(reference);
    let mut radii: Vec<f64> = reference.iter().map(|p| dist(p, &center)).collect();
    radii.sort_by(f64::total_cmp);
    let probe_dist: Vec<f64> = probe.iter().map(|p| dist(p, &center)).collect();
    alphas
        .iter()
        .map(|&a| {
            let rank = ((a * reference.len() as f64).ceil() as usize).clamp(1, reference.len());
            let r = radii[rank - 1];
            probe_dist.iter().filter(|&&d| d <= r).count() as f64 / probe.len() as f64
        })
        .collect()
}

/// Fraction of real points whose k-nearest-real-neighbour ball (self
/// excluded, boundary included) holds at least one synthetic point.
pub fn coverage(real: &[Vec<f64>], synthetic: &[Vec<f64>], k: usize) -> Result<f64> {
    if k == 0 || k >= real.len() {
        return Err(Error::config(
            "metrics.k",
            format!("k = {k} must lie in 1..{} for {} real sequences", real.len(), real.len()),
        ));
    }
    if synthetic.is_empty() {
        return Err(Error::InsufficientData("coverage needs synthetic sequences".into()));
    }
    let mut covered = 0usize;
    for (i, p) in real.iter().enumerate() {
        let mut d: Vec<f64> = real.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| dist(p, q)).collect();
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        let radius = d[k - 1];
        if synthetic.iter().any(|s| dist(p, s) <= radius) {
            covered += 1;
        }
    }
    Ok(covered as f64 / real.len() as f64)
}

pub struct PrcReports {
    pub alpha_precision: MetricReport,
    pub beta_recall: MetricReport,
    pub coverage: MetricReport,
}

/// α-precision, β-recall and coverage on flattened scaled sequences.
/// Deterministic, so each report holds a single run.
pub fn precision_recall_coverage(pair: &EvalPair, k: usize, alpha_grid: &[f64], config: &MetricsConfig) -> Result<PrcReports> {
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::config("metrics.alpha_grid", "values must lie in (0, 1)"));
    }
    let real = embeddings(pair.scaled_real());
    let syn = embeddings(pair.scaled_synthetic());
    let cov = coverage(&real, &syn, k)?;
    let precision = alpha_precision_curve(&real, &syn, alpha_grid);
    let recall = alpha_precision_curve(&syn, &real, alpha_grid);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let digest = config.digest();
    let deterministic = "deterministic: a single evaluation stands for every repetition";
    Ok(PrcReports {
        alpha_precision: MetricReport::from_runs("alpha_precision", vec![mean(&precision)], digest.clone(), 0)
            .with_aux("curve", precision)
            .with_aux("alpha", alpha_grid.to_vec())
            .with_note(COMPARABILITY_NOTE)
            .with_note(deterministic),
        beta_recall: MetricReport::from_runs("beta_recall", vec![mean(&recall)], digest.clone(), 0)
            .with_aux("curve", recall)
            .with_aux("beta", alpha_grid.to_vec())
            .with_note(COMPARABILITY_NOTE)
            .with_note(deterministic),
        coverage: MetricReport::from_runs("coverage", vec![cov], digest, 0)
            .with_aux("k", vec![k as f64])
            .with_note(deterministic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[[f64; 2]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn identity_and_disjoint() {
        let real = pts(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5], [2.0, 0.0]]);
        assert_eq!(coverage(&real, &real, 2).unwrap(), 1.0);
        let grid = vec![0.25, 0.5, 0.75];
        let curve = alpha_precision_curve(&real, &real, &grid);
        for (p, a) in curve.iter().zip(&grid) {
            assert!(p >= a);
        }
        let far: Vec<Vec<f64>> = real.iter().map(|p| vec![p[0] + 1e6, p[1]]).collect();
        assert_eq!(coverage(&real, &far, 2).unwrap(), 0.0);
        assert!(alpha_precision_curve(&real, &far, &grid).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn k_range() {
        let real = pts(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(coverage(&real, &real, 0).is_err());
        assert!(coverage(&real, &real, 2).is_err());
        assert!(coverage(&real, &real, 1).is_ok());
    }
}
