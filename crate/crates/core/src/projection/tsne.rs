use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{pooled_rows, EmbeddingProjection, ProjectionMeta};
use crate::batch::SequenceBatch;
use crate::error::{Error, Result};
use crate::rng::SeedRng;

const ENTROPY_TOL: f64 = 1e-5;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const KL_EVERY: usize = 50;
const KL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    #[serde(default = "default_perplexity")]
    pub perplexity: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Defaults to `n / 12`.
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

fn default_perplexity() -> f64 {
    30.0
}

fn default_iterations() -> usize {
    1000
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig { perplexity: default_perplexity(), iterations: default_iterations(), learning_rate: None }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.perplexity > 0.0 && self.perplexity.is_finite()) {
            return Err(Error::config("tsne.perplexity", "must be positive"));
        }
        if 3.0 * self.perplexity >= n as f64 {
            return Err(Error::config(
                "tsne.perplexity",
                format!("perplexity {} is infeasible for {n} points (needs 3 * perplexity < n)", self.perplexity),
            ));
        }
        if self.iterations < EXAGGERATION_ITERS {
            return Err(Error::config("tsne.iterations", format!("must be at least {EXAGGERATION_ITERS}")));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config("tsne.learning_rate", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Row `i` of the conditional affinities for squared distances `d` (self
/// excluded) at precision `beta`. Returns the row and its entropy in nats.
fn affinity_row(d: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let d_min = d.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (r, dj)) in row.iter_mut().zip(d).enumerate() {
        // Shift by the nearest distance so the largest weight is exp(0).
        *r = if j == i { 0.0 } else { (-(dj - d_min) * beta).exp() };
        sum += *r;
    }
    let mut weighted = 0.0;
    for (r, dj) in row.iter_mut().zip(d) {
        *r /= sum;
        weighted += *r * (dj - d_min);
    }
    sum.ln() + beta * weighted
}

/// Conditional affinities `p(j|i)` (row-major `[n, n]`) from squared
/// distances, with per-point precision binary-searched until the row entropy
/// matches `ln(perplexity)` within 1e-5. Also returns each row's perplexity.
pub fn conditional_affinities(sq_dist: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut achieved = vec![0.0; n];
    for i in 0..n {
        let d = &sq_dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        let row = &mut p[i * n..(i + 1) * n];
        let mut h = affinity_row(d, i, beta, row);
        for _ in 0..200 {
            let diff = h - target;
            if diff.abs() < ENTROPY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
            h = affinity_row(d, i, beta, row);
        }
        achieved[i] = h.exp();
    }
    (p, achieved)
}

fn kl(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qn)| pi * (pi / (qn / q_sum).max(1e-12)).ln())
        .sum()
}

/// Exact t-SNE of the pooled flattened sequences.
pub fn tsne_project(
    real: &SequenceBatch,
    synthetic: &SequenceBatch,
    config: &TsneConfig,
    rng: &mut SeedRng,
) -> Result<EmbeddingProjection> {
    let (rows, labels) = pooled_rows(real, synthetic)?;
    let n = rows.len();
    config.validate(n)?;
    let lr = config.learning_rate.unwrap_or(n as f64 / 12.0);

    let mut sq = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            sq[i * n + j] = d;
            sq[j * n + i] = d;
        }
    }
    let (cond, _) = conditional_affinities(&sq, n, config.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(rng), normal.sample(rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut trace = Vec::new();
    let mut flagged = false;
    let mut q_sum = 0.0;

    for iter in 0..config.iterations {
        let exaggeration = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if iter < EXAGGERATION_ITERS { 0.5 } else { 0.8 };
        q_sum = 0.0;
        for i in 0..n {
            num[i * n + i] = 0.0;
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                q_sum += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = num[i * n + j];
                let m = (exaggeration * p[i * n + j] - v / q_sum) * v;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grad[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { (gains[i][c] * 0.8f64).max(0.01) } else { gains[i][c] + 0.2 };
                update[i][c] = momentum * update[i][c] - lr * gains[i][c] * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        for c in 0..2 {
            let mean = y.iter().map(|p| p[c]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|p| p[c] -= mean);
        }
        if (iter + 1) % KL_EVERY == 0 && iter + 1 > EXAGGERATION_ITERS {
            let value = kl(&p, &num, q_sum);
            if let Some(&(_, prev)) = trace.last() {
                if value > prev + KL_TOL {
                    flagged = true;
                }
            }
            trace.push((iter + 1, value));
        }
    }
    let final_kl = kl(&p, &num, q_sum);
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: config.iterations, what: "t-SNE coordinates".into() });
    }
    Ok(EmbeddingProjection {
        coords: y,
        labels,
        meta: ProjectionMeta::Tsne {
            perplexity: config.perplexity,
            iterations: config.iterations,
            learning_rate: lr,
            final_kl,
            kl_trace: trace,
            kl_increase_flagged: flagged,
        },
    })
}
