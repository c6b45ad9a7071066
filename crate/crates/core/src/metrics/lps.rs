use super::models::SequencePredictor;
use super::report::MetricReport;
use super::{repeat, EvalPair, MetricsConfig};
use crate::batch::SequenceBatch;
use crate::error::{Error, Result};
use crate::rng;

/// MAE of forecasting the last `horizon` steps by repeating the last observed
/// value. This is what an untrained [`SequencePredictor`] outputs.
pub fn mae_last_value_copy(batch: &SequenceBatch, horizon: usize) -> Result<f64> {
    let n = batch.seq_len();
    if horizon == 0 || horizon >= n {
        return Err(Error::config("metrics.horizon", format!("horizon {horizon} must lie in 1..{n}")));
    }
    let mut total = 0.0;
    for i in 0..batch.len() {
        let seq = batch.sequence(i);
        let last = seq.row(n - horizon - 1);
        for s in n - horizon..n {
            total += seq.row(s).iter().zip(last.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
    }
    Ok(total / (batch.len() * horizon * batch.dims()) as f64)
}

/// Train-on-synthetic, test-on-real forecast MAE in scaled space.
/// `horizon = 1` is LPS; `horizon = 5` is the five-steps-ahead score.
pub fn lps(pair: &EvalPair, horizon: usize, config: &MetricsConfig, seed: u64) -> Result<MetricReport> {
    config.validate()?;
    let n = pair.real().seq_len();
    if horizon == 0 || horizon >= n {
        return Err(Error::config(
            "metrics.horizon",
            format!("horizon {horizon} must be smaller than the sequence length {n}"),
        ));
    }
    let label = if horizon == 1 { "lps".to_string() } else if horizon == 5 { "plus_five_steps".to_string() } else { format!("lps_h{horizon}") };
    let runs = repeat(config.repetitions, config.parallelism, |r| {
        let mut rng = rng::child(seed, &label, r as u64);
        let (real, syn) = (pair.scaled_real(), pair.scaled_synthetic());
        let mut model = SequencePredictor::new(&config.model, n, real.dims(), horizon, &mut rng)?;
        model.fit(syn, &config.model, &mut rng)?;
        model.mae(real)
    })?;
    Ok(MetricReport::from_runs(&label, runs, config.digest(), seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_value_copy_by_hand() {
        // one sequence, 4 steps, 1 feature: 0, 1, 3, 6
        let b = SequenceBatch::from_flat(1, 4, 1, vec![0.0, 1.0, 3.0, 6.0]).unwrap();
        assert_eq!(mae_last_value_copy(&b, 1).unwrap(), 3.0);
        assert_eq!(mae_last_value_copy(&b, 2).unwrap(), (2.0 + 5.0) / 2.0);
        assert!(mae_last_value_copy(&b, 4).is_err());
    }
}
