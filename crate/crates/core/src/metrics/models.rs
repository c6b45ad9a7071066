use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::batch::SequenceBatch;
use crate::error::{Error, Result};
use crate::nn::{self, Adam, EncoderShape, EncoderTrunk, Init, Linear, ParamStore, Precision};
use crate::rng::SeedRng;

/// Capacity and training budget shared by the classifier behind LDS and the
/// predictor behind LPS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    /// Defaults to `4 * hidden_dim`.
    #[serde(default)]
    pub feedforward_dim: Option<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Fraction of each class held out for testing the classifier.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_hidden() -> usize {
    64
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    2
}
fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_test_fraction() -> f64 {
    0.2
}

impl Default for MetricModelConfig {
    fn default() -> Self {
        MetricModelConfig {
            hidden_dim: default_hidden(),
            num_layers: default_layers(),
            num_heads: default_heads(),
            feedforward_dim: None,
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            test_fraction: default_test_fraction(),
            precision: Precision::default(),
        }
    }
}

impl MetricModelConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("metrics.model.{f}");
        if self.hidden_dim == 0 {
            return Err(Error::config(field("hidden_dim"), "must be at least 1"));
        }
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::config(
                field("num_heads"),
                format!("hidden_dim {} is not divisible by num_heads {}", self.hidden_dim, self.num_heads),
            ));
        }
        if self.feedforward_dim == Some(0) {
            return Err(Error::config(field("feedforward_dim"), "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(field("batch_size"), "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(field("learning_rate"), "must be positive and finite"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config(field("test_fraction"), "must lie in (0, 1)"));
        }
        Ok(())
    }

    fn shape(&self) -> EncoderShape {
        EncoderShape {
            hidden: self.hidden_dim,
            layers: self.num_layers,
            heads: self.num_heads,
            feedforward: self.feedforward_dim.unwrap_or(4 * self.hidden_dim),
            dropout: 0.0,
        }
    }
}

/// Rows `steps` of the given sequences, flattened row-major.
pub(crate) fn gather(batch: &SequenceBatch, indices: &[usize], steps: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * steps.len() * batch.dims());
    for &i in indices {
        let seq = batch.sequence(i);
        for s in steps.clone() {
            out.extend(seq.row(s).iter().copied());
        }
    }
    out
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// `log(1 + exp(u))`, computed without overflow.
fn softplus(u: &Tensor) -> Result<Tensor> {
    Ok((u.relu()? + (u.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

/// Transformer real/synthetic classifier: encoder trunk, mean pool over
/// steps, and a zero-initialized scalar head `z`. The two class logits are
/// `(z, −z)`, so cross-entropy reduces to `softplus(−2·y·z)` with `y = ±1`.
pub struct SequenceClassifier {
    store: ParamStore,
    trunk: EncoderTrunk,
    head: Linear,
    seq_len: usize,
    features: usize,
}

impl SequenceClassifier {
    pub fn new(config: &MetricModelConfig, seq_len: usize, features: usize, rng: &mut SeedRng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.precision);
        let trunk = EncoderTrunk::new(&mut store, "trunk", features, seq_len, config.shape(), rng)?;
        let head = Linear::with_init(&mut store, "head", config.hidden_dim, 1, Init::Zeros, Init::Zeros, rng)?;
        Ok(SequenceClassifier { store, trunk, head, seq_len, features })
    }

    /// `z` for each sequence of a flattened `[B, N, D]` buffer; positive means class 1.
    fn margin(&self, flat: Vec<f64>, count: usize) -> Result<Tensor> {
        let x = nn::tensor_from(&self.store, flat, &[count, self.seq_len, self.features])?;
        let pooled = self.trunk.forward(&x, None)?.mean(1)?;
        Ok(self.head.forward(&pooled)?.squeeze(D::Minus1)?)
    }

    /// Trains on `(sequence, label)` pairs with labels in {+1, −1}.
    pub fn fit(
        &mut self,
        data: &SequenceBatch,
        indices: &[usize],
        labels: &[f64],
        config: &MetricModelConfig,
        rng: &mut SeedRng,
    ) -> Result<()> {
        let mut optimizer = Adam::new(&self.store, config.learning_rate, None)?;
        for _ in 0..config.epochs {
            let order = crate::rng::permutation(rng, indices.len());
            for chunk in order.chunks(config.batch_size) {
                let idx: Vec<usize> = chunk.iter().map(|&j| indices[j]).collect();
                let y: Vec<f64> = chunk.iter().map(|&j| -2.0 * labels[j]).collect();
                let z = self.margin(gather(data, &idx, 0..self.seq_len), idx.len())?;
                let y = nn::tensor_from(&self.store, y, &[idx.len()])?;
                let loss = softplus(&z.mul(&y)?)?.mean_all()?;
                let value = scalar(&loss)?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss(value));
                }
                optimizer.backward_step(&loss)?;
            }
        }
        Ok(())
    }

    /// Margins `z` for the given sequences.
    pub fn margins(&self, data: &SequenceBatch, indices: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(256) {
            out.extend(nn::to_host(&self.margin(gather(data, chunk, 0..self.seq_len), chunk.len())?)?);
        }
        Ok(out)
    }
}

/// Forecaster for the last `horizon` steps given the preceding ones. The
/// zero-initialized head predicts an offset from the last observed value, so
/// an untrained model is exactly the last-value-copy baseline.
pub struct SequencePredictor {
    store: ParamStore,
    trunk: EncoderTrunk,
    head: Linear,
    context: usize,
    horizon: usize,
    features: usize,
}

impl SequencePredictor {
    pub fn new(
        config: &MetricModelConfig,
        seq_len: usize,
        features: usize,
        horizon: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        config.validate()?;
        if horizon == 0 || horizon >= seq_len {
            return Err(Error::config(
                "metrics.horizon",
                format!("horizon {horizon} must lie in 1..{seq_len} for sequences of length {seq_len}"),
            ));
        }
        let context = seq_len - horizon;
        let mut store = ParamStore::new(config.precision);
        let trunk = EncoderTrunk::new(&mut store, "trunk", features, context, config.shape(), rng)?;
        let head = Linear::with_init(
            &mut store,
            "head",
            config.hidden_dim,
            horizon * features,
            Init::Zeros,
            Init::Zeros,
            rng,
        )?;
        Ok(SequencePredictor { store, trunk, head, context, horizon, features })
    }

    fn forecast(&self, data: &SequenceBatch, indices: &[usize]) -> Result<Tensor> {
        let b = indices.len();
        let x = nn::tensor_from(&self.store, gather(data, indices, 0..self.context), &[b, self.context, self.features])?;
        let h = self.trunk.forward(&x, None)?;
        let last_hidden = h.narrow(1, self.context - 1, 1)?.squeeze(1)?;
        let delta = self.head.forward(&last_hidden)?.reshape((b, self.horizon, self.features))?;
        let last_value = x.narrow(1, self.context - 1, 1)?;
        Ok(delta.broadcast_add(&last_value)?)
    }

    fn target(&self, data: &SequenceBatch, indices: &[usize]) -> Result<Tensor> {
        let range = self.context..self.context + self.horizon;
        nn::tensor_from(&self.store, gather(data, indices, range), &[indices.len(), self.horizon, self.features])
    }

    /// Minimizes the squared forecast error over every sequence of `data`.
    pub fn fit(&mut self, data: &SequenceBatch, config: &MetricModelConfig, rng: &mut SeedRng) -> Result<()> {
        let mut optimizer = Adam::new(&self.store, config.learning_rate, None)?;
        for _ in 0..config.epochs {
            let order = crate::rng::permutation(rng, data.len());
            for chunk in order.chunks(config.batch_size) {
                let loss = (self.forecast(data, chunk)? - self.target(data, chunk)?)?.sqr()?.mean_all()?;
                let value = scalar(&loss)?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss(value));
                }
                optimizer.backward_step(&loss)?;
            }
        }
        Ok(())
    }

    /// Mean absolute forecast error over every element of every sequence.
    pub fn mae(&self, data: &SequenceBatch) -> Result<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        let mut total = 0.0;
        for chunk in all.chunks(256) {
            let err = (self.forecast(data, chunk)? - self.target(data, chunk)?)?.abs()?;
            total += scalar(&err.to_dtype(DType::F64)?.sum_all()?)?;
        }
        Ok(total / (data.len() * self.horizon * self.features) as f64)
    }
}
