//! Forward noising, the noise-prediction objective, the training loop and
//! ancestral sampling.

use candle_core::Tensor;
use ndarray::{Array3, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::SequenceBatch;
use crate::denoiser::{Denoiser, DenoiserModel};
use crate::error::{Error, Result};
use crate::nn::{self, Adam};
use crate::rng::{self, SeedRng};
use crate::schedule::NoiseSchedule;

/// A noised batch together with the steps and noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionStepSample {
    pub x_t: Array3<f64>,
    /// One-based diffusion step per batch element.
    pub t: Vec<usize>,
    pub epsilon: Array3<f64>,
}

/// Draws `xₜ = √ᾱₜ·x₀ + √(1−ᾱₜ)·ε` with `ε ~ N(0, I)` from `rng`.
pub fn forward_diffuse(
    x0: &SequenceBatch,
    t: &[usize],
    schedule: &NoiseSchedule,
    rng: &mut SeedRng,
) -> Result<DiffusionStepSample> {
    if t.len() != x0.len() {
        return Err(Error::Shape {
            expected: format!("{} diffusion steps", x0.len()),
            got: format!("{}", t.len()),
        });
    }
    let coefs = t
        .iter()
        .map(|&s| schedule.alpha_bar(s))
        .collect::<Result<Vec<f64>>>()?;
    let (b, n, d) = x0.values().dim();
    let epsilon = Array3::from_shape_vec((b, n, d), rng::standard_normal(rng, b * n * d)).expect("length matches");
    let mut x_t = x0.values().clone();
    for (i, &bar) in coefs.iter().enumerate() {
        let (signal, noise) = (bar.sqrt(), (1.0 - bar).sqrt());
        let mut lane = x_t.index_axis_mut(ndarray::Axis(0), i);
        Zip::from(&mut lane)
            .and(epsilon.index_axis(ndarray::Axis(0), i))
            .for_each(|x, &e| *x = signal * *x + noise * e);
    }
    Ok(DiffusionStepSample { x_t, t: t.to_vec(), epsilon })
}

fn to_tensor<M: Denoiser + ?Sized>(model: &M, values: &Array3<f64>) -> Result<Tensor> {
    let (b, n, d) = values.dim();
    let data: Vec<f64> = values.iter().copied().collect();
    Ok(Tensor::from_vec(data, (b, n, d), &candle_core::Device::Cpu)?.to_dtype(model.dtype())?)
}

/// Mean squared error between `ε` and `εθ(xₜ, t)`, averaged over batch,
/// sequence and feature axes. `dropout_rng` enables training-mode dropout.
pub fn loss_on_sample<M: Denoiser + ?Sized>(
    model: &M,
    sample: &DiffusionStepSample,
    dropout_rng: Option<&mut SeedRng>,
) -> Result<Tensor> {
    let x_t = to_tensor(model, &sample.x_t)?;
    let eps = to_tensor(model, &sample.epsilon)?;
    let pred = match dropout_rng {
        Some(r) => model.predict_train(&x_t, &sample.t, r)?,
        None => model.predict(&x_t, &sample.t)?,
    };
    Ok((pred - eps)?.sqr()?.mean_all()?)
}

/// Draws `t ~ U{1..T}` per element and noise, then evaluates the objective.
/// A non-finite loss is reported as [`Error::NonFiniteLoss`].
pub fn training_loss<M: Denoiser + ?Sized>(
    model: &M,
    x0: &SequenceBatch,
    schedule: &NoiseSchedule,
    rng: &mut SeedRng,
) -> Result<(Tensor, DiffusionStepSample)> {
    if x0.seq_len() != model.seq_len() || x0.dims() != model.feature_dim() {
        return Err(Error::Shape {
            expected: format!("[B, {}, {}]", model.seq_len(), model.feature_dim()),
            got: format!("[{}, {}, {}]", x0.len(), x0.seq_len(), x0.dims()),
        });
    }
    let steps = schedule.num_steps();
    let t: Vec<usize> = (0..x0.len()).map(|_| rng.random_range(1..=steps)).collect();
    let sample = forward_diffuse(x0, &t, schedule, rng)?;
    let loss = loss_on_sample(model, &sample, Some(rng))?;
    let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(value));
    }
    Ok((loss, sample))
}

/// Optimization settings. Defaults follow the reference setup: batch 256,
/// learning rate 1e-4, 5000 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Write a checkpoint every this many epochs (the final model is always written).
    #[serde(default)]
    pub checkpoint_interval: Option<usize>,
    /// Global gradient-norm clipping threshold; off by default.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Abort after this many consecutive non-finite losses.
    #[serde(default = "default_max_nonfinite")]
    pub max_nonfinite_steps: usize,
}

fn default_epochs() -> usize {
    5000
}

fn default_batch() -> usize {
    256
}

fn default_lr() -> f64 {
    1e-4
}

fn default_max_nonfinite() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            checkpoint_interval: None,
            grad_clip: None,
            max_nonfinite_steps: default_max_nonfinite(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive and finite"));
        }
        if self.checkpoint_interval == Some(0) {
            return Err(Error::config("train.checkpoint_interval", "must be at least 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("train.grad_clip", "must be positive and finite"));
            }
        }
        if self.max_nonfinite_steps == 0 {
            return Err(Error::config("train.max_nonfinite_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Passed to the per-epoch callback of [`train`].
pub struct EpochEnd<'a> {
    /// One-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    pub checkpoint_due: bool,
    pub model: &'a DenoiserModel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    pub step_losses: Vec<f64>,
}

/// Runs Adam over shuffled mini-batches (without replacement) for the
/// configured number of epochs. `on_epoch` runs after every epoch.
pub fn train(
    model: &mut DenoiserModel,
    data: &SequenceBatch,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    rng: &mut SeedRng,
    mut on_epoch: impl FnMut(&EpochEnd<'_>) -> Result<()>,
) -> Result<TrainHistory> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(history);
    }
    let mut optimizer = Adam::new(model.params(), config.learning_rate, config.grad_clip)?;
    let mut nonfinite_run = 0usize;
    for epoch in 1..=config.epochs {
        let order = rng::permutation(rng, data.len());
        let mut weighted = 0.0;
        let mut counted = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.select(chunk);
            match training_loss(model, &batch, schedule, rng) {
                Ok((loss, _)) => {
                    nonfinite_run = 0;
                    let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                    optimizer.backward_step(&loss)?;
                    history.step_losses.push(value);
                    weighted += value * chunk.len() as f64;
                    counted += chunk.len();
                }
                Err(Error::NonFiniteLoss(v)) => {
                    nonfinite_run += 1;
                    history.step_losses.push(v);
                    if nonfinite_run >= config.max_nonfinite_steps {
                        return Err(Error::Divergence(format!(
                            "{nonfinite_run} consecutive non-finite losses in epoch {epoch}"
                        )));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let mean_loss = if counted > 0 { weighted / counted as f64 } else { f64::NAN };
        history.epoch_losses.push(mean_loss);
        let checkpoint_due = config.checkpoint_interval.is_some_and(|k| epoch % k == 0);
        on_epoch(&EpochEnd { epoch, mean_loss, checkpoint_due, model })?;
    }
    Ok(history)
}

/// How each reverse step forms the mean of `xₜ₋₁`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReverseStep {
    /// `(xₜ − βₜ/√(1−ᾱₜ)·εθ)/√αₜ`, exactly as written.
    #[default]
    Plain,
    /// Posterior mean around `x̂₀ = (xₜ − √(1−ᾱₜ)·εθ)/√ᾱₜ`, with `x̂₀` clamped to
    /// `[lo, hi]`. Identical to `Plain` whenever nothing is clamped, but keeps
    /// the first steps from amplifying prediction error by `1/√α_T`.
    ClipDenoised { lo: f64, hi: f64 },
}

impl ReverseStep {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ReverseStep::Plain => Ok(()),
            ReverseStep::ClipDenoised { lo, hi } if lo < hi && lo.is_finite() && hi.is_finite() => Ok(()),
            ReverseStep::ClipDenoised { lo, hi } => {
                Err(Error::config("sample.reverse_step", format!("clip range [{lo}, {hi}] is invalid")))
            }
        }
    }
}

/// Runs the reverse chain from `x_T` down to `x₀`:
/// `xₜ₋₁ = (xₜ − βₜ/√(1−ᾱₜ)·εθ(xₜ, t))/√αₜ + σₜ·z`, with `z = 0` at `t = 1`
/// or whenever `rng` is `None`. See [`ReverseStep`] for the clamped variant.
pub fn reverse_process<M: Denoiser + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    x_big_t: Array3<f64>,
    step: ReverseStep,
    mut rng: Option<&mut SeedRng>,
) -> Result<Array3<f64>> {
    step.validate()?;
    if schedule.num_steps() != model.max_diffusion_steps() {
        return Err(Error::config(
            "schedule.num_steps",
            format!(
                "schedule has {} steps, denoiser was built for {}",
                schedule.num_steps(),
                model.max_diffusion_steps()
            ),
        ));
    }
    let (b, n, d) = x_big_t.dim();
    let mut x = x_big_t;
    for t in (1..=schedule.num_steps()).rev() {
        let steps = vec![t; b];
        let eps = nn::to_host(&model.predict(&to_tensor(model, &x)?, &steps)?)?;
        let alpha = schedule.alpha(t)?;
        let beta = schedule.beta(t)?;
        let bar = schedule.alpha_bar(t)?;
        let bar_prev = if t > 1 { schedule.alpha_bar(t - 1)? } else { 1.0 };
        let coef = beta / (1.0 - bar).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        // Posterior-mean coefficients on x̂₀ and xₜ.
        let c0 = bar_prev.sqrt() * beta / (1.0 - bar);
        let ct = alpha.sqrt() * (1.0 - bar_prev) / (1.0 - bar);
        let sigma = schedule.sigma(t)?;
        let noise = match rng.as_deref_mut() {
            Some(r) if t > 1 => Some(rng::standard_normal(r, b * n * d)),
            _ => None,
        };
        for (i, (v, e)) in x.iter_mut().zip(&eps).enumerate() {
            let mut next = match step {
                ReverseStep::Plain => inv_sqrt_alpha * (*v - coef * e),
                ReverseStep::ClipDenoised { lo, hi } => {
                    let x0 = ((*v - (1.0 - bar).sqrt() * e) / bar.sqrt()).clamp(lo, hi);
                    c0 * x0 + ct * *v
                }
            };
            if let Some(z) = &noise {
                next += sigma * z[i];
            }
            *v = next;
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: t,
                what: format!("sample element {pos} became non-finite"),
            });
        }
    }
    Ok(x)
}

/// Generates `count` sequences in scaled space. Work proceeds in chunks of
/// `chunk` sequences; each chunk draws `x_T` and then its per-step noise
/// from `rng` in order.
pub fn sample<M: Denoiser + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    count: usize,
    chunk: usize,
    step: ReverseStep,
    rng: &mut SeedRng,
) -> Result<SequenceBatch> {
    if count == 0 {
        return Err(Error::config("sample.count", "must be at least 1"));
    }
    let chunk = chunk.max(1);
    let (n, d) = (model.seq_len(), model.feature_dim());
    let mut out = Vec::with_capacity(count * n * d);
    let mut done = 0;
    while done < count {
        let b = chunk.min(count - done);
        let x_big_t = Array3::from_shape_vec((b, n, d), rng::standard_normal(rng, b * n * d)).expect("length matches");
        let x0 = reverse_process(model, schedule, x_big_t, step, Some(rng))?;
        out.extend(x0.iter().copied());
        done += b;
    }
    SequenceBatch::from_flat(count, n, d, out)
}
