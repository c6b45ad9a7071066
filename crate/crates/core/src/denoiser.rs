//! Noise-prediction networks εθ(xₜ, t).
//!
//! Both backbones share the same front end: a linear projection of each step
//! to the hidden width plus a diffusion-timestep embedding (sinusoidal code of
//! `t` through a two-layer GELU MLP) added to every token. The transformer
//! backbone also adds fixed sinusoidal sequence positions and runs a
//! bidirectional encoder stack; the GRU backbone runs stacked recurrent units
//! over the sequence axis. A final linear layer maps back to the feature width.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, EncoderShape, EncoderTrunk, Init, Linear, ParamStore, Precision};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Transformer,
    Gru,
}

/// Architecture of a denoiser. `seq_len`, `feature_dim` and
/// `max_diffusion_steps` are filled in from the dataset and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    #[serde(default)]
    pub backbone: Backbone,
    #[serde(default)]
    pub seq_len: usize,
    #[serde(default)]
    pub feature_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    /// Defaults to `4 * hidden_dim` when absent.
    #[serde(default)]
    pub feedforward_dim: Option<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub max_diffusion_steps: usize,
    #[serde(default)]
    pub precision: Precision,
}

fn default_hidden() -> usize {
    256
}

fn default_layers() -> usize {
    6
}

fn default_heads() -> usize {
    8
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            backbone: Backbone::Transformer,
            seq_len: 0,
            feature_dim: 0,
            hidden_dim: default_hidden(),
            num_layers: default_layers(),
            num_heads: default_heads(),
            feedforward_dim: None,
            dropout: 0.0,
            max_diffusion_steps: 0,
            precision: Precision::F32,
        }
    }
}

impl DenoiserConfig {
    pub fn feedforward(&self) -> usize {
        self.feedforward_dim.unwrap_or(self.hidden_dim.saturating_mul(4))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("denoiser.seq_len", self.seq_len),
            ("denoiser.feature_dim", self.feature_dim),
            ("denoiser.hidden_dim", self.hidden_dim),
            ("denoiser.num_layers", self.num_layers),
            ("denoiser.num_heads", self.num_heads),
            ("denoiser.feedforward_dim", self.feedforward()),
            ("denoiser.max_diffusion_steps", self.max_diffusion_steps),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.backbone == Backbone::Transformer && self.hidden_dim % self.num_heads != 0 {
            return Err(Error::config(
                "denoiser.hidden_dim",
                format!(
                    "hidden_dim {} is not divisible by num_heads {}",
                    self.hidden_dim, self.num_heads
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("denoiser.dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Number of trainable scalars a model built from this config holds, or
    /// `None` if it overflows `usize`.
    pub fn expected_num_params(&self) -> Option<usize> {
        let (h, d, l, f) = (self.hidden_dim, self.feature_dim, self.num_layers, self.feedforward());
        let hh = h.checked_mul(h)?;
        let time = hh.checked_add(h)?.checked_mul(2)?;
        let io = d.checked_mul(h)?.checked_mul(2)?.checked_add(h)?.checked_add(d)?;
        let per_layer = match self.backbone {
            Backbone::Transformer => hh
                .checked_mul(4)?
                .checked_add(h.checked_mul(f)?.checked_mul(2)?)?
                .checked_add(h.checked_mul(9)?)?
                .checked_add(f)?,
            Backbone::Gru => hh.checked_add(h)?.checked_mul(6)?,
        };
        time.checked_add(io)?.checked_add(l.checked_mul(per_layer)?)
    }

    fn encoder_shape(&self) -> EncoderShape {
        EncoderShape {
            hidden: self.hidden_dim,
            layers: self.num_layers,
            heads: self.num_heads,
            feedforward: self.feedforward(),
            dropout: self.dropout,
        }
    }
}

/// The contract every noise predictor satisfies: `[B, N, D]` in, `[B, N, D]`
/// out, one diffusion step per batch element.
pub trait Denoiser {
    fn seq_len(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn max_diffusion_steps(&self) -> usize;
    fn dtype(&self) -> DType;

    /// Evaluation-mode prediction (no dropout).
    fn predict(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor>;

    /// Training-mode prediction; dropout masks come from `rng`.
    fn predict_train(&self, x_t: &Tensor, t: &[usize], _rng: &mut SeedRng) -> Result<Tensor> {
        self.predict(x_t, t)
    }

    fn check_input(&self, x_t: &Tensor, t: &[usize]) -> Result<usize> {
        let (b, n, d) = x_t.dims3().map_err(|_| Error::Shape {
            expected: format!("[B, {}, {}]", self.seq_len(), self.feature_dim()),
            got: format!("{:?}", x_t.dims()),
        })?;
        if n != self.seq_len() || d != self.feature_dim() {
            return Err(Error::Shape {
                expected: format!("[B, {}, {}]", self.seq_len(), self.feature_dim()),
                got: format!("[{b}, {n}, {d}]"),
            });
        }
        if t.len() != b {
            return Err(Error::Shape {
                expected: format!("{b} diffusion steps"),
                got: format!("{} diffusion steps", t.len()),
            });
        }
        if let Some(bad) = t.iter().find(|&&s| s == 0 || s > self.max_diffusion_steps()) {
            return Err(Error::Data(format!(
                "diffusion step {bad} outside 1..={}",
                self.max_diffusion_steps()
            )));
        }
        Ok(b)
    }
}

/// Sinusoidal code of the diffusion step followed by Linear-GELU-Linear.
#[derive(Debug, Clone)]
struct TimestepEmbedding {
    table: Tensor,
    fc1: Linear,
    fc2: Linear,
}

impl TimestepEmbedding {
    fn new(store: &mut ParamStore, hidden: usize, steps: usize, rng: &mut SeedRng) -> Result<Self> {
        let table = nn::tensor_from(store, nn::sinusoidal_table(steps, hidden, 1), &[steps, hidden])?;
        let fc1 = Linear::new(store, "time.fc1", hidden, hidden, rng)?;
        let fc2 = Linear::new(store, "time.fc2", hidden, hidden, rng)?;
        Ok(TimestepEmbedding { table, fc1, fc2 })
    }

    /// `[B, 1, hidden]` embedding of one-based steps `t`.
    fn forward(&self, t: &[usize]) -> Result<Tensor> {
        let idx: Vec<u32> = t.iter().map(|&s| (s - 1) as u32).collect();
        let idx = Tensor::from_vec(idx, t.len(), self.table.device())?;
        let codes = self.table.index_select(&idx, 0)?;
        let h = self.fc2.forward(&self.fc1.forward(&codes)?.gelu_erf()?)?;
        Ok(h.unsqueeze(1)?)
    }
}

/// One GRU layer with PyTorch gate layout `(r, z, n)`.
#[derive(Debug, Clone)]
struct GruLayer {
    input: Linear,
    hidden: Linear,
    width: usize,
}

impl GruLayer {
    fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut SeedRng) -> Result<Self> {
        let b = 1.0 / (width as f64).sqrt();
        let input = Linear::with_init(store, &format!("{name}.input"), width, 3 * width, Init::Uniform(b), Init::Uniform(b), rng)?;
        let hidden = Linear::with_init(store, &format!("{name}.hidden"), width, 3 * width, Init::Uniform(b), Init::Uniform(b), rng)?;
        Ok(GruLayer { input, hidden, width })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, _) = x.dims3()?;
        let w = self.width;
        let gi = self.input.forward(x)?;
        let mut h = Tensor::zeros((b, w), x.dtype(), x.device())?;
        let mut outputs = Vec::with_capacity(n);
        for step in 0..n {
            let gi_t = gi.narrow(1, step, 1)?.squeeze(1)?;
            let gh = self.hidden.forward(&h)?;
            let r = candle_nn::ops::sigmoid(&(gi_t.narrow(1, 0, w)? + gh.narrow(1, 0, w)?)?)?;
            let z = candle_nn::ops::sigmoid(&(gi_t.narrow(1, w, w)? + gh.narrow(1, w, w)?)?)?;
            let cand = (gi_t.narrow(1, 2 * w, w)? + (r * gh.narrow(1, 2 * w, w)?)?)?.tanh()?;
            // h' = (1 - z)·n + z·h
            h = (&cand + (z * (&h - &cand)?)?)?;
            outputs.push(h.clone());
        }
        Ok(Tensor::stack(&outputs, 1)?)
    }
}

#[derive(Debug, Clone)]
enum Body {
    Transformer(EncoderTrunk),
    Gru { input: Linear, layers: Vec<GruLayer> },
}

/// A parameterized denoiser with one of the two backbones.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    config: DenoiserConfig,
    store: ParamStore,
    time: TimestepEmbedding,
    body: Body,
    output: Linear,
}

impl DenoiserModel {
    /// Draws initial parameters from `rng`: fan-in uniform for dense layers,
    /// Xavier-uniform attention projections, unit/zero layer norms.
    pub fn init(config: &DenoiserConfig, rng: &mut SeedRng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.precision);
        let h = config.hidden_dim;
        let time = TimestepEmbedding::new(&mut store, h, config.max_diffusion_steps, rng)?;
        let body = match config.backbone {
            Backbone::Transformer => Body::Transformer(EncoderTrunk::new(
                &mut store,
                "encoder",
                config.feature_dim,
                config.seq_len,
                config.encoder_shape(),
                rng,
            )?),
            Backbone::Gru => {
                let input = Linear::new(&mut store, "gru.input", config.feature_dim, h, rng)?;
                let layers = (0..config.num_layers)
                    .map(|l| GruLayer::new(&mut store, &format!("gru.layers.{l:02}"), h, rng))
                    .collect::<Result<Vec<_>>>()?;
                Body::Gru { input, layers }
            }
        };
        let output = Linear::new(&mut store, "output", h, config.feature_dim, rng)?;
        Ok(DenoiserModel { config: config.clone(), store, time, body, output })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    fn run(&self, x_t: &Tensor, t: &[usize], rng: Option<&mut SeedRng>) -> Result<Tensor> {
        self.check_input(x_t, t)?;
        let time = self.time.forward(t)?;
        let hidden = match &self.body {
            Body::Transformer(trunk) => trunk.encode(trunk.embed(x_t)?.broadcast_add(&time)?, rng)?,
            Body::Gru { input, layers } => {
                let mut h = input.forward(x_t)?.broadcast_add(&time)?;
                for layer in layers {
                    h = layer.forward(&h)?;
                }
                h
            }
        };
        self.output.forward(&hidden)
    }
}

impl Denoiser for DenoiserModel {
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn max_diffusion_steps(&self) -> usize {
        self.config.max_diffusion_steps
    }

    fn dtype(&self) -> DType {
        self.store.dtype()
    }

    fn predict(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.run(x_t, t, None)
    }

    fn predict_train(&self, x_t: &Tensor, t: &[usize], rng: &mut SeedRng) -> Result<Tensor> {
        self.run(x_t, t, Some(rng))
    }
}
