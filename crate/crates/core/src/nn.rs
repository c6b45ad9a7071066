//! Small neural-network toolkit over candle tensors: a named parameter store
//! with seeded initialization, dense and normalization layers, the encoder
//! block shared by the denoiser and the metric networks, and an Adam wrapper.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::Optimizer;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedRng;

/// Floating-point precision used for model parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// U(-b, b)
    Uniform(f64),
}

/// Named trainable parameters, iterated in name order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(precision: Precision) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype: precision.dtype(),
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn create(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut SeedRng) -> Result<Tensor> {
        let len: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; len],
            Init::Ones => vec![1.0; len],
            Init::Uniform(b) => (0..len).map(|_| rng.random_range(-b..b)).collect(),
        };
        let tensor = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        if self.vars.insert(name.to_string(), var).is_some() {
            return Err(Error::config("parameters", format!("duplicate parameter name `{name}`")));
        }
        Ok(out)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Parameters as `(name, shape, values)` in name order, widened to f64.
    pub fn export(&self) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
        self.vars
            .iter()
            .map(|(name, var)| {
                let t = var.as_tensor();
                let values = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
                Ok((name.clone(), t.dims().to_vec(), values))
            })
            .collect()
    }

    /// Overwrites every parameter from `values`; names and shapes must match exactly.
    pub fn import(&self, values: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        if values.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter arrays, model expects {}",
                values.len(),
                self.vars.len()
            )));
        }
        for (name, shape, data) in values {
            let var = self
                .vars
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            if var.dims() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    shape,
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(data.clone(), shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

/// Fully connected layer; the weight is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// PyTorch-style fan-in uniform initialization for both weight and bias.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut SeedRng) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Self::with_init(store, name, input, output, Init::Uniform(bound), Init::Uniform(bound), rng)
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        weight: Init,
        bias: Init,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let weight = store.create(&format!("{name}.weight"), &[input, output], weight, rng)?;
        let bias = store.create(&format!("{name}.bias"), &[output], bias, rng)?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims();
        let input = *dims.last().expect("tensor has at least one dim");
        let rows = x.elem_count() / input;
        let y = x.reshape((rows, input))?.matmul(&self.weight)?.broadcast_add(&self.bias)?;
        let mut out_dims = dims.to_vec();
        *out_dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut SeedRng) -> Result<Self> {
        let gamma = store.create(&format!("{name}.gamma"), &[dim], Init::Ones, rng)?;
        let beta = store.create(&format!("{name}.beta"), &[dim], Init::Zeros, rng)?;
        Ok(LayerNorm { gamma, beta, eps: 1e-5 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Inverted dropout driven by the caller's seeded generator; inactive when no
/// generator is supplied (evaluation) or when `p == 0`.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        Dropout { p }
    }

    pub fn forward(&self, x: &Tensor, rng: Option<&mut SeedRng>) -> Result<Tensor> {
        match rng {
            Some(rng) if self.p > 0.0 => {
                let keep = 1.0 - self.p;
                let mask: Vec<f64> = (0..x.elem_count())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
                Ok(x.mul(&mask)?)
            }
            _ => Ok(x.clone()),
        }
    }
}

/// Sinusoidal table `[rows, dim]`: even columns sin(p/10000^(2i/dim)), odd columns cos.
pub fn sinusoidal_table(rows: usize, dim: usize, offset: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * dim];
    for r in 0..rows {
        let pos = (r + offset) as f64;
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            out[r * dim + i] = if i % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() };
        }
    }
    out
}

/// Capacity of a transformer encoder stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderShape {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub feedforward: usize,
    pub dropout: f64,
}

/// Post-norm encoder layer: `x = LN(x + MHA(x)); x = LN(x + FF(x))`, with
/// bidirectional attention and a GELU feedforward.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    qkv: Linear,
    out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
    dropout: Dropout,
    heads: usize,
}

impl EncoderLayer {
    /// Attention projections use Xavier-uniform weights with zero biases, like
    /// `torch.nn.MultiheadAttention`; the feedforward uses fan-in uniform.
    pub fn new(store: &mut ParamStore, name: &str, shape: EncoderShape, rng: &mut SeedRng) -> Result<Self> {
        let h = shape.hidden;
        let xavier = (6.0 / (h + 3 * h) as f64).sqrt();
        let qkv = Linear::with_init(store, &format!("{name}.attn.qkv"), h, 3 * h, Init::Uniform(xavier), Init::Zeros, rng)?;
        let out = Linear::with_init(
            store,
            &format!("{name}.attn.out"),
            h,
            h,
            Init::Uniform((6.0 / (2 * h) as f64).sqrt()),
            Init::Zeros,
            rng,
        )?;
        let norm1 = LayerNorm::new(store, &format!("{name}.norm1"), h, rng)?;
        let ff1 = Linear::new(store, &format!("{name}.ff1"), h, shape.feedforward, rng)?;
        let ff2 = Linear::new(store, &format!("{name}.ff2"), shape.feedforward, h, rng)?;
        let norm2 = LayerNorm::new(store, &format!("{name}.norm2"), h, rng)?;
        Ok(EncoderLayer {
            qkv,
            out,
            norm1,
            ff1,
            ff2,
            norm2,
            dropout: Dropout::new(shape.dropout),
            heads: shape.heads,
        })
    }

    fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, h) = x.dims3()?;
        let hd = h / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, n, 3, self.heads, hd))?;
        let pick = |i: usize| -> Result<Tensor> {
            Ok(qkv.narrow(2, i, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?)
        };
        let (q, k, v) = (pick(0)?, pick(1)?, pick(2)?);
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, n, h))?;
        self.out.forward(&ctx)
    }

    pub fn forward(&self, x: &Tensor, mut rng: Option<&mut SeedRng>) -> Result<Tensor> {
        let attn = self.dropout.forward(&self.attention(x)?, rng.as_deref_mut())?;
        let x = self.norm1.forward(&(x + attn)?)?;
        let ff = self.ff2.forward(&self.ff1.forward(&x)?.gelu_erf()?)?;
        let ff = self.dropout.forward(&ff, rng)?;
        self.norm2.forward(&(x + ff)?)
    }
}

/// Input projection, fixed sinusoidal positions and an encoder stack: the
/// trunk shared by the denoiser and the metric networks.
#[derive(Debug, Clone)]
pub struct EncoderTrunk {
    input: Linear,
    positions: Tensor,
    layers: Vec<EncoderLayer>,
}

impl EncoderTrunk {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        features: usize,
        seq_len: usize,
        shape: EncoderShape,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let input = Linear::new(store, &format!("{name}.input"), features, shape.hidden, rng)?;
        let positions = Tensor::from_vec(sinusoidal_table(seq_len, shape.hidden, 0), (seq_len, shape.hidden), store.device())?
            .to_dtype(store.dtype())?;
        let layers = (0..shape.layers)
            .map(|l| EncoderLayer::new(store, &format!("{name}.layers.{l:02}"), shape, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderTrunk { input, positions, layers })
    }

    /// Embeds `[B, N, features]` into `[B, N, hidden]` (projection plus positions).
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.input.forward(x)?.broadcast_add(&self.positions)?)
    }

    pub fn encode(&self, mut h: Tensor, mut rng: Option<&mut SeedRng>) -> Result<Tensor> {
        for layer in &self.layers {
            h = layer.forward(&h, rng.as_deref_mut())?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Tensor, rng: Option<&mut SeedRng>) -> Result<Tensor> {
        self.encode(self.embed(x)?, rng)
    }
}

/// Adam over every parameter of a store, with optional global-norm clipping.
pub struct Adam {
    inner: candle_nn::AdamW,
    vars: Vec<Var>,
    clip: Option<f64>,
}

impl Adam {
    /// Plain Adam: moments (0.9, 0.999), ε = 1e-8, no weight decay.
    pub fn new(store: &ParamStore, learning_rate: f64, clip: Option<f64>) -> Result<Self> {
        let vars = store.all_vars();
        let params = candle_nn::ParamsAdamW {
            lr: learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let inner = candle_nn::AdamW::new(vars.clone(), params)?;
        Ok(Adam { inner, vars, clip })
    }

    /// Backpropagates `loss` and applies one update. Returns the pre-clip gradient norm.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<f64> {
        let mut grads = loss.backward()?;
        let mut sq = 0.0;
        for var in &self.vars {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        let norm = sq.sqrt();
        if let Some(max_norm) = self.clip {
            if norm > max_norm {
                let factor = max_norm / norm;
                for var in &self.vars {
                    if let Some(g) = grads.remove(var.as_tensor()) {
                        grads.insert(var.as_tensor(), (g * factor)?);
                    }
                }
            }
        }
        self.inner.step(&grads)?;
        Ok(norm)
    }
}

/// Host buffer to a `[dims]` tensor of the store's precision.
pub fn tensor_from(store: &ParamStore, data: Vec<f64>, dims: &[usize]) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, dims, store.device())?.to_dtype(store.dtype())?)
}

pub fn to_host(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn linear_matches_hand_computation() {
        let mut store = ParamStore::new(Precision::F64);
        let mut rng = seeded(1);
        let lin = Linear::new(&mut store, "l", 3, 2, &mut rng).unwrap();
        let exported = store.export().unwrap();
        let bias = &exported[0].2;
        let w = &exported[1].2;
        let x = Tensor::new(&[[1.0f64, -2.0, 0.5]], &Device::Cpu).unwrap();
        let y = to_host(&lin.forward(&x).unwrap()).unwrap();
        for o in 0..2 {
            let expect = bias[o] + w[o] * 1.0 + w[2 + o] * -2.0 + w[4 + o] * 0.5;
            assert!((y[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut store = ParamStore::new(Precision::F64);
        let ln = LayerNorm::new(&mut store, "ln", 4, &mut seeded(0)).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 10.0]], &Device::Cpu).unwrap();
        let y = to_host(&ln.forward(&x).unwrap()).unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn export_import_round_trip() {
        let mut store = ParamStore::new(Precision::F32);
        let mut rng = seeded(5);
        Linear::new(&mut store, "a", 4, 3, &mut rng).unwrap();
        let snap = store.export().unwrap();
        let mut other = ParamStore::new(Precision::F32);
        Linear::new(&mut other, "a", 4, 3, &mut seeded(99)).unwrap();
        other.import(&snap).unwrap();
        assert_eq!(other.export().unwrap(), snap);
        let mut wrong = snap.clone();
        wrong[0].1 = vec![2];
        assert!(other.import(&wrong).is_err());
    }

    #[test]
    fn sinusoidal_table_layout() {
        let t = sinusoidal_table(3, 4, 0);
        assert_eq!(&t[0..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((t[4] - 1f64.sin()).abs() < 1e-15);
        assert!((t[7] - (1.0 / 100.0f64).cos()).abs() < 1e-15);
    }
}
