//! The JSON run configuration consumed by the command-line front end.
//!
//! ```json
//! {
//!   "dataset": {"kind": "sine", "num_sequences": 10000, "seq_len": 100, "dims": 5},
//!   "schedule": {"num_steps": 1000, "offset": 0.008, "sigma": "beta"},
//!   "denoiser": {"hidden_dim": 256, "num_layers": 6, "num_heads": 8},
//!   "train": {"epochs": 5000, "batch_size": 256, "learning_rate": 1e-4},
//!   "metrics": {"repetitions": 10},
//!   "seed": 0
//! }
//! ```
//!
//! Every section and field has a default; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Corpus, CsvOptions, WindowSpec};
use crate::denoiser::DenoiserConfig;
use crate::diffusion::{ReverseStep, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::schedule::ScheduleSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Synthetic sinusoids; the held-out part is generated from its own seed.
    Sine {
        #[serde(default = "default_num_sequences")]
        num_sequences: usize,
        #[serde(default = "default_heldout_fraction")]
        heldout_fraction: f64,
        #[serde(default = "default_seq_len")]
        seq_len: usize,
        #[serde(default = "default_dims")]
        dims: usize,
    },
    /// Sliding windows over a headed CSV file. Relative paths resolve against
    /// the config file's directory.
    Csv {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        columns: Vec<String>,
        window: WindowSpec,
        #[serde(default)]
        csv: CsvOptions,
    },
}

fn default_num_sequences() -> usize {
    10_000
}
fn default_heldout_fraction() -> f64 {
    0.2
}
fn default_seq_len() -> usize {
    100
}
fn default_dims() -> usize {
    5
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Sine {
            num_sequences: default_num_sequences(),
            heldout_fraction: default_heldout_fraction(),
            seq_len: default_seq_len(),
            dims: default_dims(),
        }
    }
}

impl DatasetSpec {
    pub fn seq_len(&self) -> usize {
        match self {
            DatasetSpec::Sine { seq_len, .. } => *seq_len,
            DatasetSpec::Csv { window, .. } => window.len,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            DatasetSpec::Sine { dims, .. } => *dims,
            DatasetSpec::Csv { columns, .. } => columns.len(),
        }
    }

    /// Train/held-out counts for the sine generator.
    pub fn sine_split(num_sequences: usize, heldout_fraction: f64) -> (usize, usize) {
        let heldout = (num_sequences as f64 * heldout_fraction).round() as usize;
        (num_sequences - heldout, heldout)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Sine { num_sequences, heldout_fraction, seq_len, dims } => {
                if !(*heldout_fraction > 0.0 && *heldout_fraction < 1.0) {
                    return Err(Error::config("dataset.heldout_fraction", "must lie in (0, 1)"));
                }
                let (train, heldout) = Self::sine_split(*num_sequences, *heldout_fraction);
                if train == 0 || heldout == 0 {
                    return Err(Error::config(
                        "dataset.num_sequences",
                        format!("{num_sequences} sequences leave an empty train or held-out part"),
                    ));
                }
                if *seq_len < 2 {
                    return Err(Error::config("dataset.seq_len", "must be at least 2"));
                }
                if *dims == 0 {
                    return Err(Error::config("dataset.dims", "must be at least 1"));
                }
            }
            DatasetSpec::Csv { path, columns, window, .. } => {
                if path.is_none() {
                    return Err(Error::config("dataset.path", "a CSV dataset needs a file path"));
                }
                if columns.is_empty() {
                    return Err(Error::config("dataset.columns", "list at least one column"));
                }
                window.validate()?;
            }
        }
        Ok(())
    }

    /// Loads or generates the scaled train and held-out sets.
    pub fn load(&self, base_dir: &Path, seed: u64) -> Result<Corpus> {
        self.validate()?;
        match self {
            DatasetSpec::Sine { num_sequences, heldout_fraction, seq_len, dims } => {
                let (train, heldout) = Self::sine_split(*num_sequences, *heldout_fraction);
                dataset::sine_corpus(train, heldout, *seq_len, *dims, seed)
            }
            DatasetSpec::Csv { path, columns, window, csv } => {
                let path = path.as_ref().expect("validated");
                let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
                dataset::load_csv(&path, columns, window, csv)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// Sequences denoised together.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    /// Clamp each step's x̂₀ estimate to the scaler's output range.
    #[serde(default = "default_clip")]
    pub clip_denoised: bool,
}

fn default_chunk() -> usize {
    256
}

fn default_clip() -> bool {
    true
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { chunk_size: default_chunk(), clip_denoised: default_clip() }
    }
}

impl SampleConfig {
    /// The reverse step for data scaled into `[lo, hi]`.
    pub fn reverse_step(&self, lo: f64, hi: f64) -> ReverseStep {
        if self.clip_denoised {
            ReverseStep::ClipDenoised { lo, hi }
        } else {
            ReverseStep::Plain
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub seed: u64,
    /// Root under which run directories are created.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The denoiser config with sequence length, features and steps taken
    /// from the dataset and schedule.
    pub fn resolved_denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            seq_len: self.dataset.seq_len(),
            feature_dim: self.dataset.feature_dim(),
            max_diffusion_steps: self.schedule.num_steps,
            ..self.denoiser.clone()
        }
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.schedule.build().map_err(|e| match e {
            Error::Config { reason, .. } => Error::config("schedule", reason),
            other => other,
        })?;
        for (field, given, derived) in [
            ("denoiser.seq_len", self.denoiser.seq_len, self.dataset.seq_len()),
            ("denoiser.feature_dim", self.denoiser.feature_dim, self.dataset.feature_dim()),
            ("denoiser.max_diffusion_steps", self.denoiser.max_diffusion_steps, self.schedule.num_steps),
        ] {
            if given != 0 && given != derived {
                return Err(Error::config(field, format!("{given} conflicts with {derived} implied by the dataset and schedule")));
            }
        }
        self.resolved_denoiser().validate()?;
        self.train.validate()?;
        self.metrics.validate()?;
        if self.sample.chunk_size == 0 {
            return Err(Error::config("sample.chunk_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::from_json("{}").unwrap();
        c.validate().unwrap();
        let d = c.resolved_denoiser();
        assert_eq!((d.seq_len, d.feature_dim, d.max_diffusion_steps), (100, 5, 1000));
        assert_eq!(c.train.batch_size, 256);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sede": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epoch": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": {"kind": "sine", "dim": 3}}"#).is_err());
    }

    #[test]
    fn csv_without_path_names_the_field() {
        let c = RunConfig::from_json(r#"{"dataset": {"kind": "csv", "columns": ["a"], "window": {"len": 8}}}"#).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("dataset.path"), "{err}");
    }

    #[test]
    fn conflicting_shape_rejected() {
        let c = RunConfig::from_json(r#"{"denoiser": {"seq_len": 7}}"#).unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("denoiser.seq_len"));
    }
}
