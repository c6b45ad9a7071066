//! Diffusion-based generation of long multivariate time series with a
//! transformer-encoder noise predictor, and an evaluation suite for synthetic
//! sequences.
//!
//! The pipeline is: build a [`schedule::NoiseSchedule`], prepare a scaled
//! [`dataset::Corpus`], initialize a [`denoiser::DenoiserModel`], fit it with
//! [`diffusion::train`], draw sequences with [`diffusion::sample`], and score
//! them against held-out data with [`metrics`] and [`projection`].

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod projection;
pub mod rng;
pub mod schedule;

pub use batch::SequenceBatch;
pub use error::{Error, ErrorKind, Result};
