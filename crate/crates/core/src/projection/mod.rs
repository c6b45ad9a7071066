//! Joint 2-D embeddings of real and synthetic sequences for visual comparison.
//! Both sides are projected into one shared space, in scaled units.

mod pca;
mod tsne;

pub use pca::pca_project;
pub use tsne::{conditional_affinities, tsne_project, TsneConfig};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::SequenceBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ProjectionMeta {
    Pca {
        explained_variance_ratio: [f64; 2],
    },
    Tsne {
        perplexity: f64,
        iterations: usize,
        learning_rate: f64,
        final_kl: f64,
        /// (iteration, KL) checkpoints every 50 iterations.
        kl_trace: Vec<(usize, f64)>,
        /// Set when KL rose by more than 1e-3 between checkpoints after the
        /// exaggeration phase.
        kl_increase_flagged: bool,
    },
}

/// Coordinates `[n, 2]` with the origin of each point; real points first.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingProjection {
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<Origin>,
    pub meta: ProjectionMeta,
}

impl EmbeddingProjection {
    pub fn method(&self) -> ProjectionMethod {
        match self.meta {
            ProjectionMeta::Pca { .. } => ProjectionMethod::Pca,
            ProjectionMeta::Tsne { .. } => ProjectionMethod::Tsne,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Stacks both sides as flattened rows, real first.
pub(crate) fn pooled_rows(real: &SequenceBatch, synthetic: &SequenceBatch) -> Result<(Vec<Vec<f64>>, Vec<Origin>)> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::InsufficientData("projection needs non-empty real and synthetic sets".into()));
    }
    real.check_compatible(synthetic)?;
    let mut rows = Vec::with_capacity(real.len() + synthetic.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for (batch, origin) in [(real, Origin::Real), (synthetic, Origin::Synthetic)] {
        for i in 0..batch.len() {
            rows.push(batch.flat_sequence(i));
            labels.push(origin);
        }
    }
    Ok((rows, labels))
}

/// Metadata written next to the coordinates CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSidecar {
    pub num_real: usize,
    pub num_synthetic: usize,
    pub meta: ProjectionMeta,
    pub seed: Option<u64>,
}

/// `x,y,label` rows, floats in shortest round-trip form.
pub fn write_projection_csv<W: Write>(mut writer: W, projection: &EmbeddingProjection) -> Result<()> {
    let io = |e| Error::io("<projection csv>", e);
    writeln!(writer, "x,y,label").map_err(io)?;
    for (c, l) in projection.coords.iter().zip(&projection.labels) {
        writeln!(writer, "{:?},{:?},{}", c[0], c[1], l.as_str()).map_err(io)?;
    }
    Ok(())
}

pub fn write_projection_files(csv_path: &Path, projection: &EmbeddingProjection, seed: Option<u64>) -> Result<()> {
    let mut buf = Vec::new();
    write_projection_csv(&mut buf, projection)?;
    std::fs::write(csv_path, buf).map_err(|e| Error::io(csv_path, e))?;
    let count = |o| projection.labels.iter().filter(|&&l| l == o).count();
    let sidecar = ProjectionSidecar {
        num_real: count(Origin::Real),
        num_synthetic: count(Origin::Synthetic),
        meta: projection.meta.clone(),
        seed,
    };
    let path = crate::dataset::sidecar_path(csv_path);
    let text = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
