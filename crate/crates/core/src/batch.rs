use ndarray::{Array3, ArrayView2, Axis};

use crate::dataset::ScalerState;
use crate::error::{Error, Result};

/// A batch of equal-length multivariate sequences, shaped `[batch, steps, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    values: Array3<f64>,
    scaling: Option<ScalerState>,
}

impl SequenceBatch {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "sequence batch holds a non-finite value at flat index {pos}"
            )));
        }
        Ok(SequenceBatch {
            values,
            scaling: None,
        })
    }

    /// Builds a batch from row-major `[batch, steps, features]` data.
    pub fn from_flat(batch: usize, steps: usize, features: usize, data: Vec<f64>) -> Result<Self> {
        let values = Array3::from_shape_vec((batch, steps, features), data).map_err(|e| {
            Error::Shape {
                expected: format!("[{batch}, {steps}, {features}]"),
                got: e.to_string(),
            }
        })?;
        Self::new(values)
    }

    pub fn with_scaling(mut self, scaler: ScalerState) -> Self {
        self.scaling = Some(scaler);
        self
    }

    pub fn scaling(&self) -> Option<&ScalerState> {
        self.scaling.as_ref()
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array3<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.values.len_of(Axis(1))
    }

    pub fn dims(&self) -> usize {
        self.values.len_of(Axis(2))
    }

    pub fn sequence(&self, index: usize) -> ArrayView2<'_, f64> {
        self.values.index_axis(Axis(0), index)
    }

    /// Sequence `index` flattened to a `steps * features` vector.
    pub fn flat_sequence(&self, index: usize) -> Vec<f64> {
        self.sequence(index).iter().copied().collect()
    }

    /// Selects sequences by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        SequenceBatch {
            values: self.values.select(Axis(0), indices),
            scaling: self.scaling.clone(),
        }
    }

    /// First `count` sequences (or all, if fewer).
    pub fn head(&self, count: usize) -> SequenceBatch {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn concat(&self, other: &SequenceBatch) -> Result<SequenceBatch> {
        self.check_compatible(other)?;
        let values = ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .expect("shapes checked above");
        Ok(SequenceBatch {
            values,
            scaling: self.scaling.clone(),
        })
    }

    pub fn check_compatible(&self, other: &SequenceBatch) -> Result<()> {
        if self.seq_len() != other.seq_len() || self.dims() != other.dims() {
            return Err(Error::Shape {
                expected: format!("[*, {}, {}]", self.seq_len(), self.dims()),
                got: format!("[*, {}, {}]", other.seq_len(), other.dims()),
            });
        }
        Ok(())
    }
}
