use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension affine map of the data range onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionNormalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

const DEGENERATE_RANGE: f64 = 1e-12;

impl ActionNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            min: vec![-1.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "action row of width {}, expected {dim}",
                    row.len()
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
            any = true;
        }
        if !any {
            return Err(Error::Config(
                "cannot fit a normalizer to no actions".into(),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Normalizes a flattened chunk in place; element `j` uses dimension
    /// `j % dim`. Constant dimensions map to 0.
    pub fn normalize(&self, values: &mut [f64]) {
        let d = self.dim();
        for (j, v) in values.iter_mut().enumerate() {
            let (lo, hi) = (self.min[j % d], self.max[j % d]);
            *v = if hi - lo < DEGENERATE_RANGE {
                0.0
            } else {
                2.0 * (*v - lo) / (hi - lo) - 1.0
            };
        }
    }

    pub fn denormalize(&self, values: &mut [f64]) {
        let d = self.dim();
        for (j, v) in values.iter_mut().enumerate() {
            let (lo, hi) = (self.min[j % d], self.max[j % d]);
            *v = if hi - lo < DEGENERATE_RANGE {
                0.5 * (lo + hi)
            } else {
                lo + 0.5 * (*v + 1.0) * (hi - lo)
            };
        }
    }
}
