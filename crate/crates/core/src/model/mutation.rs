use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// The `dF` mutation vectors `b_i`, in gene coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationSet {
    columns: Vec<DVector<f64>>,
}

impl MutationSet {
    pub fn new(columns: Vec<DVector<f64>>) -> Result<Self> {
        let first = columns.first().ok_or(Error::EmptyMutationSet)?;
        let dg = first.len();
        for (i, b) in columns.iter().enumerate() {
            if b.len() != dg {
                return Err(Error::DimensionMismatch {
                    what: "mutation vector",
                    expected: dg,
                    got: b.len(),
                });
            }
            ensure_finite("mutation vector", b.as_slice())?;
            if b.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "mutation vector {i} is zero"
                )));
            }
        }
        Ok(Self { columns })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_vec(r.clone())).collect())
    }

    /// The canonical basis of `R^dg`.
    pub fn orthonormal(dg: usize) -> Result<Self> {
        if dg == 0 {
            return Err(Error::EmptyMutationSet);
        }
        Self::new(
            (0..dg)
                .map(|i| {
                    let mut e = DVector::zeros(dg);
                    e[i] = 1.0;
                    e
                })
                .collect(),
        )
    }

    pub fn df(&self) -> usize {
        self.columns.len()
    }

    pub fn dg(&self) -> usize {
        self.columns[0].len()
    }

    pub fn columns(&self) -> &[DVector<f64>] {
        &self.columns
    }

    pub fn get(&self, i: usize) -> &DVector<f64> {
        &self.columns[i]
    }

    /// `max_i ||b_i||` in gene coordinates.
    pub fn max_norm(&self) -> f64 {
        self.columns.iter().map(|b| b.norm()).fold(0.0, f64::max)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|i| self.columns[*i].clone()).collect())
    }
}
