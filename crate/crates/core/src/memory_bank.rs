//! Stored target features and temperature-scaled neighbor distributions.
//!
//! Row `i` holds the latest ℓ2-normalized feature of target sample `i`. The
//! bank is refilled from a full forward pass at the start of every epoch and
//! rows are overwritten (no moving average) as mini-batches are processed.
//! Rows are constants for differentiation: gradients reach the query feature
//! only.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::{Error, Result};

/// Tolerance on the unit-norm invariant for stored rows and queries.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    rows: Array2<f64>,
    tau: f64,
}

fn check_unit_rows(features: ArrayView2<f64>) -> Result<()> {
    for (i, row) in features.rows().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::InvalidInput(format!(
                "memory bank row {i} has norm {norm}, expected 1"
            )));
        }
    }
    Ok(())
}

impl MemoryBank {
    /// A bank holding `features` (one normalized row per target sample).
    pub fn new(features: Array2<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {tau}"
            )));
        }
        check_unit_rows(features.view())?;
        Ok(Self {
            rows: features.as_standard_layout().into_owned(),
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Replace every row. Row count and width must match the bank.
    pub fn initialize(&mut self, features_all: ArrayView2<f64>) -> Result<()> {
        if features_all.dim() != self.rows.dim() {
            return Err(Error::ShapeMismatch(format!(
                "bank is {:?}, got {:?}",
                self.rows.dim(),
                features_all.dim()
            )));
        }
        check_unit_rows(features_all)?;
        self.rows.assign(&features_all);
        Ok(())
    }

    /// `V[indices[b]] = features[b]`; all other rows stay as they are.
    pub fn update_batch(&mut self, indices: &[usize], features: ArrayView2<f64>) -> Result<()> {
        if indices.len() != features.nrows() || features.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} indices with a {:?} feature batch for a bank of width {}",
                indices.len(),
                features.dim(),
                self.dim()
            )));
        }
        let mut seen = vec![false; self.len()];
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidInput(format!(
                    "bank index {i} out of range for {} rows",
                    self.len()
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!("duplicate bank index {i}")));
            }
        }
        check_unit_rows(features)?;
        for (&i, row) in indices.iter().zip(features.rows()) {
            self.rows.row_mut(i).assign(&row);
        }
        Ok(())
    }

    fn check_query(&self, i: usize, len: usize) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "similarity needs at least 2 bank rows, have {}",
                self.len()
            )));
        }
        if i >= self.len() {
            return Err(Error::InvalidInput(format!(
                "self index {i} out of range for {} rows",
                self.len()
            )));
        }
        if len != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "query has {len} entries, bank rows have {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Neighbor distribution of query `f_i` (sample `i`) over the bank:
    /// `p_j = exp(v_j·f_i/τ) / Σ_{r≠i} exp(v_r·f_i/τ)` for `j ≠ i`, `p_i = 0`.
    pub fn similarity_row(&self, i: usize, query: ArrayView1<f64>) -> Result<Vec<f64>> {
        self.check_query(i, query.len())?;
        let norm = query.dot(&query).sqrt();
        if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::InvalidInput(format!(
                "query has norm {norm}, expected 1"
            )));
        }
        let scores: Vec<f64> = self.rows.dot(&query).iter().map(|s| s / self.tau).collect();
        let max = scores
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(j, &s)| if j == i { 0.0 } else { (s - max).exp() })
            .collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Ok(p)
    }

    /// Chain rule through the scores `s_j = v_j·f_i/τ`: returns
    /// `∂L/∂f_i = Σ_{j≠i} (∂L/∂s_j) v_j / τ`.
    pub fn query_gradient(&self, i: usize, grad_scores: &[f64]) -> Result<Vec<f64>> {
        if grad_scores.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} score gradients for {} bank rows",
                grad_scores.len(),
                self.len()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        for (j, (row, &g)) in self.rows.rows().into_iter().zip(grad_scores).enumerate() {
            if j == i || g == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(row) {
                *o += g * v / self.tau;
            }
        }
        Ok(out)
    }
}
