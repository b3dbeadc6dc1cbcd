//! Coefficient vectors of discontinuous polynomial states.

use serde::{Deserialize, Serialize};

/// Per-cell coefficients in a moment basis: entry 0 of each cell is the
/// cell mean, the remaining entries are zero-average fluctuations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgState {
    ndof: usize,
    coeffs: Vec<f64>,
}

impl DgState {
    pub fn new(ndof: usize, coeffs: Vec<f64>) -> Self {
        assert!(ndof > 0 && coeffs.len() % ndof == 0, "coefficient length");
        Self { ndof, coeffs }
    }

    pub fn zeros(ndof: usize, n_cells: usize) -> Self {
        Self::new(ndof, vec![0.0; ndof * n_cells])
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn degree(&self) -> usize {
        usize::from(self.ndof > 1)
    }

    pub fn n_cells(&self) -> usize {
        self.coeffs.len() / self.ndof
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn cell(&self, j: usize) -> &[f64] {
        &self.coeffs[j * self.ndof..(j + 1) * self.ndof]
    }

    pub fn cell_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.coeffs[j * self.ndof..(j + 1) * self.ndof]
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.coeffs[j * self.ndof]
    }

    pub fn means(&self) -> Vec<f64> {
        self.coeffs.iter().step_by(self.ndof).copied().collect()
    }
}

pub type DGState1D = DgState;
pub type DGState2D = DgState;
