//! Assembled semi-discrete operators `M du/dt = -(A + J) u - b(t)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{BlockDiagonal, BlockMatrix};

/// Inflow data `g(x, t)`; 1D operators ignore the second coordinate.
pub type BoundaryData = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

/// One quadrature contribution `b[dof] += weight * g(point, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryTerm {
    pub dof: usize,
    pub weight: f64,
    pub point: [f64; 2],
}

/// The right-hand side functional `l_h` as a list of weighted evaluations of
/// the inflow data.
#[derive(Clone, Default)]
pub struct BoundaryLoad {
    terms: Vec<BoundaryTerm>,
    data: Option<BoundaryData>,
}

impl fmt::Debug for BoundaryLoad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryLoad")
            .field("terms", &self.terms.len())
            .field("has_data", &self.data.is_some())
            .finish()
    }
}

impl BoundaryLoad {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<BoundaryTerm>, data: BoundaryData) -> Self {
        Self {
            terms,
            data: Some(data),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty() || self.data.is_none()
    }

    pub fn terms(&self) -> &[BoundaryTerm] {
        &self.terms
    }

    /// `out += b(t)`.
    pub fn add_to(&self, t: f64, out: &mut [f64]) {
        if let Some(g) = &self.data {
            for term in &self.terms {
                out[term.dof] += term.weight * g(term.point, t);
            }
        }
    }

    pub fn eval(&self, t: f64, dim: usize) -> Vec<f64> {
        let mut b = vec![0.0; dim];
        self.add_to(t, &mut b);
        b
    }
}

/// Mass matrix, upwind matrix, stabilization matrix and boundary functional.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    mass: BlockDiagonal,
    upwind: BlockMatrix,
    stab: BlockMatrix,
    boundary: BoundaryLoad,
    combined: BlockMatrix,
}

pub type OperatorSet1D = OperatorSet;
pub type OperatorSet2D = OperatorSet;

impl OperatorSet {
    pub fn new(
        mass: BlockDiagonal,
        upwind: BlockMatrix,
        stab: BlockMatrix,
        boundary: BoundaryLoad,
    ) -> Result<Self> {
        for (m, name_dim) in [(&upwind, upwind.dim()), (&stab, stab.dim())] {
            if name_dim != mass.dim() || m.block_size() != mass.block_size() {
                return Err(Error::Dimension {
                    expected: mass.dim(),
                    got: name_dim,
                });
            }
        }
        let combined = upwind.sum(&stab);
        Ok(Self {
            mass,
            upwind,
            stab,
            boundary,
            combined,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn ndof(&self) -> usize {
        self.mass.block_size()
    }

    pub fn n_cells(&self) -> usize {
        self.mass.n_cells()
    }

    pub fn mass(&self) -> &BlockDiagonal {
        &self.mass
    }

    pub fn upwind(&self) -> &BlockMatrix {
        &self.upwind
    }

    pub fn stab(&self) -> &BlockMatrix {
        &self.stab
    }

    /// `A + J`.
    pub fn operator(&self) -> &BlockMatrix {
        &self.combined
    }

    pub fn boundary(&self) -> &BoundaryLoad {
        &self.boundary
    }

    /// Same discretization with `J` replaced.
    pub fn with_stab(&self, stab: BlockMatrix) -> Result<Self> {
        Self::new(
            self.mass.clone(),
            self.upwind.clone(),
            stab,
            self.boundary.clone(),
        )
    }

    /// Same discretization with `J = 0`.
    pub fn without_stabilization(&self) -> Self {
        self.with_stab(BlockMatrix::zeros(self.n_cells(), self.ndof()))
            .expect("shapes match")
    }

    /// `out = M^{-1} (-(A + J) y - b(t))`.
    pub fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.combined.mul_add(y, out, -1.0);
        if !self.boundary.is_zero() {
            let mut b = vec![0.0; out.len()];
            self.boundary.add_to(t, &mut b);
            for (o, bi) in out.iter_mut().zip(b) {
                *o -= bi;
            }
        }
        self.mass.solve_in_place(out);
    }
}
