//! 1D upwind DG operators with the small-cell penalty stabilization.
//!
//! Local basis on cell `j` is `{1, (x - x_j) / h_j}` with `x_j` the cell
//! midpoint. Jumps follow `[[w]]_{j+1/2} = w(x^-) - w(x^+)`. The velocity is a
//! positive constant, so the inflow neighbor of cell `j` is `j - 1`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{BlockDiagonal, BlockMatrix, BlockMatrixBuilder};
use crate::mesh1d::Mesh1D;
use crate::operators::{BoundaryLoad, BoundaryTerm, OperatorSet};
use crate::quadrature::gauss_interval;
use crate::state::DgState;

// Basis values at the left and right cell edge.
const LEFT: [f64; 2] = [1.0, -0.5];
const RIGHT: [f64; 2] = [1.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary1D {
    Periodic,
    /// Constant inflow value at `x = 0`.
    Dirichlet(f64),
}

/// Parameters of the stabilization: capacity parameter `omega`, weight
/// `rho` of the gradient term in the volume integral, CFL number `lambda`.
///
/// With `uncapped` the penalty weight is `1 - omega alpha / lambda` even when
/// this is negative, i.e. the linear formula that closed-form spectra are
/// derived from. The default caps the capacity at one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabConfig1D {
    pub omega: f64,
    pub rho: f64,
    pub lambda: f64,
    #[serde(default)]
    pub uncapped: bool,
}

impl Default for StabConfig1D {
    fn default() -> Self {
        Self {
            omega: 0.5,
            rho: 0.5,
            lambda: 1.0 / 6.0,
            uncapped: false,
        }
    }
}

impl StabConfig1D {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(invalid("omega", format!("{} outside (0, 1]", self.omega)));
        }
        if !(self.lambda > 0.0) {
            return Err(invalid("lambda", format!("{} must be positive", self.lambda)));
        }
        if !self.rho.is_finite() {
            return Err(invalid("rho", "must be finite"));
        }
        Ok(())
    }

    /// Time step `lambda h / beta`.
    pub fn dt(&self, h: f64, beta: f64) -> f64 {
        self.lambda * h / beta
    }
}

/// Capacity `min(omega alpha / lambda, 1)` of a cell of fraction `alpha`.
pub fn capacity_1d(alpha: f64, lambda: f64, omega: f64) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("lambda", lambda), ("omega", omega)] {
        if !(v > 0.0) {
            return Err(invalid(name, format!("{v} must be positive")));
        }
    }
    Ok((omega * alpha / lambda).min(1.0))
}

fn ndof_for(degree: usize) -> Result<usize> {
    match degree {
        0 | 1 => Ok(degree + 1),
        _ => Err(invalid("degree", format!("{degree} not in {{0, 1}}"))),
    }
}

fn inflow_neighbor(mesh: &Mesh1D, j: usize, bc: Boundary1D) -> Option<usize> {
    match (j, bc) {
        (0, Boundary1D::Periodic) => Some(mesh.num_cells() - 1),
        (0, Boundary1D::Dirichlet(_)) => None,
        _ => Some(j - 1),
    }
}

/// Mass matrix, blocks `diag(h_j, h_j / 12)`.
pub fn mass_1d(mesh: &Mesh1D, degree: usize) -> Result<BlockDiagonal> {
    let nd = ndof_for(degree)?;
    let mut blocks = Vec::with_capacity(mesh.num_cells() * nd * nd);
    for &h in mesh.widths() {
        if nd == 1 {
            blocks.push(h);
        } else {
            blocks.extend_from_slice(&[h, 0.0, 0.0, h / 12.0]);
        }
    }
    BlockDiagonal::new(nd, blocks)
}

/// Upwind matrix and inflow functional.
pub fn upwind_1d(
    mesh: &Mesh1D,
    beta: f64,
    degree: usize,
    bc: Boundary1D,
) -> Result<(BlockMatrix, BoundaryLoad)> {
    let nd = ndof_for(degree)?;
    let n = mesh.num_cells();
    let mut a = BlockMatrixBuilder::new(n, nd);
    for j in 0..n {
        // -beta * int u dw/dx: only the slope test function has a derivative.
        if nd == 2 {
            a.add(j, j, 1, 0, -beta);
        }
        // Face at the right edge of j carries the upwind trace of j.
        let right = match (j + 1 == n, bc) {
            (false, _) => Some(j + 1),
            (true, Boundary1D::Periodic) => Some(0),
            (true, Boundary1D::Dirichlet(_)) => None,
        };
        for i in 0..nd {
            for c in 0..nd {
                a.add(j, j, i, c, beta * RIGHT[i] * RIGHT[c]);
                if let Some(r) = right {
                    a.add(r, j, i, c, -beta * LEFT[i] * RIGHT[c]);
                }
            }
        }
    }
    let load = match bc {
        Boundary1D::Periodic => BoundaryLoad::zero(),
        Boundary1D::Dirichlet(g) => {
            let terms = (0..nd)
                .map(|i| BoundaryTerm {
                    dof: i,
                    weight: -beta * LEFT[i],
                    point: [0.0, 0.0],
                })
                .collect();
            BoundaryLoad::new(terms, Arc::new(move |_, _| g))
        }
    };
    Ok((a.build(), load))
}

/// Penalty stabilization matrix. Cells whose capacity saturates
/// (`alpha >= lambda / omega`) get no blocks at all.
pub fn stab_1d(
    mesh: &Mesh1D,
    beta: f64,
    degree: usize,
    config: &StabConfig1D,
    bc: Boundary1D,
) -> Result<BlockMatrix> {
    config.validate()?;
    let nd = ndof_for(degree)?;
    let n = mesh.num_cells();
    let mut j_mat = BlockMatrixBuilder::new(n, nd);
    for s in mesh.stabilized() {
        let alpha = mesh.width(s) / mesh.h();
        let eta = if config.uncapped {
            1.0 - config.omega * alpha / config.lambda
        } else {
            1.0 - capacity_1d(alpha, config.lambda, config.omega)?
        };
        if eta == 0.0 {
            continue;
        }
        let p = inflow_neighbor(mesh, s, bc).ok_or_else(|| {
            Error::Stabilization(s, "no inflow neighbor on a Dirichlet boundary".into())
        })?;
        let q = s + 1;
        if q >= n {
            return Err(Error::Stabilization(s, "no outflow neighbor".into()));
        }
        let hs = mesh.width(s);
        // Jump functionals on the inflow face of s, as (cell, dof, coeff).
        let mut value_jump = vec![];
        let mut slope_jump = vec![];
        for c in 0..nd {
            value_jump.push((p, c, RIGHT[c]));
            value_jump.push((s, c, -LEFT[c]));
        }
        if nd == 2 {
            slope_jump.push((p, 1, 1.0 / mesh.width(p)));
            slope_jump.push((s, 1, -1.0 / hs));
        }
        let scale = beta * eta;
        // Outflow face term: [[u]] + h_s [[u_x]] against [[w]]_cut.
        let outflow = value_jump
            .iter()
            .copied()
            .chain(slope_jump.iter().map(|&(c, d, v)| (c, d, hs * v)));
        for (col, c, v) in outflow {
            for i in 0..nd {
                j_mat.add(s, col, i, c, scale * RIGHT[i] * v);
                j_mat.add(q, col, i, c, -scale * LEFT[i] * v);
            }
        }
        // Volume term: -(...)·int w_x, nonzero only for the slope test function.
        if nd == 2 {
            let volume = value_jump
                .iter()
                .copied()
                .chain(slope_jump.iter().map(|&(c, d, v)| (c, d, hs * config.rho * v)));
            for (col, c, v) in volume {
                j_mat.add(s, col, 1, c, -scale * v);
            }
        }
    }
    Ok(j_mat.build())
}

/// Full operator set with the penalty stabilization.
pub fn assemble_1d(
    mesh: &Mesh1D,
    beta: f64,
    degree: usize,
    config: &StabConfig1D,
    bc: Boundary1D,
) -> Result<OperatorSet> {
    if !(beta > 0.0) {
        return Err(invalid("beta", format!("{beta} must be positive")));
    }
    let mass = mass_1d(mesh, degree)?;
    let (a, b) = upwind_1d(mesh, beta, degree, bc)?;
    let j = stab_1d(mesh, beta, degree, config, bc)?;
    OperatorSet::new(mass, a, j, b)
}

/// Symmetric jump penalty `rho1 [[u]][[w]]` on the inflow face of the small
/// cell plus `rho2 [[u]][[w]]` on the cut face. Used as a comparison only.
pub fn assemble_ghost_penalty_1d(
    mesh: &Mesh1D,
    degree: usize,
    rho1: f64,
    rho2: f64,
) -> Result<BlockMatrix> {
    let nd = ndof_for(degree)?;
    let pairs = mesh.cut_pairs();
    if pairs.len() != 1 {
        return Err(Error::InvalidMesh(format!(
            "ghost penalty needs exactly one cut pair, found {}",
            pairs.len()
        )));
    }
    let s = pairs[0].left;
    if s == 0 || s + 1 >= mesh.num_cells() {
        return Err(Error::InvalidMesh("cut pair touches the boundary".into()));
    }
    let mut g = BlockMatrixBuilder::new(mesh.num_cells(), nd);
    for (rho, left, right) in [(rho1, s - 1, s), (rho2, s, s + 1)] {
        let jump: Vec<(usize, usize, f64)> = (0..nd)
            .flat_map(|c| [(left, c, RIGHT[c]), (right, c, -LEFT[c])])
            .collect();
        for &(rc, i, vi) in &jump {
            for &(cc, c, vc) in &jump {
                g.add(rc, cc, i, c, rho * vi * vc);
            }
        }
    }
    Ok(g.build())
}

/// `s * min |a_i|` when all signs agree, zero otherwise.
pub fn minmod(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "minmod of an empty list");
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let s = sign(values[0]);
    if s == 0.0 || values.iter().any(|&v| sign(v) != s) {
        return 0.0;
    }
    s * values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// MC-type slope limiter on the cell means, plus the extra bound on the
/// inflow neighbor `p` of every stabilized cell `s`: the extrapolation of
/// `p` to the far edge of `s` must lie between the means of `p` and `s`.
pub fn limit_1d(state: &DgState, mesh: &Mesh1D, bc: Boundary1D) -> DgState {
    let mut out = state.clone();
    limit_1d_in_place(&mut out, mesh, bc);
    out
}

pub fn limit_1d_in_place(state: &mut DgState, mesh: &Mesh1D, bc: Boundary1D) {
    if state.ndof() < 2 {
        return;
    }
    let n = mesh.num_cells();
    let means = state.means();
    let periodic = matches!(bc, Boundary1D::Periodic);
    let mut slopes: Vec<f64> = (0..n)
        .map(|j| state.cell(j)[1] / mesh.width(j))
        .collect();
    for j in 0..n {
        let half = 0.5 * mesh.width(j);
        let mut args = vec![slopes[j]];
        let right = if j + 1 < n { Some(j + 1) } else { periodic.then_some(0) };
        let left = if j > 0 { Some(j - 1) } else { periodic.then_some(n - 1) };
        if let Some(r) = right {
            args.push((means[r] - means[j]) / half);
        }
        if let Some(l) = left {
            args.push((means[j] - means[l]) / half);
        }
        slopes[j] = minmod(&args);
    }
    for s in mesh.stabilized() {
        let Some(p) = inflow_neighbor(mesh, s, bc) else {
            continue;
        };
        let reach = 0.5 * mesh.width(p) + mesh.width(s);
        let lo = means[p].min(means[s]) - means[p];
        let hi = means[p].max(means[s]) - means[p];
        slopes[p] = slopes[p].clamp(lo / reach, hi / reach);
    }
    for (j, slope) in slopes.into_iter().enumerate() {
        state.cell_mut(j)[1] = slope * mesh.width(j);
    }
}

/// L2 projection of `f` onto the local basis, Gauss rule with `points` nodes.
pub fn project_1d(mesh: &Mesh1D, degree: usize, points: usize, f: impl Fn(f64) -> f64) -> DgState {
    let nd = degree + 1;
    let mut state = DgState::zeros(nd, mesh.num_cells());
    for j in 0..mesh.num_cells() {
        let (xl, xr, h, xc) = (mesh.left(j), mesh.right(j), mesh.width(j), mesh.center(j));
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for (x, w) in gauss_interval(points, xl, xr) {
            let v = f(x);
            m0 += w * v;
            m1 += w * v * (x - xc) / h;
        }
        let c = state.cell_mut(j);
        c[0] = m0 / h;
        if nd == 2 {
            c[1] = 12.0 * m1 / h;
        }
    }
    state
}

/// Value of cell `j`'s polynomial at `x` (extrapolated outside the cell).
pub fn eval_1d(state: &DgState, mesh: &Mesh1D, j: usize, x: f64) -> f64 {
    let c = state.cell(j);
    if state.ndof() == 1 {
        c[0]
    } else {
        c[0] + c[1] * (x - mesh.center(j)) / mesh.width(j)
    }
}

/// Writes `row,col,value` for every nonzero scalar entry.
pub fn write_matrix_csv<W: Write>(m: &BlockMatrix, mut w: W) -> Result<()> {
    writeln!(w, "row,col,value")?;
    for (r, c, v) in m.triplets() {
        writeln!(w, "{r},{c},{v:e}")?;
    }
    Ok(())
}
