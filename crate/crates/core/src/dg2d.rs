//! Upwind DG on cut-cell meshes with trajectory-operator stabilization.
//!
//! Local basis on cell `E` is `{1, x - x_E, y - y_E}` with `(x_E, y_E)` the
//! centroid, without rescaling. Local solves use `(x - x_E) / r_E` with `r_E`
//! the cell radius for conditioning and convert back afterwards.
//!
//! Traces on a face are represented in the face basis `{1, (s - L/2) / L}`,
//! `s` the arc length from the face's first vertex, so that projections taken
//! from either side of a face use the same coordinates.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, SMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom2d::{
    capacity_2d, classify_faces, write_polydata_header, CutCellMesh, FaceClassification, Point,
    Ramp, Velocity, FACE_POINTS,
};
use crate::linalg::{BlockDiagonal, BlockMatrix, BlockMatrixBuilder};
use crate::operators::{BoundaryData, BoundaryLoad, BoundaryTerm, OperatorSet};
use crate::state::DgState;

/// Polynomial degree used for volume integrals. The `J^1` volume integrand
/// is cubic for linear velocity fields.
pub const VOLUME_DEGREE: usize = 4;

pub fn ndof_2d(degree: usize) -> Result<usize> {
    match degree {
        0 => Ok(1),
        1 => Ok(3),
        _ => Err(invalid("degree", format!("{degree} not in {{0, 1}}"))),
    }
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Values of the (unscaled) cell basis at `p`.
pub fn basis(mesh: &CutCellMesh, c: usize, p: Point) -> [f64; 3] {
    let x = mesh.cell(c).centroid;
    [1.0, p[0] - x[0], p[1] - x[1]]
}

const GRADS: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Value of cell `c`'s polynomial at `p`.
pub fn eval_2d(state: &DgState, mesh: &CutCellMesh, c: usize, p: Point) -> f64 {
    let phi = basis(mesh, c, p);
    state.cell(c).iter().zip(phi).map(|(a, b)| a * b).sum()
}

/// Gradient of cell `c`'s polynomial (zero for degree 0).
pub fn grad_2d(state: &DgState, c: usize) -> Point {
    let u = state.cell(c);
    if u.len() == 3 {
        [u[1], u[2]]
    } else {
        [0.0, 0.0]
    }
}

pub fn mass_2d(mesh: &CutCellMesh, degree: usize) -> Result<BlockDiagonal> {
    let nd = ndof_2d(degree)?;
    let mut blocks = Vec::with_capacity(mesh.num_cells() * nd * nd);
    for c in 0..mesh.num_cells() {
        let mut m = vec![0.0; nd * nd];
        for (p, w) in mesh.volume_quadrature(c, 2) {
            let phi = basis(mesh, c, p);
            for i in 0..nd {
                for j in 0..nd {
                    m[i * nd + j] += w * phi[i] * phi[j];
                }
            }
        }
        blocks.extend(m);
    }
    BlockDiagonal::new(nd, blocks)
}

/// L2 projection of `f` onto the cell polynomials.
pub fn project_2d(mesh: &CutCellMesh, degree: usize, f: impl Fn(Point) -> f64 + Sync) -> Result<DgState> {
    let nd = ndof_2d(degree)?;
    let coeffs: Vec<Vec<f64>> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            let r = mesh.cell_radius(c);
            let mut m = Matrix3::<f64>::zeros();
            let mut rhs = Vector3::<f64>::zeros();
            for (p, w) in mesh.volume_quadrature(c, VOLUME_DEGREE + 2) {
                let mut phi = basis(mesh, c, p);
                phi[1] /= r;
                phi[2] /= r;
                let fp = f(p);
                for i in 0..nd {
                    rhs[i] += w * fp * phi[i];
                    for j in 0..nd {
                        m[(i, j)] += w * phi[i] * phi[j];
                    }
                }
            }
            if nd == 1 {
                vec![rhs[0] / m[(0, 0)]]
            } else {
                let a = m.lu().solve(&rhs).expect("cell mass matrix is invertible");
                vec![a[0], a[1] / r, a[2] / r]
            }
        })
        .collect();
    Ok(DgState::new(nd, coeffs.concat()))
}

/// Upwind matrix `A` and the inflow functional. Boundary faces with inflow
/// take their data from `g` (or zero if `None`).
pub fn assemble_upwind_2d(
    mesh: &CutCellMesh,
    beta: &Velocity,
    degree: usize,
    g: Option<BoundaryData>,
) -> Result<(BlockMatrix, BoundaryLoad)> {
    let nd = ndof_2d(degree)?;
    let mut a = BlockMatrixBuilder::new(mesh.num_cells(), nd);
    for c in 0..mesh.num_cells() {
        if nd == 1 {
            // The volume term vanishes for constants.
            a.add(c, c, 0, 0, 0.0);
            continue;
        }
        for (p, w) in mesh.volume_quadrature(c, VOLUME_DEGREE) {
            let phi = basis(mesh, c, p);
            let b = beta.eval(p);
            for i in 0..nd {
                let bg = dot(b, GRADS[i]);
                for j in 0..nd {
                    a.add(c, c, i, j, -w * phi[j] * bg);
                }
            }
        }
    }
    let mut terms = Vec::new();
    for face in mesh.faces() {
        let l = face.left;
        for (p, w) in face.quadrature(FACE_POINTS) {
            let bn = dot(beta.eval(p), face.normal);
            let plus = bn.max(0.0);
            let minus = (-bn).max(0.0);
            let pl = basis(mesh, l, p);
            match face.right {
                Some(r) => {
                    let pr = basis(mesh, r, p);
                    for i in 0..nd {
                        for j in 0..nd {
                            a.add(l, l, i, j, w * plus * pl[j] * pl[i]);
                            a.add(l, r, i, j, -w * minus * pr[j] * pl[i]);
                            a.add(r, l, i, j, -w * plus * pl[j] * pr[i]);
                            a.add(r, r, i, j, w * minus * pr[j] * pr[i]);
                        }
                    }
                }
                None => {
                    for i in 0..nd {
                        for j in 0..nd {
                            a.add(l, l, i, j, w * plus * pl[j] * pl[i]);
                        }
                        if minus > 0.0 {
                            terms.push(BoundaryTerm {
                                dof: l * nd + i,
                                weight: -w * minus * pl[i],
                                point: p,
                            });
                        }
                    }
                }
            }
        }
    }
    let load = match g {
        Some(g) if !terms.is_empty() => BoundaryLoad::new(terms, g),
        _ => BoundaryLoad::zero(),
    };
    Ok((a.build(), load))
}

/// Per stabilized cell: maps from inflow-face trace coefficients to the cell
/// polynomial `w~` solving the local stationary transport problem, and the
/// trajectory length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOperator {
    pub cell: usize,
    /// `(face, 3x2 row-major map)` per inflow face, in the unscaled basis.
    pub maps: Vec<(usize, [f64; 6])>,
    /// Distance to the outflow faces along the flow, `l~`.
    pub distance: [f64; 3],
    /// Full trajectory length through each point, `l_T`.
    pub length: [f64; 3],
}

impl TrajectoryOperator {
    /// `T_E` applied to traces given per inflow face, in map order.
    pub fn apply(&self, traces: &[[f64; 2]]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for ((_, m), t) in self.maps.iter().zip(traces) {
            for i in 0..3 {
                out[i] += m[2 * i] * t[0] + m[2 * i + 1] * t[1];
            }
        }
        out
    }
}

/// Face basis `{1, (s - L/2) / L}` at `p`.
fn face_basis(a: Point, length: f64, p: Point) -> [f64; 2] {
    let s = ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)).sqrt();
    [1.0, (s - 0.5 * length) / length]
}

/// L2 projection onto the face basis of `f` on face `f_idx`.
pub fn project_on_face(mesh: &CutCellMesh, f_idx: usize, f: impl Fn(Point) -> f64) -> [f64; 2] {
    let face = mesh.face(f_idx);
    let mut m = [0.0; 2];
    for (p, w) in face.quadrature(FACE_POINTS) {
        let chi = face_basis(face.a, face.length, p);
        let v = f(p);
        m[0] += w * v * chi[0];
        m[1] += w * v * chi[1];
    }
    // The face basis is orthogonal with norms L and L/12.
    [m[0] / face.length, 12.0 * m[1] / face.length]
}

/// `2 x nd` matrices projecting cell `c`'s basis (values, or tangential
/// derivatives `grad phi . beta / |beta|`) onto the face basis of `f_idx`.
fn face_projection(
    mesh: &CutCellMesh,
    beta: &Velocity,
    f_idx: usize,
    c: usize,
    nd: usize,
    derivative: bool,
) -> Vec<[f64; 2]> {
    (0..nd)
        .map(|j| {
            project_on_face(mesh, f_idx, |p| {
                if derivative {
                    let b = beta.eval(p);
                    dot(GRADS[j], b) / b[0].hypot(b[1])
                } else {
                    basis(mesh, c, p)[j]
                }
            })
        })
        .collect()
}

fn scaled_basis(mesh: &CutCellMesh, c: usize, r: f64, p: Point) -> [f64; 3] {
    let phi = basis(mesh, c, p);
    [1.0, phi[1] / r, phi[2] / r]
}

/// Solve the local transport problems of a stabilized cell.
pub fn precompute_trajectory(
    mesh: &CutCellMesh,
    cls: &FaceClassification,
    beta: &Velocity,
    cell: usize,
) -> Result<TrajectoryOperator> {
    let inflow: Vec<usize> = cls.inflow(cell).collect();
    if inflow.is_empty() {
        return Err(Error::Stabilization(cell, "no inflow face".into()));
    }
    if cls.outflow(cell).next().is_none() {
        return Err(Error::Stabilization(cell, "no outflow face".into()));
    }
    let r = mesh.cell_radius(cell);
    let unscale = |v: Vector3<f64>| [v[0], v[1] / r, v[2] / r];
    // Forward operator and its reverse-flow counterpart.
    let mut k = Matrix3::<f64>::zeros();
    let mut k_rev = Matrix3::<f64>::zeros();
    let mut rhs_len = Vector3::<f64>::zeros();
    for (p, w) in mesh.volume_quadrature(cell, VOLUME_DEGREE) {
        let psi = scaled_basis(mesh, cell, r, p);
        let b = beta.eval(p);
        let speed = b[0].hypot(b[1]);
        for i in 0..3 {
            let bg = dot(b, GRADS[i]) / if i == 0 { 1.0 } else { r };
            rhs_len[i] += w * speed * psi[i];
            for j in 0..3 {
                k[(i, j)] -= w * psi[j] * bg;
                k_rev[(i, j)] += w * psi[j] * bg;
            }
        }
    }
    let mut face_rhs: Vec<SMatrix<f64, 3, 2>> = vec![SMatrix::zeros(); inflow.len()];
    for &f in &mesh.cell(cell).faces {
        let face = mesh.face(f);
        let n = face.normal_from(cell);
        let slot = inflow.iter().position(|&g| g == f);
        for (p, w) in face.quadrature(FACE_POINTS) {
            let bn = dot(beta.eval(p), n);
            let psi = scaled_basis(mesh, cell, r, p);
            for i in 0..3 {
                for j in 0..3 {
                    k[(i, j)] += w * bn.max(0.0) * psi[j] * psi[i];
                    k_rev[(i, j)] += w * (-bn).max(0.0) * psi[j] * psi[i];
                }
            }
            if let Some(s) = slot {
                let chi = face_basis(face.a, face.length, p);
                for i in 0..3 {
                    for q in 0..2 {
                        face_rhs[s][(i, q)] += w * (-bn).max(0.0) * chi[q] * psi[i];
                    }
                }
            }
        }
    }
    let lu = k.lu();
    let lu_rev = k_rev.lu();
    if !lu.is_invertible() || !lu_rev.is_invertible() {
        return Err(Error::Singular(format!("trajectory problem of cell {cell}")));
    }
    let mut maps = Vec::with_capacity(inflow.len());
    for (s, &f) in inflow.iter().enumerate() {
        let mut m = [0.0; 6];
        for q in 0..2 {
            let col = lu.solve(&face_rhs[s].column(q).into_owned()).expect("invertible");
            let v = unscale(col);
            for i in 0..3 {
                m[2 * i + q] = v[i];
            }
        }
        maps.push((f, m));
    }
    let distance = unscale(lu_rev.solve(&rhs_len).expect("invertible"));
    let traces: Vec<[f64; 2]> = inflow
        .iter()
        .map(|&f| {
            project_on_face(mesh, f, |p| {
                let phi = basis(mesh, cell, p);
                distance[0] + distance[1] * phi[1] + distance[2] * phi[2]
            })
        })
        .collect();
    let mut op = TrajectoryOperator {
        cell,
        maps,
        distance,
        length: [0.0; 3],
    };
    op.length = op.apply(&traces);
    Ok(op)
}

/// Parameters of the 2D stabilization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabConfig2D {
    /// Weight of the volume term of the gradient stabilization.
    pub rho: f64,
    /// Cells below this volume fraction are stabilized.
    pub threshold: f64,
}

impl Default for StabConfig2D {
    fn default() -> Self {
        Self {
            rho: 0.5,
            threshold: 0.1,
        }
    }
}

// Row contributions of one stabilized cell: (row cell, nd x 3 weights) for
// the mean part and the gradient part.
type RowWeights = Vec<(usize, Vec<f64>, Vec<f64>)>;

fn stab_rows(
    mesh: &CutCellMesh,
    cls: &FaceClassification,
    beta: &Velocity,
    op: &TrajectoryOperator,
    nd: usize,
    rho: f64,
) -> RowWeights {
    let e = op.cell;
    let lt = |phi: &[f64; 3]| op.length[0] + op.length[1] * phi[1] + op.length[2] * phi[2];
    let mut w0_e = vec![0.0; nd * 3];
    let mut w1_e = vec![0.0; nd * 3];
    if nd > 1 {
        for (p, w) in mesh.volume_quadrature(e, VOLUME_DEGREE) {
            let phi = basis(mesh, e, p);
            let b = beta.eval(p);
            let l = lt(&phi);
            for i in 0..nd {
                let bg = dot(b, GRADS[i]);
                for k in 0..3 {
                    w0_e[i * 3 + k] -= w * phi[k] * bg;
                    w1_e[i * 3 + k] -= rho * w * l * phi[k] * bg;
                }
            }
        }
    }
    let mut rows: RowWeights = Vec::new();
    for f in cls.outflow(e) {
        let face = mesh.face(f);
        let n = face.normal_from(e);
        let nb = face.neighbor(e);
        let mut w0_n = vec![0.0; nd * 3];
        let mut w1_n = vec![0.0; nd * 3];
        for (p, w) in face.quadrature(FACE_POINTS) {
            let bn = dot(beta.eval(p), n);
            let phi = basis(mesh, e, p);
            let l = lt(&phi);
            for i in 0..nd {
                for k in 0..3 {
                    w0_e[i * 3 + k] += w * bn * phi[k] * phi[i];
                    w1_e[i * 3 + k] += w * l * bn * phi[k] * phi[i];
                }
            }
            if let Some(nb) = nb {
                let psi = basis(mesh, nb, p);
                for i in 0..nd {
                    for k in 0..3 {
                        w0_n[i * 3 + k] -= w * bn * phi[k] * psi[i];
                        w1_n[i * 3 + k] -= w * l * bn * phi[k] * psi[i];
                    }
                }
            }
        }
        if let Some(nb) = nb {
            rows.push((nb, w0_n, w1_n));
        }
    }
    rows.push((e, w0_e, w1_e));
    rows
}

/// Penalty stabilization `J = J^0 + J^1` for the cells in `stabilized`,
/// with `eta_E` computed from the time step `dt`.
pub fn assemble_stab_2d(
    mesh: &CutCellMesh,
    cls: &FaceClassification,
    beta: &Velocity,
    degree: usize,
    dt: f64,
    stabilized: &[usize],
    rho: f64,
) -> Result<BlockMatrix> {
    let nd = ndof_2d(degree)?;
    crate::geom2d::check_not_adjacent(mesh, stabilized)?;
    let per_cell: Vec<Vec<(usize, usize, Vec<f64>)>> = stabilized
        .par_iter()
        .map(|&e| -> Result<Vec<(usize, usize, Vec<f64>)>> {
            let eta = capacity_2d(mesh, e, beta, dt, 0.5)?.eta;
            if eta == 0.0 {
                return Ok(Vec::new());
            }
            let op = precompute_trajectory(mesh, cls, beta, e)?;
            // Column maps (column cell, 3 x nd) from u to T_E([[u]]) and
            // T_E([[d_tau u]]).
            let mut cols: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
            let mut self_g0 = vec![0.0; 3 * nd];
            let mut self_g1 = vec![0.0; 3 * nd];
            for (f, m) in &op.maps {
                let nb = mesh.face(*f).neighbor(e).ok_or_else(|| {
                    Error::Stabilization(e, "inflow face on the domain boundary".into())
                })?;
                let mut g0 = vec![0.0; 3 * nd];
                let mut g1 = vec![0.0; 3 * nd];
                let pn = face_projection(mesh, beta, *f, nb, nd, false);
                let dn = face_projection(mesh, beta, *f, nb, nd, true);
                let pe = face_projection(mesh, beta, *f, e, nd, false);
                let de = face_projection(mesh, beta, *f, e, nd, true);
                for i in 0..3 {
                    for j in 0..nd {
                        for q in 0..2 {
                            let t = m[2 * i + q];
                            g0[i * nd + j] += t * pn[j][q];
                            g1[i * nd + j] += t * dn[j][q];
                            self_g0[i * nd + j] -= t * pe[j][q];
                            self_g1[i * nd + j] -= t * de[j][q];
                        }
                    }
                }
                cols.push((nb, g0, g1));
            }
            cols.push((e, self_g0, self_g1));
            let rows = stab_rows(mesh, cls, beta, &op, nd, rho);
            let mut out = Vec::new();
            for (row, w0, w1) in &rows {
                for (col, g0, g1) in &cols {
                    let mut blk = vec![0.0; nd * nd];
                    for i in 0..nd {
                        for j in 0..nd {
                            let mut acc = 0.0;
                            for k in 0..3 {
                                acc += w0[i * 3 + k] * g0[k * nd + j];
                                if nd > 1 {
                                    acc += w1[i * 3 + k] * g1[k * nd + j];
                                }
                            }
                            blk[i * nd + j] = eta * acc;
                        }
                    }
                    out.push((*row, *col, blk));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut j = BlockMatrixBuilder::new(mesh.num_cells(), nd);
    for (row, col, blk) in per_cell.into_iter().flatten() {
        j.add_block(row, col, &blk, 1.0);
    }
    Ok(j.build())
}

/// `0.6 / (2k + 1) * 0.5 h / max |beta|`.
pub fn cfl_timestep(mesh: &CutCellMesh, beta: &Velocity, degree: usize) -> Result<f64> {
    let vmax = beta.max_norm(mesh);
    if !(vmax > 0.0) {
        return Err(invalid("beta", "velocity vanishes everywhere"));
    }
    Ok(cfl_formula(mesh.h(), vmax, degree))
}

pub fn cfl_formula(h: f64, vmax: f64, degree: usize) -> f64 {
    0.6 / (2 * degree + 1) as f64 * 0.5 * h / vmax
}

/// Everything needed to advance a 2D problem.
#[derive(Debug, Clone)]
pub struct Discretization2D {
    pub mesh: CutCellMesh,
    pub beta: Velocity,
    pub degree: usize,
    pub classification: FaceClassification,
    pub stabilized: Vec<usize>,
    pub dt: f64,
    pub ops: OperatorSet,
}

impl Discretization2D {
    /// Assemble with the CFL time step (or `dt` when given).
    pub fn new(
        mesh: CutCellMesh,
        beta: Velocity,
        degree: usize,
        g: Option<BoundaryData>,
        cfg: StabConfig2D,
        dt: Option<f64>,
    ) -> Result<Self> {
        let classification = classify_faces(&mesh, &beta)?;
        let stabilized = crate::geom2d::stabilized_set(&mesh, cfg.threshold)?;
        let dt = match dt {
            Some(dt) => dt,
            None => cfl_timestep(&mesh, &beta, degree)?,
        };
        let mass = mass_2d(&mesh, degree)?;
        let (a, load) = assemble_upwind_2d(&mesh, &beta, degree, g)?;
        let j = assemble_stab_2d(&mesh, &classification, &beta, degree, dt, &stabilized, cfg.rho)?;
        let ops = OperatorSet::new(mass, a, j, load)?;
        Ok(Self {
            mesh,
            beta,
            degree,
            classification,
            stabilized,
            dt,
            ops,
        })
    }

    pub fn limiter(&self) -> impl Fn(&mut DgState) + '_ {
        move |s: &mut DgState| limit_2d_in_place(s, &self.mesh)
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.mesh.cells().iter().map(|c| c.volume).collect()
    }
}

/// Barth-Jespersen limiting: scale each gradient by the largest
/// `theta in [0, 1]` keeping the reconstruction at every face-neighbor
/// centroid within the range of the cell and neighbor means.
pub fn limit_2d_in_place(state: &mut DgState, mesh: &CutCellMesh) {
    if state.ndof() < 3 {
        return;
    }
    let means = state.means();
    let thetas: Vec<f64> = (0..mesh.num_cells())
        .map(|c| {
            let u = means[c];
            let g = grad_2d(state, c);
            let xc = mesh.cell(c).centroid;
            let mut lo = u;
            let mut hi = u;
            for nb in mesh.neighbors(c) {
                lo = lo.min(means[nb]);
                hi = hi.max(means[nb]);
            }
            let mut theta: f64 = 1.0;
            for nb in mesh.neighbors(c) {
                let xn = mesh.cell(nb).centroid;
                let d = g[0] * (xn[0] - xc[0]) + g[1] * (xn[1] - xc[1]);
                if d > 0.0 {
                    theta = theta.min((hi - u) / d);
                } else if d < 0.0 {
                    theta = theta.min((lo - u) / d);
                }
            }
            theta.clamp(0.0, 1.0)
        })
        .collect();
    for (c, t) in thetas.into_iter().enumerate() {
        let cell = state.cell_mut(c);
        cell[1] *= t;
        cell[2] *= t;
    }
}

pub fn limit_2d(state: &DgState, mesh: &CutCellMesh) -> DgState {
    let mut s = state.clone();
    limit_2d_in_place(&mut s, mesh);
    s
}

/// Samples `(s, u)` along the cut boundary, `s` the coordinate along the
/// ramp, sorted by `s`.
pub fn boundary_profile(state: &DgState, mesh: &CutCellMesh, ramp: &Ramp) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = mesh
        .faces()
        .iter()
        .filter(|f| f.boundary == Some(crate::geom2d::BoundaryTag::Cut))
        .flat_map(|f| {
            f.quadrature(FACE_POINTS)
                .into_iter()
                .map(move |(p, _)| (ramp.to_hat(p)[0], eval_2d(state, mesh, f.left, p)))
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub fn write_profile_csv<W: Write>(profile: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "s,u")?;
    for (s, u) in profile {
        writeln!(w, "{s:.17e},{u:.17e}")?;
    }
    Ok(())
}

/// Legacy VTK file with cell means and gradients.
pub fn write_solution_vtk<W: Write>(state: &DgState, mesh: &CutCellMesh, mut w: W) -> Result<()> {
    write_polydata_header(mesh, &mut w)?;
    writeln!(w, "CELL_DATA {}", mesh.num_cells())?;
    writeln!(w, "SCALARS mean double 1\nLOOKUP_TABLE default")?;
    for u in state.means() {
        writeln!(w, "{u:.17e}")?;
    }
    writeln!(w, "VECTORS gradient double")?;
    for c in 0..mesh.num_cells() {
        let g = grad_2d(state, c);
        writeln!(w, "{:.17e} {:.17e} 0", g[0], g[1])?;
    }
    Ok(())
}

/// Boundary data wrapper for closures.
pub fn boundary_data(f: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> BoundaryData {
    Arc::new(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dg1d::{assemble_1d, Boundary1D, StabConfig1D};
    use crate::geom2d::{build_ramp_mesh, stabilized_set, strip_mesh, BoundaryTag, FaceRole};
    use crate::mesh1d::build_mp_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp_setup(n: usize, gamma: f64, beta: Velocity) -> (CutCellMesh, FaceClassification, Vec<usize>) {
        let mesh = build_ramp_mesh(n, gamma).unwrap();
        let cls = classify_faces(&mesh, &beta).unwrap();
        let stab = stabilized_set(&mesh, 0.1).unwrap();
        (mesh, cls, stab)
    }

    #[test]
    fn constants_are_steady_with_matching_inflow() {
        for beta in [Velocity::ramp_constant(30.0), Velocity::ramp_varying(30.0)] {
            for degree in [0, 1] {
                let g = boundary_data(|_, _| 1.0);
                let mesh = build_ramp_mesh(20, 30.0).unwrap();
                let disc = Discretization2D::new(mesh, beta, degree, Some(g), StabConfig2D::default(), None)
                    .unwrap();
                let nd = ndof_2d(degree).unwrap();
                let mut u = vec![0.0; disc.ops.dim()];
                for c in 0..disc.mesh.num_cells() {
                    u[c * nd] = 1.0;
                }
                let mut f = vec![0.0; u.len()];
                disc.ops.rhs(0.0, &u, &mut f);
                let mass = disc.ops.mass().mul(&f);
                let worst = mass.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(worst < 1e-15, "degree {degree}: {worst:e}");
            }
        }
    }

    #[test]
    fn single_cartesian_cell_p0_face_integrals() {
        let mesh = build_ramp_mesh(10, 30.0).unwrap();
        let beta = Velocity::ramp_constant(30.0);
        let (a, _) = assemble_upwind_2d(&mesh, &beta, 0, None).unwrap();
        let b = beta.eval([0.5, 0.5]);
        let h = mesh.h();
        let c = (0..mesh.num_cells())
            .find(|&c| mesh.cell(c).background == (2, 8))
            .unwrap();
        // Outflow through the right and top faces.
        assert!((a.block(c, c).unwrap()[0] - h * (b[0] + b[1])).abs() < 1e-15);
        let left = (0..mesh.num_cells())
            .find(|&k| mesh.cell(k).background == (1, 8))
            .unwrap();
        let below = (0..mesh.num_cells())
            .find(|&k| mesh.cell(k).background == (2, 7))
            .unwrap();
        assert!((a.block(c, left).unwrap()[0] + h * b[0]).abs() < 1e-15);
        assert!((a.block(c, below).unwrap()[0] + h * b[1]).abs() < 1e-15);
    }

    /// 2D blocks restricted to x-dependent dofs, in the 1D basis scaling.
    fn reduce(blk: &[f64], hr: f64, hc: f64, height: f64, nd2: usize, nd1: usize) -> Vec<f64> {
        let s = |h: f64, k: usize| if k == 0 { 1.0 } else { h };
        let mut out = vec![0.0; nd1 * nd1];
        for i in 0..nd1 {
            for j in 0..nd1 {
                out[i * nd1 + j] = blk[i * nd2 + j] / (s(hr, i) * s(hc, j) * height);
            }
        }
        out
    }

    #[test]
    fn slab_reproduces_1d_operators() {
        for degree in [0usize, 1] {
            for (alpha, rho) in [(0.02, 0.5), (1e-4, 0.0), (0.3, 1.0)] {
                let lambda = 0.2;
                let m1 = build_mp_mesh(10, alpha, 5).unwrap();
                let cfg1 = StabConfig1D {
                    rho,
                    ..StabConfig1D::with_lambda(lambda)
                };
                let ops1 = assemble_1d(&m1, 1.0, degree, &cfg1, Boundary1D::Dirichlet(0.0)).unwrap();
                let height = m1.h();
                let mesh = strip_mesh(&m1, height).unwrap();
                let beta = Velocity::Constant { b: [1.0, 0.0] };
                let cls = classify_faces(&mesh, &beta).unwrap();
                let stab: Vec<usize> = m1.stabilized().collect();
                let dt = cfg1.dt(m1.h(), 1.0);
                let (a2, _) = assemble_upwind_2d(&mesh, &beta, degree, None).unwrap();
                let j2 = assemble_stab_2d(&mesh, &cls, &beta, degree, dt, &stab, rho).unwrap();
                let nd1 = degree + 1;
                let nd2 = ndof_2d(degree).unwrap();
                for (m2, m1x, what) in [(&a2, ops1.upwind(), "A"), (&j2, ops1.stab(), "J")] {
                    for r in 0..m1.num_cells() {
                        for c in 0..m1.num_cells() {
                            let got = m2
                                .block(r, c)
                                .map(|b| reduce(b, m1.width(r), m1.width(c), height, nd2, nd1))
                                .unwrap_or(vec![0.0; nd1 * nd1]);
                            let want = m1x.block(r, c).map(|b| b.to_vec()).unwrap_or(vec![0.0; nd1 * nd1]);
                            for (g, w) in got.iter().zip(&want) {
                                assert!(
                                    (g - w).abs() < 1e-10 * (1.0 + w.abs()),
                                    "{what} deg {degree} alpha {alpha} ({r},{c}): {got:?} vs {want:?}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    /// Distance from `x` along `d` to the first face of `cell` it exits
    /// through.
    fn ray_exit(mesh: &CutCellMesh, cell: usize, x: Point, d: Point) -> f64 {
        let mut best = f64::INFINITY;
        for &f in &mesh.cell(cell).faces {
            let face = mesh.face(f);
            let n = face.normal_from(cell);
            let dn = dot(d, n);
            if dn <= 1e-14 {
                continue;
            }
            let t = dot([face.a[0] - x[0], face.a[1] - x[1]], n) / dn;
            best = best.min(t);
        }
        best
    }

    #[test]
    fn trajectory_operator_is_exact_for_constant_velocity() {
        let gamma: f64 = 30.0;
        let beta = Velocity::ramp_constant(gamma);
        let (mesh, cls, stab) = ramp_setup(30, gamma, beta);
        let b = beta.eval([0.0, 0.0]);
        let speed = b[0].hypot(b[1]);
        let dir = [b[0] / speed, b[1] / speed];
        let lin = |p: Point| 0.3 + 1.7 * p[0] - 0.9 * p[1];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for &e in &stab {
            let cell = mesh.cell(e);
            if cell.vertices.len() != 3 {
                continue;
            }
            let op = precompute_trajectory(&mesh, &cls, &beta, e).unwrap();
            let traces: Vec<[f64; 2]> = op.maps.iter().map(|(f, _)| project_on_face(&mesh, *f, lin)).collect();
            let w = op.apply(&traces);
            for _ in 0..10 {
                let (mut l1, mut l2) = (rng.gen::<f64>(), rng.gen::<f64>());
                if l1 + l2 > 1.0 {
                    l1 = 1.0 - l1;
                    l2 = 1.0 - l2;
                }
                let v = &cell.vertices;
                let x = [
                    v[0][0] + l1 * (v[1][0] - v[0][0]) + l2 * (v[2][0] - v[0][0]),
                    v[0][1] + l1 * (v[1][1] - v[0][1]) + l2 * (v[2][1] - v[0][1]),
                ];
                let back = ray_exit(&mesh, e, x, [-dir[0], -dir[1]]);
                let fwd = ray_exit(&mesh, e, x, dir);
                let origin = [x[0] - back * dir[0], x[1] - back * dir[1]];
                let phi = basis(&mesh, e, x);
                let ev = |c: &[f64; 3]| c[0] + c[1] * phi[1] + c[2] * phi[2];
                assert!((ev(&w) - lin(origin)).abs() < 1e-11, "cell {e}");
                assert!((ev(&op.distance) - fwd).abs() < 1e-11, "cell {e}");
                assert!((ev(&op.length) - (fwd + back)).abs() < 1e-11, "cell {e}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn trajectory_operator_preserves_constants_and_lengths_are_nonnegative() {
        for beta in [Velocity::ramp_constant(15.0), Velocity::ramp_varying(15.0)] {
            let (mesh, cls, stab) = ramp_setup(40, 15.0, beta);
            for &e in &stab {
                let op = precompute_trajectory(&mesh, &cls, &beta, e).unwrap();
                let ones = vec![[1.0, 0.0]; op.maps.len()];
                let w = op.apply(&ones);
                assert!((w[0] - 1.0).abs() < 1e-12);
                let r = mesh.cell_radius(e);
                assert!(w[1].abs() * r < 1e-12 && w[2].abs() * r < 1e-12);
                let pts = mesh.volume_quadrature(e, VOLUME_DEGREE).into_iter().chain(
                    cls.outflow(e).flat_map(|f| mesh.face(f).quadrature(FACE_POINTS)),
                );
                for (p, _) in pts {
                    let phi = basis(&mesh, e, p);
                    let l = op.length[0] + op.length[1] * phi[1] + op.length[2] * phi[2];
                    assert!(l >= -1e-14, "cell {e}: {l}");
                }
            }
        }
    }

    #[test]
    fn stabilization_is_locally_conservative() {
        let gamma = 30.0;
        for beta in [Velocity::ramp_varying(gamma), Velocity::ramp_constant(gamma)] {
            let (mesh, cls, stab) = ramp_setup(30, gamma, beta);
            let dt = cfl_timestep(&mesh, &beta, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for &e in &stab {
                let j = assemble_stab_2d(&mesh, &cls, &beta, 1, dt, &[e], 0.5).unwrap();
                let mut patch: Vec<usize> = cls
                    .outflow(e)
                    .filter_map(|f| mesh.face(f).neighbor(e))
                    .collect();
                patch.push(e);
                // Nonzero rows stay within the patch.
                for (r, _, _) in j.blocks() {
                    assert!(patch.contains(&r));
                }
                for _ in 0..5 {
                    let u: Vec<f64> = (0..j.dim()).map(|_| rng.gen::<f64>() - 0.5).collect();
                    let ju = j.mul(&u);
                    let total: f64 = patch.iter().map(|&r| ju[3 * r]).sum();
                    let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!(total.abs() <= 1e-12 * j.frobenius_norm() * unorm);
                }
            }
        }
    }

    #[test]
    fn zero_penalty_gives_empty_stabilization() {
        let beta = Velocity::ramp_constant(30.0);
        let (mesh, cls, stab) = ramp_setup(20, 30.0, beta);
        // A tiny time step saturates every capacity.
        let j = assemble_stab_2d(&mesh, &cls, &beta, 1, 1e-12, &stab, 0.5).unwrap();
        assert!(j.is_empty());
    }

    #[test]
    fn small_cells_have_expected_roles() {
        let beta = Velocity::ramp_varying(30.0);
        let (mesh, cls, stab) = ramp_setup(30, 30.0, beta);
        for &e in &stab {
            for &(f, role) in cls.faces(e) {
                if mesh.face(f).boundary == Some(BoundaryTag::Cut) {
                    assert_eq!(role, FaceRole::Outflow);
                }
            }
        }
    }

    #[test]
    fn cfl_examples() {
        assert!((cfl_formula(0.05, 2.0, 1) - 0.0025).abs() < 1e-16);
        assert!((cfl_formula(0.05, 2.0, 0) - 0.0075).abs() < 1e-16);
        let mesh = build_ramp_mesh(20, 30.0).unwrap();
        let dt = cfl_timestep(&mesh, &Velocity::ramp_constant(30.0), 1).unwrap();
        assert!((dt - 0.6 / 3.0 * 0.25 * mesh.h()).abs() < 1e-16);
        let zero = Velocity::Constant { b: [0.0, 0.0] };
        assert!(cfl_timestep(&mesh, &zero, 1).is_err());
    }

    #[test]
    fn limiter_keeps_linear_data_and_flattens_spikes() {
        let mesh = build_ramp_mesh(20, 30.0).unwrap();
        let lin = project_2d(&mesh, 1, |p| 0.5 + 2.0 * p[0] - p[1]).unwrap();
        let limited = limit_2d(&lin, &mesh);
        for (a, b) in lin.coeffs().iter().zip(limited.coeffs()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
        let mut spike = DgState::zeros(3, mesh.num_cells());
        let c = 150;
        spike.cell_mut(c).copy_from_slice(&[1.0, 3.0, -2.0]);
        let limited = limit_2d(&spike, &mesh);
        assert_eq!(limited.cell(c), &[1.0, 0.0, 0.0]);
        assert_eq!(limited.means(), spike.means());
    }

    #[test]
    fn projection_reproduces_linear_functions() {
        let mesh = build_ramp_mesh(20, 45.0).unwrap();
        let f = |p: Point| 1.0 - 3.0 * p[0] + 0.25 * p[1];
        let s = project_2d(&mesh, 1, f).unwrap();
        for c in 0..mesh.num_cells() {
            for v in &mesh.cell(c).vertices {
                assert!((eval_2d(&s, &mesh, c, *v) - f(*v)).abs() < 1e-12);
            }
        }
    }
}
