//! Linear-algebra checks on the assembled 1D operators: monotonicity of the
//! theta scheme, spectra of the explicit update, and TV / L1 of cell means.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh1d::Mesh1D;
use crate::operators::OperatorSet;
use crate::state::DgState;

/// `B = M + dt Theta (A + J)` and `C = M - dt (1 - Theta) (A + J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrices {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

pub fn build_theta_matrices(ops: &OperatorSet, dt: f64, theta: f64) -> ThetaMatrices {
    let m = ops.mass().to_dense();
    let l = ops.operator().to_dense();
    ThetaMatrices {
        b: &m + &l * (dt * theta),
        c: &m - &l * (dt * (1.0 - theta)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneReport {
    pub is_monotone: bool,
    pub min_entry: f64,
}

/// Smallest entry of `B^{-1} C`, formed by one LU solve per column.
pub fn check_monotone(tm: &ThetaMatrices, tol: f64) -> Result<MonotoneReport> {
    let n = tm.b.nrows();
    if tm.b.ncols() != n || tm.c.shape() != (n, n) {
        return Err(Error::Dimension {
            expected: n,
            got: tm.c.nrows(),
        });
    }
    let lu = tm.b.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Singular("B".into()));
    }
    let mut min_entry = f64::INFINITY;
    for j in 0..n {
        let col = DVector::from_column_slice(tm.c.column(j).as_slice());
        let x = lu
            .solve(&col)
            .ok_or_else(|| Error::Singular("B".into()))?;
        min_entry = x.iter().cloned().fold(min_entry, f64::min);
    }
    Ok(MonotoneReport {
        is_monotone: min_entry >= -tol,
        min_entry,
    })
}

/// Smallest entry of the explicit Euler update `I - dt M^{-1} (A + J)`,
/// computed block by block so that large meshes stay sparse. Structural
/// zeros count as entries.
pub fn min_explicit_update_entry(ops: &OperatorSet, dt: f64) -> Result<f64> {
    let nd = ops.ndof();
    let mass = ops.mass();
    let inverses: Vec<DMatrix<f64>> = (0..ops.n_cells())
        .map(|c| {
            DMatrix::from_row_slice(nd, nd, mass.block(c))
                .try_inverse()
                .ok_or_else(|| Error::Singular(format!("mass block {c}")))
        })
        .collect::<Result<_>>()?;
    let l = ops.operator();
    let mut has_diag = vec![false; ops.n_cells()];
    let mut min_entry: f64 = if nd > 1 || l.n_blocks() < ops.n_cells() * ops.n_cells() {
        0.0
    } else {
        f64::INFINITY
    };
    for (r, c, blk) in l.blocks() {
        let mut u = &inverses[r] * DMatrix::from_row_slice(nd, nd, blk) * (-dt);
        if r == c {
            has_diag[r] = true;
            for i in 0..nd {
                u[(i, i)] += 1.0;
            }
        }
        min_entry = u.iter().cloned().fold(min_entry, f64::min);
    }
    if has_diag.iter().any(|d| !d) {
        min_entry = min_entry.min(1.0);
    }
    Ok(min_entry)
}

/// `R = -dt M^{-1} (A + J)`, the increment matrix of one explicit Euler step.
pub fn stability_matrix(ops: &OperatorSet, dt: f64) -> DMatrix<f64> {
    let mut r = ops.operator().to_dense();
    let mass = ops.mass();
    for mut col in r.column_iter_mut() {
        mass.solve_in_place(col.as_mut_slice());
    }
    r * (-dt)
}

// Strongly connected components of the nonzero pattern (Tarjan, iterative).
fn strong_components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && m[(i, j)] != 0.0).collect())
        .collect();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            if *next < adj[v].len() {
                let w = adj[v][*next];
                *next += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

fn complex_matrix(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

/// Residual `||R v - lambda v||` of an eigenpair with `v` from shifted
/// inverse iteration.
fn eigen_residual(m: &DMatrix<Complex<f64>>, lambda: Complex<f64>, scale: f64) -> f64 {
    let n = m.nrows();
    let mut best = f64::INFINITY;
    for shift in [1e-13, 1e-11, 1e-9] {
        let sigma = lambda + Complex::new(shift * scale, shift * scale);
        let shifted = m - DMatrix::<Complex<f64>>::identity(n, n) * sigma;
        let lu = shifted.lu();
        let mut v = DVector::from_fn(n, |i, _| Complex::new(1.0 + 0.1 * i as f64, 0.3));
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(x) if x.iter().all(|c| c.re.is_finite() && c.im.is_finite()) => {
                    let norm = x.norm();
                    if norm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = x / Complex::new(norm, 0.0);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let r = (m * &v - &v * lambda).norm();
            best = best.min(r);
            if best <= 1e-12 * scale {
                break;
            }
        }
    }
    best
}

/// All eigenvalues of a square matrix.
///
/// The matrix is split into the diagonal blocks of its block-triangular
/// form (strongly connected components of the sparsity graph), and each
/// block goes through a real Schur decomposition. Upwind operators are
/// block lower triangular with many identical diagonal blocks; treating the
/// whole matrix at once would turn the resulting defective multiple
/// eigenvalues into clusters of size `sqrt(eps)`. Every returned eigenvalue
/// is checked to have an eigenvector residual below `1e-9 ||R||`.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: m.ncols(),
        });
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let full = complex_matrix(m);
    let mut out = Vec::with_capacity(n);
    for comp in strong_components(m) {
        let k = comp.len();
        let sub = DMatrix::from_fn(k, k, |i, j| m[(comp[i], comp[j])]);
        let values: Vec<Complex<f64>> = if k == 1 {
            vec![Complex::new(sub[(0, 0)], 0.0)]
        } else {
            let schur = nalgebra::linalg::Schur::try_new(sub.clone(), f64::EPSILON, 10_000)
                .ok_or_else(|| Error::Eigen(format!("Schur iteration on a {k}x{k} block")))?;
            schur.complex_eigenvalues().iter().copied().collect()
        };
        for lambda in values {
            if k > 1 {
                let res = eigen_residual(&full, lambda, scale);
                if !(res <= 1e-9 * scale) {
                    return Err(Error::Eigen(format!(
                        "residual {res:e} for eigenvalue {lambda} exceeds tolerance"
                    )));
                }
            }
            out.push(lambda);
        }
    }
    Ok(out)
}

/// `|1 + z + z^2/2| <= 1`, the stability region of two-stage TVD RK.
pub fn in_rk2_region(z: Complex<f64>) -> bool {
    in_rk2_region_tol(z, 0.0)
}

pub fn in_rk2_region_tol(z: Complex<f64>, tol: f64) -> bool {
    (Complex::new(1.0, 0.0) + z + z * z * 0.5).norm() <= 1.0 + tol
}

/// `|1 + z| <= 1`, the stability region of explicit Euler.
pub fn in_euler_region(z: Complex<f64>) -> bool {
    in_euler_region_tol(z, 0.0)
}

pub fn in_euler_region_tol(z: Complex<f64>, tol: f64) -> bool {
    (Complex::new(1.0, 0.0) + z).norm() <= 1.0 + tol
}

/// `sum_j |u_{j+1} - u_j|` over cell means, closed across `x = 1` when
/// `periodic`.
pub fn total_variation_means(state: &DgState, periodic: bool) -> f64 {
    let means = state.means();
    let n = means.len();
    let mut tv: f64 = means.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    if periodic && n > 1 {
        tv += (means[0] - means[n - 1]).abs();
    }
    tv
}

/// `sum_j |u_j| h_j` over cell means.
pub fn l1_norm_means(state: &DgState, mesh: &Mesh1D) -> f64 {
    state
        .means()
        .iter()
        .zip(mesh.widths())
        .map(|(u, h)| u.abs() * h)
        .sum()
}

/// One row of an eigenvalue sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenRecord {
    pub alpha: f64,
    pub rho: f64,
    pub value: Complex<f64>,
    pub in_region: bool,
}

/// Writes `alpha,rho,re,im,in_region`.
pub fn write_eigen_csv<W: Write>(records: &[EigenRecord], mut w: W) -> Result<()> {
    writeln!(w, "alpha,rho,re,im,in_region")?;
    for r in records {
        writeln!(
            w,
            "{:e},{},{:.17e},{:.17e},{}",
            r.alpha, r.rho, r.value.re, r.value.im, r.in_region
        )?;
    }
    Ok(())
}

/// One point of the monotonicity grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneRecord {
    pub theta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub min_entry: f64,
    pub monotone: bool,
}

/// Writes `theta,lambda,alpha,min_entry,monotone`.
pub fn write_monotone_csv<W: Write>(records: &[MonotoneRecord], mut w: W) -> Result<()> {
    writeln!(w, "theta,lambda,alpha,min_entry,monotone")?;
    for r in records {
        writeln!(
            w,
            "{},{},{:e},{:.17e},{}",
            r.theta, r.lambda, r.alpha, r.min_entry, r.monotone
        )?;
    }
    Ok(())
}


#[cfg(test)]
mod spectrum_tests {
    use super::*;
    use crate::dg1d::{assemble_1d, Boundary1D, StabConfig1D};
    use crate::mesh1d::build_mp_mesh;

    fn spectrum(alpha: f64, rho: f64) -> Vec<Complex<f64>> {
        let mesh = build_mp_mesh(5, alpha, 3).unwrap();
        let cfg = StabConfig1D {
            rho,
            uncapped: true,
            ..StabConfig1D::with_lambda(1.0 / 6.0)
        };
        let ops = assemble_1d(&mesh, 1.0, 1, &cfg, Boundary1D::Dirichlet(0.0)).unwrap();
        eigenvalues(&stability_matrix(&ops, mesh.h() / 6.0)).unwrap()
    }

    fn contains(ev: &[Complex<f64>], z: Complex<f64>, tol: f64) -> bool {
        ev.iter().any(|v| (v - z).norm() <= tol)
    }

    fn radius(ev: &[Complex<f64>]) -> f64 {
        ev.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn closed_form_eigenvalues_for_half_rho() {
        let s2 = 2f64.sqrt();
        for p in 1..=10 {
            let alpha = 0.5f64.powi(p);
            let ev = spectrum(alpha, 0.5);
            for sign in [1.0, -1.0] {
                let z = Complex::new(2.0, sign * s2);
                assert!(contains(&ev, -z / 6.0, 1e-10), "alpha {alpha}");
                assert!(contains(&ev, -z / 2.0, 1e-10), "alpha {alpha}");
                assert!(contains(&ev, z / (6.0 * (alpha - 1.0)), 1e-10), "alpha {alpha}");
            }
            assert!(ev.iter().all(|&z| in_rk2_region_tol(z, 1e-12)));
            assert!(radius(&ev) < 2.2);
        }
    }

    #[test]
    fn general_rho_matches_closed_form_pair() {
        // Remaining pair as a function of (alpha, rho).
        for (alpha, rho) in [(0.01, 0.0), (0.01, 0.3), (0.1, 0.8), (0.25, 1.0)] {
            let a: f64 = alpha;
            let num = 1.0 + 6.0 * a * rho - 5.0 * a - 2.0 * rho;
            let disc = 36.0 * a * a * rho * rho - 48.0 * a * a * rho + 13.0 * a * a
                - 24.0 * a * rho * rho
                + 28.0 * a * rho
                - 8.0 * a
                + 4.0 * rho * rho
                - 4.0 * rho
                + 1.0;
            let root = Complex::new(disc, 0.0).sqrt();
            let ev = spectrum(alpha, rho);
            for z in [(num + root) / (2.0 * a), (num - root) / (2.0 * a)] {
                assert!(contains(&ev, z, 1e-9 * z.norm().max(1.0)), "{alpha} {rho}: {z}");
            }
        }
    }

    #[test]
    fn zero_rho_spectrum_grows_as_alpha_shrinks() {
        let big = radius(&spectrum(1e-3, 0.0));
        let small = radius(&spectrum(0.1, 0.0));
        // Derived from the closed form: roughly 1/alpha against 5.37.
        assert!(big / small >= 10.0, "{big} vs {small}");
        assert!((1..=10).any(|p| radius(&spectrum(0.5f64.powi(p), 0.0)) > 10.0));
    }
}
