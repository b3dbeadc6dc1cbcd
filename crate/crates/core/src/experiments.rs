//! Experiment drivers: configurations, exact solutions, error norms,
//! convergence fits and the runs behind the command line tool.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{
    build_theta_matrices, check_monotone, eigenvalues, in_euler_region_tol, in_rk2_region_tol,
    min_explicit_update_entry, stability_matrix, write_eigen_csv, write_monotone_csv, EigenRecord,
    MonotoneRecord,
};
use crate::dg1d::{
    assemble_1d, assemble_ghost_penalty_1d, capacity_1d, eval_1d, limit_1d_in_place, project_1d,
    Boundary1D, StabConfig1D,
};
use crate::dg2d::{
    boundary_data, boundary_profile, cfl_timestep, eval_2d, limit_2d_in_place, project_2d,
    write_profile_csv, write_solution_vtk, Discretization2D, StabConfig2D,
};
use crate::error::{invalid, Error, Result};
use crate::geom2d::{build_ramp_mesh, Point, Ramp, Velocity, RAMP_X0};
use crate::mesh1d::{build_mp_mesh, build_scenario_mesh, Mesh1D, Scenario1D};
use crate::quadrature::gauss_interval;
use crate::state::DgState;
use crate::timestep::{run, write_records_csv, DiagnosticRecord, MeansObserver, SchemeConfig, SchemeKind};

/// Gauss points per 1D cell for projections and error norms.
const POINTS_1D: usize = 5;
/// Exactness degree of the 2D error quadrature.
const ERROR_DEGREE: usize = 6;
/// Position of the initial discontinuity of the 2D step data.
pub const STEP_FRONT: f64 = 4.0 / 15.0;

/// Which of the two ramp velocity fields to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityKind {
    /// Speed 2 parallel to the ramp.
    Constant,
    /// Speed `1 - y_hat / 2` parallel to the ramp.
    Varying,
}

impl VelocityKind {
    pub fn field(self, gamma_deg: f64) -> Velocity {
        match self {
            VelocityKind::Constant => Velocity::ramp_constant(gamma_deg),
            VelocityKind::Varying => Velocity::ramp_varying(gamma_deg),
        }
    }

    /// Transport speed along the ramp at distance `y_hat`.
    pub fn speed(self, y_hat: f64) -> f64 {
        match self {
            VelocityKind::Constant => 2.0,
            VelocityKind::Varying => 1.0 - 0.5 * y_hat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// `sin(2 pi x)` in 1D, a sine along the ramp in 2D.
    Sine,
    /// Indicator of `[0.1, 0.5]` in 1D, of `x_hat < 4/15` in 2D.
    Step,
}

/// Exact solutions of the five verification tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactSolution {
    /// Unit speed, periodic on `(0, 1)`.
    Periodic1D(InitialData),
    Ramp {
        ramp: Ramp,
        velocity: VelocityKind,
        data: InitialData,
    },
}

fn step_1d(x: f64) -> f64 {
    if (0.1..=0.5).contains(&x) {
        1.0
    } else {
        0.0
    }
}

impl ExactSolution {
    /// Exact solution of test `test` (1 to 5); `gamma_deg` and `velocity`
    /// are ignored in 1D.
    pub fn for_test(test: u8, gamma_deg: f64, velocity: VelocityKind) -> Result<Self> {
        let ramp = |data| ExactSolution::Ramp {
            ramp: Ramp::new(gamma_deg),
            velocity,
            data,
        };
        match test {
            1 | 3 => Ok(ExactSolution::Periodic1D(InitialData::Step)),
            2 => Ok(ExactSolution::Periodic1D(InitialData::Sine)),
            4 => Ok(ramp(InitialData::Sine)),
            5 => Ok(ramp(InitialData::Step)),
            _ => Err(invalid("test", format!("unknown test id {test}"))),
        }
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match *self {
            ExactSolution::Periodic1D(data) => {
                let s = (x - t).rem_euclid(1.0);
                match data {
                    InitialData::Sine => (2.0 * PI * s).sin(),
                    InitialData::Step => step_1d(s),
                }
            }
            ExactSolution::Ramp { ramp, velocity, data } => {
                let [xh, yh] = ramp.to_hat([x, y]);
                let s = xh - velocity.speed(yh) * t;
                match data {
                    InitialData::Sine => (2f64.sqrt() * PI * s / (1.0 - RAMP_X0)).sin(),
                    InitialData::Step => {
                        if s < STEP_FRONT {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    pub l1: f64,
    pub linf: f64,
}

/// L1 error by Gauss quadrature, Linf as the maximum over the same points.
pub fn error_norms_1d(state: &DgState, mesh: &Mesh1D, exact: impl Fn(f64) -> f64) -> ErrorNorms {
    let mut l1 = 0.0;
    let mut linf: f64 = 0.0;
    for j in 0..mesh.num_cells() {
        for (x, w) in gauss_interval(POINTS_1D, mesh.left(j), mesh.right(j)) {
            let e = (eval_1d(state, mesh, j, x) - exact(x)).abs();
            l1 += w * e;
            linf = linf.max(e);
        }
    }
    ErrorNorms { l1, linf }
}

/// L1 error by cell quadrature, Linf as the maximum over the quadrature
/// points.
pub fn error_norms_2d(
    state: &DgState,
    mesh: &crate::geom2d::CutCellMesh,
    exact: impl Fn(Point) -> f64 + Sync,
) -> ErrorNorms {
    let per_cell: Vec<(f64, f64)> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| {
            mesh.volume_quadrature(c, ERROR_DEGREE)
                .into_iter()
                .fold((0.0, 0.0f64), |(l1, linf), (p, w)| {
                    let e = (eval_2d(state, mesh, c, p) - exact(p)).abs();
                    (l1 + w * e, linf.max(e))
                })
        })
        .collect();
    per_cell
        .into_iter()
        .fold(ErrorNorms { l1: 0.0, linf: 0.0 }, |acc, (l1, linf)| ErrorNorms {
            l1: acc.l1 + l1,
            linf: acc.linf.max(linf),
        })
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn convergence_fit(h: &[f64], err: &[f64]) -> Result<f64> {
    if h.len() != err.len() {
        return Err(Error::Dimension {
            expected: h.len(),
            got: err.len(),
        });
    }
    if h.len() < 3 {
        return Err(Error::TooFewLevels { needed: 3, got: h.len() });
    }
    if h.iter().chain(err).any(|v| !(*v > 0.0)) {
        return Err(invalid("err", "mesh widths and errors must be positive"));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub n: usize,
    pub h: f64,
    pub l1: f64,
    pub linf: f64,
}

/// Errors per mesh level; rates only when there are at least three levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelError>,
    pub rate_l1: Option<f64>,
    pub rate_linf: Option<f64>,
}

impl ConvergenceReport {
    pub fn new(levels: Vec<LevelError>) -> Result<Self> {
        let (rate_l1, rate_linf) = if levels.len() >= 3 {
            let h: Vec<f64> = levels.iter().map(|l| l.h).collect();
            let l1: Vec<f64> = levels.iter().map(|l| l.l1).collect();
            let linf: Vec<f64> = levels.iter().map(|l| l.linf).collect();
            (Some(convergence_fit(&h, &l1)?), Some(convergence_fit(&h, &linf)?))
        } else {
            (None, None)
        };
        Ok(Self {
            levels,
            rate_l1,
            rate_linf,
        })
    }

    /// Writes `N,h,l1,linf`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "N,h,l1,linf")?;
        for l in &self.levels {
            writeln!(w, "{},{:.17e},{:.17e},{:.17e}", l.n, l.h, l.l1, l.linf)?;
        }
        Ok(())
    }
}

/// Number of equal steps of at most `dt_max` reaching `t_end`.
pub fn step_count(t_end: f64, dt_max: f64) -> Result<usize> {
    if !(t_end > 0.0 && dt_max > 0.0) {
        return Err(invalid("t_end", format!("{t_end} with time step {dt_max}")));
    }
    Ok(((t_end / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
}

/// Single small cell between two unit cells (`x_{k-1/2} = 0.5` for the
/// defaults): spectra and one trapezoidal step for no stabilization, the
/// jump penalty and the proposed penalty, all with P0 and periodic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallCellConfig {
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub theta: f64,
}

impl Default for SmallCellConfig {
    fn default() -> Self {
        Self {
            n: 20,
            k: 11,
            alpha: 1e-3,
            lambda: 0.5,
            theta: 0.5,
        }
    }
}

/// 1D periodic transport on a scenario mesh over several levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpConfig {
    pub scenario: Scenario1D,
    pub levels: Vec<usize>,
    pub degree: usize,
    pub lambda: f64,
    pub rho: f64,
    pub scheme: SchemeKind,
    pub limiter: bool,
    pub initial: InitialData,
    pub t_end: f64,
}

impl Default for MpConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario1D::S2 { seed: 1 },
            levels: vec![20, 40, 80, 160, 320],
            degree: 1,
            lambda: 1.0 / 6.0,
            rho: 0.5,
            scheme: SchemeKind::TvdRk2,
            limiter: false,
            initial: InitialData::Sine,
            t_end: 1.0,
        }
    }
}

/// Spectra of the explicit update on the model problem over a range of
/// cut fractions and gradient weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSweepConfig {
    pub n: usize,
    pub k: usize,
    pub degree: usize,
    pub lambda: f64,
    pub alphas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub uncapped: bool,
}

impl Default for EigenSweepConfig {
    fn default() -> Self {
        Self {
            n: 5,
            k: 3,
            degree: 1,
            lambda: 1.0 / 6.0,
            alphas: (1..=10).map(|i| 0.5f64.powi(i)).collect(),
            rhos: vec![0.5],
            uncapped: true,
        }
    }
}

/// Smallest entry of `B^{-1} C` for P0 over a grid of theta values and cut
/// fractions. Without an explicit `lambda` the time step is
/// `lambda = 0.9 / (2 (1 - theta))`, and 5 for the implicit scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneGridConfig {
    pub n: usize,
    pub k: usize,
    pub thetas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub lambda: Option<f64>,
}

impl Default for MonotoneGridConfig {
    fn default() -> Self {
        Self {
            n: 10,
            k: 5,
            thetas: vec![0.0, 0.5, 1.0],
            alphas: vec![0.5, 1e-2, 1e-8],
            lambda: None,
        }
    }
}

impl MonotoneGridConfig {
    pub fn lambda_for(&self, theta: f64) -> f64 {
        match self.lambda {
            Some(l) => l,
            None if theta >= 1.0 => 5.0,
            None => 0.9 / (2.0 * (1.0 - theta)),
        }
    }
}

/// Transport over the ramp with the exact solution as inflow data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampConfig {
    pub gamma: f64,
    pub velocity: VelocityKind,
    pub levels: Vec<usize>,
    pub degree: usize,
    pub limiter: bool,
    pub rho: f64,
    pub t_end: f64,
    pub initial: InitialData,
}

impl RampConfig {
    /// Smooth data, `T = 0.5`, P1, four levels.
    pub fn convergence(gamma: f64, velocity: VelocityKind) -> Self {
        Self {
            gamma,
            velocity,
            levels: vec![20, 40, 80, 160],
            degree: 1,
            limiter: false,
            rho: 0.5,
            t_end: 0.5,
            initial: InitialData::Sine,
        }
    }

    /// Step data, `T = 0.4`, `N = 30`.
    pub fn step(gamma: f64, degree: usize, limiter: bool) -> Self {
        Self {
            gamma,
            velocity: VelocityKind::Varying,
            levels: vec![30],
            degree,
            limiter,
            rho: 0.5,
            t_end: 0.4,
            initial: InitialData::Step,
        }
    }

    fn exact(&self) -> ExactSolution {
        ExactSolution::Ramp {
            ramp: Ramp::new(self.gamma),
            velocity: self.velocity,
            data: self.initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentConfig {
    SmallCell(SmallCellConfig),
    MpConvergence(MpConfig),
    EigenSweep(EigenSweepConfig),
    MonotoneGrid(MonotoneGridConfig),
    RampConvergence(RampConfig),
    RampStep(RampConfig),
}

impl ExperimentConfig {
    /// Number of the verification test the configuration belongs to.
    pub fn test_id(&self) -> Option<u8> {
        match self {
            ExperimentConfig::SmallCell(_) => Some(1),
            ExperimentConfig::MpConvergence(c) => Some(match c.initial {
                InitialData::Sine => 2,
                InitialData::Step => 3,
            }),
            ExperimentConfig::RampConvergence(_) => Some(4),
            ExperimentConfig::RampStep(_) => Some(5),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let degree_ok = |d: usize| {
            if d > 1 {
                Err(invalid("degree", format!("{d} not in {{0, 1}}")))
            } else {
                Ok(())
            }
        };
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("{v} must be positive")))
            }
        };
        match self {
            ExperimentConfig::SmallCell(c) => {
                positive("alpha", c.alpha)?;
                positive("lambda", c.lambda)?;
                if !(0.0..=1.0).contains(&c.theta) {
                    return Err(invalid("theta", format!("{} outside [0, 1]", c.theta)));
                }
            }
            ExperimentConfig::MpConvergence(c) => {
                degree_ok(c.degree)?;
                positive("lambda", c.lambda)?;
                positive("t_end", c.t_end)?;
                if c.levels.is_empty() {
                    return Err(invalid("levels", "at least one level"));
                }
            }
            ExperimentConfig::EigenSweep(c) => {
                degree_ok(c.degree)?;
                positive("lambda", c.lambda)?;
                if c.alphas.is_empty() || c.rhos.is_empty() {
                    return Err(invalid("alphas", "empty sweep"));
                }
            }
            ExperimentConfig::MonotoneGrid(c) => {
                if c.thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(invalid("theta", "outside [0, 1]"));
                }
            }
            ExperimentConfig::RampConvergence(c) | ExperimentConfig::RampStep(c) => {
                degree_ok(c.degree)?;
                positive("t_end", c.t_end)?;
                if !(5.0..=45.0).contains(&c.gamma) {
                    return Err(invalid("gamma", format!("{} outside [5, 45]", c.gamma)));
                }
                if c.levels.is_empty() {
                    return Err(invalid("levels", "at least one level"));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Spectrum of `dt M^{-1} (-(A + J))` for one variant of the small-cell run.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub label: &'static str,
    pub eigenvalues: Vec<Complex<f64>>,
    /// Eigenvalues outside the explicit Euler region (tolerance 1e-12).
    pub outside_euler: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallCellResult {
    pub mesh: Mesh1D,
    pub small_cell: usize,
    pub spectra: Vec<Spectrum>,
    /// Initial means followed by the means after one step, per variant.
    pub initial: Vec<f64>,
    pub after_step: Vec<Vec<f64>>,
}

impl SmallCellResult {
    /// Small-cell value after one step for the variant `label`.
    pub fn small_value(&self, label: &str) -> Option<f64> {
        let i = self.spectra.iter().position(|s| s.label == label)?;
        Some(self.after_step[i][self.small_cell])
    }
}

pub const UNSTABILIZED: &str = "unstabilized";
pub const GHOST_PENALTY: &str = "ghost_penalty";
pub const STABILIZED: &str = "stabilized";

pub fn small_cell(cfg: &SmallCellConfig) -> Result<SmallCellResult> {
    let mesh = build_mp_mesh(cfg.n, cfg.alpha, cfg.k)?;
    let bc = Boundary1D::Periodic;
    let stab_cfg = StabConfig1D::with_lambda(cfg.lambda);
    let stabilized = assemble_1d(&mesh, 1.0, 0, &stab_cfg, bc)?;
    let eta = 1.0 - capacity_1d(cfg.alpha, cfg.lambda, stab_cfg.omega)?;
    let ghost = stabilized.with_stab(assemble_ghost_penalty_1d(&mesh, 0, eta, eta)?)?;
    let variants = [
        (UNSTABILIZED, stabilized.without_stabilization()),
        (GHOST_PENALTY, ghost),
        (STABILIZED, stabilized),
    ];
    let dt = stab_cfg.dt(mesh.h(), 1.0);
    let u0 = project_1d(&mesh, 0, POINTS_1D, step_1d);
    let observer = MeansObserver::chain(mesh.widths().to_vec(), true);
    let scheme = SchemeConfig::new(SchemeKind::Theta { theta: cfg.theta }, dt);
    let mut spectra = Vec::new();
    let mut after_step = Vec::new();
    for (label, ops) in &variants {
        let eigenvalues = eigenvalues(&stability_matrix(ops, dt))?;
        let outside_euler = eigenvalues.iter().filter(|z| !in_euler_region_tol(**z, 1e-12)).count();
        spectra.push(Spectrum {
            label,
            eigenvalues,
            outside_euler,
        });
        after_step.push(run(&u0, ops, scheme, 1, None, &observer)?.state.means());
    }
    let small_cell = mesh.stabilized().next().expect("one cut pair");
    Ok(SmallCellResult {
        small_cell,
        mesh,
        spectra,
        initial: u0.means(),
        after_step,
    })
}

/// Outcome of one mesh level of a 1D run.
#[derive(Debug, Clone)]
pub struct MpLevel {
    pub mesh: Mesh1D,
    pub state: DgState,
    pub errors: LevelError,
    pub records: Vec<DiagnosticRecord>,
    pub dt: f64,
}

pub fn mp_level(cfg: &MpConfig, n: usize) -> Result<MpLevel> {
    let mesh = build_scenario_mesh(cfg.scenario, n)?;
    let bc = Boundary1D::Periodic;
    let stab_cfg = StabConfig1D {
        rho: cfg.rho,
        ..StabConfig1D::with_lambda(cfg.lambda)
    };
    let ops = assemble_1d(&mesh, 1.0, cfg.degree, &stab_cfg, bc)?;
    let n_steps = step_count(cfg.t_end, stab_cfg.dt(mesh.h(), 1.0))?;
    let dt = cfg.t_end / n_steps as f64;
    let exact = ExactSolution::Periodic1D(cfg.initial);
    let mut u0 = project_1d(&mesh, cfg.degree, POINTS_1D, |x| exact.eval(x, 0.0, 0.0));
    let limiter = |s: &mut DgState| limit_1d_in_place(s, &mesh, bc);
    if cfg.limiter {
        limiter(&mut u0);
    }
    let observer = MeansObserver::chain(mesh.widths().to_vec(), true);
    let scheme = SchemeConfig::new(cfg.scheme, dt).with_limiter(cfg.limiter);
    let out = run(&u0, &ops, scheme, n_steps, Some(&limiter), &observer)?;
    let t = n_steps as f64 * dt;
    let e = error_norms_1d(&out.state, &mesh, |x| exact.eval(x, 0.0, t));
    Ok(MpLevel {
        errors: LevelError {
            n,
            h: mesh.h(),
            l1: e.l1,
            linf: e.linf,
        },
        mesh,
        state: out.state,
        records: out.records,
        dt,
    })
}

/// All levels (in parallel) and the convergence report.
pub fn mp_convergence(cfg: &MpConfig) -> Result<(ConvergenceReport, Vec<MpLevel>)> {
    let levels: Vec<MpLevel> = cfg
        .levels
        .par_iter()
        .map(|&n| mp_level(cfg, n))
        .collect::<Result<_>>()?;
    let report = ConvergenceReport::new(levels.iter().map(|l| l.errors).collect())?;
    Ok((report, levels))
}

/// Spectra of `R = -dt M^{-1} (A + J)` for every `(alpha, rho)`, flagged by
/// membership in the TVD-RK2 stability region.
pub fn eigen_sweep(cfg: &EigenSweepConfig) -> Result<Vec<EigenRecord>> {
    let pairs: Vec<(f64, f64)> = cfg
        .alphas
        .iter()
        .flat_map(|&a| cfg.rhos.iter().map(move |&r| (a, r)))
        .collect();
    let per_pair: Vec<Vec<EigenRecord>> = pairs
        .par_iter()
        .map(|&(alpha, rho)| {
            let mesh = build_mp_mesh(cfg.n, alpha, cfg.k)?;
            let stab_cfg = StabConfig1D {
                rho,
                uncapped: cfg.uncapped,
                ..StabConfig1D::with_lambda(cfg.lambda)
            };
            let ops = assemble_1d(&mesh, 1.0, cfg.degree, &stab_cfg, Boundary1D::Dirichlet(0.0))?;
            let r = stability_matrix(&ops, stab_cfg.dt(mesh.h(), 1.0));
            Ok(eigenvalues(&r)?
                .into_iter()
                .map(|value| EigenRecord {
                    alpha,
                    rho,
                    value,
                    in_region: in_rk2_region_tol(value, 1e-12),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

/// P0 monotonicity of the theta scheme on the model problem.
pub fn monotone_grid(cfg: &MonotoneGridConfig) -> Result<Vec<MonotoneRecord>> {
    let mut out = Vec::new();
    for &theta in &cfg.thetas {
        let lambda = cfg.lambda_for(theta);
        for &alpha in &cfg.alphas {
            let mesh = build_mp_mesh(cfg.n, alpha, cfg.k)?;
            let stab_cfg = StabConfig1D::with_lambda(lambda);
            let ops = assemble_1d(&mesh, 1.0, 0, &stab_cfg, Boundary1D::Dirichlet(0.0))?;
            let tm = build_theta_matrices(&ops, stab_cfg.dt(mesh.h(), 1.0), theta);
            let rep = check_monotone(&tm, 1e-12)?;
            out.push(MonotoneRecord {
                theta,
                lambda,
                alpha,
                min_entry: rep.min_entry,
                monotone: rep.is_monotone,
            });
        }
    }
    Ok(out)
}

/// Outcome of one mesh level of a ramp run.
pub struct RampLevel {
    pub disc: Discretization2D,
    pub state: DgState,
    pub errors: LevelError,
    pub records: Vec<DiagnosticRecord>,
    pub n_steps: usize,
    /// Smallest and largest cell mean at the final time.
    pub mean_bounds: (f64, f64),
    /// Smallest and largest value at vertices and quadrature points.
    pub point_bounds: (f64, f64),
    /// Smallest entry of the explicit update matrix (P0 only).
    pub explicit_update_min: Option<f64>,
}

fn point_bounds(state: &DgState, disc: &Discretization2D) -> (f64, f64) {
    let mesh = &disc.mesh;
    (0..mesh.num_cells())
        .flat_map(|c| {
            let cell = mesh.cell(c);
            cell.vertices
                .iter()
                .copied()
                .chain(mesh.volume_quadrature(c, 2).into_iter().map(|(p, _)| p))
                .map(move |p| eval_2d(state, mesh, c, p))
                .collect::<Vec<_>>()
        })
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn ramp_level(cfg: &RampConfig, n: usize) -> Result<RampLevel> {
    let mesh = build_ramp_mesh(n, cfg.gamma)?;
    let beta = cfg.velocity.field(cfg.gamma);
    let n_steps = step_count(cfg.t_end, cfl_timestep(&mesh, &beta, cfg.degree)?)?;
    let dt = cfg.t_end / n_steps as f64;
    let exact = cfg.exact();
    let g = boundary_data(move |p, t| exact.eval(p[0], p[1], t));
    let stab = StabConfig2D {
        rho: cfg.rho,
        ..StabConfig2D::default()
    };
    let disc = Discretization2D::new(mesh, beta, cfg.degree, Some(g), stab, Some(dt))?;
    let mut u0 = project_2d(&disc.mesh, cfg.degree, |p| exact.eval(p[0], p[1], 0.0))?;
    let limiter = |s: &mut DgState| limit_2d_in_place(s, &disc.mesh);
    if cfg.limiter {
        limiter(&mut u0);
    }
    let observer = MeansObserver::new(disc.volumes(), disc.mesh.neighbor_pairs());
    let scheme = SchemeConfig::new(SchemeKind::TvdRk2, dt).with_limiter(cfg.limiter);
    let out = run(&u0, &disc.ops, scheme, n_steps, Some(&limiter), &observer)?;
    let t = n_steps as f64 * dt;
    let e = error_norms_2d(&out.state, &disc.mesh, |p| exact.eval(p[0], p[1], t));
    let means = out.state.means();
    let mean_bounds = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let point_bounds = point_bounds(&out.state, &disc);
    let explicit_update_min = if cfg.degree == 0 {
        Some(min_explicit_update_entry(&disc.ops, dt)?)
    } else {
        None
    };
    Ok(RampLevel {
        errors: LevelError {
            n,
            h: disc.mesh.h(),
            l1: e.l1,
            linf: e.linf,
        },
        disc,
        state: out.state,
        records: out.records,
        n_steps,
        mean_bounds,
        point_bounds,
        explicit_update_min,
    })
}

pub fn ramp_convergence(cfg: &RampConfig) -> Result<(ConvergenceReport, Vec<RampLevel>)> {
    let levels: Vec<RampLevel> = cfg
        .levels
        .par_iter()
        .map(|&n| ramp_level(cfg, n))
        .collect::<Result<_>>()?;
    let report = ConvergenceReport::new(levels.iter().map(|l| l.errors).collect())?;
    Ok((report, levels))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn eigen_rows(s: &Spectrum, alpha: f64) -> Vec<EigenRecord> {
    s.eigenvalues
        .iter()
        .map(|&value| EigenRecord {
            alpha,
            rho: 0.5,
            value,
            in_region: in_euler_region_tol(value, 1e-12),
        })
        .collect()
}

fn write_1d_solution<W: Write>(level: &MpLevel, exact: ExactSolution, t: f64, mut w: W) -> Result<()> {
    writeln!(w, "x,u,exact")?;
    for j in 0..level.mesh.num_cells() {
        for x in [level.mesh.left(j), level.mesh.right(j)] {
            let u = eval_1d(&level.state, &level.mesh, j, x);
            writeln!(w, "{x:.17e},{u:.17e},{:.17e}", exact.eval(x, 0.0, t))?;
        }
    }
    Ok(())
}

fn write_ramp_outputs(cfg: &RampConfig, level: &RampLevel, dir: &Path) -> Result<()> {
    write_records_csv(&level.records, create(dir, "tv.csv")?)?;
    write_solution_vtk(&level.state, &level.disc.mesh, create(dir, "solution.vtk")?)?;
    let profile = boundary_profile(&level.state, &level.disc.mesh, &Ramp::new(cfg.gamma));
    write_profile_csv(&profile, create(dir, "boundary_profile.csv")?)
}

/// Runs `config`, writes its outputs and `config.json` into `out`, and
/// returns a summary of the key numbers.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<serde_json::Value> {
    config.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), config.to_json()?)?;
    let summary = match config {
        ExperimentConfig::SmallCell(cfg) => {
            let res = small_cell(cfg)?;
            for s in &res.spectra {
                let name = format!("eigen_{}.csv", s.label);
                write_eigen_csv(&eigen_rows(s, cfg.alpha), create(out, &name)?)?;
            }
            let mut w = create(out, "snapshot.csv")?;
            writeln!(w, "x,initial,{UNSTABILIZED},{GHOST_PENALTY},{STABILIZED}")?;
            for j in 0..res.mesh.num_cells() {
                write!(w, "{:.17e},{:.17e}", res.mesh.center(j), res.initial[j])?;
                for v in &res.after_step {
                    write!(w, ",{:.17e}", v[j])?;
                }
                writeln!(w)?;
            }
            w.flush()?;
            let per: serde_json::Map<_, _> = res
                .spectra
                .iter()
                .map(|s| {
                    (
                        s.label.to_string(),
                        json!({
                            "outside_euler": s.outside_euler,
                            "small_cell_value": res.small_value(s.label),
                        }),
                    )
                })
                .collect();
            json!({ "test": 1, "variants": per })
        }
        ExperimentConfig::MpConvergence(cfg) => {
            let (report, levels) = mp_convergence(cfg)?;
            report.write_csv(create(out, "errors.csv")?)?;
            let finest = levels.last().expect("validated nonempty");
            write_records_csv(&finest.records, create(out, "tv.csv")?)?;
            let t = finest.records.last().map_or(0.0, |r| r.time);
            write_1d_solution(finest, ExactSolution::Periodic1D(cfg.initial), t, create(out, "solution.csv")?)?;
            json!({ "test": config.test_id(), "report": report, "tv_non_increasing": tv_non_increasing(&finest.records, 1e-13) })
        }
        ExperimentConfig::EigenSweep(cfg) => {
            let records = eigen_sweep(cfg)?;
            write_eigen_csv(&records, create(out, "eigen.csv")?)?;
            let max_modulus = records.iter().map(|r| r.value.norm()).fold(0.0, f64::max);
            let outside = records.iter().filter(|r| !r.in_region).count();
            json!({ "eigenvalues": records.len(), "outside_rk2_region": outside, "max_modulus": max_modulus })
        }
        ExperimentConfig::MonotoneGrid(cfg) => {
            let records = monotone_grid(cfg)?;
            write_monotone_csv(&records, create(out, "monotone.csv")?)?;
            let min_entry = records.iter().map(|r| r.min_entry).fold(f64::INFINITY, f64::min);
            json!({ "points": records.len(), "all_monotone": records.iter().all(|r| r.monotone), "min_entry": min_entry })
        }
        ExperimentConfig::RampConvergence(cfg) | ExperimentConfig::RampStep(cfg) => {
            let (report, levels) = ramp_convergence(cfg)?;
            report.write_csv(create(out, "errors.csv")?)?;
            let finest = levels.last().expect("validated nonempty");
            write_ramp_outputs(cfg, finest, out)?;
            json!({
                "test": config.test_id(),
                "report": report,
                "mean_bounds": finest.mean_bounds,
                "point_bounds": finest.point_bounds,
                "explicit_update_min": finest.explicit_update_min,
                "stabilized_cells": finest.disc.stabilized.len(),
                "steps": finest.n_steps,
            })
        }
    };
    let mut w = create(out, "summary.json")?;
    writeln!(w, "{}", serde_json::to_string_pretty(&summary)?)?;
    w.flush()?;
    Ok(summary)
}

/// True when `tv_means` never grows by more than `rel_tol` times the
/// initial total variation.
pub fn tv_non_increasing(records: &[DiagnosticRecord], rel_tol: f64) -> bool {
    let scale = records.first().map_or(0.0, |r| r.tv_means).max(1.0);
    records
        .windows(2)
        .all(|w| w[1].tv_means <= w[0].tv_means + rel_tol * scale)
}
