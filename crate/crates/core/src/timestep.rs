//! Explicit Euler, two-stage TVD Runge-Kutta and theta time stepping for
//! `M y' = -(A + J) y - b(t)`, with an optional limiter applied after every
//! stage.

use std::io::Write;

use nalgebra::{DMatrix, DVector, LU};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operators::OperatorSet;
use crate::state::DgState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeKind {
    ExplicitEuler,
    TvdRk2,
    /// `Theta = 0` explicit Euler, `1/2` trapezoidal, `1` implicit Euler.
    Theta { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub dt: f64,
    pub apply_limiter: bool,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, dt: f64) -> Self {
        Self {
            kind,
            dt,
            apply_limiter: false,
        }
    }

    pub fn with_limiter(mut self, on: bool) -> Self {
        self.apply_limiter = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("{} must be positive", self.dt)));
        }
        if let SchemeKind::Theta { theta } = self.kind {
            if !(0.0..=1.0).contains(&theta) {
                return Err(invalid("theta", format!("{theta} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Post-processing of a stage result, e.g. slope limiting.
pub trait Limiter {
    fn limit(&self, state: &mut DgState);
}

impl<F: Fn(&mut DgState)> Limiter for F {
    fn limit(&self, state: &mut DgState) {
        self(state)
    }
}

/// Reusable integrator; caches the factorization of the implicit matrix.
pub struct Stepper<'a> {
    ops: &'a OperatorSet,
    config: SchemeConfig,
    limiter: Option<&'a dyn Limiter>,
    implicit: Option<(LU<f64, nalgebra::Dyn, nalgebra::Dyn>, DMatrix<f64>)>,
    work: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        ops: &'a OperatorSet,
        config: SchemeConfig,
        limiter: Option<&'a dyn Limiter>,
    ) -> Result<Self> {
        config.validate()?;
        let implicit = match config.kind {
            SchemeKind::Theta { theta } => {
                let m = ops.mass().to_dense();
                let l = ops.operator().to_dense();
                let b = &m + &l * (config.dt * theta);
                let c = &m - &l * (config.dt * (1.0 - theta));
                let lu = b.lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular("theta-scheme matrix".into()));
                }
                Some((lu, c))
            }
            _ => None,
        };
        Ok(Self {
            ops,
            config,
            limiter,
            implicit,
            work: vec![0.0; ops.dim()],
        })
    }

    fn postprocess(&self, state: &mut DgState) {
        if self.config.apply_limiter {
            if let Some(l) = self.limiter {
                l.limit(state);
            }
        }
    }

    /// Advance `state` from time `t` by one step.
    pub fn step(&mut self, state: &DgState, t: f64) -> Result<DgState> {
        if state.coeffs().len() != self.ops.dim() {
            return Err(Error::Dimension {
                expected: self.ops.dim(),
                got: state.coeffs().len(),
            });
        }
        let dt = self.config.dt;
        let ndof = state.ndof();
        match self.config.kind {
            SchemeKind::ExplicitEuler => {
                self.ops.rhs(t, state.coeffs(), &mut self.work);
                let y: Vec<f64> = state
                    .coeffs()
                    .iter()
                    .zip(&self.work)
                    .map(|(y, f)| y + dt * f)
                    .collect();
                let mut next = DgState::new(ndof, y);
                self.postprocess(&mut next);
                Ok(next)
            }
            SchemeKind::TvdRk2 => {
                self.ops.rhs(t, state.coeffs(), &mut self.work);
                let y1: Vec<f64> = state
                    .coeffs()
                    .iter()
                    .zip(&self.work)
                    .map(|(y, f)| y + dt * f)
                    .collect();
                let mut stage = DgState::new(ndof, y1);
                self.postprocess(&mut stage);
                self.ops.rhs(t + dt, stage.coeffs(), &mut self.work);
                let y2: Vec<f64> = state
                    .coeffs()
                    .iter()
                    .zip(stage.coeffs())
                    .zip(&self.work)
                    .map(|((y0, y1), f)| 0.5 * y0 + 0.5 * y1 + 0.5 * dt * f)
                    .collect();
                let mut next = DgState::new(ndof, y2);
                self.postprocess(&mut next);
                Ok(next)
            }
            SchemeKind::Theta { theta } => {
                let (lu, c) = self.implicit.as_ref().expect("factorized in new");
                let y = DVector::from_column_slice(state.coeffs());
                let mut rhs = c * y;
                let dim = self.ops.dim();
                if !self.ops.boundary().is_zero() {
                    let b0 = self.ops.boundary().eval(t, dim);
                    let b1 = self.ops.boundary().eval(t + dt, dim);
                    for i in 0..dim {
                        rhs[i] -= dt * (theta * b1[i] + (1.0 - theta) * b0[i]);
                    }
                }
                let sol = lu
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("theta-scheme solve".into()))?;
                let mut next = DgState::new(ndof, sol.as_slice().to_vec());
                self.postprocess(&mut next);
                Ok(next)
            }
        }
    }
}

/// One step of `config.kind` from time `t`.
pub fn step(
    state: &DgState,
    ops: &OperatorSet,
    config: SchemeConfig,
    t: f64,
    limiter: Option<&dyn Limiter>,
) -> Result<DgState> {
    Stepper::new(ops, config, limiter)?.step(state, t)
}

/// Per-step diagnostics of the cell means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub step: usize,
    pub time: f64,
    pub tv_means: f64,
    pub l1: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
}

/// Evaluates total variation (over the listed neighbor pairs), L1 norm and
/// mass of the cell means.
#[derive(Debug, Clone)]
pub struct MeansObserver {
    volumes: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

impl MeansObserver {
    pub fn new(volumes: Vec<f64>, pairs: Vec<(usize, usize)>) -> Self {
        Self { volumes, pairs }
    }

    /// 1D chain `j, j + 1`, closed when `periodic`.
    pub fn chain(volumes: Vec<f64>, periodic: bool) -> Self {
        let n = volumes.len();
        let mut pairs: Vec<_> = (1..n).map(|j| (j - 1, j)).collect();
        if periodic && n > 1 {
            pairs.push((n - 1, 0));
        }
        Self { volumes, pairs }
    }

    pub fn record(&self, step: usize, time: f64, state: &DgState) -> DiagnosticRecord {
        let means = state.means();
        let tv = self
            .pairs
            .iter()
            .map(|&(a, b)| (means[a] - means[b]).abs())
            .sum();
        let l1 = means.iter().zip(&self.volumes).map(|(u, v)| u.abs() * v).sum();
        let mass = means.iter().zip(&self.volumes).map(|(u, v)| u * v).sum();
        let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        DiagnosticRecord {
            step,
            time,
            tv_means: tv,
            l1,
            mass,
            min,
            max,
        }
    }
}

/// Result of [`run`]: final state and one record per time level (the
/// initial state included).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: DgState,
    pub records: Vec<DiagnosticRecord>,
}

/// Apply `n_steps` steps starting at time zero.
pub fn run(
    state0: &DgState,
    ops: &OperatorSet,
    config: SchemeConfig,
    n_steps: usize,
    limiter: Option<&dyn Limiter>,
    observer: &MeansObserver,
) -> Result<RunOutput> {
    if n_steps == 0 {
        return Err(invalid("n_steps", "must be at least 1"));
    }
    let mut stepper = Stepper::new(ops, config, limiter)?;
    let mut state = state0.clone();
    let mut records = Vec::with_capacity(n_steps + 1);
    records.push(observer.record(0, 0.0, &state));
    for n in 0..n_steps {
        let t = n as f64 * config.dt;
        state = stepper.step(&state, t)?;
        if state.coeffs().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(n + 1));
        }
        records.push(observer.record(n + 1, (n + 1) as f64 * config.dt, &state));
    }
    Ok(RunOutput { state, records })
}

/// Writes `step,time,tv_means,l1,mass,min,max`.
pub fn write_records_csv<W: Write>(records: &[DiagnosticRecord], mut w: W) -> Result<()> {
    writeln!(w, "step,time,tv_means,l1,mass,min,max")?;
    for r in records {
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.step, r.time, r.tv_means, r.l1, r.mass, r.min, r.max
        )?;
    }
    Ok(())
}
