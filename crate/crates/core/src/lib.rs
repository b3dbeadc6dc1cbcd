//! Penalty-stabilized discontinuous Galerkin discretization of linear
//! advection on cut-cell meshes.
//!
//! The crate covers the 1D model problem (meshes, operators, limiter,
//! monotonicity and eigenvalue analysis) and the 2D ramp geometry
//! (exact half-plane clipping of a Cartesian grid, upwind DG, trajectory
//! operators, stabilization, Barth-Jespersen limiting), together with the
//! experiment drivers that reproduce the verification runs.

pub mod analysis;
pub mod dg1d;
pub mod dg2d;
pub mod error;
pub mod experiments;
pub mod geom2d;
pub mod linalg;
pub mod mesh1d;
pub mod operators;
pub mod quadrature;
pub mod state;
pub mod timestep;

pub use dg2d::{Discretization2D, StabConfig2D};
pub use error::{Error, Result};
pub use experiments::{ConvergenceReport, ExperimentConfig};
pub use geom2d::{CutCellMesh, Ramp, Velocity};
pub use linalg::{BlockDiagonal, BlockMatrix, BlockMatrixBuilder};
pub use mesh1d::{build_mp_mesh, build_scenario_mesh, Mesh1D, Scenario1D};
pub use operators::{BoundaryLoad, OperatorSet};
pub use state::DgState;
pub use timestep::{run, step, Stepper, DiagnosticRecord, Limiter, MeansObserver, SchemeConfig, SchemeKind};
