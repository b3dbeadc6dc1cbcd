//! Command line driver for the cut-cell DG experiments.
//!
//! Every subcommand builds an experiment configuration, writes it to
//! `config.json` in the output directory together with the CSV/VTK results,
//! and prints a JSON summary. `run --config` replays a saved configuration.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cutdg::experiments::{
    run_experiment, EigenSweepConfig, ExperimentConfig, InitialData, MonotoneGridConfig, MpConfig,
    RampConfig, SmallCellConfig, VelocityKind,
};
use cutdg::{Scenario1D, SchemeKind};

#[derive(Parser)]
#[command(name = "cutdg", version, about = "Penalty-stabilized DG on cut-cell meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Single small cell in 1D: spectra and one trapezoidal step for the
    /// unstabilized, jump-penalty and stabilized schemes.
    Test1 {
        #[arg(long, default_value_t = 1e-3)]
        alpha: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[command(flatten)]
        output: Output,
    },
    /// 1D periodic transport on split-cell meshes over several levels.
    MpConvergence {
        /// Background cell counts, multiples of 10.
        #[arg(long = "N", value_delimiter = ',', default_value = "20,40,80,160,320")]
        n: Vec<usize>,
        #[arg(long, value_enum, default_value_t = ScenarioArg::S2)]
        scenario: ScenarioArg,
        /// Cut fraction for the uniform-fraction scenario.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        /// Seed for the random-fraction scenario.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, default_value_t = 1.0 / 6.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        #[arg(long, value_enum, default_value_t = SchemeArg::Rk2)]
        scheme: SchemeArg,
        #[arg(long)]
        limiter: bool,
        #[arg(long, value_enum, default_value_t = InitialArg::Sine)]
        initial: InitialArg,
        #[command(flatten)]
        output: Output,
    },
    /// Spectra of the explicit update on the model problem.
    EigenSweep {
        /// Cut fractions; defaults to 2^-1 .. 2^-10.
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 1.0 / 6.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        /// Cap the capacity at one instead of using the linear penalty weight.
        #[arg(long)]
        capped: bool,
        #[command(flatten)]
        output: Output,
    },
    /// P0 monotonicity of the theta scheme over theta and cut fraction.
    MonotoneGrid {
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        theta: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.01,1e-8")]
        alpha: Vec<f64>,
        /// Fixed CFL number; by default it depends on theta.
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Smooth data over the ramp, errors on several levels.
    RampConvergence {
        #[arg(long = "N", value_delimiter = ',', default_value = "20,40,80,160")]
        n: Vec<usize>,
        #[command(flatten)]
        ramp: RampArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Step data over the ramp on a single mesh.
    RampStep {
        #[arg(long = "N", default_value_t = 30)]
        n: usize,
        #[command(flatten)]
        ramp: RampArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Replay a saved `config.json`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct RampArgs {
    /// Ramp angle in degrees.
    #[arg(long, default_value_t = 30.0)]
    gamma: f64,
    #[arg(long, value_enum, default_value_t = VelocityArg::Varying)]
    velocity: VelocityArg,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    limiter: bool,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    /// Same fraction for every split cell.
    S1,
    /// Random fractions.
    S2,
    /// No split cells.
    S3,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Euler,
    Rk2,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitialArg {
    Sine,
    Step,
}

#[derive(Clone, Copy, ValueEnum)]
enum VelocityArg {
    Constant,
    Varying,
}

impl From<VelocityArg> for VelocityKind {
    fn from(v: VelocityArg) -> Self {
        match v {
            VelocityArg::Constant => VelocityKind::Constant,
            VelocityArg::Varying => VelocityKind::Varying,
        }
    }
}

impl From<InitialArg> for InitialData {
    fn from(v: InitialArg) -> Self {
        match v {
            InitialArg::Sine => InitialData::Sine,
            InitialArg::Step => InitialData::Step,
        }
    }
}

fn ramp_config(base: RampConfig, args: &RampArgs, levels: Vec<usize>) -> RampConfig {
    RampConfig {
        velocity: args.velocity.into(),
        levels,
        degree: args.degree.unwrap_or(base.degree),
        limiter: args.limiter,
        rho: args.rho,
        ..base
    }
}

fn build(command: Command) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    Ok(match command {
        Command::Test1 {
            alpha,
            lambda,
            theta,
            output,
        } => (
            ExperimentConfig::SmallCell(SmallCellConfig {
                alpha,
                lambda,
                theta,
                ..SmallCellConfig::default()
            }),
            output.out,
        ),
        Command::MpConvergence {
            n,
            scenario,
            alpha,
            seed,
            degree,
            lambda,
            rho,
            scheme,
            limiter,
            initial,
            output,
        } => {
            let scenario = match scenario {
                ScenarioArg::S1 => Scenario1D::S1 { alpha },
                ScenarioArg::S2 => Scenario1D::S2 { seed },
                ScenarioArg::S3 => Scenario1D::S3,
            };
            let scheme = match scheme {
                SchemeArg::Euler => SchemeKind::ExplicitEuler,
                SchemeArg::Rk2 => SchemeKind::TvdRk2,
            };
            let cfg = MpConfig {
                scenario,
                levels: n,
                degree,
                lambda,
                rho,
                scheme,
                limiter,
                initial: initial.into(),
                ..MpConfig::default()
            };
            (ExperimentConfig::MpConvergence(cfg), output.out)
        }
        Command::EigenSweep {
            alpha,
            rho,
            lambda,
            degree,
            capped,
            output,
        } => {
            let base = EigenSweepConfig::default();
            let cfg = EigenSweepConfig {
                alphas: if alpha.is_empty() { base.alphas.clone() } else { alpha },
                rhos: rho,
                lambda,
                degree,
                uncapped: !capped,
                ..base
            };
            (ExperimentConfig::EigenSweep(cfg), output.out)
        }
        Command::MonotoneGrid {
            theta,
            alpha,
            lambda,
            output,
        } => (
            ExperimentConfig::MonotoneGrid(MonotoneGridConfig {
                thetas: theta,
                alphas: alpha,
                lambda,
                ..MonotoneGridConfig::default()
            }),
            output.out,
        ),
        Command::RampConvergence { n, ramp, output } => {
            let base = RampConfig::convergence(ramp.gamma, ramp.velocity.into());
            (ExperimentConfig::RampConvergence(ramp_config(base, &ramp, n)), output.out)
        }
        Command::RampStep { n, ramp, output } => {
            let base = RampConfig::step(ramp.gamma, 0, false);
            (ExperimentConfig::RampStep(ramp_config(base, &ramp, vec![n])), output.out)
        }
        Command::Run { config, output } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            (ExperimentConfig::from_json(&text)?, output.out)
        }
    })
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (config, out) = build(cli.command)?;
    let summary = run_experiment(&config, &out)
        .with_context(|| format!("experiment {}", serde_json::to_string(&config).unwrap_or_default()))?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
