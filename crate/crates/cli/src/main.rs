use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use mtdc_cli::{cmd_certify, cmd_equilibrium, cmd_simulate, SimOverrides};
use mtdc_core::SimModel;

/// Simulation and certification toolkit for coordinated secondary frequency
/// control of AC areas coupled through a multi-terminal HVDC grid.
#[derive(Parser)]
#[command(name = "mtdc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the stability certificates of a configured system
    Certify {
        /// System description (TOML)
        config: PathBuf,
    },
    /// Simulate the configured scenario and write the trajectory as CSV
    Simulate {
        /// System description (TOML), must contain a [scenario] section
        config: PathBuf,
        /// Trajectory CSV destination
        #[arg(long)]
        output: PathBuf,
        /// Override the scenario's model
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// Override the scenario's horizon (seconds)
        #[arg(long)]
        t_end: Option<f64>,
        /// Override the scenario's output sampling interval (seconds)
        #[arg(long)]
        dt_output: Option<f64>,
    },
    /// Solve and report the steady state under the configured disturbance
    Equilibrium {
        /// System description (TOML)
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Nonlinear,
    PiLines,
}

impl From<ModelArg> for SimModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Linear => SimModel::Linear,
            ModelArg::Nonlinear => SimModel::Nonlinear,
            ModelArg::PiLines => SimModel::PiLines,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Certify { config } => cmd_certify(&config).map(|out| {
            print!("{}", out.text);
            out.exit_code()
        }),
        Command::Simulate {
            config,
            output,
            model,
            t_end,
            dt_output,
        } => cmd_simulate(
            &config,
            &output,
            SimOverrides {
                model: model.map(Into::into),
                t_end,
                dt_output,
            },
        )
        .map(|out| {
            print!("{}", out.text);
            0
        }),
        Command::Equilibrium { config } => cmd_equilibrium(&config).map(|out| {
            print!("{}", out.text);
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
