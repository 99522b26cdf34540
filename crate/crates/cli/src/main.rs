use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use caloricflow::{CliError, ExperimentConfig, Kind};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caloricflow", version, about = "Heat flow, caloric gauge and wave-map experiments into hyperbolic space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Dotted key overrides, e.g. --grid.n=256.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Harmonic map heat flow with its dissipation and comparison checks.
    Heatflow(Common),
    /// Caloric gauge construction and structure equations.
    Gauge(Common),
    /// Littlewood-Paley resolution and the energy identity.
    Energyspace(Common),
    /// Wave-map evolution with energy, stress and wave-tension diagnostics.
    Wavemap(Common),
    /// Every suite above on one data set.
    Verify(Common),
    /// Refinement study of one check.
    Converge {
        /// One of laplacian, geodesic-heat, comparison, stress-divergence, dalembert, wave-tension.
        #[arg(long)]
        check: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CALORICFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("CALORICFLOW_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Compute(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common, check) = match cli.command {
        Command::Heatflow(c) => (Kind::Heatflow, c, None),
        Command::Gauge(c) => (Kind::Gauge, c, None),
        Command::Energyspace(c) => (Kind::Energyspace, c, None),
        Command::Wavemap(c) => (Kind::Wavemap, c, None),
        Command::Verify(c) => (Kind::Verify, c, None),
        Command::Converge { check, common } => (Kind::Converge, common, check),
    };
    let outcome = threads()
        .and_then(|_| ExperimentConfig::load(&common.config, &common.overrides))
        .and_then(|cfg| caloricflow::run(kind, &cfg, check.as_deref()));
    match outcome {
        Ok(report) => {
            // a closed stdout must not turn a finished run into a panic
            let mut out = std::io::stdout().lock();
            for c in &report.checks {
                let _ = writeln!(
                    out,
                    "[{}] {} ({}): {:e} vs {:e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.anchor,
                    c.value,
                    c.threshold
                );
            }
            if let Some(t) = &report.convergence {
                let _ = writeln!(out, "order {:.3} (floor {})", t.order, t.floor);
            }
            let _ = writeln!(out, "report: {}", report.config.output_dir.join("report.json").display());
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("caloricflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
