//! `lognorm-grid`: build DC microgrids, analyse their logarithmic-norm
//! stability, simulate them and run the role-switching stabilizer.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lognorm_grid::topology::ParamRanges;

use commands::{CliError, GenerateArgs};

const OUT_ENV: &str = "LOGNORM_GRID_OUT";

#[derive(Parser)]
#[command(
    name = "lognorm-grid",
    version,
    about = "DC microgrid logarithmic-norm stability toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (overridden by LOGNORM_GRID_OUT)
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the scenario's RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario document (JSON)
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Grow a grid by preferential attachment and write graph.json
    Generate {
        /// Number of buses
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0.05)]
        r_min: f64,
        #[arg(long, default_value_t = 0.5)]
        r_max: f64,
        #[arg(long, default_value_t = 1e-5)]
        l_min: f64,
        #[arg(long, default_value_t = 1e-4)]
        l_max: f64,
        #[arg(long, default_value_t = 1e-4)]
        c_min: f64,
        #[arg(long, default_value_t = 1e-3)]
        c_max: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Stability report and envelope; exits 0 if μ < 0, 2 otherwise
    Analyze(ScenarioArgs),
    /// Integrate the closed loop with load-step events
    Simulate(ScenarioArgs),
    /// Run the role-switching stabilizer
    Stabilize(ScenarioArgs),
}

fn out_dir(common: &Common) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| common.out.clone())
}

fn report(quiet: bool, lines: impl IntoIterator<Item = String>) {
    if !quiet {
        for l in lines {
            println!("{l}");
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Generate {
            nodes,
            r_min,
            r_max,
            l_min,
            l_max,
            c_min,
            c_max,
            common,
        } => {
            let args = GenerateArgs {
                nodes,
                seed: common.seed.unwrap_or(0),
                ranges: ParamRanges {
                    resistance: (r_min, r_max),
                    inductance: (l_min, l_max),
                    capacitance: (c_min, c_max),
                },
            };
            let written = commands::generate(&args, &out_dir(&common))?;
            report(
                common.quiet,
                written.iter().map(|p| format!("wrote {}", p.display())),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze(a) => {
            let resolved = commands::load_scenario(&a.scenario, a.common.seed)?;
            let (doc, written) = commands::analyze(&resolved, &out_dir(&a.common))?;
            let r = &doc.report;
            report(
                a.common.quiet,
                [
                    format!("mu        {:.10e}", r.mu),
                    format!("alpha     {:.10e}", r.alpha),
                    format!("two_norm  {:.10e}", r.two_norm),
                    format!("stable    {}", r.stable),
                ]
                .into_iter()
                .chain(written.iter().map(|p| format!("wrote {}", p.display()))),
            );
            Ok(if r.stable {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Simulate(a) => {
            let resolved = commands::load_scenario(&a.scenario, a.common.seed)?;
            let (status, written) = commands::simulate(&resolved, &out_dir(&a.common))?;
            report(
                a.common.quiet,
                [
                    format!("samples   {}", status.samples),
                    format!("diverged  {}", status.diverged),
                ]
                .into_iter()
                .chain(written.iter().map(|p| format!("wrote {}", p.display()))),
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Stabilize(a) => {
            let resolved = commands::load_scenario(&a.scenario, a.common.seed)?;
            let (outcome, written) = commands::stabilize(&resolved, &out_dir(&a.common))?;
            report(
                a.common.quiet,
                [
                    format!("decisions {}", outcome.decisions.len()),
                    format!("accepted  {}", outcome.accepted().count()),
                    format!("final mu  {:.10e}", outcome.final_mu()),
                ]
                .into_iter()
                .chain(written.iter().map(|p| format!("wrote {}", p.display()))),
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
