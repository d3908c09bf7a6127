//! `seepage` command-line driver.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "seepage", version, about = "Richards flow with seepage faces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Source {
    /// Named preset, see `seepage presets`.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub preset: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a scenario key, e.g. `solver.max_iter=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Only print errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Gamma0,
    #[value(name = "gamma0_hyb", alias = "gamma0-hyb")]
    Gamma0Hyb,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// The Neumann reference run on the same scenario.
    NeumannReference,
    /// The run of the first listed value.
    First,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its outputs.
    Run(Source),
    /// Run the Neumann reference and both seepage schemes and tabulate
    /// the max-norm head differences.
    Compare(Source),
    /// Run one scenario per penalty value.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma separated positive values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "neumann-reference")]
        baseline: Baseline,
    },
    /// Write the scenario mesh to `<out>/<name>.mesh`.
    Meshgen(Source),
    /// List presets, or print one as TOML.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let quiet = match &cli.command {
        Command::Run(s) | Command::Compare(s) | Command::Meshgen(s) => s.quiet,
        Command::Sweep { source, .. } => source.quiet,
        Command::Presets { .. } => false,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet {
        "error"
    } else {
        "warn"
    }))
    .format_timestamp(None)
    .init();

    let result = match cli.command {
        Command::Run(s) => commands::run(&s),
        Command::Compare(s) => commands::compare(&s),
        Command::Sweep {
            source,
            param,
            values,
            baseline,
        } => commands::sweep(&source, param, &values, baseline),
        Command::Meshgen(s) => commands::meshgen(&s),
        Command::Presets { show } => commands::presets(show.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
