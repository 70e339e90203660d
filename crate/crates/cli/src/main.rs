mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Experiments for semilinear Dirichlet problems with measure data.
#[derive(Parser, Debug)]
#[command(name = "dlab", version)]
struct Invocation {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Solve -Au = f(u) + mu and check the residual.
    Solve(Flags),
    /// Truncation sequence, u* and the reduced measure.
    Reduce(Flags),
    /// Comparison, contraction, a priori, energy and duality estimates.
    Audit(Flags),
    /// Kato inequalities and convex-image bounds for u = R mu.
    Kato(Flags),
    /// Nonlinear capacity of a set.
    Capacity(Flags),
    /// Monte Carlo check of the probabilistic representation.
    McCheck(Flags),
    /// Dirac collapse study over a refinement family.
    Collapse(Flags),
    /// Capacity scaling study over a refinement family.
    CapScaling(Flags),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// TOML experiment config with dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, e.g. `solver.tol=1e-12`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the wall-clock timestamp and zero all runtimes.
    #[arg(long)]
    pub no_timestamp: bool,
    /// Capacity set as comma-separated state indices.
    #[arg(long, value_delimiter = ',')]
    pub set: Option<Vec<usize>>,
    /// Exponent: capacity exponent for `capacity`/`cap-scaling`, nonlinearity
    /// exponent otherwise.
    #[arg(long)]
    pub p: Option<f64>,
    /// Enable brute-force cross-checks where defined.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub start: Option<usize>,
}

fn main() -> ExitCode {
    let inv = Invocation::parse();
    let (name, flags) = match inv.command {
        Sub::Solve(f) => ("solve", f),
        Sub::Reduce(f) => ("reduce", f),
        Sub::Audit(f) => ("audit", f),
        Sub::Kato(f) => ("kato", f),
        Sub::Capacity(f) => ("capacity", f),
        Sub::McCheck(f) => ("mc-check", f),
        Sub::Collapse(f) => ("collapse", f),
        Sub::CapScaling(f) => ("cap-scaling", f),
    };
    match commands::run(name, &flags) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("dlab {name}: {e}");
            ExitCode::from(1)
        }
    }
}
