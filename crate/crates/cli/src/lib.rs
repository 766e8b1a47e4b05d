//! Command-line front end: configuration parsing, experiment dispatch and
//! output files.
//!
//! Exit codes: `0` success, `1` the experiment ran but failed its criterion
//! (or a solve failed mid-run), `2` invalid configuration or arguments.

// `!(x > 0.0)` and friends reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{execute, intervals_sweep, intervals_table, Outcome};
use crate::config::{parse_config_with, ConfigError, Experiment};
use crate::output::{resolve_output_dir, write_atomic};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "kslab", version, about = "Keller-Segel numerical laboratory")]
pub struct Cli {
    /// Worker threads for independent runs (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration file.
    pub config: PathBuf,
    /// Override a configuration key, e.g. `--set stepper.t_end=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and record diagnostics.
    Run(ConfigArgs),
    /// Compare parabolic-parabolic runs with the parabolic-elliptic limit over a lambda list.
    Sweep(ConfigArgs),
    /// Classify a list of initial masses as bounded or blowing up.
    Blowup(ConfigArgs),
    /// Print the admissible parameter intervals for (n, p, q).
    Intervals(IntervalArgs),
    /// Check the heat semigroup decay estimates.
    Semigroup(ConfigArgs),
    /// Measure the spatial and temporal order of the scheme.
    Refine(ConfigArgs),
    /// Run a perturbed twin and report the amplification.
    Stability(ConfigArgs),
    /// Monitor the distance to the heat flow for small data.
    Smalldata(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct IntervalArgs {
    #[arg(long)]
    pub n: u32,
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub q: f64,
    /// `midpoint` or `lower_quartile`.
    #[arg(long, default_value = "midpoint")]
    pub selector: String,
    /// Print CSV instead of an aligned table.
    #[arg(long)]
    pub csv: bool,
    /// Also write `intervals.csv` here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Additionally run a randomized sweep of this many (n, p, q) triples.
    #[arg(long)]
    pub sweep: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some()
            || matches!(
                c.downcast_ref::<kslab_core::Error>(),
                Some(kslab_core::Error::Config(_)) | Some(kslab_core::Error::Domain(_))
            )
    })
}

fn code_for(e: &anyhow::Error) -> i32 {
    if is_config_error(e) {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

fn intervals(a: &IntervalArgs) -> anyhow::Result<i32> {
    let selector = a.selector.parse()?;
    let table = intervals_table(a.n, a.p, a.q, selector, a.csv)?;
    print!("{table}");
    if let Some(dir) = &a.output {
        let dir = resolve_output_dir(Some(dir), dir);
        write_atomic(&dir.join("intervals.csv"), intervals_table(a.n, a.p, a.q, selector, true)?.as_bytes())?;
    }
    if let Some(cases) = a.sweep {
        let (text, clean) = intervals_sweep(cases, a.seed);
        print!("{text}");
        if !clean {
            return Ok(EXIT_FAILURE);
        }
    }
    Ok(EXIT_OK)
}

fn configured(exp: Experiment, a: &ConfigArgs) -> anyhow::Result<i32> {
    let cfg = parse_config_with(&a.config, &a.overrides)?;
    if let Some(declared) = cfg.experiment {
        if declared != exp {
            eprintln!("note: config declares `{}`, running `{}`", declared.name(), exp.name());
        }
    }
    let dir = resolve_output_dir(a.output.as_deref(), &cfg.output_dir);
    eprintln!("{}: writing to {}", exp.name(), dir.display());
    match execute(exp, &cfg, &dir)? {
        Outcome::Success => Ok(EXIT_OK),
        Outcome::Failure(m) => {
            eprintln!("{}: experiment failed: {m}", exp.name());
            Ok(EXIT_FAILURE)
        }
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_CONFIG;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Intervals(a) => intervals(a),
        Command::Run(a) => configured(Experiment::Run, a),
        Command::Sweep(a) => configured(Experiment::Sweep, a),
        Command::Blowup(a) => configured(Experiment::Blowup, a),
        Command::Semigroup(a) => configured(Experiment::Semigroup, a),
        Command::Refine(a) => configured(Experiment::Refine, a),
        Command::Stability(a) => configured(Experiment::Stability, a),
        Command::Smalldata(a) => configured(Experiment::Smalldata, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            code_for(&e)
        }
    }
}
