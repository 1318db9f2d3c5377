//! Command-line front end: `run`, `validate`, `list-experiments`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration,
//! 3 numerical divergence, 4 iteration limit.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::FoliateError;
use config::{ExperimentConfig, EXPERIMENTS};
use output::{write_manifest, write_table, ErrorRecord, Manifest};

#[derive(Debug, Parser)]
#[command(name = "foliate", version, about = "Lyapunov-Perron leaves, inertial manifolds and tracking points")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its tables and manifest.
    Run {
        config: PathBuf,
        /// Output directory; overrides `experiment.output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// RNG seed; overrides `experiment.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and resolve a config without running it.
    Validate { config: PathBuf },
    /// Print the experiment ids.
    ListExperiments,
}

pub fn exit_code(e: &FoliateError) -> i32 {
    match e {
        FoliateError::Config(_)
        | FoliateError::SpectralGap { .. }
        | FoliateError::InfeasibleTail { .. }
        | FoliateError::Dimension(_)
        | FoliateError::Domain(_) => 2,
        FoliateError::Divergence { .. } | FoliateError::DegenerateSequence(_) => 3,
        FoliateError::IterationLimit { .. } => 4,
        FoliateError::Leaf { source, .. } => exit_code(source),
    }
}

fn error_kind(e: &FoliateError) -> &'static str {
    match e {
        FoliateError::Config(_) => "config",
        FoliateError::SpectralGap { .. } => "spectral-gap",
        FoliateError::InfeasibleTail { .. } => "infeasible-tail",
        FoliateError::Dimension(_) => "dimension",
        FoliateError::Domain(_) => "domain",
        FoliateError::Divergence { .. } => "divergence",
        FoliateError::DegenerateSequence(_) => "degenerate-sequence",
        FoliateError::IterationLimit { .. } => "iteration-limit",
        FoliateError::Leaf { source, .. } => error_kind(source),
    }
}

fn residuals(e: &FoliateError) -> Vec<f64> {
    match e {
        FoliateError::IterationLimit { residuals, .. } => residuals.clone(),
        FoliateError::Leaf { source, .. } => residuals(source),
        _ => Vec::new(),
    }
}

fn record(e: &FoliateError) -> ErrorRecord {
    ErrorRecord {
        kind: error_kind(e).into(),
        message: e.to_string(),
        exit_code: exit_code(e),
        residuals: residuals(e),
    }
}

/// Runs `config` and returns the process exit code.
pub fn run(config: &Path, out: Option<&Path>, seed: Option<u64>) -> i32 {
    let out_str = out.map(|p| p.to_string_lossy().into_owned());
    let resolved = ExperimentConfig::load(config).and_then(|c| c.resolve(out_str.as_deref(), seed));
    let resolved = match resolved {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(dir) = out {
                let mut m = Manifest::new(None);
                m.status = "error".into();
                m.exit_code = exit_code(&e);
                m.error = Some(record(&e));
                if let Err(w) = write_manifest(dir, &m) {
                    eprintln!("error: {w:#}");
                }
            }
            return exit_code(&e);
        }
    };
    let dir = PathBuf::from(&resolved.output);
    let mut m = Manifest::new(Some(resolved.clone()));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: creating {}: {e}", dir.display());
        return 1;
    }
    let code = match experiments::run(&resolved) {
        Ok(o) => {
            m.summary = o.summary;
            m.warnings = o.warnings;
            let mut code = 0;
            for t in &o.tables {
                match write_table(&dir, t) {
                    Ok(files) => m.outputs.extend(files),
                    Err(e) => {
                        eprintln!("error: {e:#}");
                        code = 1;
                    }
                }
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            m.status = "error".into();
            m.error = Some(record(&e));
            exit_code(&e)
        }
    };
    m.exit_code = code;
    if code == 1 {
        m.status = "error".into();
    }
    match write_manifest(&dir, &m) {
        Ok(p) => println!("{}", p.display()),
        Err(e) => {
            eprintln!("error: {e:#}");
            return 1;
        }
    }
    code
}

pub fn validate(config: &Path) -> i32 {
    match ExperimentConfig::load(config).and_then(|c| c.resolve(None, None)) {
        Ok(r) => {
            match toml::to_string(&r) {
                Ok(s) => print!("{s}"),
                Err(e) => {
                    eprintln!("error: {e}");
                    return 1;
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, out, seed } => run(&config, out.as_deref(), seed),
        Command::Validate { config } => validate(&config),
        Command::ListExperiments => {
            for (id, what) in EXPERIMENTS {
                println!("{id:<30} {what}");
            }
            0
        }
    }
}
