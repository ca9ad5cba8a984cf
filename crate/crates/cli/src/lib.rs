//! Command implementations behind the `billm` binary.
//!
//! Every command reads and writes plain files: `BLTC` containers in, `BLPQ`
//! packed layers, JSON reports and CSV curves out.

use std::fmt;
use std::fs;
use std::time::Instant;

use anyhow::{Context, Result};
use billm::{ContainerError, HessianError, MatrixError, PackError, QuantError};

pub mod args;
pub mod commands;
pub mod report;

pub use args::{Cli, Command};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Bad flag combination or value not caught by argument parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

/// Input files that are readable but inconsistent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

fn hessian_code(e: &HessianError) -> i32 {
    match e {
        HessianError::InvalidDamping(_) => EXIT_USAGE,
        HessianError::NotPositiveDefinite { .. } | HessianError::NotSymmetric(..) => EXIT_NUMERIC,
        HessianError::EmptyCalibration | HessianError::ShapeMismatch(..) => EXIT_DATA,
    }
}

/// Process exit code for an error: 2 usage, 3 data, 4 numeric.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>()
            || cause.is::<ContainerError>()
            || cause.is::<PackError>()
            || cause.is::<MatrixError>()
            || cause.is::<std::io::Error>()
        {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<HessianError>() {
            return hessian_code(e);
        }
        if let Some(e) = cause.downcast_ref::<QuantError>() {
            return match e {
                QuantError::InvalidConfig(_) | QuantError::InvalidGrid(_) | QuantError::EmptyGrid | QuantError::InvalidBits(_) => {
                    EXIT_USAGE
                }
                QuantError::NonPositiveDiagonal { .. } | QuantError::InvalidBreakpoint(_) => EXIT_NUMERIC,
                QuantError::Hessian(h) => hessian_code(h),
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

/// Runs one parsed command line, printing human output to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let c = commands::synth(&a)?;
            fs::write(&a.out, c.to_bytes()).with_context(|| format!("writing {}", a.out.display()))?;
            println!("wrote {} layers to {}", c.layer_names().len(), a.out.display());
        }
        Command::Quantize(a) => {
            let started = Instant::now();
            let (report, _) = commands::quantize(&a)?;
            print!("{}", commands::render_run(&report, started.elapsed().as_secs_f64()));
        }
        Command::Eval(a) => {
            let layers = commands::eval(&a)?;
            if let Some(path) = &a.json {
                let mut s = serde_json::to_string_pretty(&layers)?;
                s.push('\n');
                fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
            }
            print!("{}", commands::render_eval(&layers));
        }
        Command::Sweep(a) => {
            let csv = commands::sweep(&a)?;
            if a.out.is_none() {
                print!("{csv}");
            }
        }
        Command::Inspect(a) => {
            let r = commands::inspect(&a)?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                print!("{}", commands::render_inspect(&r));
            }
        }
    }
    Ok(())
}
