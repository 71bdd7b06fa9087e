//! `choicegp`: generate choice data, fit and select models, predict and
//! evaluate, all from JSON files.

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{EvaluateArgs, FitArgs, GenerateArgs, PredictArgs, SelectArgs};

#[derive(Debug, Parser)]
#[command(name = "choicegp", version, about = "Gaussian-process choice functions from set-valued choice data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its ground truth
    Generate(GenerateArgs),
    /// Fit a model with a fixed latent dimension
    Fit(FitArgs),
    /// Fit d = 1..d_max and keep the best by leave-one-out fit
    SelectDim(SelectArgs),
    /// Predict choices for offered sets of test objects
    Predict(PredictArgs),
    /// Score predictions against observed choices
    Evaluate(EvaluateArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// bad flags, config or input files (exit 2)
    Usage(String),
    /// failure while running a valid command (exit 1)
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

/// Argument errors from the library are the caller's fault.
impl From<choicegp::Error> for CliError {
    fn from(e: choicegp::Error) -> Self {
        match e {
            choicegp::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Fit(a) => commands::fit(a),
        Command::SelectDim(a) => commands::select_dim(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.to_string(), "kind": e.kind() });
            eprintln!("{body}");
            ExitCode::from(e.code())
        }
    }
}
