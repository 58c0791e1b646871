//! `oflow`: single entry point wiring the pipeline end to end.
//!
//! Exit codes: 0 ok, 1 user error (bad arguments, missing or malformed
//! inputs, config validation), 2 internal error.

mod commands;
mod config;
mod formats;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "oflow",
    version,
    about = "Generative order-flow engine: synthesize/parse feeds, preprocess, tokenize, train, simulate, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic feed
    Synth(commands::synth::SynthArgs),
    /// Parse a binary feed and dump its messages
    Parse(commands::parse::ParseArgs),
    /// Stationarize a feed into the 18-field representation
    Preprocess(commands::preprocess::PreprocessArgs),
    /// Encode preprocessed messages into the 24-slot token stream
    Tokenize(commands::tokenize::TokenizeArgs),
    /// Train the world agent on a token corpus
    Train(commands::train::TrainArgs),
    /// Run simulation trials from a checkpoint and history feed
    Simulate(commands::simulate::SimulateArgs),
    /// Compute the stylized-fact report over traces (and an empirical feed)
    Evaluate(commands::evaluate::EvaluateArgs),
}

/// Marker for failures caused by the invocation rather than the tool.
#[derive(Debug)]
pub struct UserError(pub String);

impl core::fmt::Display for UserError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UserError {}

pub fn user_error<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(anyhow::Error::new(UserError(msg.into())))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version go to stdout with code 0; real parse errors are user errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Synth(a) => commands::synth::run(a),
        Cmd::Parse(a) => commands::parse::run(a),
        Cmd::Preprocess(a) => commands::preprocess::run(a),
        Cmd::Tokenize(a) => commands::tokenize::run(a),
        Cmd::Train(a) => commands::train::run(a),
        Cmd::Simulate(a) => commands::simulate::run(a),
        Cmd::Evaluate(a) => commands::evaluate::run(a),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            if e.is::<UserError>() {
                eprintln!("error: {e}");
                std::process::exit(1);
            }
            eprintln!("internal error: {e:#}");
            std::process::exit(2);
        }
    }
}
