//! The `porousflow` command line: dataset generation, training,
//! evaluation, timing, and a built-in oracle suite.
//!
//! Every subcommand takes its randomness from a single `--seed` flag
//! (falling back to the `POROUSFLOW_SEED` environment variable, then 0),
//! and writes under a directory resolved from `--out`, `POROUSFLOW_OUT`,
//! or a per-command default. Identical flags and seed produce bitwise
//! identical outputs.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub use config::RunFile;

#[derive(Parser)]
#[command(
    name = "porousflow",
    version,
    about = "Physics-informed point-cloud models for flow through porous obstacles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate manufactured-solution cases with exact reference fields.
    GenMms(commands::gen_mms::Args),
    /// Generate parametric porous-duct cases (no reference fields).
    GenDuct(commands::gen_duct::Args),
    /// Train a model on a directory of cases.
    Train(commands::train::Args),
    /// Evaluate a checkpoint against reference fields, region by region.
    Eval(commands::eval::Args),
    /// Time forward passes of a checkpoint over a directory of cases.
    Bench(commands::bench::Args),
    /// Run the residual and derivative oracle suite.
    Check(commands::check::Args),
}

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code: 0 on success, 1 on runtime failures or failed oracles, 2 on
/// usage errors.
pub fn cli(argv: impl IntoIterator<Item = String>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::GenMms(args) => commands::gen_mms::run(args),
        Command::GenDuct(args) => commands::gen_duct::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Bench(args) => commands::bench::run(args),
        Command::Check(args) => commands::check::run(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Resolves the seed: explicit flag, then `POROUSFLOW_SEED`, then 0.
fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("POROUSFLOW_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .with_context(|| format!("POROUSFLOW_SEED is not an unsigned integer: {text:?}")),
        Err(_) => Ok(0),
    }
}

/// Resolves an output path: explicit flag, then `POROUSFLOW_OUT`, then
/// the command's default.
fn resolve_out(flag: Option<PathBuf>, default: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os("POROUSFLOW_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unknown_subcommands_exit_with_a_usage_error() {
        assert_eq!(cli(args(&["porousflow", "frobnicate"])), 2);
        assert_eq!(cli(args(&["porousflow", "train", "--no-such-flag"])), 2);
    }

    #[test]
    fn help_prints_and_exits_cleanly() {
        assert_eq!(cli(args(&["porousflow", "--help"])), 0);
        assert_eq!(cli(args(&["porousflow", "gen-mms", "--help"])), 0);
    }

    #[test]
    fn missing_inputs_fail_with_a_message_not_a_panic() {
        assert_eq!(
            cli(args(&[
                "porousflow",
                "train",
                "--model",
                "pipn",
                "--data",
                "/nonexistent-dataset",
                "--config",
                "/nonexistent-config.toml",
            ])),
            1
        );
    }

    #[test]
    fn explicit_seed_flags_win_over_the_default() {
        assert_eq!(resolve_seed(Some(9)).unwrap(), 9);
    }
}
