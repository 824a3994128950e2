//! Library half of the `beamlearn` tool: argument types, the commands and
//! their reports. `main.rs` only parses arguments and maps errors to exit
//! codes.

pub mod audio;
pub mod em;
pub mod enhance;
pub mod eval;
pub mod pgm;
pub mod synth;
pub mod table;
pub mod train;

use std::path::Path;

use beamlearn::kvconfig::KeyValues;
use beamlearn::{Error, Result};
use clap::{ArgAction, Parser, Subcommand, ValueEnum};

pub const THREADS_ENV: &str = "BEAMLEARN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "beamlearn", version, about = "Unsupervised mask estimation for GEV beamforming")]
pub struct Cli {
    /// Worker threads; defaults to the available cores. BEAMLEARN_THREADS
    /// takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Print the JSON mirror of the report instead of the text table.
    #[arg(long, global = true)]
    pub json: bool,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic multichannel scenes and a manifest.
    Synth(synth::SynthArgs),
    /// Train a mask estimator on the mixtures of a manifest.
    Train(train::TrainArgs),
    /// Beamform a recording with masks from a trained network.
    Enhance(enhance::EnhanceArgs),
    /// Beamform a recording with masks from plain mixture-model EM.
    Em(em::EmArgs),
    /// Score beamformers on scenes with known speech and noise.
    Eval(eval::EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn on(self) -> bool {
        self == Toggle::On
    }
}

/// A human-readable report and its machine-readable mirror.
#[derive(Clone, Debug)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
}

pub fn run(command: &Command) -> Result<Report> {
    match command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Enhance(a) => enhance::run(a),
        Command::Em(a) => em::run(a),
        Command::Eval(a) => eval::run(a),
    }
}

/// 2 for configuration problems, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Thread count from the environment, else the flag. `None` means the
/// default pool.
pub fn thread_count(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>> {
    let n = match env {
        Some(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("{THREADS_ENV}={v:?}: {e}")))?,
        ),
        None => flag,
    };
    if n == Some(0) {
        return Err(Error::Config("thread count must be positive".into()));
    }
    Ok(n)
}

/// Reads an optional `key = value` file and applies `key=value` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<KeyValues> {
    let mut kv = match path {
        Some(p) => KeyValues::read(p)?,
        None => KeyValues::default(),
    };
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Error::Config(format!("override {o:?} is not key=value")));
        };
        kv.set(k, v);
    }
    Ok(kv)
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn environment_overrides_thread_flag() {
        assert_eq!(thread_count(Some(3), None).unwrap(), Some(3));
        assert_eq!(thread_count(Some(3), Some("2")).unwrap(), Some(2));
        assert_eq!(thread_count(None, None).unwrap(), None);
        assert_eq!(exit_code(&thread_count(None, Some("0")).unwrap_err()), 2);
        assert_eq!(exit_code(&thread_count(None, Some("x")).unwrap_err()), 2);
    }

    #[test]
    fn overrides_replace_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.kv");
        std::fs::write(&p, "steps = 5\nseed = 1\n").unwrap();
        let mut kv = load_config(Some(&p), &["steps=7".into()]).unwrap();
        assert_eq!(kv.take::<usize>("steps").unwrap(), Some(7));
        assert_eq!(kv.take::<u64>("seed").unwrap(), Some(1));
        assert!(load_config(None, &["steps".into()]).is_err());
    }
}
