use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::cache::ProfileCache;
use crate::config::{parse_pruners, DataSource, ExperimentConfig};
use crate::error::{Result, SharpError};
use crate::harness::{run_experiment, trial_data};
use crate::plots::emit_plots;
use crate::seqfile;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SHARP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "sharp-out";

#[derive(Debug, Parser)]
#[command(name = "sharp", version, about = "Visual-token pruning experiments on a toy causal decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment and write its CSV tables.
    Run(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `run.out_dir` and the SHARP_OUT_DIR variable.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One pruner or a comma-separated list (sharp, fastv, uniform, random).
    #[arg(long)]
    pub pruner: Option<String>,
    #[arg(long)]
    pub retention: Option<f32>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Write trial 0's input sequence to this file.
    #[arg(long)]
    pub dump_seq: Option<PathBuf>,
    /// Use this sequence file as the input of every trial.
    #[arg(long)]
    pub load_seq: Option<PathBuf>,
    /// Also render SVG plots from scores.csv.
    #[arg(long)]
    pub plots: bool,
}

/// Applies command-line overrides on top of the config file.
pub fn resolve(args: &RunArgs, env_out: Option<PathBuf>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(p) = &args.pruner {
        cfg.pruners = parse_pruners("--pruner", p)?;
    }
    if let Some(r) = args.retention {
        cfg.prune.retention = r;
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(path) = &args.load_seq {
        cfg.data = DataSource::File(path.clone());
    }
    cfg.plots |= args.plots;
    cfg.validate().map_err(|e| match e {
        SharpError::Config { field, message } => {
            let flag = match field.as_str() {
                "prune.retention" if args.retention.is_some() => "--retention".to_string(),
                "run.trials" if args.trials.is_some() => "--trials".to_string(),
                _ => field,
            };
            SharpError::config(flag, message)
        }
        other => other,
    })?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or(env_out)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    Ok((cfg, out))
}

pub fn execute(args: &RunArgs, env_out: Option<PathBuf>) -> Result<PathBuf> {
    let (cfg, out) = resolve(args, env_out)?;
    if let Some(path) = &args.dump_seq {
        let data = trial_data(&cfg, 0, None)?;
        seqfile::write(path, &data.file)?;
    }
    let cache = match &cfg.cache_dir {
        Some(dir) => ProfileCache::with_dir(dir)?,
        None => ProfileCache::in_memory(),
    };
    let report = run_experiment(&cfg, &cache)?;
    report.write_to(&out)?;
    if cfg.plots {
        // a plotting failure is reported but leaves the tables in place
        if let Err(e) = emit_plots(&out.join("scores.csv"), &out) {
            eprintln!("warning: plots not written: {e}");
        }
    }
    Ok(out)
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    match cli.command {
        Command::Run(args) => match execute(&args, env_out) {
            Ok(out) => {
                println!("wrote results to {}", out.display());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    }
}
