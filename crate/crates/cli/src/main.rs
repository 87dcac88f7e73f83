//! `pointxfer`: preprocess meshes, train, fine-tune, evaluate and
//! gradient-check Point Transformer classifiers.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pointxfer::datasets::Split;

use commands::{Comparison, GradcheckArgs, PreprocessArgs, RunArgs};
use config::RawConfig;

/// Bad input detected before any compute (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "pointxfer", version, about = "Point Transformer training and transfer on point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// flat key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// override one key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// output directory; must be empty unless --force
    #[arg(long)]
    out: PathBuf,
    /// shorthand for --set seed=N
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RawConfig, Invalid> {
        let mut c = RawConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for s in &self.set {
            c.assign(s)?;
        }
        if let Some(seed) = self.seed {
            c.set("seed", &seed.to_string())?;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample `class/split/*.off` meshes into normalized PCLD clouds
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// record unreadable meshes and carry on with exit code 0
        #[arg(long)]
        skip_bad: bool,
        #[arg(long)]
        force: bool,
    },
    /// Train a model from scratch
    Train(ConfigArgs),
    /// Re-head a checkpoint for the configured dataset and train it
    Finetune {
        #[arg(long)]
        from: PathBuf,
        /// history CSV of a from-scratch run to tabulate against
        #[arg(long)]
        compare: Option<PathBuf>,
        /// eval accuracy (percent) for the epochs-to-threshold column
        #[arg(long, default_value_t = 80.0)]
        threshold: f64,
        #[command(flatten)]
        run: ConfigArgs,
    },
    /// Evaluate a checkpoint and write metrics and predictions
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[command(flatten)]
        run: ConfigArgs,
    },
    /// Finite-difference check of every op, layer and small model
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// flip the sign of this op's backward rule (fault-injection fixture)
        #[arg(long)]
        inject_fault: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Preprocess {
            input,
            out,
            points,
            seed,
            skip_bad,
            force,
        } => {
            let failed = commands::preprocess(&PreprocessArgs {
                input: &input,
                out: &out,
                points,
                seed,
                skip_bad,
                force,
            })?;
            if failed > 0 && !skip_bad {
                eprintln!("error: {failed} file(s) failed; see errors.csv (or pass --skip-bad)");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Train(args) => {
            let config = args.resolve()?;
            commands::train(&RunArgs { config, out: &args.out, force: args.force })?;
        }
        Command::Finetune { from, compare, threshold, run } => {
            let config = run.resolve()?;
            let compare = compare.as_deref().map(|baseline| Comparison { baseline, threshold });
            commands::finetune_cmd(&RunArgs { config, out: &run.out, force: run.force }, &from, compare)?;
        }
        Command::Eval { checkpoint, split, run } => {
            let config = run.resolve()?;
            commands::eval_cmd(&RunArgs { config, out: &run.out, force: run.force }, &checkpoint, split)?;
        }
        Command::Gradcheck {
            seeds,
            inject_fault,
            out,
            force,
        } => {
            let passed = commands::gradcheck(&GradcheckArgs {
                seeds,
                fault: inject_fault.as_deref(),
                out: out.as_deref(),
                force,
            })?;
            if !passed {
                eprintln!("error: gradient check failed");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
