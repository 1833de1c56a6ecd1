mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::CliError;

/// Occupancy-head distance fields on a frozen density network, and planning on them.
///
/// Any config key can be overridden as `--section.key value`, e.g.
/// `--head.depth 4` or `--planner.start "[-0.8, 0.2, 0]"`.
#[derive(Debug, Parser)]
#[command(name = "occunav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FieldArg {
    Head,
    Analytic,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the density backbone to the scene.
    Pretrain(Common),
    /// Sample the density grid that backs the occupancy oracle.
    BuildOracle {
        #[command(flatten)]
        common: Common,
        /// Report the sample count without sampling.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train the occupancy head on oracle labels.
    TrainHead {
        #[command(flatten)]
        common: Common,
        /// Train one head per attachment depth 1..=8 instead.
        #[arg(long)]
        sweep_depths: bool,
    },
    /// Compare the head's distance proxy with the exact distance field.
    EvalEsdf(Common),
    /// Roll out the motion policy from start to goal.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Distance field to plan on (overrides `planner.field`).
        #[arg(long, value_enum)]
        field: Option<FieldArg>,
    },
}

/// Pulls `--a.b value` and `--a.b=value` pairs out of the argument list; the
/// rest goes to clap.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::Config(format!("override `--{key}` needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

fn load(common: &Common, mut overrides: Vec<(String, String)>) -> Result<RunConfig, CliError> {
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &common.out {
        let quoted = toml::Value::String(out.display().to_string()).to_string();
        overrides.push(("out".into(), quoted));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<(), CliError> {
    match cli.command {
        Command::Pretrain(c) => stages::cmd_pretrain(&load(&c, overrides)?),
        Command::BuildOracle { common, dry_run } => stages::cmd_build_oracle(&load(&common, overrides)?, dry_run),
        Command::TrainHead { common, sweep_depths } => {
            stages::cmd_train_head(&load(&common, overrides)?, sweep_depths)
        }
        Command::EvalEsdf(c) => stages::cmd_eval_esdf(&load(&c, overrides)?),
        Command::Plan { common, field } => {
            let mut overrides = overrides;
            if let Some(f) = field {
                let name = match f {
                    FieldArg::Head => "head",
                    FieldArg::Analytic => "analytic",
                };
                overrides.push(("planner.field".into(), name.into()));
            }
            stages::cmd_plan(&load(&common, overrides)?)
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(split) => split,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
