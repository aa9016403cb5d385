//! Command-line front end: argument parsing, config layering and exit codes.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_eval, cmd_generate, cmd_inspect, cmd_prepare, cmd_train_adapt, cmd_train_base,
    AdaptorSwitch, EvalOptions,
};
pub use config::{ConfigValue, RunConfig, SamplerKind};

use crate::error::Result;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "ada-ranker",
    version,
    about = "Distribution-adaptive ranking pipeline"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of key=value lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (overrides the `seed` key).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (overrides the `out` key).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Override any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic interaction log.
    Generate,
    /// Split interactions and sample negatives into group files.
    Prepare,
    /// Train the base ranker.
    TrainBase,
    /// Train the adaptor stage.
    TrainAdapt {
        /// scratch_joint, finetune_joint or finetune_adaptor (overrides the `strategy` key).
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Evaluate a checkpoint on the test groups.
    Eval {
        /// Score through the adaptor or through Θ alone.
        #[arg(long, value_enum, default_value = "on")]
        adaptor: OnOff,
        /// Also compare base and adapted models on two recall mixtures.
        #[arg(long)]
        dual_dist: bool,
        /// Also write per-group z and pool weights.
        #[arg(long)]
        export_qual: bool,
        /// Checkpoint to evaluate (default: the `ada_checkpoint` key).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Report parameter counts of a checkpoint.
    Inspect {
        /// Checkpoint to inspect (default: the `ada_checkpoint` key).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Print the effective configuration with every key documented.
    Config,
}

/// Defaults, then the config file, then `--set` overrides, then dedicated flags.
fn effective_config(common: &Common, command: &Command) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        c.apply_override(kv)?;
    }
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(o) = &common.out {
        c.out = o.clone();
    }
    if let Command::TrainAdapt { strategy: Some(s) } = command {
        c.set("strategy", s)?;
    }
    Ok(c)
}

fn dispatch(cli: Cli) -> Result<()> {
    let c = effective_config(&cli.common, &cli.command)?;
    match cli.command {
        Command::Generate => cmd_generate(&c),
        Command::Prepare => cmd_prepare(&c),
        Command::TrainBase => cmd_train_base(&c),
        Command::TrainAdapt { .. } => cmd_train_adapt(&c),
        Command::Eval {
            adaptor,
            dual_dist,
            export_qual,
            checkpoint,
        } => {
            let adaptor = match adaptor {
                OnOff::On => AdaptorSwitch::On,
                OnOff::Off => AdaptorSwitch::Off,
            };
            cmd_eval(
                &c,
                &EvalOptions {
                    adaptor,
                    dual_dist,
                    export_qual,
                    checkpoint,
                },
            )
        }
        Command::Inspect { checkpoint } => cmd_inspect(&c, checkpoint.as_deref()),
        Command::Config => {
            print!("# config_hash={}\n\n{}", c.hash(), c.documented());
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
