//! `lockstep`: run, score and repair candidate models against a reference.
//!
//! Exit status is 0 when everything compared clean, 1 on divergence or a
//! repair that did not converge, and 2 on an operational error.

mod artifact;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::{GlobalArgs, HarnessConfig};

#[derive(Parser, Debug)]
#[command(name = "lockstep", version, about = "Lockstep differential testing of CPU models")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one program in lockstep and write its report and feedback.
    Run {
        /// Program file, or @fig2, @witness:<knob>, @gen:<index>.
        program: String,
    },
    /// Run every program of a directory or a generated suite.
    Campaign {
        /// Directory of program files.
        #[arg(long, conflicts_with = "generate")]
        programs: Option<PathBuf>,
        /// Generate this many programs from the seed.
        #[arg(long, value_name = "N")]
        generate: Option<u64>,
    },
    /// Repair the candidate config until it matches the reference.
    Repair {
        /// `builtin`, or a command reading a request on stdin and printing a
        /// config on stdout.
        #[arg(long, default_value = "builtin")]
        synth: String,
        /// Program directory [default: the knob witness set].
        #[arg(long, conflicts_with = "generate")]
        programs: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        generate: Option<u64>,
    },
    /// Run a fault-injection campaign on one program.
    Fault {
        program: String,
        /// Campaign file (TOML). Without it, specs are generated from the seed.
        #[arg(long)]
        campaign: Option<PathBuf>,
        /// Number of generated specs.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Serve the candidate model as a remote debug target.
    Stub {
        /// Program to preload [default: 64 KiB of zeroes].
        program: Option<String>,
        /// Exit after the first session.
        #[arg(long)]
        once: bool,
        /// Append a packet transcript to this file.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Recompute a score from stored run reports.
    Score {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Include this fault response divergence in the score.
        #[arg(long)]
        fault_divergence: Option<f64>,
    },
    #[command(hide = true)]
    SynthBuiltin,
}

fn execute(cli: Cli) -> anyhow::Result<Outcome> {
    if let Command::SynthBuiltin = cli.command {
        return commands::cmd_synth_builtin();
    }
    let config = HarnessConfig::resolve(&cli.global)?;
    eprintln!("lockstep: seed {}", config.seed);
    match &cli.command {
        Command::Run { program } => commands::cmd_run(&config, program),
        Command::Campaign { programs, generate } => commands::cmd_campaign(&config, programs.as_deref(), *generate),
        Command::Repair { synth, programs, generate } => {
            commands::cmd_repair(&config, synth, programs.as_deref(), *generate)
        }
        Command::Fault { program, campaign, count } => {
            commands::cmd_fault(&config, program, campaign.as_deref(), *count)
        }
        Command::Stub { program, once, transcript } => {
            commands::cmd_stub(&config, program.as_deref(), *once, transcript.clone())
        }
        Command::Score { reports, fault_divergence } => commands::cmd_score(&config, reports, *fault_divergence),
        Command::SynthBuiltin => unreachable!("handled above"),
    }
}

/// The error and its causes, skipping causes whose text is already shown.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg = format!("{msg}: {text}");
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
