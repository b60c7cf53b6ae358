//! The `riskseq` command line: synthesize, train, evaluate, explain and reproduce.

pub mod cli;
pub mod commands;
pub mod experiment;
pub mod manifest;
pub mod pipeline;

use riskseq_core::error::Result;

use cli::{Cli, Command};
use manifest::Recorder;

/// Runs a parsed command; `args` are the raw arguments recorded in its manifest.
pub fn run(cli: &Cli, args: &[String]) -> Result<()> {
    let name = |c: &Command| match c {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Nri(_) => "nri",
        Command::Attribute(_) => "attribute",
        Command::Baseline(_) => "baseline",
        Command::Inspect(_) => "inspect",
        Command::Reproduce(_) => "reproduce",
        Command::Rerun(_) => "rerun",
    };
    let mut rec = Recorder::new(name(&cli.command), args);
    let dir = match &cli.command {
        Command::Synth(a) => {
            commands::synth(a, &mut rec)?;
            a.out.clone()
        }
        Command::Train(a) => commands::train(a, &mut rec)?,
        Command::Evaluate(a) => commands::evaluate(a, &mut rec)?,
        Command::Nri(a) => commands::nri_cmd(a, &mut rec)?,
        Command::Attribute(a) => commands::attribute(a, &mut rec)?,
        Command::Baseline(a) => commands::baseline(a, &mut rec)?,
        Command::Reproduce(a) => commands::reproduce(a, &mut rec)?,
        Command::Inspect(a) => return commands::inspect(a),
        Command::Rerun(a) => return commands::rerun(a),
    };
    let path = rec.finish(&dir)?;
    log::info!("wrote {}", path.display());
    Ok(())
}
