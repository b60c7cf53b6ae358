use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;

use riskseq_cli::cli::Cli;
use riskseq_core::error::{Error, ErrorKind};

fn report(kind: &str, msg: &str) {
    let line = msg.trim().replace('\n', " ");
    eprintln!("error[{kind}]: {line}");
}

fn threads() -> Result<(), Error> {
    let Ok(text) = std::env::var("RISKSEQ_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("RISKSEQ_THREADS must be a positive integer, got `{text}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.kind().as_str().map(str::to_string).unwrap_or_default();
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or(&text).trim_start_matches("error: ");
            report("config", first);
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let args: Vec<String> = std::env::args().skip(1).collect();
    match threads().and_then(|()| riskseq_cli::run(&cli, &args)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Config => ("config", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Numeric => ("numeric", 4),
            };
            report(kind, &e.to_string());
            ExitCode::from(code)
        }
    }
}
