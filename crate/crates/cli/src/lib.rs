//! The `zeta` command line: one binary, one subcommand per pipeline step.

pub mod args;
mod commands;
pub mod config;
pub mod error;

use clap::Parser;

pub use args::Cli;
pub use config::CliConfig;
pub use error::{CliError, CliResult, ExitClass};

use args::{Command, KbCommand, ReviewCommand, StudyCommand};

/// Resolve the config: file, then environment, then global flags.
pub fn resolve_config(cli: &Cli) -> CliResult<CliConfig> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        cfg.jobs = j;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli)?;
    if cli.dump_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(CliError::usage("no command given; see `zeta --help`"));
    };
    match command {
        Command::Generate(a) => commands::generate(a, &cfg),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Review(ReviewCommand::Serve(a)) => commands::review_serve(a, &cfg),
        Command::Review(ReviewCommand::Replay(a)) => commands::review_replay(a, &cfg),
        Command::Kb(KbCommand::Export(a)) => commands::kb_export(a, &cfg),
        Command::EmbedTexts(a) => commands::embed_texts(a, &cfg),
        Command::EmbedEcgs(a) => commands::embed_ecgs(a, &cfg),
        Command::Score(a) => commands::score(a, &cfg),
        Command::Evaluate(a) => commands::evaluate(a, &cfg),
        Command::Benchmark(a) => commands::benchmark(a, &cfg),
        Command::Study(StudyCommand::Plan(a)) => commands::study_plan(a, &cfg),
        Command::Study(StudyCommand::Report(a)) => commands::study_report_cmd(a),
    }
}

/// Parse arguments; usage errors exit 1, help and version exit 0.
pub fn parse_args() -> Result<Cli, clap::Error> {
    Cli::try_parse()
}
