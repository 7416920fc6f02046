mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use gmn::Error;

use config::RunConfig;

fn cli() -> Command {
    let mut cmd = Command::new("gmn")
        .about("Generate multisensory scenes, train fusion models and evaluate them")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .global(true)
                .help("key=value file applied before the flags"),
        )
        .subcommand(Command::new("generate").about("Write train/val/test scene files and a manifest"))
        .subcommand(Command::new("train").about("Train a model, writing a checkpoint per epoch"))
        .subcommand(
            Command::new("eval")
                .about("Evaluate a checkpoint")
                .subcommand_required(true)
                .subcommand(Command::new("curve").about("Target log-likelihood against source context size"))
                .subcommand(Command::new("classify").about("Pick the scene that explains held-out observations"))
                .subcommand(Command::new("missing").about("Train on modality subsets, score unseen combinations"))
                .subcommand(Command::new("scaling").about("Parameter counts and iteration times"))
                .subcommand(Command::new("dump").about("Export sampled renders of one scene")),
        );
    for key in RunConfig::keys() {
        cmd = cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .global(true)
                .hide(true),
        );
    }
    cmd
}

/// Defaults, then the config file, then flags.
fn resolve(m: &ArgMatches) -> gmn::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        cfg.apply_file(&PathBuf::from(path))?;
    }
    for key in RunConfig::keys() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid(_) => 2,
        Error::Data(_)
        | Error::Truncated { .. }
        | Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Shape { .. }
        | Error::Io(_) => 3,
        Error::Numeric(_) | Error::NonFinite { .. } | Error::NotScalar(_) | Error::Detached => 4,
    }
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let result = resolve(&m).and_then(|cfg| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.train.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        match m.subcommand() {
            Some(("generate", _)) => commands::generate(&cfg),
            Some(("train", _)) => commands::train(&cfg),
            Some(("eval", sub)) => match sub.subcommand_name() {
                Some("curve") => commands::curve(&cfg),
                Some("classify") => commands::classify(&cfg),
                Some("missing") => commands::missing(&cfg),
                Some("scaling") => commands::scaling(&cfg),
                Some("dump") => commands::dump(&cfg),
                _ => unreachable!("clap requires an eval subcommand"),
            },
            _ => unreachable!("clap requires a subcommand"),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
