use std::process::ExitCode;

use clap::Parser;

mod cli;
mod commands;

use cli::{Cli, Command};
use commands::{Context, UsageError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let ctx = Context::new(cli.data_root);
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::TrainHoi(a) => commands::train_hoi(&ctx, a),
        Command::TrainApdm(a) => commands::train_apdm(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Annotate(a) => commands::annotate(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Export(a) => commands::export(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
