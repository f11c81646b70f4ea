//! Command line and HTTP front end for the Form 57 pipeline.
//!
//! The `form57` binary wraps [`commands`]; [`service`] hosts the review API.

pub mod backend;
pub mod cli;
pub mod commands;
pub mod config;
pub mod inputs;
pub mod manifest;
pub mod service;

use std::sync::Arc;

use cli::{Cli, Command};
use manifest::RunStatus;

/// Exit code when some articles could not be processed.
pub const EXIT_PARTIAL: i32 = 3;

/// Runs one command and returns the process exit code.
pub async fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Transcribe(args) => commands::transcribe(args).await,
        Command::Extract(args) => commands::extract(args).await,
        Command::Link(args) => commands::link(args),
        Command::Evaluate(args) => commands::evaluate(args).await.map(|(status, table)| {
            print!("{table}");
            status
        }),
        Command::Serve(args) => serve(args).await.map(|()| RunStatus::Ok),
    };
    match result {
        Ok(RunStatus::Ok) => 0,
        Ok(RunStatus::Partial) => {
            eprintln!("warning: finished with warnings; see manifest.json");
            EXIT_PARTIAL
        }
        Ok(RunStatus::Failed) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

async fn serve(args: &cli::ServeArgs) -> anyhow::Result<()> {
    let config = config::RunConfig::load(args.common.config.as_deref())?;
    let gateway = args.common.backend.open(&config.gateway)?;
    let state = service::AppState::load(&args.state_dir, gateway, config)?;
    service::serve(Arc::new(state), args.bind).await
}
