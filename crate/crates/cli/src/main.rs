use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gdaflow_cli::commands::{cmd_make_data, cmd_run, cmd_select_alpha, cmd_train_flow, FlowArgs, MakeDataArgs, RunArgs, SelectAlphaArgs};
use gdaflow_cli::CliError;

/// Gradual domain adaptation with flow-generated intermediate domains.
#[derive(Debug, Parser)]
#[command(name = "gdaflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a rotating synthetic domain sequence and its manifest.
    MakeData(MakeDataArgs),
    /// Fit the flow jointly over every domain of a sequence.
    TrainFlow(FlowArgs),
    /// Run one or more methods and write report.csv plus step traces.
    Run(RunArgs),
    /// Score each α by cycle consistency and print the best one.
    SelectAlpha(SelectAlphaArgs),
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("GDAFLOW_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("GDAFLOW_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match &cli.command {
        Command::MakeData(a) => cmd_make_data(a),
        Command::TrainFlow(a) => cmd_train_flow(a),
        Command::Run(a) => cmd_run(a),
        Command::SelectAlpha(a) => cmd_select_alpha(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
