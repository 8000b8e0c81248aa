mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Environment variable holding the worker thread count.
const WORKERS_VAR: &str = "GOMKIT_WORKERS";

fn configure_workers() -> Result<(), String> {
    let Ok(value) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_VAR} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn error_line(command: &str, err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<gomkit::GomError>())
        .map_or("runtime", |e| e.kind());
    let message = err.chain().map(|e| e.to_string()).collect::<Vec<_>>().join(": ");
    serde_json::json!({ "command": command, "error": kind, "message": message }).to_string()
}

fn run(command: &Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a),
        Command::Generate(a) => commands::generate_cmd(a),
        Command::Metrics(a) => commands::metrics_cmd(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::SelectSensors(a) => commands::select_sensors(a),
        Command::Tolerance(a) => commands::tolerance(a),
        Command::Recognize(a) => commands::recognize(a),
        Command::ImportCoeffs(a) => commands::import_coeffs(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_workers() {
        eprintln!(
            "{}",
            serde_json::json!({ "command": cli.command.name(), "error": "usage", "message": msg })
        );
        return ExitCode::from(2);
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<commands::UsageError>() => {
            eprintln!(
                "{}",
                serde_json::json!({ "command": cli.command.name(), "error": "usage", "message": e.to_string() })
            );
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{}", error_line(cli.command.name(), &e));
            ExitCode::FAILURE
        }
    }
}
