mod args;
mod artifacts;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use rma_core::RmaError;
use serde_json::json;

use crate::args::Cli;

fn error_kind(e: &RmaError) -> &'static str {
    match e {
        RmaError::InvalidDimension(_) | RmaError::DimensionMismatch { .. } => "dimension",
        RmaError::InvalidParameter(_) | RmaError::ZeroVector => "parameter",
        RmaError::Singular(_) => "numerical",
        RmaError::TooLarge { .. } => "too_large",
        RmaError::Config(_) | RmaError::Json(_) => "config",
        RmaError::Io(_) | RmaError::Csv(_) => "io",
    }
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end().to_string(), 2),
    };
    match commands::execute(&cli.command) {
        Ok(files) => {
            let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({ "status": "ok", "command": cli.command.name(), "outputs": files }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(error_kind(&e), e.to_string(), 1),
    }
}
