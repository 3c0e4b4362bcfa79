mod args;
mod commands;
mod render;

use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::{json, Map};

use args::{Cli, Format};
use render::Document;

fn error_document(kind: &str, message: &str) -> Document {
    let mut body = Map::new();
    body.insert("error".into(), json!({ "kind": kind, "message": message }));
    Document { body, table: None }
}

/// The requested format is honoured for usage errors too when it can be found.
fn format_from_argv() -> Format {
    let argv: Vec<String> = std::env::args().collect();
    let csv = argv.windows(2).any(|w| w[0] == "--format" && w[1] == "csv") || argv.iter().any(|a| a == "--format=csv");
    if csv {
        Format::Csv
    } else {
        Format::Json
    }
}

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let _ = render::write(error_document("usage", msg.trim()), format_from_argv(), &mut out);
            eprint!("{msg}");
            return ExitCode::from(2);
        }
    };
    let (doc, code) = match commands::run(&cli) {
        Ok(d) => (d, ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            (error_document(e.kind(), &e.to_string()), ExitCode::FAILURE)
        }
    };
    if render::write(doc, cli.format, &mut out).and_then(|_| out.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    code
}
