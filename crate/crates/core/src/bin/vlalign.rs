use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

fn fail(kind: &str, message: String) -> ! {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    std::process::exit(1);
}

fn main() {
    let cli = match vlalign::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            fail("usage", first.to_string())
        }
    };
    match vlalign::cli::run(cli) {
        // A closed pipe (`| head`) is not an error worth a panic.
        Ok(text) => {
            let _ = writeln!(std::io::stdout(), "{text}");
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
