use clap::Parser;

use esc_core::cli::{error_exit_code, error_record, run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            for path in &outcome.artifacts {
                println!("{}", path.display());
            }
            if let Some(fault) = &outcome.fault {
                eprintln!("{}", serde_json::json!({ "status": "fault", "message": fault }));
            }
            if let Some(check) = &outcome.failed_check {
                eprintln!("{}", serde_json::json!({ "status": "check-failed", "message": check }));
            }
            std::process::exit(outcome.exit_code());
        }
        Err(err) => {
            eprintln!("{}", error_record(&err));
            std::process::exit(error_exit_code(&err));
        }
    }
}
