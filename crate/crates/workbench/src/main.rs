use std::process::ExitCode;

use clap::Parser;
use groundkit_workbench::cli::{run, Cli};
use groundkit_workbench::stages::error_kind;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (manifest, result) = run(&cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = serde_json::json!({
                "error": {
                    "stage": manifest.stage,
                    "kind": error_kind(&err),
                    "message": format!("{err:#}"),
                }
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
