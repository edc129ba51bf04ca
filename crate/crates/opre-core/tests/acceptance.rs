use std::process::ExitCode;

use opre_core::acceptance::{run_acceptance, AcceptanceOptions, TITLES};

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--nocapture`; only bare numbers select criteria.
    let mut ids: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if ids.is_empty() {
        ids = (1..=TITLES.len() as u8).collect();
    }
    let opts = AcceptanceOptions::default();
    let outcomes = match run_acceptance(&ids, &opts, |o| println!("{}", o.line())) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("acceptance run aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
