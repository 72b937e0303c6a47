//! Acceptance suite. Runs every criterion (or the subset named in
//! `BIGMVP_CRITERIA`, e.g. `BIGMVP_CRITERIA=1,5-8`), prints one line per
//! criterion and fails if any criterion fails.
//!
//! `cargo test -p bigmvp-cli --test acceptance -- --nocapture`

use bigmvp_cli::config::{Workers, WORKERS_ENV};
use bigmvp_cli::verify::{parse_selection, run_criterion, VerifyOptions};

#[test]
fn acceptance_criteria() {
    let selection = std::env::var("BIGMVP_CRITERIA").unwrap_or_default();
    let ids = parse_selection(&selection).expect("BIGMVP_CRITERIA");
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => Workers::parse(&v).expect("BIGMVP_WORKERS"),
        Err(_) => Workers::Auto,
    };
    let opts = VerifyOptions {
        workers,
        ..VerifyOptions::default()
    };

    let mut failed = Vec::new();
    for id in ids {
        let outcome = run_criterion(id, &opts);
        println!("{}", outcome.line());
        if !outcome.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
