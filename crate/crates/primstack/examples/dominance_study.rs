//! Run a reduced dominance study: train a prioritized controller for every
//! ordering of the three ball-bouncing primitives plus a pooled
//! single-model baseline, evaluate seeded rally trials, and print the
//! ranking table.
//!
//! Usage: cargo run --release --example dominance_study [n_trials]

use primstack::harness::{report, run_dominance_study, ExperimentConfig, ReportFormat};

fn main() -> primstack::Result<()> {
    let n_trials: usize =
        std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let cfg = ExperimentConfig { n_trials, ..ExperimentConfig::default() };
    let study = run_dominance_study(&cfg)?;
    print!("{}", report(&study, ReportFormat::Table));
    println!("best ordering: {}", study.best_label);
    Ok(())
}
