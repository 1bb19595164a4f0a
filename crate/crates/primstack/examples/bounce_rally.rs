//! Run one ball-bouncing trial with the analytic oracle controller and
//! print the event stream.
//!
//! Usage: cargo run --example bounce_rally [seed]

use primstack::bounce::{
    default_primitive_trio, run_trial, ControlLaw, LaunchConfig, StrategyConfig, TrialParams,
};
use primstack::policy::CostModel;
use primstack::robot::KinematicArm;

fn main() -> primstack::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(11);
    let arm = KinematicArm::reference();
    let cost = CostModel::with_defaults(arm.rest_posture.clone());
    let cfg = StrategyConfig::for_arm(&arm);
    let launch = LaunchConfig::default();
    let params = TrialParams::default();
    let prims = default_primitive_trio(&arm)?;

    let report = run_trial(&arm, &cost, &ControlLaw::Oracle, &prims, &cfg, &launch, &params, seed)?;
    for e in &report.events {
        println!(
            "{:8.3}  {:?}  ball p=({:7.4} {:7.4} {:7.4}) v=({:7.3} {:7.3} {:7.3})  racket p=({:7.4} {:7.4} {:7.4})",
            e.t, e.kind, e.ball_p.x, e.ball_p.y, e.ball_p.z, e.ball_v.x, e.ball_v.y, e.ball_v.z,
            e.racket_p.x, e.racket_p.y, e.racket_p.z
        );
    }
    println!("hits: {}  outcome: {:?}  duration: {:.2} s", report.hits, report.outcome, report.duration);
    Ok(())
}
