//! Learn a motor primitive from a demonstrated minimum-jerk reach and
//! replay it, including a retrigger to a new goal and duration.
//!
//! Usage: cargo run --example imitate_trajectory

use nalgebra::DVector;
use primstack::primitives::{imitate, GoalMode, TaskTrajectory, TrajectorySample};

fn vec1(v: f64) -> DVector<f64> {
    DVector::from_row_slice(&[v])
}

fn min_jerk(from: f64, to: f64, duration: f64, n: usize) -> TaskTrajectory {
    let d = to - from;
    let samples = (0..=n)
        .map(|i| {
            let t = duration * i as f64 / n as f64;
            let s = t / duration;
            TrajectorySample {
                t,
                x: vec1(from + d * (10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5))),
                x_dot: vec1(d / duration * (30.0 * s.powi(2) - 60.0 * s.powi(3) + 30.0 * s.powi(4))),
                x_ddot: vec1(
                    d / (duration * duration)
                        * (60.0 * s - 180.0 * s.powi(2) + 120.0 * s.powi(3)),
                ),
            }
        })
        .collect();
    TaskTrajectory::new(samples, 1).unwrap()
}

fn main() -> primstack::Result<()> {
    let demo = min_jerk(0.0, 1.0, 1.0, 1000);
    let mp = imitate(&demo, 20, GoalMode::Standard)?;

    let replay = mp.replay(vec1(0.0), vec1(0.0), 1.0, 1e-3)?;
    let mut sq = 0.0;
    for (a, b) in demo.samples.iter().zip(replay.samples.iter()) {
        sq += (a.x[0] - b.x[0]).powi(2);
    }
    println!("replay RMSE vs demonstration: {:.2e}", (sq / demo.samples.len() as f64).sqrt());
    println!("replay endpoint: {:.5} (demo goal 1.0)", replay.samples.last().unwrap().x[0]);

    // The representation generalizes: retrigger the same primitive to a
    // different goal and duration.
    let mut scaled = mp.clone();
    scaled.reset(vec1(0.0), vec1(0.0));
    scaled.trigger(vec1(2.0), vec1(0.0), 0.5)?;
    let fast = scaled.replay(vec1(0.0), vec1(0.0), 0.5, 1e-3)?;
    println!(
        "retriggered to goal 2.0 in 0.5 s, endpoint: {:.5}",
        fast.samples.last().unwrap().x[0]
    );
    Ok(())
}
