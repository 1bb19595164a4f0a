//! Fit a weighted linear policy to oracle demonstrations of a single
//! primitive and compare it with the kernelized form of the same
//! regression.
//!
//! Usage: cargo run --example fit_policy

use primstack::harness::{collect_primitive_data, CollectRanges};
use primstack::policy::{compute_weights, fit_kernel, fit_weighted, CostModel};
use primstack::robot::KinematicArm;

fn main() -> primstack::Result<()> {
    let arm = KinematicArm::reference();
    let mut cost = CostModel::with_defaults(arm.rest_posture.clone());
    let ranges = CollectRanges::narrow(0.1);

    // 10 s of the vertical ("hit") primitive under the analytic oracle.
    let train = collect_primitive_data(&arm, &cost, 1, &ranges, 10.0, 7)?;
    let held = collect_primitive_data(&arm, &cost, 1, &ranges, 2.0, 99)?;
    println!("training rows: {}, held-out rows: {}", train.len(), held.len());

    let costs: Vec<f64> = (0..train.len())
        .map(|t| cost.offset_cost(&train.u_row(t), &train.q_row(t), &train.q_dot_row(t)))
        .collect();
    cost.set_alpha_from_costs(&costs);
    println!("alpha (median training cost maps to weight 0.5): {:.4}", cost.alpha_scale);

    // Fit the raw controls here for simplicity; the prioritized trainer
    // fits offsets against the null-space control instead.
    let weights = compute_weights(&train, &cost)?;
    let linear = fit_weighted(&train, &weights, 1e-6)?;

    let mut sq = 0.0;
    for t in 0..held.len() {
        let pred = linear.predict(&held.phi.row(t).transpose())?;
        sq += (pred - held.u_row(t)).norm_squared();
    }
    let rmse = (sq / (held.len() * held.joint_dim) as f64).sqrt();
    println!("held-out joint-acceleration RMSE: {rmse:.4} rad/s^2");

    // The kernelized regression is the same estimator written with a Gram
    // matrix; on a subsample its predictions coincide with the weighted
    // linear fit on that subsample.
    let sub = collect_primitive_data(&arm, &cost, 1, &CollectRanges::narrow(0.1), 0.5, 7)?;
    let w_sub = compute_weights(&sub, &cost)?;
    let lin_sub = fit_weighted(&sub, &w_sub, 1e-6)?;
    let kern_sub = fit_kernel(&sub, &cost, 1e-6)?;
    let mut worst: f64 = 0.0;
    for t in 0..held.len().min(200) {
        let phi = held.phi.row(t).transpose();
        worst = worst.max((lin_sub.predict(&phi)? - kern_sub.predict(&phi)?).amax());
    }
    println!("kernel vs linear worst disagreement: {worst:.2e}");
    Ok(())
}
