//! Experiment driver: per-primitive data collection, training across all
//! dominance structures plus a pooled single-model baseline, seeded bounce
//! evaluation, statistics, and report rendering.
//!
//! Everything is seeded and reduced in a fixed order, so a study produces
//! byte-identical reports across runs, including under parallel trial
//! execution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounce::{
    default_primitive_trio, primitive_maps, run_trial, ControlLaw, FailureReason, LaunchConfig,
    StrategyConfig, TrialParams, PRIMITIVE_NAMES,
};
use crate::error::{Error, Result};
use crate::policy::{build_feature, fit_plain, CostModel, Dataset, LinearPolicy};
use crate::primitives::CanonicalSystem;
use crate::prioritized::{
    enumerate_orders, train_prioritized_with, FitMethod, PrioritizedController,
};
use crate::robot::{oracle_control, KinematicArm, TaskMap};

const DT: f64 = 1e-3;

/// Excursion ranges for single-primitive data collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectRanges {
    /// Horizontal goals: radius band around the base axis.
    pub radius: (f64, f64),
    /// Horizontal goals: absolute azimuth band. Keeping this band narrow
    /// keeps the yaw-dependent task mapping near-linear, which is what the
    /// linear offset policies can represent.
    pub azimuth: (f64, f64),
    /// Vertical goals relative to the rest racket height.
    pub height: (f64, f64),
    /// Vertical goal velocities (the stroke).
    pub stroke_velocity: (f64, f64),
    /// Pitch goals.
    pub pitch: (f64, f64),
    /// Segment durations.
    pub duration: (f64, f64),
}

impl Default for CollectRanges {
    fn default() -> Self {
        CollectRanges {
            radius: (0.38, 0.52),
            azimuth: (-0.12, 0.12),
            height: (-0.08, 0.05),
            stroke_velocity: (-0.3, 1.5),
            pitch: (-0.2, 0.2),
            duration: (0.25, 0.7),
        }
    }
}

impl CollectRanges {
    /// Ranges shrunk toward the rest pose, keeping the data within a
    /// near-linear neighborhood of the oracle.
    pub fn narrow(scale: f64) -> Self {
        let base = CollectRanges::default();
        let rest_r = 0.45;
        CollectRanges {
            radius: (
                rest_r + (base.radius.0 - rest_r) * scale,
                rest_r + (base.radius.1 - rest_r) * scale,
            ),
            azimuth: (base.azimuth.0 * scale, base.azimuth.1 * scale),
            height: (base.height.0 * scale, base.height.1 * scale),
            stroke_velocity: (base.stroke_velocity.0 * scale, base.stroke_velocity.1 * scale),
            pitch: (base.pitch.0 * scale, base.pitch.1 * scale),
            duration: base.duration,
        }
    }
}

fn sample(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 <= range.0 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Exercise one primitive at a time under the analytic oracle, logging
/// feature/control rows at the simulation rate.
///
/// Inactive primitives stay at rest, so the logged features carry only the
/// active primitive's task acceleration (the rest-output convention the
/// prioritized trainer assumes). Segments that run the oracle into a
/// damped (near-singular) resolution or a joint limit are discarded and
/// the arm restarts from rest.
pub fn collect_primitive_data(
    arm_template: &KinematicArm,
    cost: &CostModel,
    primitive: usize,
    ranges: &CollectRanges,
    duration: f64,
    seed: u64,
) -> Result<Dataset> {
    if duration <= 0.0 {
        return Err(Error::invalid("collection duration must be positive"));
    }
    if primitive >= 3 {
        return Err(Error::invalid("primitive index out of range"));
    }
    cost.validate()?;
    let map = primitive_maps()[primitive];
    let task_dim = map.dim();
    let n_joints = arm_template.dof();
    let target_rows = (duration / DT).round() as usize;

    let mut arm = arm_template.clone();
    arm.reset();
    let mut prim = default_primitive_trio(&arm)?[primitive].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest_height = arm.forward_kinematics(&arm.rest_posture).position.z;

    let mut phi_rows: Vec<DVector<f64>> = Vec::with_capacity(target_rows);
    let mut u_rows: Vec<DVector<f64>> = Vec::with_capacity(target_rows);
    let mut discarded = 0usize;

    while phi_rows.len() < target_rows {
        if discarded > 200 {
            return Err(Error::numerical("data collection keeps leaving the workspace"));
        }
        let seg_duration = sample(&mut rng, ranges.duration);
        let (goal, goal_v) = match map {
            TaskMap::Horizontal => {
                let r = sample(&mut rng, ranges.radius);
                let az = sample(&mut rng, ranges.azimuth);
                (
                    DVector::from_row_slice(&[r * az.cos(), r * az.sin()]),
                    DVector::zeros(2),
                )
            }
            TaskMap::Vertical => (
                DVector::from_row_slice(&[rest_height + sample(&mut rng, ranges.height)]),
                DVector::from_row_slice(&[sample(&mut rng, ranges.stroke_velocity)]),
            ),
            TaskMap::Pitch => (
                DVector::from_row_slice(&[sample(&mut rng, ranges.pitch)]),
                DVector::zeros(1),
            ),
        };

        let x = arm.task_value(&arm.q, map);
        let xd = arm.task_velocity(&arm.q, &arm.q_dot, map);
        prim.trigger(goal, goal_v, seg_duration)?;
        prim.reset(x, xd);
        let mut cs = CanonicalSystem::new(1.0 / seg_duration);

        let steps = (seg_duration / DT).round() as usize;
        let mut seg_phi = Vec::with_capacity(steps);
        let mut seg_u = Vec::with_capacity(steps);
        let mut arm_seg = arm.clone();
        let mut ok = true;
        for _ in 0..steps {
            // Evaluate the primitive at the measured task state, exactly as
            // trial execution does, so the training distribution matches.
            let x = arm_seg.task_value(&arm_seg.q, map);
            let xd = arm_seg.task_velocity(&arm_seg.q, &arm_seg.q_dot, map);
            prim.reset(x, xd);
            let accel = prim.desired_acceleration(cs.z)?;
            let tasks = vec![(map, accel.clone())];
            let oc = oracle_control(&arm_seg, &arm_seg.q, &arm_seg.q_dot, &tasks, cost)?;
            if oc.damped {
                ok = false;
                break;
            }
            seg_phi.push(build_feature(&accel, &arm_seg.q_dot, &arm_seg.q));
            seg_u.push(oc.u.clone());
            if arm_seg.step_dynamics(&oc.u, DT)? {
                ok = false;
                break;
            }
            cs.step(DT)?;
        }
        if ok {
            arm = arm_seg;
            phi_rows.extend(seg_phi);
            u_rows.extend(seg_u);
        } else {
            discarded += 1;
            arm.reset();
            prim = default_primitive_trio(&arm)?[primitive].clone();
        }
    }

    phi_rows.truncate(target_rows);
    u_rows.truncate(target_rows);
    let feat_dim = task_dim + 2 * n_joints;
    let phi = DMatrix::from_fn(target_rows, feat_dim, |r, c| phi_rows[r][c]);
    let u = DMatrix::from_fn(target_rows, n_joints, |r, c| u_rows[r][c]);
    Dataset::new(phi, u, task_dim, n_joints)
}

/// Fit the pooled single-model baseline: one plain ridge regression over
/// all primitives' data at once, on features that stack every primitive's
/// acceleration slot (inactive slots zero) above the joint state. The model
/// predicts the offset from the null-space control.
pub fn pooled_single_model(
    datasets: &[Dataset],
    cost: &CostModel,
    lambda: f64,
) -> Result<LinearPolicy> {
    if datasets.is_empty() {
        return Err(Error::invalid("no datasets to pool"));
    }
    let n_joints = datasets[0].joint_dim;
    let task_dims: Vec<usize> = datasets.iter().map(|d| d.task_dim).collect();
    let total_task: usize = task_dims.iter().sum();
    let total_rows: usize = datasets.iter().map(|d| d.len()).sum();
    let feat_dim = total_task + 2 * n_joints;

    let mut phi = DMatrix::zeros(total_rows, feat_dim);
    let mut u = DMatrix::zeros(total_rows, n_joints);
    let mut row = 0;
    for (i, data) in datasets.iter().enumerate() {
        let slot_offset: usize = task_dims[..i].iter().sum();
        for t in 0..data.len() {
            for k in 0..data.task_dim {
                phi[(row, slot_offset + k)] = data.phi[(t, k)];
            }
            for k in 0..2 * n_joints {
                phi[(row, total_task + k)] = data.phi[(t, data.task_dim + k)];
            }
            let q = data.q_row(t);
            let qd = data.q_dot_row(t);
            let offset = data.u_row(t) - cost.null_space_control(&q, &qd);
            for k in 0..n_joints {
                u[(row, k)] = offset[k];
            }
            row += 1;
        }
    }
    fit_plain(&Dataset::new(phi, u, total_task, n_joints)?, lambda)
}

/// Full study configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seconds of training data per primitive.
    pub collection_duration: f64,
    pub n_trials: usize,
    pub base_seed: u64,
    pub lambda: f64,
    /// Use the kernelized regression for the offset policies. Only
    /// feasible for small datasets.
    pub kernel: bool,
    pub ranges: CollectRanges,
    /// Strategy defaults derive from the arm when absent.
    pub strategy: Option<StrategyConfig>,
    pub launch: LaunchConfig,
    pub trial: TrialParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            collection_duration: 30.0,
            n_trials: 20,
            base_seed: 1,
            lambda: 1e-6,
            kernel: false,
            ranges: CollectRanges::default(),
            strategy: None,
            launch: LaunchConfig::default(),
            trial: TrialParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 {
            return Err(Error::invalid("need at least one trial per ordering"));
        }
        if self.collection_duration <= 0.0 {
            return Err(Error::invalid("collection duration must be positive"));
        }
        if self.lambda <= 0.0 {
            return Err(Error::invalid("ridge parameter must be positive"));
        }
        if self.kernel && self.collection_duration / DT > 2000.0 {
            return Err(Error::invalid(
                "kernelized training stores a gram matrix over all samples; keep the \
                 collection under 2 s or disable the kernel",
            ));
        }
        if let Some(s) = &self.strategy {
            s.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of the study: an ordering (or the baseline) with its trial
/// statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceResult {
    pub label: String,
    pub hits: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    /// Rows sorted by mean hits, best first; the single-model baseline row
    /// carries the label "single model".
    pub rows: Vec<DominanceResult>,
    /// Best ordering (the baseline row is not eligible).
    pub best_label: String,
    pub n_trials: usize,
    pub base_seed: u64,
}

impl StudyResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Sample mean and standard deviation.
pub fn mean_std(values: &[usize]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<usize>() as f64 / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn failure_label(reason: FailureReason) -> &'static str {
    match reason {
        FailureReason::MissedBall => "missed-ball",
        FailureReason::WorkspaceViolation => "workspace-violation",
        FailureReason::JointLimit => "joint-limit",
        FailureReason::TimeLimit => "timeout-success",
    }
}

pub const SINGLE_MODEL_LABEL: &str = "single model";

/// Train every dominance structure plus the pooled baseline and evaluate
/// each over seeded bounce trials. Trials run in parallel; results are
/// reduced by (controller, trial) index so the output is deterministic.
pub fn run_dominance_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let arm = KinematicArm::reference();
    let mut cost = CostModel::with_defaults(arm.rest_posture.clone());
    let strategy = cfg.strategy.clone().unwrap_or_else(|| StrategyConfig::for_arm(&arm));
    strategy.validate()?;

    let datasets: Vec<Dataset> = (0..3)
        .map(|i| {
            collect_primitive_data(
                &arm,
                &cost,
                i,
                &cfg.ranges,
                cfg.collection_duration,
                cfg.base_seed.wrapping_add(i as u64),
            )
        })
        .collect::<Result<_>>()?;

    // Weighting temperature from the pooled offset costs.
    let mut costs = Vec::new();
    for data in &datasets {
        for t in 0..data.len() {
            let q = data.q_row(t);
            let qd = data.q_dot_row(t);
            costs.push(cost.offset_cost(&data.u_row(t), &q, &qd));
        }
    }
    cost.set_alpha_from_costs(&costs);

    let method = if cfg.kernel { FitMethod::Kernel } else { FitMethod::Linear };
    let orders = enumerate_orders(3)?;
    let mut controllers: Vec<(String, Option<PrioritizedController>)> = Vec::new();
    for order in &orders {
        let label = order.label(&PRIMITIVE_NAMES);
        match train_prioritized_with(&datasets, order, &cost, cfg.lambda, method) {
            Ok(ctrl) => controllers.push((label, Some(ctrl))),
            Err(_) => controllers.push((label, None)),
        }
    }
    let single = pooled_single_model(&datasets, &cost, cfg.lambda)?;

    let prims = default_primitive_trio(&arm)?;
    let n_ctrl = controllers.len() + 1;
    let jobs: Vec<(usize, usize)> = (0..n_ctrl)
        .flat_map(|c| (0..cfg.n_trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<Option<(usize, FailureReason)>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let law = if c < controllers.len() {
                match &controllers[c].1 {
                    Some(ctrl) => ControlLaw::Prioritized(ctrl),
                    None => return None,
                }
            } else {
                ControlLaw::SingleModel(&single)
            };
            let seed = cfg.base_seed.wrapping_add(10_000 + t as u64);
            run_trial(&arm, &cost, &law, &prims, &strategy, &cfg.launch, &cfg.trial, seed)
                .ok()
                .map(|r| (r.hits, r.outcome))
        })
        .collect();

    let mut rows = Vec::new();
    for c in 0..n_ctrl {
        let label = if c < controllers.len() {
            controllers[c].0.clone()
        } else {
            SINGLE_MODEL_LABEL.to_string()
        };
        let mut hits = Vec::new();
        let mut failures: BTreeMap<String, usize> = BTreeMap::new();
        for t in 0..cfg.n_trials {
            match &outcomes[c * cfg.n_trials + t] {
                Some((h, reason)) => {
                    hits.push(*h);
                    *failures.entry(failure_label(*reason).to_string()).or_insert(0) += 1;
                }
                None => {
                    *failures.entry("training-failure".to_string()).or_insert(0) += 1;
                }
            }
        }
        let (mean, std) = mean_std(&hits);
        rows.push(DominanceResult { label, hits, mean, std, failures });
    }

    rows.sort_by(|a, b| {
        b.mean
            .partial_cmp(&a.mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    let best_label = rows
        .iter()
        .find(|r| r.label != SINGLE_MODEL_LABEL)
        .map(|r| r.label.clone())
        .unwrap_or_default();

    Ok(StudyResult { rows, best_label, n_trials: cfg.n_trials, base_seed: cfg.base_seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "plot-data" => Ok(ReportFormat::PlotData),
            other => Err(Error::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

/// Render study results. All formats are deterministic given the same
/// result set.
pub fn report(study: &StudyResult, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!("{:<22} {}\n", "ordering", "hits (mean±std)"));
            for row in &study.rows {
                out.push_str(&format!("{:<22} {:.2}±{:.2}\n", row.label, row.mean, row.std));
            }
            out
        }
        ReportFormat::Csv => {
            let mut out = String::from("label,mean,std,hits,failures\n");
            for row in &study.rows {
                let hits = row
                    .hits
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                let failures = row
                    .failures
                    .iter()
                    .map(|(k, v)| format!("{k}:{v}"))
                    .collect::<Vec<_>>()
                    .join(";");
                out.push_str(&format!(
                    "{},{:.6},{:.6},{},{}\n",
                    row.label, row.mean, row.std, hits, failures
                ));
            }
            out
        }
        ReportFormat::PlotData => {
            let mut out = String::new();
            for row in &study.rows {
                let hits = row
                    .hits
                    .iter()
                    .map(|h| h.to_string())
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push_str(&format!("{}: {}\n", row.label, hits));
            }
            out
        }
    }
}

/// Parse the CSV report back into result rows (the JSON study file is the
/// primary artifact; this validates round-tripping).
pub fn parse_results_csv(text: &str) -> Result<Vec<DominanceResult>> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    match lines.next() {
        Some("label,mean,std,hits,failures") => {}
        _ => return Err(Error::invalid("missing results CSV header")),
    }
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(5, ',').collect();
        if parts.len() != 5 {
            return Err(Error::invalid("malformed results CSV row"));
        }
        let hits: Vec<usize> = if parts[3].is_empty() {
            Vec::new()
        } else {
            parts[3]
                .split(';')
                .map(|h| h.parse().map_err(|_| Error::invalid("bad hit count")))
                .collect::<Result<_>>()?
        };
        let mut failures = BTreeMap::new();
        if !parts[4].is_empty() {
            for kv in parts[4].split(';') {
                let (k, v) = kv
                    .split_once(':')
                    .ok_or_else(|| Error::invalid("bad failure histogram entry"))?;
                failures.insert(
                    k.to_string(),
                    v.parse().map_err(|_| Error::invalid("bad failure count"))?,
                );
            }
        }
        rows.push(DominanceResult {
            label: parts[0].to_string(),
            mean: parts[1].parse().map_err(|_| Error::invalid("bad mean"))?,
            std: parts[2].parse().map_err(|_| Error::invalid("bad std"))?,
            hits,
            failures,
        });
    }
    Ok(rows)
}
