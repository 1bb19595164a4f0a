//! Ball-bouncing world: exact ballistic flight, restitution contact, the
//! hitting-plane strategy layer, and event-driven trial execution.
//!
//! The strategy keeps every hit on a fixed horizontal plane. From the
//! incoming ball state it computes the outgoing velocity whose apex sits at
//! an imagined target above the plane and whose next plane crossing lands
//! directly under that target, then inverts the reflection law to get the
//! racket normal and normal speed that realize it. One clean hit therefore
//! returns any admissible ball to the vertical target-bounce cycle.
//!
//! Flight and contact times are closed form; nothing about the ball is
//! numerically integrated.

use nalgebra::{DVector, Vector2, Vector3};
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{build_feature, CostModel, LinearPolicy};
use crate::primitives::{CanonicalSystem, GoalMode, MotorPrimitive};
use crate::prioritized::PrioritizedController;
use crate::robot::{oracle_control, KinematicArm, TaskMap};

/// Point-mass ball.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BallState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl BallState {
    /// Closed-form ballistic flight; no numeric integration.
    pub fn fly(&self, dt: f64, gravity: f64) -> BallState {
        BallState {
            p: self.p + self.v * dt - Vector3::new(0.0, 0.0, 0.5 * gravity * dt * dt),
            v: self.v - Vector3::new(0.0, 0.0, gravity * dt),
        }
    }

    /// Apex height of the current flight segment.
    pub fn apex_height(&self, gravity: f64) -> f64 {
        if self.v.z <= 0.0 {
            self.p.z
        } else {
            self.p.z + self.v.z * self.v.z / (2.0 * gravity)
        }
    }
}

/// Racket contact surface: a disc at `p` with unit normal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RacketState {
    pub p: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub v: Vector3<f64>,
}

/// Strategy-layer parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyConfig {
    /// Imagined-target apex height.
    pub target_height: f64,
    pub target_xy: Vector2<f64>,
    /// Hitting plane: every contact happens at this height.
    pub plane_height: f64,
    pub restitution: f64,
    pub gravity: f64,
    pub racket_radius: f64,
    /// Reachable annulus for hit points, radii from the base axis.
    pub workspace_r_min: f64,
    pub workspace_r_max: f64,
}

impl StrategyConfig {
    /// Defaults anchored at an arm's rest racket pose: the hitting plane is
    /// the rest height and the target sits straight above the rest position.
    pub fn for_arm(arm: &KinematicArm) -> Self {
        let pose = arm.forward_kinematics(&arm.rest_posture);
        StrategyConfig {
            target_height: pose.position.z + 0.5,
            target_xy: Vector2::new(pose.position.x, pose.position.y),
            plane_height: pose.position.z,
            restitution: 0.75,
            gravity: 9.81,
            racket_radius: 0.08,
            workspace_r_min: 0.15,
            workspace_r_max: 0.80,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_height <= self.plane_height {
            return Err(Error::invalid("target height must exceed the hitting plane"));
        }
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            return Err(Error::invalid("restitution must lie in (0, 1]"));
        }
        if self.gravity <= 0.0 || self.racket_radius <= 0.0 {
            return Err(Error::invalid("gravity and racket radius must be positive"));
        }
        if self.workspace_r_min >= self.workspace_r_max {
            return Err(Error::invalid("workspace annulus is empty"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: StrategyConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Time until the ball next crosses the plane moving downward, closed form.
///
/// Solves `p_z + v_z t - g t^2 / 2 = h_p` for the larger root. `None` when
/// the ball is below the plane without the energy to reach it.
pub fn plane_crossing_time(ball: &BallState, h_p: f64, gravity: f64) -> Option<f64> {
    let disc = ball.v.z * ball.v.z + 2.0 * gravity * (ball.p.z - h_p);
    if disc < 0.0 {
        return None;
    }
    let t = (ball.v.z + disc.sqrt()) / gravity;
    if t < 0.0 {
        None
    } else {
        Some(t)
    }
}

/// Reflection with restitution: the normal component of the relative
/// velocity flips and shrinks by the restitution factor, the tangential
/// component is untouched.
pub fn reflect(v_in: &Vector3<f64>, racket: &RacketState, restitution: f64) -> Result<Vector3<f64>> {
    let rel = (v_in - racket.v).dot(&racket.normal);
    if rel >= 0.0 {
        return Err(Error::invalid("receding contact: ball is not approaching the racket"));
    }
    Ok(v_in - racket.normal * ((1.0 + restitution) * rel))
}

/// A fully specified hit: where, with what outgoing ball velocity, and the
/// racket normal plus normal speed that produce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HitPlan {
    pub hit_point: Vector3<f64>,
    pub ball_v_in: Vector3<f64>,
    pub required_v_out: Vector3<f64>,
    pub racket_normal: Vector3<f64>,
    pub racket_v_normal: f64,
    pub time_to_hit: f64,
}

/// Outcome of planning: either a hit plan or an unreachable hit point.
#[derive(Debug, Clone)]
pub enum PlanResult {
    Plan(HitPlan),
    /// The next crossing lies outside the reachable annulus; the trial
    /// records this as a miss.
    WorkspaceViolation { hit_point: Vector3<f64> },
}

/// Plan the next hit from the current ball state.
///
/// The outgoing apex equals the target height and the following plane
/// crossing lands under the target; the racket normal and normal speed are
/// recovered by inverting the reflection law.
pub fn plan_hit(ball: &BallState, cfg: &StrategyConfig) -> Result<PlanResult> {
    cfg.validate()?;
    let t_hit = plane_crossing_time(ball, cfg.plane_height, cfg.gravity)
        .ok_or_else(|| Error::invalid("ball never reaches the hitting plane"))?;
    let at_hit = ball.fly(t_hit, cfg.gravity);
    let hit_xy = Vector2::new(at_hit.p.x, at_hit.p.y);
    let r = hit_xy.norm();
    if r < cfg.workspace_r_min || r > cfg.workspace_r_max {
        return Ok(PlanResult::WorkspaceViolation { hit_point: at_hit.p });
    }

    let v_out_z = (2.0 * cfg.gravity * (cfg.target_height - cfg.plane_height)).sqrt();
    let t_f = 2.0 * v_out_z / cfg.gravity;
    let v_out_xy = (cfg.target_xy - hit_xy) / t_f;
    let v_out = Vector3::new(v_out_xy.x, v_out_xy.y, v_out_z);

    let dv = v_out - at_hit.v;
    let normal = if dv.norm() < 1e-12 { Vector3::z() } else { dv.normalize() };
    let racket_v_normal =
        (v_out.dot(&normal) + cfg.restitution * at_hit.v.dot(&normal)) / (1.0 + cfg.restitution);

    Ok(PlanResult::Plan(HitPlan {
        hit_point: at_hit.p,
        ball_v_in: at_hit.v,
        required_v_out: v_out,
        racket_normal: normal,
        racket_v_normal,
        time_to_hit: t_hit,
    }))
}

/// Closure error after one ideally executed planned hit: the post-hit apex
/// must reach the target height and the next plane crossing must land
/// directly under the target. Returns the combined error norm, which is
/// zero (to rounding) for any admissible incoming state.
pub fn closure_apex_error(ball: &BallState, cfg: &StrategyConfig) -> Result<f64> {
    let plan = match plan_hit(ball, cfg)? {
        PlanResult::Plan(p) => p,
        PlanResult::WorkspaceViolation { .. } => {
            return Err(Error::invalid("hit point outside the workspace"));
        }
    };
    let racket = RacketState {
        p: plan.hit_point,
        normal: plan.racket_normal,
        v: plan.racket_normal * plan.racket_v_normal,
    };
    let v_out = reflect(&plan.ball_v_in, &racket, cfg.restitution)?;
    let out = BallState { p: plan.hit_point, v: v_out };
    let apex_err = out.apex_height(cfg.gravity) - cfg.target_height;
    let t_land = 2.0 * v_out.z.max(0.0) / cfg.gravity;
    let landing = out.fly(t_land, cfg.gravity);
    let land_err = (landing.p.xy() - cfg.target_xy).norm();
    Ok((apex_err * apex_err + land_err * land_err).sqrt())
}

/// Ball launcher: a fixed offset from the rest racket pose plus seeded
/// uniform noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaunchConfig {
    /// Offset of the launch point from the rest racket position.
    pub base_offset: Vector3<f64>,
    pub base_velocity: Vector3<f64>,
    pub position_noise: f64,
    pub velocity_noise: f64,
}

impl Default for LaunchConfig {
    fn default() -> Self {
        LaunchConfig {
            // The horizontal offset exceeds the racket radius, so a
            // controller that never moves the racket cannot even get a
            // passive bounce.
            base_offset: Vector3::new(0.10, 0.05, 0.45),
            base_velocity: Vector3::zeros(),
            position_noise: 0.01,
            velocity_noise: 0.02,
        }
    }
}

fn noise3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    if scale <= 0.0 {
        return Vector3::zeros();
    }
    Vector3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

impl LaunchConfig {
    pub fn launch(&self, arm: &KinematicArm, rng: &mut ChaCha8Rng) -> BallState {
        let rest = arm.forward_kinematics(&arm.rest_posture).position;
        BallState {
            p: rest + self.base_offset + noise3(rng, self.position_noise),
            v: self.base_velocity + noise3(rng, self.velocity_noise),
        }
    }
}

/// Names of the three task primitives, in primitive-index order.
pub const PRIMITIVE_NAMES: [&str; 3] = ["move", "hit", "orient"];

/// Task maps of the three primitives, in primitive-index order.
pub fn primitive_maps() -> [TaskMap; 3] {
    [TaskMap::Horizontal, TaskMap::Vertical, TaskMap::Pitch]
}

/// The trio used in trials: "move" steers the horizontal racket position,
/// "hit" drives the vertical stroke with a goal velocity, "orient" sets the
/// racket pitch. All start as pure point attractors at the rest pose.
pub fn default_primitive_trio(arm: &KinematicArm) -> Result<[MotorPrimitive; 3]> {
    let rest = &arm.rest_posture;
    let mut mv = MotorPrimitive::resting(2, arm.task_value(rest, TaskMap::Horizontal), 5)?;
    let mut hit = MotorPrimitive::resting(1, arm.task_value(rest, TaskMap::Vertical), 5)?;
    let mut orient = MotorPrimitive::resting(1, arm.task_value(rest, TaskMap::Pitch), 5)?;
    mv.mode = GoalMode::Standard;
    hit.mode = GoalMode::VelocityGoal;
    orient.mode = GoalMode::Standard;
    Ok([mv, hit, orient])
}

/// How joint accelerations are produced during a trial.
#[derive(Debug, Clone)]
pub enum ControlLaw<'a> {
    /// Analytic successive-projection resolution; hit dominates move
    /// dominates orient.
    Oracle,
    /// No control at all: the arm never moves.
    Zero,
    /// A learned prioritized stack.
    Prioritized(&'a PrioritizedController),
    /// One pooled model over all primitive accelerations at once, applied
    /// on top of the null-space control.
    SingleModel(&'a LinearPolicy),
}

/// Pooled feature for the single-model baseline: all primitive
/// accelerations stacked, then joint velocities, then positions.
pub fn pooled_feature(
    accels: &[DVector<f64>],
    q_dot: &DVector<f64>,
    q: &DVector<f64>,
) -> DVector<f64> {
    let stacked: Vec<f64> = accels.iter().flat_map(|a| a.iter().copied()).collect();
    build_feature(&DVector::from_row_slice(&stacked), q_dot, q)
}

fn law_control(
    law: &ControlLaw,
    arm: &KinematicArm,
    cost: &CostModel,
    accels: &[DVector<f64>; 3],
) -> Result<DVector<f64>> {
    let q = &arm.q;
    let qd = &arm.q_dot;
    match law {
        ControlLaw::Zero => Ok(DVector::zeros(arm.dof())),
        ControlLaw::Oracle => {
            // Lowest priority first: orient, then move, then hit on top.
            let tasks = vec![
                (TaskMap::Pitch, accels[2].clone()),
                (TaskMap::Horizontal, accels[0].clone()),
                (TaskMap::Vertical, accels[1].clone()),
            ];
            Ok(oracle_control(arm, q, qd, &tasks, cost)?.u)
        }
        ControlLaw::Prioritized(ctrl) => ctrl.predict_control(q, qd, accels),
        ControlLaw::SingleModel(policy) => {
            let phi = pooled_feature(accels, qd, q);
            Ok(cost.null_space_control(q, qd) + policy.predict(&phi)?)
        }
    }
}

/// Why a trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// Ball crossed the plane without valid racket contact.
    MissedBall,
    /// Planned hit point left the reachable annulus.
    WorkspaceViolation,
    /// A joint crossed its limit.
    JointLimit,
    /// Time or hit cap reached; the rally was still alive.
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Launch,
    Hit,
    Apex,
    Miss,
}

/// One row of the trial event log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialEvent {
    pub t: f64,
    pub kind: EventKind,
    pub ball_p: Vector3<f64>,
    pub ball_v: Vector3<f64>,
    pub racket_p: Vector3<f64>,
    pub racket_n: Vector3<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialReport {
    pub hits: usize,
    pub outcome: FailureReason,
    pub duration: f64,
    pub events: Vec<TrialEvent>,
}

/// Trial timing and caps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialParams {
    pub dt: f64,
    pub max_time: f64,
    pub hit_cap: usize,
    /// Plans shorter than this cannot be executed and count as a miss.
    pub min_flight: f64,
    /// Vertical capture band around the plane within which the racket can
    /// make contact.
    pub capture_height: f64,
}

impl Default for TrialParams {
    fn default() -> Self {
        TrialParams { dt: 1e-3, max_time: 60.0, hit_cap: 50, min_flight: 0.05, capture_height: 0.03 }
    }
}

fn racket_state(arm: &KinematicArm) -> RacketState {
    let pose = arm.forward_kinematics(&arm.q);
    let jh = arm.jacobian(&arm.q, TaskMap::Horizontal);
    let jv = arm.jacobian(&arm.q, TaskMap::Vertical);
    let vh = &jh * &arm.q_dot;
    let vv = &jv * &arm.q_dot;
    RacketState { p: pose.position, normal: pose.normal, v: Vector3::new(vh[0], vh[1], vv[0]) }
}

fn event(t: f64, kind: EventKind, ball: &BallState, racket: &RacketState) -> TrialEvent {
    TrialEvent { t, kind, ball_p: ball.p, ball_v: ball.v, racket_p: racket.p, racket_n: racket.normal }
}

/// Pitch of a desired racket normal within the vertical plane through the
/// hit point: only the radial tilt component is realizable by the arm.
fn projected_pitch(normal: &Vector3<f64>, hit_xy: &Vector2<f64>) -> f64 {
    let r = hit_xy.norm();
    if r < 1e-9 {
        return 0.0;
    }
    let radial = (normal.x * hit_xy.x + normal.y * hit_xy.y) / r;
    radial.atan2(normal.z)
}

/// Run one seeded trial: launch the ball, replan at every contact, retrigger
/// the primitive trio with the planned goals and adapted duration, and count
/// racket hits until a miss, a workspace violation, a joint-limit crossing,
/// or the time/hit cap.
pub fn run_trial(
    arm_template: &KinematicArm,
    cost: &CostModel,
    law: &ControlLaw,
    primitives: &[MotorPrimitive; 3],
    cfg: &StrategyConfig,
    launch: &LaunchConfig,
    params: &TrialParams,
    seed: u64,
) -> Result<TrialReport> {
    cfg.validate()?;
    let mut arm = arm_template.clone();
    arm.reset();
    let mut prims = primitives.clone();
    let mut cs = CanonicalSystem::new(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut ball = launch.launch(&arm, &mut rng);
    let mut t = 0.0;
    let mut hits = 0usize;
    let mut events = Vec::new();
    let mut apex_due: Option<f64> = None;
    events.push(event(t, EventKind::Launch, &ball, &racket_state(&arm)));

    let maps = primitive_maps();
    let finish = |hits, outcome, t, events| Ok(TrialReport { hits, outcome, duration: t, events });

    // Plan and retrigger; Err carries the terminal failure.
    let replan = |ball: &BallState,
                  arm: &KinematicArm,
                  prims: &mut [MotorPrimitive; 3],
                  cs: &mut CanonicalSystem|
     -> std::result::Result<(), FailureReason> {
        // The wrist tilts the racket only within the vertical plane through
        // the hit point, so tangential ball velocity cannot be cancelled.
        // Swinging the target to the azimuth of the predicted crossing keeps
        // every required correction radial and realizable; the residual
        // tangential motion makes the rally orbit the base at the target
        // radius instead of drifting out of the workspace.
        let mut cfg = cfg.clone();
        if let Some(tc) = plane_crossing_time(ball, cfg.plane_height, cfg.gravity) {
            let at_hit = ball.fly(tc, cfg.gravity);
            let hit_xy = at_hit.p.xy();
            if hit_xy.norm() > 1e-9 {
                cfg.target_xy = hit_xy.normalize() * cfg.target_xy.norm();
            }
        }
        let cfg = &cfg;
        let plan = match plan_hit(ball, cfg) {
            Ok(PlanResult::Plan(p)) => p,
            Ok(PlanResult::WorkspaceViolation { .. }) => {
                return Err(FailureReason::WorkspaceViolation)
            }
            Err(_) => return Err(FailureReason::MissedBall),
        };
        if plan.time_to_hit < params.min_flight {
            return Err(FailureReason::MissedBall);
        }
        let hit_xy = Vector2::new(plan.hit_point.x, plan.hit_point.y);
        let n_z = plan.racket_normal.z.max(0.5);
        let stroke_v = plan.racket_v_normal / n_z;
        let pitch_des = projected_pitch(&plan.racket_normal, &hit_xy);

        let goals: [(DVector<f64>, DVector<f64>); 3] = [
            (DVector::from_row_slice(&[hit_xy.x, hit_xy.y]), DVector::zeros(2)),
            (
                DVector::from_row_slice(&[cfg.plane_height]),
                DVector::from_row_slice(&[stroke_v]),
            ),
            (DVector::from_row_slice(&[pitch_des]), DVector::zeros(1)),
        ];
        *cs = CanonicalSystem::new(1.0 / plan.time_to_hit);
        for (k, (goal, goal_v)) in goals.into_iter().enumerate() {
            let x = arm.task_value(&arm.q, maps[k]);
            let xd = arm.task_velocity(&arm.q, &arm.q_dot, maps[k]);
            prims[k]
                .trigger(goal, goal_v, plan.time_to_hit)
                .map_err(|_| FailureReason::MissedBall)?;
            prims[k].reset(x, xd);
        }
        Ok(())
    };

    if let Err(outcome) = replan(&ball, &arm, &mut prims, &mut cs) {
        events.push(event(t, EventKind::Miss, &ball, &racket_state(&arm)));
        return finish(0, outcome, t, events);
    }

    while t < params.max_time {
        let dt = params.dt;
        // Each primitive is evaluated at the measured task state, so its
        // desired acceleration corrects tracking errors instead of letting
        // them integrate; the phase alone carries the plan timing.
        let mut accels: [DVector<f64>; 3] =
            [DVector::zeros(2), DVector::zeros(1), DVector::zeros(1)];
        for k in 0..3 {
            let x = arm.task_value(&arm.q, maps[k]);
            let xd = arm.task_velocity(&arm.q, &arm.q_dot, maps[k]);
            prims[k].reset(x, xd);
            accels[k] = prims[k].desired_acceleration(cs.z)?;
        }
        let u = law_control(law, &arm, cost, &accels)?;
        let violated = arm.step_dynamics(&u, dt)?;
        if violated {
            events.push(event(t, EventKind::Miss, &ball, &racket_state(&arm)));
            return finish(hits, FailureReason::JointLimit, t, events);
        }
        cs.step(dt)?;

        // Contact happens at the exact plane-crossing time inside the step.
        let tc = plane_crossing_time(&ball, cfg.plane_height, cfg.gravity);
        match tc {
            Some(tc) if tc <= dt => {
                let at_plane = ball.fly(tc, cfg.gravity);
                let racket = racket_state(&arm);
                let reach_xy = (at_plane.p.xy() - racket.p.xy()).norm();
                let racket_on_plane = (racket.p.z - cfg.plane_height).abs() <= params.capture_height;
                let approaching = (at_plane.v - racket.v).dot(&racket.normal) < 0.0;
                if reach_xy <= cfg.racket_radius && racket_on_plane && approaching {
                    let v_out = reflect(&at_plane.v, &racket, cfg.restitution)?;
                    ball = BallState { p: at_plane.p, v: v_out }.fly(dt - tc, cfg.gravity);
                    hits += 1;
                    events.push(event(t + tc, EventKind::Hit, &at_plane, &racket));
                    apex_due = Some(t + tc + v_out.z.max(0.0) / cfg.gravity);
                    if hits >= params.hit_cap {
                        return finish(hits, FailureReason::TimeLimit, t, events);
                    }
                    if let Err(outcome) = replan(&ball, &arm, &mut prims, &mut cs) {
                        events.push(event(t, EventKind::Miss, &ball, &racket));
                        return finish(hits, outcome, t, events);
                    }
                } else {
                    let miss_ball = ball.fly(dt, cfg.gravity);
                    events.push(event(t + tc, EventKind::Miss, &miss_ball, &racket));
                    return finish(hits, FailureReason::MissedBall, t, events);
                }
            }
            _ => {
                ball = ball.fly(dt, cfg.gravity);
            }
        }
        if let Some(ta) = apex_due {
            if t + dt >= ta {
                events.push(event(ta, EventKind::Apex, &ball, &racket_state(&arm)));
                apex_due = None;
            }
        }
        t += dt;
    }
    finish(hits, FailureReason::TimeLimit, t, events)
}

/// Write the trial event stream as CSV.
pub fn write_trial_log<W: std::io::Write>(events: &[TrialEvent], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "t", "event", "ball_px", "ball_py", "ball_pz", "ball_vx", "ball_vy", "ball_vz",
        "racket_px", "racket_py", "racket_pz", "racket_nx", "racket_ny", "racket_nz",
    ])?;
    for e in events {
        let kind = match e.kind {
            EventKind::Launch => "launch",
            EventKind::Hit => "hit",
            EventKind::Apex => "apex",
            EventKind::Miss => "miss",
        };
        let mut row = vec![format!("{:.6}", e.t), kind.to_string()];
        for v in [&e.ball_p, &e.ball_v, &e.racket_p, &e.racket_n] {
            for k in 0..3 {
                row.push(format!("{:.9}", v[k]));
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const G: f64 = 9.81;

    fn cfg() -> StrategyConfig {
        StrategyConfig::for_arm(&KinematicArm::reference())
    }

    #[test]
    fn free_fall_drop() {
        let b = BallState { p: Vector3::new(0.0, 0.0, 2.0), v: Vector3::zeros() };
        let after = b.fly(0.5, G);
        assert_abs_diff_eq!(after.p.z, 2.0 - 0.5 * G * 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(after.v.z, -G * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn horizontal_velocity_preserved() {
        let b = BallState { p: Vector3::zeros(), v: Vector3::new(1.0, -2.0, 3.0) };
        let after = b.fly(1.7, G);
        assert_eq!(after.v.x, 1.0);
        assert_eq!(after.v.y, -2.0);
    }

    #[test]
    fn flight_semigroup() {
        let b = BallState { p: Vector3::new(0.2, -0.1, 1.5), v: Vector3::new(0.3, 0.1, 2.0) };
        let one = b.fly(0.7, G);
        let two = b.fly(0.3, G).fly(0.4, G);
        assert!((one.p - two.p).norm() < 1e-12);
        assert!((one.v - two.v).norm() < 1e-12);
    }

    #[test]
    fn apex_identity() {
        let b = BallState { p: Vector3::new(0.0, 0.0, 1.0), v: Vector3::new(0.5, 0.0, 3.0) };
        let t_apex = b.v.z / G;
        let at_apex = b.fly(t_apex, G);
        assert_abs_diff_eq!(at_apex.p.z, b.apex_height(G), epsilon = 1e-12);
        assert!(at_apex.v.z.abs() < 1e-12);
    }

    #[test]
    fn crossing_at_plane_moving_down_is_zero() {
        let b = BallState { p: Vector3::new(0.0, 0.0, 1.0), v: Vector3::new(0.0, 0.0, -1.0) };
        let t = plane_crossing_time(&b, 1.0, G).unwrap();
        assert_abs_diff_eq!(t, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn crossing_time_of_unit_drop() {
        let b = BallState { p: Vector3::new(0.0, 0.0, 2.0), v: Vector3::zeros() };
        let t = plane_crossing_time(&b, 1.0, G).unwrap();
        assert_abs_diff_eq!(t, (2.0 / G).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn crossing_none_when_unreachable() {
        // Below the plane, moving up too slowly to reach it.
        let b = BallState { p: Vector3::new(0.0, 0.0, 0.5), v: Vector3::new(0.0, 0.0, 0.5) };
        assert!(plane_crossing_time(&b, 1.0, G).is_none());
    }

    #[test]
    fn elastic_vertical_reflection() {
        let racket = RacketState { p: Vector3::zeros(), normal: Vector3::z(), v: Vector3::zeros() };
        let v_out = reflect(&Vector3::new(0.0, 0.0, -2.0), &racket, 1.0).unwrap();
        assert!((v_out - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn plastic_impact_kills_normal_component() {
        let racket = RacketState { p: Vector3::zeros(), normal: Vector3::z(), v: Vector3::zeros() };
        let v_out = reflect(&Vector3::new(0.3, -0.2, -2.0), &racket, 1e-12).unwrap();
        assert!(v_out.z.abs() < 1e-9);
        assert_abs_diff_eq!(v_out.x, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn moving_racket_reflection_value() {
        let racket = RacketState {
            p: Vector3::zeros(),
            normal: Vector3::z(),
            v: Vector3::new(0.0, 0.0, 0.5),
        };
        let v_out = reflect(&Vector3::new(0.0, 0.0, -2.0), &racket, 0.8).unwrap();
        assert_abs_diff_eq!(v_out.z, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn reflection_energy_bound_and_tangential_preservation() {
        let racket = RacketState {
            p: Vector3::zeros(),
            normal: Vector3::new(0.1, -0.05, 1.0).normalize(),
            v: Vector3::zeros(),
        };
        let v_in = Vector3::new(0.4, 0.2, -3.0);
        for eps in [0.3, 0.7, 1.0] {
            let v_out = reflect(&v_in, &racket, eps).unwrap();
            assert!(v_out.norm() <= v_in.norm() + 1e-12);
            if eps == 1.0 {
                assert_abs_diff_eq!(v_out.norm(), v_in.norm(), epsilon = 1e-12);
            }
            // The velocity change is purely along the normal.
            let dv = v_out - v_in;
            assert!(dv.cross(&racket.normal).norm() < 1e-12 * dv.norm().max(1.0));
        }
    }

    #[test]
    fn receding_contact_rejected() {
        let racket = RacketState { p: Vector3::zeros(), normal: Vector3::z(), v: Vector3::zeros() };
        assert!(reflect(&Vector3::new(0.0, 0.0, 1.0), &racket, 0.8).is_err());
    }

    #[test]
    fn plan_hand_values() {
        let mut cfg = cfg();
        cfg.target_height = cfg.plane_height + 0.45926;
        let ball = BallState {
            p: Vector3::new(cfg.target_xy.x, cfg.target_xy.y, cfg.plane_height + 0.3),
            v: Vector3::new(0.0, 0.0, -0.5),
        };
        match plan_hit(&ball, &cfg).unwrap() {
            PlanResult::Plan(plan) => {
                assert_abs_diff_eq!(plan.required_v_out.z, 3.0, epsilon = 2e-3);
                let t_f = 2.0 * plan.required_v_out.z / cfg.gravity;
                assert_abs_diff_eq!(t_f, 0.6116, epsilon = 1e-3);
            }
            _ => panic!("expected a plan"),
        }
    }

    #[test]
    fn vertical_drop_gives_vertical_plan() {
        let cfg = cfg();
        let ball = BallState {
            p: Vector3::new(cfg.target_xy.x, cfg.target_xy.y, cfg.plane_height + 0.4),
            v: Vector3::zeros(),
        };
        match plan_hit(&ball, &cfg).unwrap() {
            PlanResult::Plan(plan) => {
                assert!((plan.racket_normal - Vector3::z()).norm() < 1e-12);
                assert!(plan.required_v_out.x.abs() < 1e-12);
                assert!(plan.required_v_out.y.abs() < 1e-12);
            }
            _ => panic!("expected a plan"),
        }
    }

    #[test]
    fn plan_flags_workspace_violation() {
        let cfg = cfg();
        let ball = BallState {
            p: Vector3::new(5.0, 0.0, cfg.plane_height + 0.3),
            v: Vector3::zeros(),
        };
        assert!(matches!(
            plan_hit(&ball, &cfg).unwrap(),
            PlanResult::WorkspaceViolation { .. }
        ));
    }

    #[test]
    fn strategy_closure_single_hit() {
        let cfg = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let ball = BallState {
                p: Vector3::new(
                    cfg.target_xy.x + rng.gen_range(-0.15..0.15),
                    cfg.target_xy.y + rng.gen_range(-0.15..0.15),
                    cfg.plane_height + rng.gen_range(0.1..0.6),
                ),
                v: Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-1.0..0.5),
                ),
            };
            let err = closure_apex_error(&ball, &cfg).unwrap();
            assert!(err < 1e-9, "apex error {err}");
        }
    }

    fn trial_env() -> (KinematicArm, CostModel, StrategyConfig, LaunchConfig, TrialParams) {
        let arm = KinematicArm::reference();
        let cost = CostModel::with_defaults(arm.rest_posture.clone());
        let cfg = StrategyConfig::for_arm(&arm);
        (arm, cost, cfg, LaunchConfig::default(), TrialParams::default())
    }

    #[test]
    fn oracle_trial_sustains_rally() {
        let (arm, cost, cfg, launch, params) = trial_env();
        let prims = default_primitive_trio(&arm).unwrap();
        let report =
            run_trial(&arm, &cost, &ControlLaw::Oracle, &prims, &cfg, &launch, &params, 11)
                .unwrap();
        assert!(report.hits >= 50, "hits {} outcome {:?}", report.hits, report.outcome);
    }

    #[test]
    fn zero_controller_misses_immediately() {
        // The launch lands outside the racket radius, so a controller that
        // never moves the racket gets at most one lucky graze.
        let (arm, cost, cfg, launch, params) = trial_env();
        let prims = default_primitive_trio(&arm).unwrap();
        let report = run_trial(&arm, &cost, &ControlLaw::Zero, &prims, &cfg, &launch, &params, 11)
            .unwrap();
        assert!(report.hits <= 1, "hits {}", report.hits);
        assert_eq!(report.outcome, FailureReason::MissedBall);
    }

    #[test]
    fn trials_are_deterministic() {
        let (arm, cost, cfg, launch, mut params) = trial_env();
        params.hit_cap = 5;
        let prims = default_primitive_trio(&arm).unwrap();
        let a = run_trial(&arm, &cost, &ControlLaw::Oracle, &prims, &cfg, &launch, &params, 3)
            .unwrap();
        let b = run_trial(&arm, &cost, &ControlLaw::Oracle, &prims, &cfg, &launch, &params, 3)
            .unwrap();
        assert_eq!(a.hits, b.hits);
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.events.iter().zip(&b.events) {
            assert_eq!(x.ball_p, y.ball_p);
        }
    }

    #[test]
    fn noise_does_not_help_the_oracle() {
        let (arm, cost, cfg, mut launch, mut params) = trial_env();
        params.hit_cap = 12;
        params.max_time = 15.0;
        let prims = default_primitive_trio(&arm).unwrap();
        let mut median = |noise: f64| {
            launch.position_noise = noise;
            launch.velocity_noise = noise;
            let mut hits: Vec<usize> = (0..21)
                .map(|s| {
                    run_trial(
                        &arm, &cost, &ControlLaw::Oracle, &prims, &cfg, &launch, &params, s,
                    )
                    .unwrap()
                    .hits
                })
                .collect();
            hits.sort_unstable();
            hits[hits.len() / 2]
        };
        let clean = median(0.0);
        let noisy = median(0.08);
        assert!(noisy <= clean, "noisy {noisy} clean {clean}");
    }

    #[test]
    fn trial_log_round_trip() {
        let (arm, cost, cfg, launch, mut params) = trial_env();
        params.hit_cap = 3;
        let prims = default_primitive_trio(&arm).unwrap();
        let report = run_trial(&arm, &cost, &ControlLaw::Oracle, &prims, &cfg, &launch, &params, 1)
            .unwrap();
        let mut buf = Vec::new();
        write_trial_log(&report.events, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,event,ball_px"));
        assert!(text.contains("launch"));
        assert!(text.contains("hit"));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = cfg();
        let json = cfg.to_json().unwrap();
        let back = StrategyConfig::from_json(&json).unwrap();
        assert_eq!(back.plane_height, cfg.plane_height);
        assert_eq!(back.restitution, cfg.restitution);
    }
}
