//! Dynamical-systems motor primitives driven by a shared canonical phase.
//!
//! A primitive is a stable second-order system pulled towards a goal and
//! shaped by a learned forcing term. All primitives of a task share one
//! canonical phase `z` that decays from 1 towards 0 over the movement
//! duration, so their degrees of freedom stay synchronous. The standard form
//! converges to the goal with zero velocity; the velocity-goal form tracks a
//! moving goal and reaches the goal position with a prescribed final
//! velocity, which is what a hitting movement needs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phase decay constant, chosen so that z(T) = 0.01.
pub const ALPHA_Z: f64 = 4.605170185988091; // ln(100)

/// Default goal-attraction gain; critically damped with `beta = alpha / 4`.
pub const ALPHA_Y: f64 = 25.0;

/// First-order phase system `dz/dt = -tau * alpha_z * z`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CanonicalSystem {
    pub z: f64,
    /// Inverse movement duration, `tau = 1/T`.
    pub tau: f64,
    pub alpha_z: f64,
}

impl CanonicalSystem {
    pub fn new(tau: f64) -> Self {
        CanonicalSystem { z: 1.0, tau, alpha_z: ALPHA_Z }
    }

    /// Advance the phase by `dt` using the exact exponential update.
    ///
    /// The linear ODE has the closed form `z(t) = z0 * exp(-tau*alpha_z*t)`,
    /// so a step multiplies by the corresponding decay factor instead of
    /// integrating numerically.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if dt < 0.0 {
            return Err(Error::invalid("canonical step requires dt >= 0"));
        }
        self.z *= (-self.tau * self.alpha_z * dt).exp();
        Ok(())
    }

    /// Phase after an additional `dt` without mutating the system.
    pub fn peek(&self, dt: f64) -> f64 {
        self.z * (-self.tau * self.alpha_z * dt).exp()
    }

    /// Elapsed movement time implied by the current phase (unaltered system).
    pub fn time(&self) -> f64 {
        -self.z.ln() / (self.tau * self.alpha_z)
    }
}

/// Normalized Gaussian kernels over the phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSet {
    /// Kernel centers in phase space, decreasing (early time = large z).
    pub centers: DVector<f64>,
    /// Kernel widths (inverse variances), all positive.
    pub widths: DVector<f64>,
}

impl BasisSet {
    /// Centers equally spaced in time, i.e. exponentially spaced in phase,
    /// with widths `1/(c_{i+1}-c_i)^2` (the last width copied).
    pub fn uniform_in_time(count: usize, alpha_z: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("basis set needs at least one kernel"));
        }
        let mut centers = DVector::zeros(count);
        for i in 0..count {
            let frac = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
            centers[i] = (-alpha_z * frac).exp();
        }
        let mut widths = DVector::zeros(count);
        for i in 0..count {
            let gap = if i + 1 < count {
                centers[i + 1] - centers[i]
            } else if count >= 2 {
                centers[i] - centers[i - 1]
            } else {
                1.0
            };
            widths[i] = 1.0 / (gap * gap);
        }
        Ok(BasisSet { centers, widths })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Activations `psi_i(z)`, non-negative and summing to one.
    pub fn activations(&self, z: f64) -> Result<DVector<f64>> {
        if self.is_empty() {
            return Err(Error::invalid("empty basis set"));
        }
        let mut psi = DVector::zeros(self.len());
        for i in 0..self.len() {
            let d = z - self.centers[i];
            psi[i] = (-self.widths[i] * d * d).exp();
        }
        let sum = psi.sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::numerical("basis activations degenerate"));
        }
        psi /= sum;
        Ok(psi)
    }
}

/// Whether the primitive converges with zero or with a prescribed final
/// velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    Standard,
    VelocityGoal,
}

/// One sampled point of a task-space trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: DVector<f64>,
    pub x_dot: DVector<f64>,
    pub x_ddot: DVector<f64>,
}

/// A task-space demonstration: strictly increasing timestamps, consistent
/// dimensions, finite values.
#[derive(Debug, Clone)]
pub struct TaskTrajectory {
    pub samples: Vec<TrajectorySample>,
    pub dof: usize,
}

impl TaskTrajectory {
    pub fn new(samples: Vec<TrajectorySample>, dof: usize) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("trajectory needs at least two samples"));
        }
        let mut last_t = f64::NEG_INFINITY;
        for s in &samples {
            if s.x.len() != dof || s.x_dot.len() != dof || s.x_ddot.len() != dof {
                return Err(Error::invalid("trajectory sample dimension mismatch"));
            }
            if !(s.t.is_finite()
                && s.x.iter().all(|v| v.is_finite())
                && s.x_dot.iter().all(|v| v.is_finite())
                && s.x_ddot.iter().all(|v| v.is_finite()))
            {
                return Err(Error::invalid("trajectory contains non-finite values"));
            }
            if s.t <= last_t {
                return Err(Error::invalid("trajectory timestamps must strictly increase"));
            }
            last_t = s.t;
        }
        Ok(TaskTrajectory { samples, dof })
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().unwrap().t - self.samples[0].t
    }

    /// Write as CSV with header `t,x0..,xd0..,xdd0..`, SI units, LF endings.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for i in 0..self.dof {
            header.push(format!("x{i}"));
        }
        for i in 0..self.dof {
            header.push(format!("xd{i}"));
        }
        for i in 0..self.dof {
            header.push(format!("xdd{i}"));
        }
        wtr.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![format!("{}", s.t)];
            rec.extend(s.x.iter().map(|v| format!("{v}")));
            rec.extend(s.x_dot.iter().map(|v| format!("{v}")));
            rec.extend(s.x_ddot.iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        let cols = headers.len();
        if cols < 4 || (cols - 1) % 3 != 0 {
            return Err(Error::invalid("trajectory CSV must have 1+3d columns"));
        }
        let dof = (cols - 1) / 3;
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("bad trajectory value: {e}")))?;
            samples.push(TrajectorySample {
                t: vals[0],
                x: DVector::from_row_slice(&vals[1..1 + dof]),
                x_dot: DVector::from_row_slice(&vals[1 + dof..1 + 2 * dof]),
                x_ddot: DVector::from_row_slice(&vals[1 + 2 * dof..1 + 3 * dof]),
            });
        }
        TaskTrajectory::new(samples, dof)
    }
}

/// A discrete motor primitive over `dof` task dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotorPrimitive {
    pub dof: usize,
    pub tau: f64,
    pub alpha_y: f64,
    pub beta_y: f64,
    pub alpha_h: f64,
    pub mode: GoalMode,
    pub goal: DVector<f64>,
    pub goal_velocity: DVector<f64>,
    pub amplitude: DVector<f64>,
    pub basis: BasisSet,
    /// Shape parameters, one row per kernel, one column per DoF.
    pub weights: DMatrix<f64>,
    /// Initial position of the moving goal (velocity-goal form only).
    #[serde(default)]
    pub moving_goal_start: DVector<f64>,
    // Internal integration state.
    pub y1: DVector<f64>,
    pub y2: DVector<f64>,
}

impl MotorPrimitive {
    /// A rest primitive: sits at `start` with zero forcing and goal `start`.
    pub fn resting(dof: usize, start: DVector<f64>, n_basis: usize) -> Result<Self> {
        let basis = BasisSet::uniform_in_time(n_basis, ALPHA_Z)?;
        let mut mp = MotorPrimitive {
            dof,
            tau: 1.0,
            alpha_y: ALPHA_Y,
            beta_y: ALPHA_Y / 4.0,
            alpha_h: ALPHA_Z,
            mode: GoalMode::Standard,
            goal: start.clone(),
            goal_velocity: DVector::zeros(dof),
            amplitude: DVector::from_element(dof, 1.0),
            weights: DMatrix::zeros(basis.len(), dof),
            moving_goal_start: start.clone(),
            y1: start,
            y2: DVector::zeros(dof),
            basis,
        };
        mp.moving_goal_start = mp.goal.clone();
        Ok(mp)
    }

    /// Reset the internal state to a new start.
    pub fn reset(&mut self, position: DVector<f64>, velocity: DVector<f64>) {
        self.y2 = velocity / self.tau;
        self.y1 = position;
    }

    /// Retrigger towards a new goal to be reached after `duration` seconds.
    ///
    /// Hitting-time adaptation: instead of perturbing the phase, the time
    /// constant is reset to the remaining duration.
    pub fn trigger(
        &mut self,
        goal: DVector<f64>,
        goal_velocity: DVector<f64>,
        duration: f64,
    ) -> Result<()> {
        if duration <= 0.0 {
            return Err(Error::invalid("trigger duration must be positive"));
        }
        self.tau = 1.0 / duration;
        self.goal = goal;
        self.goal_velocity = goal_velocity;
        // g_m(T) = g requires g_m(0) = g - g_dot * T.
        self.moving_goal_start = &self.goal - &self.goal_velocity / self.tau;
        // Amplitude from the new start, with the near-zero fallback.
        for k in 0..self.dof {
            let a = self.goal[k] - self.y1[k];
            self.amplitude[k] = if a.abs() < 1e-6 { 1.0 } else { a };
        }
        Ok(())
    }

    /// Forcing term `f(z) = sum_i psi_i(z) w_i z`, one value per DoF.
    pub fn forcing_term(&self, z: f64) -> Result<DVector<f64>> {
        if self.weights.nrows() != self.basis.len() || self.weights.ncols() != self.dof {
            return Err(Error::invalid("weight matrix shape mismatch"));
        }
        let psi = self.basis.activations(z)?;
        Ok(self.weights.transpose() * psi * z)
    }

    /// Moving goal `g_m(z)` of the velocity-goal form.
    pub fn moving_goal(&self, z: f64) -> DVector<f64> {
        &self.moving_goal_start - &self.goal_velocity * (z.ln() / (self.tau * self.alpha_h))
    }

    /// Time derivative of `(y1, y2)` at phase `z`.
    fn derivatives(&self, y1: &DVector<f64>, y2: &DVector<f64>, z: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let f = self.forcing_term(z)?;
        let forced = self.amplitude.component_mul(&f) * self.tau;
        let y1_dot = y2 * self.tau;
        let y2_dot = match self.mode {
            GoalMode::Standard => {
                (self.beta_y * (&self.goal - y1) - y2) * (self.tau * self.alpha_y) + forced
            }
            GoalMode::VelocityGoal => {
                let gm = self.moving_goal(z);
                let attract = (gm - y1) * self.beta_y + (&self.goal_velocity - &y1_dot) / self.tau;
                attract * ((1.0 - z) * self.tau * self.alpha_y) + forced
            }
        };
        Ok((y1_dot, y2_dot))
    }

    /// Advance the primitive one RK4 step of size `dt` at phase `cs.z`,
    /// returning `(x, x_dot, x_ddot)` at the new state. The caller advances
    /// the canonical system separately so several primitives can share it.
    pub fn step(&mut self, cs: &CanonicalSystem, dt: f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        if dt <= 0.0 {
            return Err(Error::invalid("primitive step requires dt > 0"));
        }
        if self.mode == GoalMode::VelocityGoal && self.alpha_h <= 0.0 {
            return Err(Error::invalid("velocity-goal mode requires alpha_h > 0"));
        }
        let z0 = cs.z;
        let zh = cs.peek(0.5 * dt);
        let z1 = cs.peek(dt);

        let (k1a, k1b) = self.derivatives(&self.y1, &self.y2, z0)?;
        let (k2a, k2b) = self.derivatives(
            &(&self.y1 + &k1a * (0.5 * dt)),
            &(&self.y2 + &k1b * (0.5 * dt)),
            zh,
        )?;
        let (k3a, k3b) = self.derivatives(
            &(&self.y1 + &k2a * (0.5 * dt)),
            &(&self.y2 + &k2b * (0.5 * dt)),
            zh,
        )?;
        let (k4a, k4b) = self.derivatives(&(&self.y1 + &k3a * dt), &(&self.y2 + &k3b * dt), z1)?;

        self.y1 += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
        self.y2 += (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (dt / 6.0);

        if !self.y1.iter().chain(self.y2.iter()).all(|v| v.is_finite()) {
            return Err(Error::numerical("primitive state diverged"));
        }

        let (_, y2_dot) = self.derivatives(&self.y1, &self.y2, z1)?;
        Ok((self.y1.clone(), &self.y2 * self.tau, y2_dot * self.tau))
    }

    /// Current desired task acceleration without advancing the state.
    pub fn desired_acceleration(&self, z: f64) -> Result<DVector<f64>> {
        let (_, y2_dot) = self.derivatives(&self.y1, &self.y2, z)?;
        Ok(y2_dot * self.tau)
    }

    /// Replay the primitive from a given start for `duration` seconds.
    pub fn replay(
        &self,
        start: DVector<f64>,
        start_velocity: DVector<f64>,
        duration: f64,
        dt: f64,
    ) -> Result<TaskTrajectory> {
        let mut mp = self.clone();
        mp.reset(start, start_velocity);
        let mut cs = CanonicalSystem::new(mp.tau);
        let n = (duration / dt).round() as usize;
        let mut samples = Vec::with_capacity(n + 1);
        let xdd0 = mp.desired_acceleration(cs.z)?;
        samples.push(TrajectorySample {
            t: 0.0,
            x: mp.y1.clone(),
            x_dot: &mp.y2 * mp.tau,
            x_ddot: xdd0,
        });
        for i in 0..n {
            let (x, xd, xdd) = mp.step(&cs, dt)?;
            cs.step(dt)?;
            samples.push(TrajectorySample { t: (i + 1) as f64 * dt, x, x_dot: xd, x_ddot: xdd });
        }
        TaskTrajectory::new(samples, self.dof)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Learn a primitive from a demonstration by locally weighted regression.
///
/// The goal, duration and amplitude come straight from the demonstration;
/// the forcing targets are obtained by inverting the primitive dynamics
/// along it, and each kernel solves its own weighted least-squares problem
/// in the regressor `z`.
pub fn imitate(demo: &TaskTrajectory, n_basis: usize, mode: GoalMode) -> Result<MotorPrimitive> {
    if demo.samples.len() < 2 * n_basis {
        return Err(Error::invalid("demonstration too short for the basis count"));
    }
    let duration = demo.duration();
    if duration <= 0.0 {
        return Err(Error::invalid("demonstration has zero duration"));
    }
    let dof = demo.dof;
    let tau = 1.0 / duration;
    let basis = BasisSet::uniform_in_time(n_basis, ALPHA_Z)?;

    let first = &demo.samples[0];
    let last = demo.samples.last().unwrap();
    let goal = last.x.clone();
    let goal_velocity = match mode {
        GoalMode::Standard => DVector::zeros(dof),
        GoalMode::VelocityGoal => last.x_dot.clone(),
    };
    let mut amplitude = DVector::zeros(dof);
    for k in 0..dof {
        let a = goal[k] - first.x[k];
        amplitude[k] = if a.abs() < 1e-6 { 1.0 } else { a };
    }
    let moving_goal_start = &goal - &goal_velocity / tau;

    let alpha_y = ALPHA_Y;
    let beta_y = alpha_y / 4.0;
    let alpha_h = ALPHA_Z;
    let t0 = first.t;

    // Forcing targets from inverting the transformed dynamics.
    let n_samples = demo.samples.len();
    let mut zs = Vec::with_capacity(n_samples);
    let mut targets = DMatrix::zeros(n_samples, dof);
    for (row, s) in demo.samples.iter().enumerate() {
        let z = (-ALPHA_Z * (s.t - t0) / duration).exp();
        zs.push(z);
        for k in 0..dof {
            let x = s.x[k];
            let xd = s.x_dot[k];
            let xdd = s.x_ddot[k];
            let f = match mode {
                GoalMode::Standard => {
                    xdd / (tau * tau) - alpha_y * (beta_y * (goal[k] - x) - xd / tau)
                }
                GoalMode::VelocityGoal => {
                    let gm = moving_goal_start[k] - goal_velocity[k] * z.ln() / (tau * alpha_h);
                    xdd / (tau * tau)
                        - (1.0 - z) * alpha_y * (beta_y * (gm - x) + (goal_velocity[k] - xd) / tau)
                }
            };
            targets[(row, k)] = f / amplitude[k];
        }
    }

    // Per-kernel weighted least squares: f(z) ~ w_i * z near kernel i.
    // A few Gauss-Seidel sweeps over the local solves remove the bias that
    // overlapping kernels introduce when each is fit in isolation.
    let ridge = 1e-8;
    let psi_all: Vec<DVector<f64>> = zs.iter().map(|&z| basis.activations(z).unwrap()).collect();
    let mut weights = DMatrix::zeros(n_basis, dof);
    for _sweep in 0..4 {
        for i in 0..n_basis {
            let mut szr: DVector<f64> = DVector::zeros(dof);
            for (row, &z) in zs.iter().enumerate() {
                let d = z - basis.centers[i];
                let psi = (-basis.widths[i] * d * d).exp();
                if psi < 1e-12 {
                    continue;
                }
                for k in 0..dof {
                    // Residual of the full model excluding kernel i.
                    let mut others = 0.0;
                    for j in 0..n_basis {
                        if j != i {
                            others += psi_all[row][j] * weights[(j, k)];
                        }
                    }
                    let partial = targets[(row, k)] - others * z;
                    szr[k] += psi * z * partial;
                }
            }
            for k in 0..dof {
                // The kernel's own contribution enters through psi_all, so
                // scale the local solution accordingly.
                let own = psi_all
                    .iter()
                    .zip(zs.iter())
                    .map(|(p, &z)| {
                        let d = z - basis.centers[i];
                        let psi = (-basis.widths[i] * d * d).exp();
                        psi * z * p[i] * z
                    })
                    .sum::<f64>();
                weights[(i, k)] = szr[k] / (own + ridge);
            }
        }
    }

    Ok(MotorPrimitive {
        dof,
        tau,
        alpha_y,
        beta_y,
        alpha_h,
        mode,
        goal,
        goal_velocity,
        amplitude,
        basis,
        weights,
        moving_goal_start,
        y1: first.x.clone(),
        y2: &first.x_dot / tau,
    })
}
