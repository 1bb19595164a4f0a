//! Redundant kinematic arm: forward kinematics, task-map Jacobians, an
//! analytic successive-projection control oracle, and acceleration-level
//! simulation.
//!
//! The reference arm has four revolute joints: a base yaw and three pitch
//! joints whose links all lie in the vertical plane selected by the yaw.
//! Pitch angles are measured from the vertical, cumulatively along the
//! chain, and the racket normal points along the last link. The arm is
//! redundant with respect to each individual task map (horizontal position,
//! vertical position, racket pitch), which is what the null-space control
//! resolves.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::CostModel;

/// Which task-space coordinates a primitive controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMap {
    /// End-effector x/y position (2-D).
    Horizontal,
    /// End-effector height (1-D).
    Vertical,
    /// Racket pitch, the tilt of the racket normal from vertical within the
    /// arm's yaw plane (1-D).
    Pitch,
}

impl TaskMap {
    pub fn dim(&self) -> usize {
        match self {
            TaskMap::Horizontal => 2,
            TaskMap::Vertical => 1,
            TaskMap::Pitch => 1,
        }
    }
}

/// End-effector pose derived from the joint configuration.
#[derive(Debug, Clone)]
pub struct Pose {
    pub position: Vector3<f64>,
    /// Racket tilt from vertical, signed within the yaw plane.
    pub pitch: f64,
    /// Unit racket normal.
    pub normal: Vector3<f64>,
}

/// Four-joint arm (yaw plus three cumulative pitches) with joint state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KinematicArm {
    pub shoulder_height: f64,
    pub link_lengths: [f64; 3],
    pub joint_limits: Vec<(f64, f64)>,
    pub rest_posture: DVector<f64>,
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
}

impl KinematicArm {
    /// The reference arm used throughout: desk-scale links, rest posture
    /// with the racket level (normal straight up) at roughly 0.45 m radius
    /// and 1.05 m height.
    pub fn reference() -> Self {
        let rest = DVector::from_row_slice(&[0.0, 1.9, -1.8395, -0.0605]);
        KinematicArm {
            shoulder_height: 0.55,
            link_lengths: [0.45, 0.40, 0.25],
            joint_limits: vec![
                (-1.0e9, 1.0e9),
                (0.5, 2.8),
                (-3.0, -0.5),
                (-1.5, 1.5),
            ],
            q: rest.clone(),
            q_dot: DVector::zeros(4),
            rest_posture: rest,
        }
    }

    pub fn dof(&self) -> usize {
        4
    }

    pub fn reset(&mut self) {
        self.q = self.rest_posture.clone();
        self.q_dot = DVector::zeros(self.dof());
    }

    /// Cumulative pitch angles of the three links.
    fn pitches(q: &DVector<f64>) -> [f64; 3] {
        [q[1], q[1] + q[2], q[1] + q[2] + q[3]]
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Pose {
        let [t2, t3, t4] = Self::pitches(q);
        let [l1, l2, l3] = self.link_lengths;
        let radial = l1 * t2.sin() + l2 * t3.sin() + l3 * t4.sin();
        let height = self.shoulder_height + l1 * t2.cos() + l2 * t3.cos() + l3 * t4.cos();
        let (s1, c1) = q[0].sin_cos();
        let pitch = t4;
        Pose {
            position: Vector3::new(radial * c1, radial * s1, height),
            pitch,
            normal: Vector3::new(pitch.sin() * c1, pitch.sin() * s1, pitch.cos()),
        }
    }

    /// Analytic Jacobian of a task map, `dim x 4`.
    pub fn jacobian(&self, q: &DVector<f64>, map: TaskMap) -> DMatrix<f64> {
        let [t2, t3, t4] = Self::pitches(q);
        let [l1, l2, l3] = self.link_lengths;
        let radial = l1 * t2.sin() + l2 * t3.sin() + l3 * t4.sin();
        let (s1, c1) = q[0].sin_cos();
        // d radial / d q_k and d height / d q_k for the pitch joints.
        let dr = [
            l1 * t2.cos() + l2 * t3.cos() + l3 * t4.cos(),
            l2 * t3.cos() + l3 * t4.cos(),
            l3 * t4.cos(),
        ];
        let dh = [
            -(l1 * t2.sin() + l2 * t3.sin() + l3 * t4.sin()),
            -(l2 * t3.sin() + l3 * t4.sin()),
            -(l3 * t4.sin()),
        ];
        match map {
            TaskMap::Horizontal => {
                let mut j = DMatrix::zeros(2, 4);
                j[(0, 0)] = -radial * s1;
                j[(1, 0)] = radial * c1;
                for k in 0..3 {
                    j[(0, k + 1)] = dr[k] * c1;
                    j[(1, k + 1)] = dr[k] * s1;
                }
                j
            }
            TaskMap::Vertical => {
                let mut j = DMatrix::zeros(1, 4);
                for k in 0..3 {
                    j[(0, k + 1)] = dh[k];
                }
                j
            }
            TaskMap::Pitch => DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 1.0, 1.0]),
        }
    }

    /// Task-space value of a map at configuration `q`.
    pub fn task_value(&self, q: &DVector<f64>, map: TaskMap) -> DVector<f64> {
        let pose = self.forward_kinematics(q);
        match map {
            TaskMap::Horizontal => DVector::from_row_slice(&[pose.position.x, pose.position.y]),
            TaskMap::Vertical => DVector::from_row_slice(&[pose.position.z]),
            TaskMap::Pitch => DVector::from_row_slice(&[pose.pitch]),
        }
    }

    /// Task-space velocity `J qd`.
    pub fn task_velocity(&self, q: &DVector<f64>, q_dot: &DVector<f64>, map: TaskMap) -> DVector<f64> {
        self.jacobian(q, map) * q_dot
    }

    /// `dJ/dt` by finite differences along the current velocity.
    pub fn jacobian_dot(&self, q: &DVector<f64>, q_dot: &DVector<f64>, map: TaskMap, h: f64) -> DMatrix<f64> {
        let j0 = self.jacobian(q, map);
        let j1 = self.jacobian(&(q + q_dot * h), map);
        (j1 - j0) / h
    }

    /// Semi-implicit Euler step `qd += u dt; q += qd dt`.
    ///
    /// Returns whether a joint limit was crossed (a trial-failure event,
    /// not an error).
    pub fn step_dynamics(&mut self, u: &DVector<f64>, dt: f64) -> Result<bool> {
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("non-finite control in dynamics step"));
        }
        self.q_dot += u * dt;
        self.q += &self.q_dot * dt;
        let mut violated = false;
        for (k, &(lo, hi)) in self.joint_limits.iter().enumerate() {
            if self.q[k] < lo || self.q[k] > hi {
                violated = true;
            }
        }
        Ok(violated)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ArmFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ArmFile = serde_json::from_str(s)?;
        file.into_arm()
    }
}

/// On-disk arm description: one record per joint plus the rest posture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmFile {
    pub joints: Vec<JointFile>,
    pub rest_posture: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointFile {
    /// "yaw" for the base joint, "pitch" for the chain joints.
    pub axis: String,
    /// Vertical offset before the joint (shoulder height for the base).
    pub offset: f64,
    /// Link length after the joint.
    pub length: f64,
    pub limits: (f64, f64),
}

impl From<&KinematicArm> for ArmFile {
    fn from(arm: &KinematicArm) -> Self {
        let mut joints = vec![JointFile {
            axis: "yaw".into(),
            offset: arm.shoulder_height,
            length: 0.0,
            limits: arm.joint_limits[0],
        }];
        for k in 0..3 {
            joints.push(JointFile {
                axis: "pitch".into(),
                offset: 0.0,
                length: arm.link_lengths[k],
                limits: arm.joint_limits[k + 1],
            });
        }
        ArmFile { joints, rest_posture: arm.rest_posture.iter().copied().collect() }
    }
}

impl ArmFile {
    pub fn into_arm(self) -> Result<KinematicArm> {
        if self.joints.len() != 4 || self.joints[0].axis != "yaw" {
            return Err(Error::invalid("arm file must describe one yaw joint and three pitch joints"));
        }
        let rest = DVector::from_row_slice(&self.rest_posture);
        if rest.len() != 4 {
            return Err(Error::invalid("rest posture must have four entries"));
        }
        Ok(KinematicArm {
            shoulder_height: self.joints[0].offset,
            link_lengths: [self.joints[1].length, self.joints[2].length, self.joints[3].length],
            joint_limits: self.joints.iter().map(|j| j.limits).collect(),
            q: rest.clone(),
            q_dot: DVector::zeros(4),
            rest_posture: rest,
        })
    }
}

/// Truncated-SVD pseudo-inverse; reports whether rank fell short of the
/// row count (a damped solve).
fn pinv(a: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.max();
    let cutoff = tol * smax.max(1.0);
    let mut rank = 0;
    let mut sinv = DMatrix::zeros(vt.nrows(), u.ncols());
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > cutoff {
            sinv[(i, i)] = 1.0 / s;
            rank += 1;
        } else if s > 0.0 {
            // Damp near-singular directions instead of discarding them.
            sinv[(i, i)] = s / (s * s + cutoff * cutoff);
        }
    }
    (vt.transpose() * sinv * u.transpose(), rank < a.nrows())
}

/// Result of the analytic prioritized resolution.
#[derive(Debug, Clone)]
pub struct OracleControl {
    pub u: DVector<f64>,
    /// Set when some task's projected Jacobian was rank deficient.
    pub damped: bool,
}

/// Analytic prioritized operational-space control.
///
/// Finds joint accelerations as close as possible (in the metric of the
/// cost model) to the null-space control while satisfying the task
/// constraints in priority order: the last task in `tasks` is the highest
/// priority and is met exactly when feasible; each earlier task is met in
/// the null space that remains; whatever freedom is left reverts to `u0`.
pub fn oracle_control(
    arm: &KinematicArm,
    q: &DVector<f64>,
    q_dot: &DVector<f64>,
    tasks: &[(TaskMap, DVector<f64>)],
    cost: &CostModel,
) -> Result<OracleControl> {
    let n = arm.dof();
    let u0 = cost.null_space_control(q, q_dot);
    // Work in coordinates v = L (u - u0) with L = sqrt(N); minimizing |v|
    // is then exactly minimizing the metric cost.
    let eig = cost.metric_n.clone().symmetric_eigen();
    let mut l = DMatrix::zeros(n, n);
    let mut l_inv = DMatrix::zeros(n, n);
    for i in 0..n {
        let e = eig.eigenvalues[i].max(0.0);
        let s = e.sqrt().max(1e-9);
        let col = eig.eigenvectors.column(i);
        l += col * col.transpose() * s;
        l_inv += col * col.transpose() / s;
    }

    let mut v: DVector<f64> = DVector::zeros(n);
    let mut projector = DMatrix::identity(n, n);
    let mut damped = false;
    let h = 1e-3;
    for (map, xdd_des) in tasks.iter().rev() {
        if xdd_des.len() != map.dim() {
            return Err(Error::invalid("task acceleration dimension mismatch"));
        }
        let j = arm.jacobian(q, *map);
        let jdot = arm.jacobian_dot(q, q_dot, *map, h);
        let rhs = xdd_des - jdot * q_dot;
        let u = &u0 + &l_inv * &v;
        let residual = &rhs - &j * u;
        let a = &j * &l_inv * &projector;
        let (a_pinv, rank_def) = pinv(&a, 1e-10);
        damped |= rank_def;
        let delta = &a_pinv * residual;
        v += &projector * delta;
        projector = &projector - a_pinv * a;
        // Re-symmetrize to keep the projector numerically clean.
        projector = (&projector + projector.transpose()) * 0.5;
    }
    Ok(OracleControl { u: u0 + l_inv * v, damped })
}
