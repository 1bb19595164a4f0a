//! Priority-ordered offset learning and the combined control law.
//!
//! The lowest-priority primitive's control law is learned first and becomes
//! the baseline; each higher-priority primitive then learns only the offset
//! between its demonstrated controls and everything below it (including the
//! null-space control). At run time the combined command is
//! `u = u0 + sum(du_n)`, so higher-priority offsets override the lower ones
//! wherever they conflict.
//!
//! During offset computation the features of the training primitive are
//! evaluated against the lower-priority parameters, as the training loop
//! prescribes; since each dataset was collected with only its own primitive
//! active, the other primitives' acceleration slots are filled with their
//! rest output (zero task acceleration).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    build_feature, fit_kernel_with_costs, fit_weighted, CostModel, Dataset, KernelPolicy,
    LinearPolicy,
};

/// A priority permutation of primitive indices, lowest priority first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominanceOrder {
    pub ordering: Vec<usize>,
}

impl DominanceOrder {
    pub fn new(ordering: Vec<usize>) -> Result<Self> {
        let n = ordering.len();
        let mut seen = vec![false; n];
        for &i in &ordering {
            if i >= n || seen[i] {
                return Err(Error::invalid("ordering must be a permutation of 0..n"));
            }
            seen[i] = true;
        }
        Ok(DominanceOrder { ordering })
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    /// Highest-priority primitive index.
    pub fn top(&self) -> usize {
        *self.ordering.last().expect("non-empty ordering")
    }

    /// Label like `"hit>=move>=orient"` given primitive names, highest
    /// priority first.
    pub fn label(&self, names: &[&str]) -> String {
        self.ordering
            .iter()
            .rev()
            .map(|&i| names[i])
            .collect::<Vec<_>>()
            .join(">=")
    }

    /// Parse `"hit,move,orient"` (highest priority first) against names.
    pub fn parse(spec: &str, names: &[&str]) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        if parts.len() != names.len() {
            return Err(Error::invalid(format!(
                "ordering must name all {} primitives",
                names.len()
            )));
        }
        let mut ordering = Vec::with_capacity(parts.len());
        // Highest priority is listed first, stored lowest first.
        for part in parts.iter().rev() {
            let idx = names
                .iter()
                .position(|n| n == part)
                .ok_or_else(|| Error::invalid(format!("unknown primitive name '{part}'")))?;
            ordering.push(idx);
        }
        DominanceOrder::new(ordering)
    }
}

/// All `n!` dominance orders in deterministic lexicographic order.
pub fn enumerate_orders(n_prim: usize) -> Result<Vec<DominanceOrder>> {
    if n_prim == 0 {
        return Err(Error::invalid("need at least one primitive"));
    }
    if n_prim > 6 {
        return Err(Error::invalid(format!(
            "refusing to enumerate {n_prim}! dominance structures; the count grows factorially \
             and exhaustive search is only feasible for up to 6 primitives"
        )));
    }
    let mut orders = Vec::new();
    let mut current = Vec::with_capacity(n_prim);
    let mut used = vec![false; n_prim];
    fn recurse(
        n: usize,
        current: &mut Vec<usize>,
        used: &mut Vec<bool>,
        out: &mut Vec<DominanceOrder>,
    ) {
        if current.len() == n {
            out.push(DominanceOrder { ordering: current.clone() });
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                current.push(i);
                recurse(n, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    recurse(n_prim, &mut current, &mut used, &mut orders);
    Ok(orders)
}

/// Either fitted form of an offset policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffsetPolicy {
    Linear(LinearPolicy),
    Kernel(KernelPolicy),
}

impl OffsetPolicy {
    pub fn predict(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            OffsetPolicy::Linear(p) => p.predict(phi),
            OffsetPolicy::Kernel(p) => p.predict(phi),
        }
    }
}

/// Which regression backs the offset policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Linear,
    Kernel,
}

/// An ordered stack of offset policies plus the shared cost model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrioritizedController {
    pub order: DominanceOrder,
    /// One policy per primitive, indexed by primitive (not training order).
    pub policies: Vec<OffsetPolicy>,
    pub cost: CostModel,
    pub primitive_dims: Vec<usize>,
}

impl PrioritizedController {
    /// Combined control `u = u0 + sum(du_n)`, each offset evaluated on its
    /// own primitive's current feature vector.
    pub fn predict_control(
        &self,
        q: &DVector<f64>,
        q_dot: &DVector<f64>,
        primitive_accels: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        if primitive_accels.len() != self.policies.len() {
            return Err(Error::invalid("one task acceleration needed per primitive"));
        }
        let mut u = self.cost.null_space_control(q, q_dot);
        for (i, accel) in primitive_accels.iter().enumerate() {
            if accel.len() != self.primitive_dims[i] {
                return Err(Error::invalid("primitive acceleration dimension mismatch"));
            }
            let phi = build_feature(accel, q_dot, q);
            u += self.policies[i].predict(&phi)?;
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("non-finite combined control"));
        }
        Ok(u)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Learn the full prioritized stack from per-primitive datasets.
///
/// `datasets[i]` holds primitive `i`'s demonstrations; training proceeds in
/// increasing priority per `order`. For each primitive the offsets against
/// all previously trained policies and the null-space control are computed,
/// weighted by `exp(-alpha * offset' N offset)`, and fit by weighted ridge
/// regression (or its kernelized form).
pub fn train_prioritized(
    datasets: &[Dataset],
    order: &DominanceOrder,
    cost: &CostModel,
    lambda: f64,
) -> Result<PrioritizedController> {
    train_prioritized_with(datasets, order, cost, lambda, FitMethod::Linear)
}

pub fn train_prioritized_with(
    datasets: &[Dataset],
    order: &DominanceOrder,
    cost: &CostModel,
    lambda: f64,
    method: FitMethod,
) -> Result<PrioritizedController> {
    cost.validate()?;
    if datasets.len() != order.len() {
        return Err(Error::invalid("one dataset needed per primitive"));
    }
    if datasets.iter().any(|d| d.is_empty()) {
        return Err(Error::invalid("empty dataset for some primitive"));
    }
    let n_joints = datasets[0].joint_dim;
    if datasets.iter().any(|d| d.joint_dim != n_joints) {
        return Err(Error::invalid("datasets disagree on joint count"));
    }

    let n_prim = datasets.len();
    let mut policies: Vec<Option<OffsetPolicy>> = vec![None; n_prim];

    for (rank, &prim) in order.ordering.iter().enumerate() {
        let data = &datasets[prim];
        let t_samples = data.len();

        // Offsets against everything of lower priority plus u0. The other
        // primitives were at rest during this dataset's collection, so
        // their acceleration slots are zero.
        let mut offsets = DMatrix::zeros(t_samples, n_joints);
        let mut costs = DVector::zeros(t_samples);
        let mut weights = DVector::zeros(t_samples);
        for t in 0..t_samples {
            let q = data.q_row(t);
            let qd = data.q_dot_row(t);
            let mut offset = data.u_row(t) - cost.null_space_control(&q, &qd);
            for &lower in &order.ordering[..rank] {
                let zero_accel = DVector::zeros(datasets[lower].task_dim);
                let phi = build_feature(&zero_accel, &qd, &q);
                offset -= policies[lower]
                    .as_ref()
                    .expect("lower-priority policy trained")
                    .predict(&phi)?;
            }
            let c = (offset.transpose() * &cost.metric_n * &offset)[(0, 0)];
            costs[t] = c;
            weights[t] = (-cost.alpha_scale * c).exp();
            offsets.row_mut(t).copy_from(&offset.transpose());
        }

        let offset_data = Dataset::new(data.phi.clone(), offsets, data.task_dim, n_joints)?;
        let policy = match method {
            FitMethod::Linear => OffsetPolicy::Linear(fit_weighted(&offset_data, &weights, lambda)?),
            FitMethod::Kernel => OffsetPolicy::Kernel(fit_kernel_with_costs(
                &offset_data,
                &costs,
                cost.alpha_scale,
                lambda,
            )?),
        };
        policies[prim] = Some(policy);
    }

    Ok(PrioritizedController {
        order: order.clone(),
        policies: policies.into_iter().map(|p| p.unwrap()).collect(),
        cost: cost.clone(),
        primitive_dims: datasets.iter().map(|d| d.task_dim).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::compute_weights;
    use rand::Rng as _;
    use rand::SeedableRng as _;
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, t: usize, d: usize, n: usize) -> Dataset {
        let phi = DMatrix::from_fn(t, d + 2 * n, |_, _| rng.gen_range(-1.0..1.0));
        let u = DMatrix::from_fn(t, n, |_, _| rng.gen_range(-1.0..1.0));
        Dataset::new(phi, u, d, n).unwrap()
    }

    #[test]
    fn enumerate_counts() {
        assert_eq!(enumerate_orders(1).unwrap().len(), 1);
        assert_eq!(enumerate_orders(3).unwrap().len(), 6);
        assert_eq!(enumerate_orders(4).unwrap().len(), 24);
    }

    #[test]
    fn enumerate_is_lexicographic_and_deterministic() {
        let orders = enumerate_orders(3).unwrap();
        let seqs: Vec<Vec<usize>> = orders.iter().map(|o| o.ordering.clone()).collect();
        let mut sorted = seqs.clone();
        sorted.sort();
        assert_eq!(seqs, sorted);
        assert_eq!(seqs[0], vec![0, 1, 2]);
    }

    #[test]
    fn enumerate_refuses_large_counts() {
        let err = enumerate_orders(7).unwrap_err();
        assert!(err.to_string().contains("factorial"));
    }

    #[test]
    fn order_validation() {
        assert!(DominanceOrder::new(vec![0, 2, 1]).is_ok());
        assert!(DominanceOrder::new(vec![0, 0, 1]).is_err());
        assert!(DominanceOrder::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn order_label_and_parse() {
        let names = ["move", "hit", "orient"];
        let order = DominanceOrder::parse("hit,move,orient", &names).unwrap();
        // Highest priority last in storage.
        assert_eq!(order.ordering, vec![2, 0, 1]);
        assert_eq!(order.top(), 1);
        assert_eq!(order.label(&names), "hit>=move>=orient");
    }

    #[test]
    fn single_primitive_equals_weighted_fit_on_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 3;
        let data = random_dataset(&mut rng, 40, 2, n);
        let cost = CostModel::with_defaults(DVector::zeros(n));
        let order = DominanceOrder::new(vec![0]).unwrap();
        let ctrl = train_prioritized(&[data.clone()], &order, &cost, 1e-6).unwrap();

        // Manual: offsets u - u0, weights from the cost of those offsets.
        let mut offsets = DMatrix::zeros(40, n);
        for t in 0..40 {
            let o = data.u_row(t) - cost.null_space_control(&data.q_row(t), &data.q_dot_row(t));
            offsets.row_mut(t).copy_from(&o.transpose());
        }
        let offset_data = Dataset::new(data.phi.clone(), offsets, 2, n).unwrap();
        let weights = compute_weights(&offset_data, &CostModel {
            k_p: DMatrix::identity(n, n) * 1e-12,
            k_d: DMatrix::identity(n, n) * 1e-12,
            ..cost.clone()
        })
        .unwrap();
        let manual = fit_weighted(&offset_data, &weights, 1e-6).unwrap();
        match &ctrl.policies[0] {
            OffsetPolicy::Linear(p) => {
                assert!((&p.theta - &manual.theta).amax() < 1e-9);
            }
            _ => panic!("expected linear policy"),
        }
    }

    #[test]
    fn telescoping_matches_manual_algorithm_replay() {
        // Re-run the training loop by hand and check the stack agrees.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 2;
        let d0 = random_dataset(&mut rng, 30, 1, n);
        let d1 = random_dataset(&mut rng, 30, 2, n);
        let cost = CostModel::with_defaults(DVector::zeros(n));
        let order = DominanceOrder::new(vec![0, 1]).unwrap();
        let lambda = 1e-6;
        let ctrl = train_prioritized(&[d0.clone(), d1.clone()], &order, &cost, lambda).unwrap();

        // Manual pass, lowest priority first.
        let mut off0 = DMatrix::zeros(30, n);
        let mut w0 = DVector::zeros(30);
        for t in 0..30 {
            let o = d0.u_row(t) - cost.null_space_control(&d0.q_row(t), &d0.q_dot_row(t));
            w0[t] = (-(o.norm_squared())).exp();
            off0.row_mut(t).copy_from(&o.transpose());
        }
        let fit0 =
            fit_weighted(&Dataset::new(d0.phi.clone(), off0, 1, n).unwrap(), &w0, lambda).unwrap();

        let mut off1 = DMatrix::zeros(30, n);
        let mut w1 = DVector::zeros(30);
        for t in 0..30 {
            let q = d1.q_row(t);
            let qd = d1.q_dot_row(t);
            let phi0 = build_feature(&DVector::zeros(1), &qd, &q);
            let o = d1.u_row(t) - cost.null_space_control(&q, &qd) - fit0.predict(&phi0).unwrap();
            w1[t] = (-(o.norm_squared())).exp();
            off1.row_mut(t).copy_from(&o.transpose());
        }
        let fit1 =
            fit_weighted(&Dataset::new(d1.phi.clone(), off1, 2, n).unwrap(), &w1, lambda).unwrap();

        for (stacked, manual) in ctrl.policies.iter().zip([&fit0, &fit1]) {
            match stacked {
                OffsetPolicy::Linear(p) => {
                    assert!((&p.theta - &manual.theta).amax() < 1e-9);
                }
                _ => panic!("expected linear policy"),
            }
        }
    }

    #[test]
    fn predict_with_zero_policies_is_null_space_control() {
        let n = 3;
        let cost = CostModel::with_defaults(DVector::from_element(n, 0.5));
        let zero_policy = |d: usize| {
            OffsetPolicy::Linear(LinearPolicy {
                theta: DMatrix::zeros(d + 2 * n, n),
                ridge_lambda: 1e-6,
                feature_scaling: DVector::from_element(d + 2 * n, 1.0),
                task_dim: d,
                joint_dim: n,
            })
        };
        let ctrl = PrioritizedController {
            order: DominanceOrder::new(vec![0, 1]).unwrap(),
            policies: vec![zero_policy(2), zero_policy(1)],
            cost: cost.clone(),
            primitive_dims: vec![2, 1],
        };
        let q = DVector::from_row_slice(&[0.1, 0.2, 0.3]);
        let qd = DVector::from_row_slice(&[-0.1, 0.0, 0.2]);
        let accels = vec![DVector::zeros(2), DVector::zeros(1)];
        let u = ctrl.predict_control(&q, &qd, &accels).unwrap();
        assert!((u - cost.null_space_control(&q, &qd)).norm() < 1e-14);

        // Rest posture, zero velocity: fixed point.
        let u = ctrl
            .predict_control(&cost.rest_posture, &DVector::zeros(n), &accels)
            .unwrap();
        assert!(u.norm() < 1e-14);
    }

    #[test]
    fn predict_rejects_missing_accels() {
        let n = 2;
        let cost = CostModel::with_defaults(DVector::zeros(n));
        let ctrl = PrioritizedController {
            order: DominanceOrder::new(vec![0]).unwrap(),
            policies: vec![OffsetPolicy::Linear(LinearPolicy {
                theta: DMatrix::zeros(1 + 2 * n, n),
                ridge_lambda: 1e-6,
                feature_scaling: DVector::from_element(1 + 2 * n, 1.0),
                task_dim: 1,
                joint_dim: n,
            })],
            cost,
            primitive_dims: vec![1],
        };
        let q = DVector::zeros(n);
        assert!(ctrl.predict_control(&q, &q, &[]).is_err());
    }

    #[test]
    fn reconstruction_on_training_support() {
        // A stack trained on data from an exact linear law reproduces the
        // demonstrated controls at the training states.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 2;
        let cost = CostModel::with_defaults(DVector::zeros(n));
        // Lowest-priority data follows exactly u0 + theta' phi.
        let theta0 = DMatrix::from_fn(1 + 2 * n, n, |_, _| rng.gen_range(-0.5..0.5));
        let phi0 = DMatrix::from_fn(50, 1 + 2 * n, |_, _| rng.gen_range(-1.0..1.0));
        let mut u0m = DMatrix::zeros(50, n);
        for t in 0..50 {
            let phi_t = phi0.row(t).transpose();
            let q = phi_t.rows(1 + n, n).into_owned();
            let qd = phi_t.rows(1, n).into_owned();
            let u = cost.null_space_control(&q, &qd) + theta0.transpose() * phi_t;
            u0m.row_mut(t).copy_from(&u.transpose());
        }
        let d0 = Dataset::new(phi0, u0m, 1, n).unwrap();
        let order = DominanceOrder::new(vec![0]).unwrap();
        let ctrl = train_prioritized(&[d0.clone()], &order, &cost, 1e-9).unwrap();
        for t in (0..50).step_by(7) {
            let accel = d0.phi.row(t).columns(0, 1).transpose();
            let u = ctrl
                .predict_control(&d0.q_row(t), &d0.q_dot_row(t), &[accel])
                .unwrap();
            assert!((u - d0.u_row(t)).amax() < 1e-3);
        }
    }

    #[test]
    fn controller_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2;
        let data = random_dataset(&mut rng, 20, 1, n);
        let cost = CostModel::with_defaults(DVector::zeros(n));
        let order = DominanceOrder::new(vec![0]).unwrap();
        let ctrl = train_prioritized(&[data], &order, &cost, 1e-6).unwrap();
        let json = ctrl.to_json().unwrap();
        let back = PrioritizedController::from_json(&json).unwrap();
        assert_eq!(back.order, ctrl.order);
        assert_eq!(back.primitive_dims, ctrl.primitive_dims);
    }
}
