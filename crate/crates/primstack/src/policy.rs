//! Single-primitive operational-space control laws learned by regression.
//!
//! A control law maps the feature vector `phi = [xdd_i; qd; q]` (task
//! acceleration of the primitive, joint velocities, joint positions) to
//! joint accelerations `u`. Plain ridge regression averages inconsistent
//! demonstrations; weighting each sample by `exp(-alpha * u~' N u~)` with
//! `u~ = u - u0` pulls the solution towards the null-space control and
//! resolves the redundancy. The same regression can be kernelized through
//! the Woodbury identity, trading the linear model for sample storage.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assemble the fixed feature layout `[xdd_i; qd; q]`.
pub fn build_feature(x_ddot: &DVector<f64>, q_dot: &DVector<f64>, q: &DVector<f64>) -> DVector<f64> {
    let mut phi = DVector::zeros(x_ddot.len() + q_dot.len() + q.len());
    phi.rows_mut(0, x_ddot.len()).copy_from(x_ddot);
    phi.rows_mut(x_ddot.len(), q_dot.len()).copy_from(q_dot);
    phi.rows_mut(x_ddot.len() + q_dot.len(), q.len()).copy_from(q);
    phi
}

/// Demonstration data for one primitive: features and controls, row per
/// time step.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// T x (task_dim + 2*joint_dim) feature matrix, layout `[xdd; qd; q]`.
    pub phi: DMatrix<f64>,
    /// T x joint_dim demonstrated controls (joint accelerations).
    pub u: DMatrix<f64>,
    pub task_dim: usize,
    pub joint_dim: usize,
}

impl Dataset {
    pub fn new(phi: DMatrix<f64>, u: DMatrix<f64>, task_dim: usize, joint_dim: usize) -> Result<Self> {
        if phi.nrows() != u.nrows() {
            return Err(Error::invalid("feature and control row counts differ"));
        }
        if phi.ncols() != task_dim + 2 * joint_dim {
            return Err(Error::invalid("feature width does not match task/joint dims"));
        }
        if u.ncols() != joint_dim {
            return Err(Error::invalid("control width does not match joint dim"));
        }
        if !phi.iter().chain(u.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset { phi, u, task_dim, joint_dim })
    }

    pub fn len(&self) -> usize {
        self.phi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q_row(&self, t: usize) -> DVector<f64> {
        self.phi
            .row(t)
            .columns(self.task_dim + self.joint_dim, self.joint_dim)
            .transpose()
    }

    pub fn q_dot_row(&self, t: usize) -> DVector<f64> {
        self.phi.row(t).columns(self.task_dim, self.joint_dim).transpose()
    }

    pub fn u_row(&self, t: usize) -> DVector<f64> {
        self.u.row(t).transpose()
    }

    /// Append rows of another dataset with identical dimensions.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.task_dim != other.task_dim || self.joint_dim != other.joint_dim {
            return Err(Error::invalid("cannot concatenate datasets of differing dims"));
        }
        let mut phi = DMatrix::zeros(self.len() + other.len(), self.phi.ncols());
        phi.rows_mut(0, self.len()).copy_from(&self.phi);
        phi.rows_mut(self.len(), other.len()).copy_from(&other.phi);
        let mut u = DMatrix::zeros(self.len() + other.len(), self.joint_dim);
        u.rows_mut(0, self.len()).copy_from(&self.u);
        u.rows_mut(self.len(), other.len()).copy_from(&other.u);
        Dataset::new(phi, u, self.task_dim, self.joint_dim)
    }

    /// CSV columns `q0..,qd0..,xdd0..,u0..`; dimensions go in a JSON sidecar.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let n = self.joint_dim;
        let d = self.task_dim;
        let mut header = Vec::new();
        for i in 0..n {
            header.push(format!("q{i}"));
        }
        for i in 0..n {
            header.push(format!("qd{i}"));
        }
        for i in 0..d {
            header.push(format!("xdd{i}"));
        }
        for i in 0..n {
            header.push(format!("u{i}"));
        }
        wtr.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = Vec::new();
            for i in 0..n {
                rec.push(format!("{}", self.phi[(t, d + n + i)]));
            }
            for i in 0..n {
                rec.push(format!("{}", self.phi[(t, d + i)]));
            }
            for i in 0..d {
                rec.push(format!("{}", self.phi[(t, i)]));
            }
            for i in 0..n {
                rec.push(format!("{}", self.u[(t, i)]));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, task_dim: usize, joint_dim: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let n = joint_dim;
        let d = task_dim;
        let width = 3 * n + d;
        let mut phi_rows = Vec::new();
        let mut u_rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::invalid("dataset CSV width mismatch"));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("bad dataset value: {e}")))?;
            let mut phi = vec![0.0; d + 2 * n];
            phi[..d].copy_from_slice(&vals[2 * n..2 * n + d]);
            phi[d..d + n].copy_from_slice(&vals[n..2 * n]);
            phi[d + n..].copy_from_slice(&vals[..n]);
            phi_rows.push(phi);
            u_rows.push(vals[2 * n + d..].to_vec());
        }
        let t = phi_rows.len();
        let phi = DMatrix::from_fn(t, d + 2 * n, |r, c| phi_rows[r][c]);
        let u = DMatrix::from_fn(t, n, |r, c| u_rows[r][c]);
        Dataset::new(phi, u, task_dim, joint_dim)
    }

    /// Sidecar describing the dataset dimensions and conventions.
    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            task_dim: self.task_dim,
            joint_dim: self.joint_dim,
            units: "SI (rad, rad/s, rad/s^2, m, m/s, m/s^2)".to_string(),
            inactive_primitive_convention: "zero task acceleration (rest output)".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub task_dim: usize,
    pub joint_dim: usize,
    pub units: String,
    pub inactive_primitive_convention: String,
}

/// Cost metric and null-space posture control shared by all fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostModel {
    /// Positive semi-definite metric on control offsets.
    pub metric_n: DMatrix<f64>,
    /// Monotone transform scale in `w = exp(-alpha * cost)`.
    pub alpha_scale: f64,
    pub k_p: DMatrix<f64>,
    pub k_d: DMatrix<f64>,
    pub rest_posture: DVector<f64>,
}

impl CostModel {
    /// Identity metric and critically damped posture gains `K_P = 10 I`,
    /// `K_D = 2 sqrt(10) I`.
    pub fn with_defaults(rest_posture: DVector<f64>) -> Self {
        let n = rest_posture.len();
        CostModel {
            metric_n: DMatrix::identity(n, n),
            alpha_scale: 1.0,
            k_p: DMatrix::identity(n, n) * 10.0,
            k_d: DMatrix::identity(n, n) * (2.0 * 10.0f64.sqrt()),
            rest_posture,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rest_posture.len();
        if self.metric_n.nrows() != n || self.metric_n.ncols() != n {
            return Err(Error::invalid("metric dimension mismatch"));
        }
        if self.alpha_scale <= 0.0 {
            return Err(Error::invalid("alpha_scale must be positive"));
        }
        let sym = (&self.metric_n - self.metric_n.transpose()).amax();
        if sym > 1e-9 {
            return Err(Error::invalid("metric must be symmetric"));
        }
        let eigs = self.metric_n.clone().symmetric_eigen().eigenvalues;
        if eigs.iter().any(|&e| e < -1e-10) {
            return Err(Error::invalid("metric must be positive semi-definite"));
        }
        for (name, m) in [("K_P", &self.k_p), ("K_D", &self.k_d)] {
            let eigs = m.clone().symmetric_eigen().eigenvalues;
            if eigs.iter().any(|&e| e <= 0.0) {
                return Err(Error::invalid(format!("{name} must be positive definite")));
            }
        }
        Ok(())
    }

    /// Null-space posture control `u0 = -K_D qd - K_P (q - q0)`.
    pub fn null_space_control(&self, q: &DVector<f64>, q_dot: &DVector<f64>) -> DVector<f64> {
        -(&self.k_d * q_dot) - &self.k_p * (q - &self.rest_posture)
    }

    /// Offset cost `u~' N u~` with `u~ = u - u0(q, qd)`.
    pub fn offset_cost(&self, u: &DVector<f64>, q: &DVector<f64>, q_dot: &DVector<f64>) -> f64 {
        let ut = u - self.null_space_control(q, q_dot);
        (ut.transpose() * &self.metric_n * ut)[(0, 0)]
    }

    /// Pick `alpha` so the median of the given costs maps to weight 0.5.
    pub fn set_alpha_from_costs(&mut self, costs: &[f64]) {
        let mut sorted: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        if sorted.is_empty() {
            return;
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        if median > 1e-12 {
            self.alpha_scale = std::f64::consts::LN_2 / median;
        }
    }
}

/// Weight every sample by `exp(-alpha * cost)`, costs taken against the
/// null-space control at that sample's state.
pub fn compute_weights(data: &Dataset, cost: &CostModel) -> Result<DVector<f64>> {
    cost.validate()?;
    let mut w = DVector::zeros(data.len());
    for t in 0..data.len() {
        let c = cost.offset_cost(&data.u_row(t), &data.q_row(t), &data.q_dot_row(t));
        w[t] = (-cost.alpha_scale * c).exp();
    }
    Ok(w)
}

/// Raw (unexponentiated) offset costs, one per sample.
pub fn compute_costs(data: &Dataset, cost: &CostModel) -> Result<DVector<f64>> {
    cost.validate()?;
    let mut c = DVector::zeros(data.len());
    for t in 0..data.len() {
        c[t] = cost.offset_cost(&data.u_row(t), &data.q_row(t), &data.q_dot_row(t));
    }
    Ok(c)
}

/// Linear control law `u = phi' theta` with recorded feature scaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearPolicy {
    /// Parameters over the scaled features, (d + 2n) x n.
    pub theta: DMatrix<f64>,
    pub ridge_lambda: f64,
    /// Per-column RMS used to scale features before fitting.
    pub feature_scaling: DVector<f64>,
    pub task_dim: usize,
    pub joint_dim: usize,
}

impl LinearPolicy {
    pub fn predict(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if phi.len() != self.theta.nrows() {
            return Err(Error::invalid("feature dimension mismatch"));
        }
        let scaled = phi.component_div(&self.feature_scaling);
        Ok(self.theta.transpose() * scaled)
    }

    /// Parameters expressed over the raw (unscaled) features.
    pub fn effective_theta(&self) -> DMatrix<f64> {
        let mut theta = self.theta.clone();
        for r in 0..theta.nrows() {
            let s = self.feature_scaling[r];
            for c in 0..theta.ncols() {
                theta[(r, c)] /= s;
            }
        }
        theta
    }

    /// Mean squared residual over a dataset, reported as a diagnostic.
    pub fn residual(&self, data: &Dataset) -> Result<f64> {
        let mut sq = 0.0;
        for t in 0..data.len() {
            let pred = self.predict(&data.phi.row(t).transpose())?;
            sq += (pred - data.u_row(t)).norm_squared();
        }
        Ok(sq / data.len().max(1) as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn column_rms(phi: &DMatrix<f64>) -> DVector<f64> {
    let t = phi.nrows().max(1) as f64;
    DVector::from_fn(phi.ncols(), |c, _| {
        let rms = (phi.column(c).norm_squared() / t).sqrt();
        if rms < 1e-12 {
            1.0
        } else {
            rms
        }
    })
}

fn scaled_features(phi: &DMatrix<f64>, scaling: &DVector<f64>) -> DMatrix<f64> {
    let mut out = phi.clone();
    for c in 0..out.ncols() {
        let s = scaling[c];
        for r in 0..out.nrows() {
            out[(r, c)] /= s;
        }
    }
    out
}

/// Solve `(A + lambda I) X = B` for symmetric PSD `A` via Cholesky.
fn spd_solve(a: DMatrix<f64>, lambda: f64, b: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let reg = a + DMatrix::identity(n, n) * lambda;
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::numerical("normal equations not positive definite"))?;
    Ok(chol.solve(&b))
}

/// Ridge regression `theta = (Phi'Phi + lambda I)^-1 Phi' U`.
pub fn fit_plain(data: &Dataset, lambda: f64) -> Result<LinearPolicy> {
    if lambda <= 0.0 {
        return Err(Error::invalid("ridge lambda must be positive"));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let scaling = column_rms(&data.phi);
    let phi = scaled_features(&data.phi, &scaling);
    let theta = spd_solve(phi.transpose() * &phi, lambda, phi.transpose() * &data.u)?;
    Ok(LinearPolicy {
        theta,
        ridge_lambda: lambda,
        feature_scaling: scaling,
        task_dim: data.task_dim,
        joint_dim: data.joint_dim,
    })
}

/// Weighted ridge regression `theta = (Phi'WPhi + lambda I)^-1 Phi'WU`.
pub fn fit_weighted(data: &Dataset, weights: &DVector<f64>, lambda: f64) -> Result<LinearPolicy> {
    if lambda <= 0.0 {
        return Err(Error::invalid("ridge lambda must be positive"));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if weights.len() != data.len() {
        return Err(Error::invalid("weight vector length mismatch"));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::invalid("weights must be non-negative and finite"));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateData("all regression weights are zero".into()));
    }
    let scaling = column_rms(&data.phi);
    let phi = scaled_features(&data.phi, &scaling);
    // Phi' W Phi assembled through a weighted copy of Phi.
    let mut wphi = phi.clone();
    for r in 0..wphi.nrows() {
        let w = weights[r];
        for c in 0..wphi.ncols() {
            wphi[(r, c)] *= w;
        }
    }
    let theta = spd_solve(phi.transpose() * &wphi, lambda, wphi.transpose() * &data.u)?;
    Ok(LinearPolicy {
        theta,
        ridge_lambda: lambda,
        feature_scaling: scaling,
        task_dim: data.task_dim,
        joint_dim: data.joint_dim,
    })
}

/// Kernelized control law: stores the training samples and the solved
/// coefficients of `(K + D)^-1 U` with a linear kernel `K = Phi Phi'`.
///
/// The diagonal `D` plays the role the ridge term plays in the linear
/// form. The exact correspondence used here (and checked by the
/// equivalence tests) is `D = lambda * W^-1`, i.e. per-sample entries
/// `lambda * exp(alpha * cost_t)`: weighted-linear and kernelized
/// predictions then agree identically by the Woodbury identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelPolicy {
    /// Scaled training features, T x (d + 2n).
    pub phi: DMatrix<f64>,
    /// Solved coefficients `(K + D)^-1 U`, T x n.
    pub coeffs: DMatrix<f64>,
    /// Per-sample offset costs `u~' N u~` (the printed `W_U` diagonal).
    pub costs: DVector<f64>,
    pub regularizer: f64,
    pub feature_scaling: DVector<f64>,
    pub task_dim: usize,
    pub joint_dim: usize,
}

impl KernelPolicy {
    pub fn predict(&self, phi: &DVector<f64>) -> Result<DVector<f64>> {
        if phi.len() != self.phi.ncols() {
            return Err(Error::invalid("feature dimension mismatch"));
        }
        let scaled = phi.component_div(&self.feature_scaling);
        let k = &self.phi * scaled;
        Ok(self.coeffs.transpose() * k)
    }
}

/// Fit the kernelized (linear-kernel) weighted regression.
pub fn fit_kernel(data: &Dataset, cost: &CostModel, regularizer: f64) -> Result<KernelPolicy> {
    let costs = compute_costs(data, cost)?;
    fit_kernel_with_costs(data, &costs, cost.alpha_scale, regularizer)
}

/// Kernel fit against explicitly supplied per-sample costs. Used by the
/// prioritized trainer, whose costs are taken on offset controls rather
/// than on the raw controls.
pub fn fit_kernel_with_costs(
    data: &Dataset,
    costs: &DVector<f64>,
    alpha_scale: f64,
    regularizer: f64,
) -> Result<KernelPolicy> {
    if regularizer < 0.0 {
        return Err(Error::invalid("regularizer must be non-negative"));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if costs.len() != data.len() {
        return Err(Error::invalid("cost vector length mismatch"));
    }
    let scaling = column_rms(&data.phi);
    let phi = scaled_features(&data.phi, &scaling);
    let t = data.len();
    let mut gram = &phi * phi.transpose();
    for i in 0..t {
        gram[(i, i)] += regularizer * (alpha_scale * costs[i]).exp();
    }
    let coeffs = gram
        .cholesky()
        .map(|c| c.solve(&data.u))
        .or_else(|| {
            // Fall back to an SVD solve if the Gram matrix is only PSD.
            let svd = (&phi * phi.transpose()).svd(true, true);
            svd.solve(&data.u, 1e-12).ok()
        })
        .ok_or_else(|| Error::numerical("kernel system singular despite regularizer"))?;
    Ok(KernelPolicy {
        phi,
        coeffs,
        costs: costs.clone(),
        regularizer,
        feature_scaling: scaling,
        task_dim: data.task_dim,
        joint_dim: data.joint_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(rng: &mut ChaCha8Rng, t: usize, d: usize, n: usize) -> Dataset {
        let phi = DMatrix::from_fn(t, d + 2 * n, |_, _| rng.gen_range(-1.0..1.0));
        let u = DMatrix::from_fn(t, n, |_, _| rng.gen_range(-1.0..1.0));
        Dataset::new(phi, u, d, n).unwrap()
    }

    fn linear_law_dataset(rng: &mut ChaCha8Rng, t: usize, d: usize, n: usize) -> (Dataset, DMatrix<f64>) {
        let theta = DMatrix::from_fn(d + 2 * n, n, |_, _| rng.gen_range(-1.0..1.0));
        let phi = DMatrix::from_fn(t, d + 2 * n, |_, _| rng.gen_range(-1.0..1.0));
        let u = &phi * &theta;
        (Dataset::new(phi, u, d, n).unwrap(), theta)
    }

    #[test]
    fn plain_recovers_exact_linear_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (data, theta_star) = linear_law_dataset(&mut rng, 60, 2, 3);
        let policy = fit_plain(&data, 1e-10).unwrap();
        let err = (policy.effective_theta() - theta_star).amax();
        assert!(err < 1e-6, "theta error {err:.2e}");
    }

    #[test]
    fn plain_averages_inconsistent_samples() {
        let phi = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, -0.2, 0.3, 1.0, 0.5, -0.2, 0.3]);
        let u = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let data = Dataset::new(phi, u, 2, 1).unwrap();
        let policy = fit_plain(&data, 1e-10).unwrap();
        let pred = policy.predict(&data.phi.row(0).transpose()).unwrap();
        assert_abs_diff_eq!(pred[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn plain_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_dataset(&mut rng, 40, 2, 3);
        let policy = fit_plain(&data, 1e12).unwrap();
        assert!(policy.theta.amax() < 1e-9);
    }

    #[test]
    fn weights_are_one_at_zero_cost() {
        let n = 3;
        let cost = CostModel::with_defaults(DVector::zeros(n));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = random_dataset(&mut rng, 10, 2, n);
        // Overwrite controls with the exact null-space control.
        for t in 0..data.len() {
            let u0 = cost.null_space_control(&data.q_row(t), &data.q_dot_row(t));
            for j in 0..n {
                data.u[(t, j)] = u0[j];
            }
        }
        let w = compute_weights(&data, &cost).unwrap();
        for t in 0..data.len() {
            assert_abs_diff_eq!(w[t], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_exponential_hand_value() {
        // u~' N u~ = 1 with alpha = 1 gives exp(-1).
        let cost = CostModel::with_defaults(DVector::zeros(1));
        let phi = DMatrix::zeros(1, 3);
        let u0 = cost.null_space_control(&DVector::zeros(1), &DVector::zeros(1));
        let u = DMatrix::from_row_slice(1, 1, &[u0[0] + 1.0]);
        let data = Dataset::new(phi, u, 1, 1).unwrap();
        let w = compute_weights(&data, &cost).unwrap();
        assert_abs_diff_eq!(w[0], (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn doubling_alpha_decreases_positive_cost_weights() {
        let mut cost = CostModel::with_defaults(DVector::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_dataset(&mut rng, 20, 1, 2);
        let w1 = compute_weights(&data, &cost).unwrap();
        cost.alpha_scale = 2.0;
        let w2 = compute_weights(&data, &cost).unwrap();
        let costs = compute_costs(&data, &cost).unwrap();
        for t in 0..data.len() {
            if costs[t] > 1e-12 {
                assert!(w2[t] < w1[t]);
            }
        }
    }

    #[test]
    fn uniform_weights_reduce_to_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_dataset(&mut rng, 30, 2, 3);
        let plain = fit_plain(&data, 1e-6).unwrap();
        let weighted = fit_weighted(&data, &DVector::from_element(30, 1.0), 1e-6).unwrap();
        assert!((plain.theta - weighted.theta).amax() < 1e-12);
    }

    #[test]
    fn zero_weight_excludes_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_dataset(&mut rng, 20, 1, 2);
        let mut weights = DVector::from_element(20, 1.0);
        weights[7] = 0.0;
        let with_outlier = fit_weighted(&data, &weights, 1e-6).unwrap();

        // Same dataset without row 7.
        let keep: Vec<usize> = (0..20).filter(|&i| i != 7).collect();
        let phi = DMatrix::from_fn(19, data.phi.ncols(), |r, c| data.phi[(keep[r], c)]);
        let u = DMatrix::from_fn(19, 2, |r, c| data.u[(keep[r], c)]);
        let reduced = Dataset::new(phi, u, 1, 2).unwrap();
        let without = fit_weighted(&reduced, &DVector::from_element(19, 1.0), 1e-6).unwrap();
        // Scalings differ slightly (row 7 still contributes to RMS), so
        // compare effective parameters.
        let err = (with_outlier.effective_theta() - without.effective_theta()).amax();
        assert!(err < 1e-6, "err {err:.2e}");
    }

    #[test]
    fn all_zero_weights_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_dataset(&mut rng, 5, 1, 2);
        let res = fit_weighted(&data, &DVector::zeros(5), 1e-6);
        assert!(matches!(res, Err(Error::DegenerateData(_))));
    }

    #[test]
    fn predict_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_dataset(&mut rng, 20, 2, 3);
        let mut policy = fit_plain(&data, 1e-6).unwrap();
        let phi = DVector::from_element(8, 0.3);
        policy.theta.fill(0.0);
        assert_eq!(policy.predict(&phi).unwrap(), DVector::zeros(3));
        let policy = fit_plain(&data, 1e-6).unwrap();
        assert!(policy.predict(&DVector::zeros(8)).unwrap().norm() < 1e-14);
    }

    #[test]
    fn identity_block_passes_through_acceleration() {
        let d = 3;
        let n = 3;
        let mut policy = LinearPolicy {
            theta: DMatrix::zeros(d + 2 * n, n),
            ridge_lambda: 1e-6,
            feature_scaling: DVector::from_element(d + 2 * n, 1.0),
            task_dim: d,
            joint_dim: n,
        };
        for i in 0..d {
            policy.theta[(i, i)] = 1.0;
        }
        let xdd = DVector::from_row_slice(&[0.4, -0.2, 1.1]);
        let phi = build_feature(&xdd, &DVector::from_element(n, 0.5), &DVector::from_element(n, -0.1));
        assert_eq!(policy.predict(&phi).unwrap(), xdd);
    }

    fn kernel_matches_weighted(seed: u64, t: usize, d: usize, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, t, d, n);
        let mut cost = CostModel::with_defaults(DVector::zeros(n));
        cost.alpha_scale = rng.gen_range(0.1..2.0);
        let lambda = 1e-6;
        let weights = compute_weights(&data, &cost).unwrap();
        let linear = fit_weighted(&data, &weights, lambda).unwrap();
        let kernel = fit_kernel(&data, &cost, lambda).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let phi = DVector::from_fn(d + 2 * n, |_, _| rng.gen_range(-1.0..1.0));
            let a = linear.predict(&phi).unwrap();
            let b = kernel.predict(&phi).unwrap();
            worst = worst.max((a - b).amax());
        }
        worst
    }

    #[test]
    fn woodbury_equivalence_examples() {
        for seed in 0..5 {
            let err = kernel_matches_weighted(seed, 30, 2, 3);
            assert!(err < 1e-6, "seed {seed}: err {err:.2e}");
        }
    }

    #[test]
    fn kernel_interpolates_single_sample() {
        let phi = DMatrix::from_row_slice(1, 5, &[0.5, -0.3, 0.2, 0.1, 0.7]);
        let u = DMatrix::from_row_slice(1, 2, &[1.5, -0.5]);
        let data = Dataset::new(phi.clone(), u, 1, 2).unwrap();
        // Zero metric makes every stored cost zero, so the solve diagonal
        // reduces to the bare regularizer.
        let cost = CostModel {
            metric_n: DMatrix::zeros(2, 2),
            ..CostModel::with_defaults(DVector::zeros(2))
        };
        let kernel = fit_kernel(&data, &cost, 1e-12).unwrap();
        let pred = kernel.predict(&phi.row(0).transpose()).unwrap();
        assert_abs_diff_eq!(pred[0], 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(pred[1], -0.5, epsilon = 1e-6);
    }

    #[test]
    fn kernel_zero_query_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_dataset(&mut rng, 10, 1, 2);
        let cost = CostModel::with_defaults(DVector::zeros(2));
        let kernel = fit_kernel(&data, &cost, 1e-6).unwrap();
        let pred = kernel.predict(&DVector::zeros(5)).unwrap();
        assert!(pred.norm() < 1e-14);
    }

    #[test]
    fn policy_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = random_dataset(&mut rng, 20, 2, 3);
        let policy = fit_plain(&data, 1e-6).unwrap();
        let json = policy.to_json().unwrap();
        let back = LinearPolicy::from_json(&json).unwrap();
        assert!((back.theta - &policy.theta).amax() < 1e-14);
        assert!((back.feature_scaling - &policy.feature_scaling).amax() < 1e-14);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_dataset(&mut rng, 15, 2, 3);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(&buf[..], 2, 3).unwrap();
        assert_eq!(back.len(), 15);
        assert!((back.phi - &data.phi).amax() < 1e-12);
        assert!((back.u - &data.u).amax() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weighted_fit_is_local_minimum(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_dataset(&mut rng, 25, 1, 2);
            let weights = DVector::from_fn(25, |_, _| rng.gen_range(0.01..1.0));
            let lambda = 1e-4;
            let policy = fit_weighted(&data, &weights, lambda).unwrap();
            let phi = scaled_features(&data.phi, &policy.feature_scaling);
            let objective = |theta: &DMatrix<f64>| {
                let resid = &phi * theta - &data.u;
                let mut j = lambda * theta.iter().map(|v| v * v).sum::<f64>();
                for t in 0..25 {
                    j += weights[t] * resid.row(t).norm_squared();
                }
                j
            };
            let base = objective(&policy.theta);
            for _ in 0..5 {
                let delta = DMatrix::from_fn(policy.theta.nrows(), policy.theta.ncols(),
                    |_, _| rng.gen_range(-1.0..1.0));
                let delta = &delta * (1e-3 / delta.norm());
                prop_assert!(objective(&(&policy.theta + delta)) >= base - 1e-12);
            }
        }

        #[test]
        fn row_permutation_equivariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_dataset(&mut rng, 20, 1, 2);
            let weights = DVector::from_fn(20, |_, _| rng.gen_range(0.1..1.0));
            let policy = fit_weighted(&data, &weights, 1e-6).unwrap();
            let mut order: Vec<usize> = (0..20).collect();
            order.shuffle(&mut rng);
            let phi = DMatrix::from_fn(20, data.phi.ncols(), |r, c| data.phi[(order[r], c)]);
            let u = DMatrix::from_fn(20, 2, |r, c| data.u[(order[r], c)]);
            let perm = Dataset::new(phi, u, 1, 2).unwrap();
            let wperm = DVector::from_fn(20, |r, _| weights[order[r]]);
            let policy2 = fit_weighted(&perm, &wperm, 1e-6).unwrap();
            prop_assert!((policy.theta - policy2.theta).amax() < 1e-10);
        }

        #[test]
        fn alpha_concentrates_weights(alpha_factor in 0.1f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let data = random_dataset(&mut rng, 15, 1, 2);
            let mut cost = CostModel::with_defaults(DVector::zeros(2));
            // Scale alpha to the cost magnitudes, as the estimator does in
            // practice, so the exponentials stay within floating-point range.
            let base = compute_costs(&data, &cost).unwrap();
            cost.set_alpha_from_costs(base.as_slice());
            let alpha = alpha_factor * cost.alpha_scale;
            cost.alpha_scale = alpha;
            let w1 = compute_weights(&data, &cost).unwrap();
            cost.alpha_scale = alpha * 1.5;
            let w2 = compute_weights(&data, &cost).unwrap();
            let costs = compute_costs(&data, &cost).unwrap();
            for t in 0..15 {
                for s in 0..15 {
                    if costs[t] < costs[s] {
                        // Low-cost over high-cost weight ratio grows with alpha.
                        prop_assert!(w2[t] / w2[s] >= w1[t] / w1[s] - 1e-12);
                    }
                }
            }
        }

        #[test]
        fn woodbury_equivalence_random(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.gen_range(3..50);
            let d = rng.gen_range(1..4usize);
            let n = rng.gen_range(1..5usize);
            let err = kernel_matches_weighted(seed.wrapping_add(1000), t, d, n);
            prop_assert!(err < 1e-6, "err {}", err);
        }
    }
}
