//! Convex optimization primitives: the LAD-LASSO subproblem minimizer,
//! soft-thresholding and projections onto the l1 ball and the simplex.
//!
//! The subproblem `min (1/n) sum |y_i - x_i b| + lambda ||b||_1` is solved by
//! operator splitting with one auxiliary block for the residual vector and
//! one for the coefficient copy. Both proximal steps are elementwise
//! soft-thresholds; the coupling step solves a ridge system whose Cholesky
//! factorization is computed once per call and is independent of the penalty
//! parameter, so residual balancing never triggers a refactorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Options for the operator-splitting solver. `l1_radius` realizes the
/// bounded feasible set used by the censored fit; the subproblem solver
/// itself is unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolverOptions {
    pub penalty_rho: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub l1_radius: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            penalty_rho: 1.0,
            tol_primal: 1e-7,
            tol_dual: 1e-7,
            max_iter: 20_000,
            l1_radius: 1e6,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_rho > 0.0) {
            return Err(Error::InvalidConfig("penalty_rho must be positive".into()));
        }
        if !(self.tol_primal > 0.0) || !(self.tol_dual > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.l1_radius > 0.0) {
            return Err(Error::InvalidConfig("l1_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Convergence report for one solver call.
#[derive(Debug, Clone, Copy)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

/// `sign(v) * max(|v| - kappa, 0)`.
pub fn soft_threshold(v: f64, kappa: f64) -> f64 {
    debug_assert!(kappa >= 0.0);
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Euclidean projection onto the simplex `{w >= 0, sum w = tau}`.
pub(crate) fn simplex_projection(v: &DVector<f64>, tau: f64) -> DVector<f64> {
    debug_assert!(tau > 0.0);
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - tau) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    DVector::from_fn(v.len(), |i, _| (v[i] - theta).max(0.0))
}

/// Euclidean projection onto the l1 ball of the given radius. Points already
/// inside come back unchanged.
pub fn l1_ball_projection(beta: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "l1 ball radius must be positive, got {radius}"
        )));
    }
    let norm1: f64 = beta.iter().map(|b| b.abs()).sum();
    if norm1 <= radius {
        return Ok(beta.clone());
    }
    let magnitudes = beta.abs();
    let w = simplex_projection(&magnitudes, radius);
    Ok(DVector::from_fn(beta.len(), |i, _| w[i].copysign(beta[i])))
}

/// Linear solve for the coupling step, cached for the whole call.
///
/// For wide problems the ridge system is solved through the n x n Gram form
/// `(X X^T + I)` instead of the p x p normal form.
enum RidgeSolver {
    /// Cholesky of `X^T X + I_p`.
    Tall(Cholesky<f64, Dyn>),
    /// Cholesky of `X X^T + I_n`; applies the matrix-inversion identity.
    Wide(Cholesky<f64, Dyn>),
}

impl RidgeSolver {
    fn build(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if p <= n {
            let mut m = x.tr_mul(x);
            for j in 0..p {
                m[(j, j)] += 1.0;
            }
            let chol = Cholesky::new(m)
                .ok_or_else(|| Error::InvalidConfig("ridge system is not positive definite".into()))?;
            Ok(RidgeSolver::Tall(chol))
        } else {
            let mut m = x * x.transpose();
            for i in 0..n {
                m[(i, i)] += 1.0;
            }
            let chol = Cholesky::new(m)
                .ok_or_else(|| Error::InvalidConfig("ridge system is not positive definite".into()))?;
            Ok(RidgeSolver::Wide(chol))
        }
    }

    /// Solves `(X^T X + I) beta = rhs` into `beta`.
    fn solve(&self, x: &DMatrix<f64>, rhs: &DVector<f64>, beta: &mut DVector<f64>, scratch_n: &mut DVector<f64>) {
        match self {
            RidgeSolver::Tall(chol) => {
                beta.copy_from(rhs);
                chol.solve_mut(beta);
            }
            RidgeSolver::Wide(chol) => {
                // (X^T X + I)^{-1} w = w - X^T (X X^T + I)^{-1} X w
                scratch_n.gemv(1.0, x, rhs, 0.0);
                chol.solve_mut(scratch_n);
                beta.copy_from(rhs);
                beta.gemv_tr(-1.0, x, scratch_n, 1.0);
            }
        }
    }
}

fn lad_objective(pred: &DVector<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let loss: f64 = pred.iter().zip(y.iter()).map(|(p, yi)| (yi - p).abs()).sum();
    loss / n + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Minimizes `(1/n) sum_i |y_i - x_i b| + lambda ||b||_1` starting from zero.
pub fn lad_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, SolverDiagnostics)> {
    let init = DVector::zeros(x.ncols());
    lad_lasso_warm(x, y, lambda, opts, &init)
}

/// Same as [`lad_lasso`] but starting from a caller-supplied point.
pub fn lad_lasso_warm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &SolverOptions,
    init: &DVector<f64>,
) -> Result<(DVector<f64>, SolverDiagnostics)> {
    opts.validate()?;
    let (n, p) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {n} rows but y has length {}",
            y.len()
        )));
    }
    if init.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "X has {p} columns but the initial point has length {}",
            init.len()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if y.iter().any(|v| !v.is_finite()) || init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response or initial point"));
    }

    let solver = RidgeSolver::build(x)?;
    let mut rho = opts.penalty_rho;
    let nf = n as f64;

    let mut beta = init.clone();
    let mut z = beta.clone();
    let mut pred = DVector::zeros(n); // X beta
    pred.gemv(1.0, x, &beta, 0.0);
    let mut resid = &pred - y; // r block starts feasible
    let mut dual_r = DVector::zeros(n);
    let mut dual_z = DVector::zeros(p);

    let mut rhs = DVector::zeros(p);
    let mut scratch_n = DVector::zeros(n);
    let mut delta_tr = DVector::zeros(p); // X^T (r_new - r_old) + (z_new - z_old)

    let mut best_beta = beta.clone();
    let mut best_obj = lad_objective(&pred, y, &beta, lambda);

    const CHECK_EVERY: usize = 25;
    let mut iterations = 0;
    let mut converged = false;
    let mut primal_residual = f64::INFINITY;
    let mut dual_residual = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;

        // Coupling step: (X^T X + I) beta = X^T (y + r - u_r) + (z - u_z).
        scratch_n.copy_from(y);
        scratch_n += &resid;
        scratch_n -= &dual_r;
        rhs.gemv_tr(1.0, x, &scratch_n, 0.0);
        rhs += &z;
        rhs -= &dual_z;
        let mut tmp_n = DVector::zeros(n);
        solver.solve(x, &rhs, &mut beta, &mut tmp_n);
        pred.gemv(1.0, x, &beta, 0.0);

        // Proximal steps on the residual copy and the coefficient copy.
        let kappa_r = 1.0 / (nf * rho);
        let kappa_z = lambda / rho;
        delta_tr.fill(0.0);
        let mut resid_new = DVector::zeros(n);
        for i in 0..n {
            resid_new[i] = soft_threshold(pred[i] - y[i] + dual_r[i], kappa_r);
        }
        let mut z_new = DVector::zeros(p);
        for j in 0..p {
            z_new[j] = soft_threshold(beta[j] + dual_z[j], kappa_z);
        }

        // Dual residual s = rho * (X^T (r_new - r_old) + (z_new - z_old)).
        scratch_n.copy_from(&resid_new);
        scratch_n -= &resid;
        delta_tr.gemv_tr(1.0, x, &scratch_n, 0.0);
        for j in 0..p {
            delta_tr[j] += z_new[j] - z[j];
        }
        dual_residual = rho * delta_tr.norm();

        resid = resid_new;
        z = z_new;

        // Dual ascent on both constraint blocks.
        let mut pri_sq = 0.0;
        for i in 0..n {
            let gap = pred[i] - y[i] - resid[i];
            dual_r[i] += gap;
            pri_sq += gap * gap;
        }
        for j in 0..p {
            let gap = beta[j] - z[j];
            dual_z[j] += gap;
            pri_sq += gap * gap;
        }
        primal_residual = pri_sq.sqrt();

        let scale_pri = pred
            .norm_squared()
            .max(beta.norm_squared())
            .sqrt()
            .max((resid.norm_squared() + z.norm_squared()).sqrt())
            .max(y.norm());
        let eps_pri = ((n + p) as f64).sqrt() * opts.tol_primal + opts.tol_primal * scale_pri;
        let mut dual_scale = DVector::zeros(p);
        dual_scale.gemv_tr(1.0, x, &dual_r, 0.0);
        dual_scale += &dual_z;
        let eps_dual = (p as f64).sqrt() * opts.tol_dual + opts.tol_dual * rho * dual_scale.norm();

        if primal_residual <= eps_pri && dual_residual <= eps_dual {
            converged = true;
            break;
        }

        if iterations % CHECK_EVERY == 0 {
            let obj_z = {
                let pred_z = x * &z;
                lad_objective(&pred_z, y, &z, lambda)
            };
            if obj_z < best_obj {
                best_obj = obj_z;
                best_beta.copy_from(&z);
            }
            // Residual balancing keeps the two residuals on comparable scales.
            if primal_residual > 10.0 * dual_residual {
                rho *= 2.0;
                dual_r /= 2.0;
                dual_z /= 2.0;
            } else if dual_residual > 10.0 * primal_residual {
                rho /= 2.0;
                dual_r *= 2.0;
                dual_z *= 2.0;
            }
        }
    }

    // The coefficient copy is exactly sparse; pick whichever candidate wins.
    let obj_beta = lad_objective(&pred, y, &beta, lambda);
    let pred_z = x * &z;
    let obj_z = lad_objective(&pred_z, y, &z, lambda);
    if obj_z < best_obj {
        best_obj = obj_z;
        best_beta.copy_from(&z);
    }
    if obj_beta < best_obj {
        best_beta.copy_from(&beta);
    }

    Ok((
        best_beta,
        SolverDiagnostics {
            iterations,
            primal_residual,
            dual_residual,
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(1.7, 0.0), 1.7);
        assert_eq!(soft_threshold(-2.5, 0.0), -2.5);
    }

    #[test]
    fn l1_projection_single_coordinate() {
        let v = DVector::from_row_slice(&[2.0, 0.0]);
        let proj = l1_ball_projection(&v, 1.0).unwrap();
        assert_abs_diff_eq!(proj[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(proj[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn l1_projection_interior_point_unchanged() {
        let v = DVector::from_row_slice(&[0.3, -0.2]);
        let proj = l1_ball_projection(&v, 1.0).unwrap();
        assert_eq!(proj, v);
    }

    #[test]
    fn l1_projection_diagonal_case_matches_grid_oracle() {
        let v = DVector::from_row_slice(&[1.0, 1.0]);
        let proj = l1_ball_projection(&v, 1.0).unwrap();

        // Grid-search oracle: nearest feasible point on a fine lattice.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = -1.0 + 2.0 * i as f64 / steps as f64;
                let b = -1.0 + 2.0 * j as f64 / steps as f64;
                if a.abs() + b.abs() <= 1.0 {
                    let d = (a - 1.0).powi(2) + (b - 1.0).powi(2);
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
        }
        assert_abs_diff_eq!(proj[0], best.1, epsilon = 1e-2);
        assert_abs_diff_eq!(proj[1], best.2, epsilon = 1e-2);
        assert_abs_diff_eq!(proj[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(proj[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn l1_projection_rejects_nonpositive_radius() {
        let v = DVector::from_row_slice(&[1.0]);
        assert!(l1_ball_projection(&v, 0.0).is_err());
    }

    /// One-dimensional grid-search oracle for the LAD-LASSO objective.
    fn grid_oracle_1d(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        let mut b = -3.0;
        while b <= 3.0 {
            let pred = x * DVector::from_element(1, b);
            let obj = lad_objective(&pred, y, &DVector::from_element(1, b), lambda);
            if obj < best.1 {
                best = (b, obj);
            }
            b += 0.001;
        }
        best
    }

    #[test]
    fn one_dim_small_penalty_keeps_data_fit() {
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        let y = DVector::from_row_slice(&[2.0]);
        let (beta, diag) = lad_lasso(&x, &y, 0.5, &SolverOptions::default()).unwrap();
        let (oracle_b, oracle_obj) = grid_oracle_1d(&x, &y, 0.5);
        assert_abs_diff_eq!(oracle_b, 2.0, epsilon = 1e-9);
        let pred = &x * &beta;
        let obj = lad_objective(&pred, &y, &beta, 0.5);
        assert!(obj <= oracle_obj + 1e-6, "obj {obj} oracle {oracle_obj}");
        assert_abs_diff_eq!(beta[0], 2.0, epsilon = 1e-4);
        assert!(diag.converged);
    }

    #[test]
    fn one_dim_large_penalty_kills_coefficient() {
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        let y = DVector::from_row_slice(&[2.0]);
        let (beta, _) = lad_lasso(&x, &y, 1.5, &SolverOptions::default()).unwrap();
        let (oracle_b, oracle_obj) = grid_oracle_1d(&x, &y, 1.5);
        assert_abs_diff_eq!(oracle_b, 0.0, epsilon = 1e-9);
        let pred = &x * &beta;
        let obj = lad_objective(&pred, &y, &beta, 1.5);
        assert!(obj <= oracle_obj + 1e-6);
        assert_abs_diff_eq!(beta[0], 0.0, epsilon = 1e-4);
    }

    #[test]
    fn zero_penalty_interpolates_invertible_system() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 2.0]);
        let truth = DVector::from_row_slice(&[1.2, -0.7]);
        let y = &x * &truth;
        let (beta, _) = lad_lasso(&x, &y, 0.0, &SolverOptions::default()).unwrap();
        let pred = &x * &beta;
        let obj = lad_objective(&pred, &y, &beta, 0.0);
        assert!(obj <= 1e-6, "objective {obj}");
        assert_abs_diff_eq!(beta[0], truth[0], epsilon = 1e-3);
        assert_abs_diff_eq!(beta[1], truth[1], epsilon = 1e-3);
    }

    #[test]
    fn wide_problem_agrees_with_tall_route() {
        // Same objective posed with p > n exercises the Gram-form solve.
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 0.2, -0.4, 0.7, -0.5, 1.1, 0.3, -0.2]);
        let y = DVector::from_row_slice(&[1.0, -0.5]);
        let (beta, diag) = lad_lasso(&x, &y, 0.05, &SolverOptions::default()).unwrap();
        assert!(diag.converged);
        let pred = &x * &beta;
        let obj = lad_objective(&pred, &y, &beta, 0.05);
        // With p > n and a small penalty the data term should be nearly zero.
        assert!(obj <= 0.05 * beta.iter().map(|b| b.abs()).sum::<f64>() + 1e-5);
    }

    #[test]
    fn objective_never_exceeds_fit_at_origin() {
        let x = DMatrix::from_fn(8, 3, |i, j| ((i * 3 + j) as f64 * 1.3).sin() * 1.5);
        let y = DVector::from_fn(8, |i, _| ((i as f64) * 0.9).cos() * 2.0);
        for lambda in [0.0, 0.1, 1.0, 10.0] {
            let (beta, _) = lad_lasso(&x, &y, lambda, &SolverOptions::default()).unwrap();
            let pred = &x * &beta;
            let obj = lad_objective(&pred, &y, &beta, lambda);
            let at_zero = y.iter().map(|v| v.abs()).sum::<f64>() / 8.0;
            assert!(obj <= at_zero + 1e-9, "lambda {lambda}: {obj} > {at_zero}");
        }
    }

    #[test]
    fn homogeneity_in_the_response() {
        // Scaling y by k (penalty unchanged) scales the optimal objective by
        // k and an optimal point by k: substitute beta -> k * beta.
        let x = DMatrix::from_fn(6, 2, |i, j| ((i + j) as f64 * 0.57).sin());
        let y = DVector::from_fn(6, |i, _| ((i as f64) * 1.1).cos());
        let k = 3.0;
        let opts = SolverOptions::default();
        let (b1, _) = lad_lasso(&x, &y, 0.2, &opts).unwrap();
        let yk = &y * k;
        let (bk, _) = lad_lasso(&x, &yk, 0.2, &opts).unwrap();
        let o1 = lad_objective(&(&x * &b1), &y, &b1, 0.2);
        let ok = lad_objective(&(&x * &bk), &yk, &bk, 0.2);
        assert_abs_diff_eq!(ok, k * o1, epsilon = 1e-5);
        // The rescaled minimizer of one problem is optimal for the other.
        let back = &bk / k;
        let o_back = lad_objective(&(&x * &back), &y, &back, 0.2);
        assert_abs_diff_eq!(o_back, o1, epsilon = 1e-5);
    }

    #[test]
    fn nan_input_is_rejected() {
        let x = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let y = DVector::from_row_slice(&[1.0]);
        assert!(matches!(
            lad_lasso(&x, &y, 0.1, &SolverOptions::default()),
            Err(Error::NonFinite(_))
        ));
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        let y = DVector::from_row_slice(&[f64::INFINITY]);
        assert!(lad_lasso(&x, &y, 0.1, &SolverOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_flags_nonconvergence() {
        let x = DMatrix::from_fn(5, 2, |i, j| ((i * 2 + j) as f64).sin());
        let y = DVector::from_fn(5, |i, _| (i as f64) - 2.0);
        let opts = SolverOptions {
            max_iter: 1,
            ..Default::default()
        };
        let (_, diag) = lad_lasso(&x, &y, 0.1, &opts).unwrap();
        assert!(!diag.converged);
        assert_eq!(diag.iterations, 1);
    }

    proptest! {
        #[test]
        fn soft_threshold_is_a_contraction(
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
            kappa in 0.0f64..5.0,
        ) {
            let d = (soft_threshold(a, kappa) - soft_threshold(b, kappa)).abs();
            // Slack covers rounding of the two shifted subtractions.
            prop_assert!(d <= (a - b).abs() + 1e-13);
        }

        #[test]
        fn l1_projection_lands_inside_and_is_idempotent(
            values in proptest::collection::vec(-5.0f64..5.0, 1..8),
            radius in 0.1f64..4.0,
        ) {
            let v = DVector::from_row_slice(&values);
            let proj = l1_ball_projection(&v, radius).unwrap();
            let norm1: f64 = proj.iter().map(|b| b.abs()).sum();
            prop_assert!(norm1 <= radius + 1e-12);
            let again = l1_ball_projection(&proj, radius).unwrap();
            for i in 0..proj.len() {
                prop_assert!((proj[i] - again[i]).abs() <= 1e-12);
            }
        }
    }
}
