//! Domain types for left-censored regression data, the censored prediction
//! function, the penalised objective, and error metrics.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{sample_population, DesignConfig};
use crate::error::{Error, Result};

/// Absolute tolerance used to decide whether an observation sits exactly at
/// its censoring level. Generated data stores `y == c` bit-exactly when the
/// censoring binds, so this only has to absorb file round-trips.
pub const CENSOR_EQ_TOL: f64 = 1e-12;

/// One left-censored regression sample: design matrix, observed response and
/// per-observation censoring level.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    c: DVector<f64>,
}

impl Dataset {
    /// Builds a dataset, validating that all containers agree on `n`, that
    /// every value is finite and that `y[i] >= c[i]` holds for every row.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || c.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but y has {} and c has {}",
                n,
                y.len(),
                c.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        if y.iter().any(|v| !v.is_finite()) || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response or censoring level"));
        }
        for i in 0..n {
            if y[i] < c[i] {
                return Err(Error::InvalidConfig(format!(
                    "row {i}: response {} lies below its censoring level {}",
                    y[i], c[i]
                )));
            }
        }
        Ok(Self { x, y, c })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
}

/// Tag for the error distribution of the latent response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorModel {
    /// Mean-zero Gaussian noise; the scale lives in [`GroundTruth::sigma`].
    Gaussian,
}

/// The generating truth behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub beta0: DVector<f64>,
    /// Error standard deviation after SNR scaling.
    pub sigma: f64,
    /// Indices of the nonzero coefficients.
    pub active_set: Vec<usize>,
    pub error_model: ErrorModel,
}

impl GroundTruth {
    /// The active set is derived from `beta0`, so it can never disagree with it.
    pub fn new(beta0: DVector<f64>, sigma: f64, error_model: ErrorModel) -> Self {
        let active_set = beta0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            beta0,
            sigma,
            active_set,
            error_model,
        }
    }

    /// Sparsity of the true coefficient vector.
    pub fn sparsity(&self) -> usize {
        self.active_set.len()
    }
}

/// Output of a fit: coefficients plus diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    /// Value of the fitted criterion at `beta_hat`.
    pub objective: f64,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    /// Rows with `x_i beta_hat > c_i` at the solution.
    pub active_obs: Vec<usize>,
}

/// `max(<x_row, beta>, c)`.
pub fn censored_prediction(beta: &DVector<f64>, x_row: &DVector<f64>, c: f64) -> Result<f64> {
    if beta.len() != x_row.len() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {} but x_row has length {}",
            beta.len(),
            x_row.len()
        )));
    }
    Ok(beta.dot(x_row).max(c))
}

/// The penalised censored criterion
/// `(1/n) sum_i |y_i - max(c_i, x_i beta)| + lambda * ||beta||_1`.
///
/// The data term is averaged over observations; the penalty is not.
pub fn censored_objective(beta: &DVector<f64>, data: &Dataset, lambda: f64) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    if beta.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {} but the dataset has {} columns",
            beta.len(),
            data.p()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let preds = data.x() * beta;
    let n = data.n();
    let mut loss = 0.0;
    for i in 0..n {
        loss += (data.y()[i] - preds[i].max(data.c()[i])).abs();
    }
    Ok(loss / n as f64 + lambda * beta.iter().map(|b| b.abs()).sum::<f64>())
}

/// Mean squared gap between the fitted and true linear predictors,
/// `(1/n) sum_i (x_i beta_hat - x_i beta0)^2`.
pub fn prediction_error(
    x: &DMatrix<f64>,
    beta_hat: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<f64> {
    if beta_hat.len() != x.ncols() || beta0.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns but beta_hat has length {} and beta0 has length {}",
            x.ncols(),
            beta_hat.len(),
            beta0.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let diff = beta_hat - beta0;
    let proj = x * diff;
    Ok(proj.norm_squared() / x.nrows() as f64)
}

/// `||beta_hat - beta0||_1`.
pub fn estimation_error(beta_hat: &DVector<f64>, beta0: &DVector<f64>) -> Result<f64> {
    if beta_hat.len() != beta0.len() {
        return Err(Error::DimensionMismatch(format!(
            "beta_hat has length {} but beta0 has length {}",
            beta_hat.len(),
            beta0.len()
        )));
    }
    Ok(beta_hat
        .iter()
        .zip(beta0.iter())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Monte-Carlo estimate of an excess risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessRisk {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo estimate of the population excess risk of the censored
/// predictor at `beta` relative to the one at the true coefficients:
/// `E[ |y - max(x beta, c)| - |y - max(x beta0, c)| ]` under fresh draws of
/// `(x, c, eps)` from the design's distributions.
///
/// The population quantity is nonnegative; the sampled estimate may dip
/// slightly below zero, which is why the standard error is reported.
pub fn excess_risk_mc(
    beta: &DVector<f64>,
    truth: &GroundTruth,
    design: &DesignConfig,
    n_mc: usize,
    seed: u64,
) -> Result<ExcessRisk> {
    if n_mc < 1 {
        return Err(Error::InvalidConfig("n_mc must be at least 1".into()));
    }
    if beta.len() != truth.beta0.len() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {} but beta0 has length {}",
            beta.len(),
            truth.beta0.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = sample_population(truth, design, n_mc, &mut rng)?;
    let fit_pred = &pop.x * beta;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n_mc {
        let latent = pop.true_pred[i] + pop.eps[i];
        let y = latent.max(pop.c[i]);
        let g = (y - fit_pred[i].max(pop.c[i])).abs() - (y - pop.true_pred[i].max(pop.c[i])).abs();
        sum += g;
        sum_sq += g * g;
    }
    let mean = sum / n_mc as f64;
    let std_error = if n_mc > 1 {
        let var = (sum_sq - sum * sum / n_mc as f64) / (n_mc - 1) as f64;
        (var.max(0.0) / n_mc as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(ExcessRisk { mean, std_error })
}

/// Fraction of observations sitting at their censoring level.
pub fn censored_fraction(data: &Dataset) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let hits = (0..data.n())
        .filter(|&i| (data.y()[i] - data.c()[i]).abs() <= CENSOR_EQ_TOL)
        .count();
    Ok(hits as f64 / data.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::CensorMode;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vec(values: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(values)
    }

    #[test]
    fn prediction_zero_beta_returns_censor_level() {
        let beta = vec(&[0.0, 0.0, 0.0]);
        let x = vec(&[3.0, -1.0, 7.0]);
        assert_eq!(censored_prediction(&beta, &x, 5.0).unwrap(), 5.0);
    }

    #[test]
    fn prediction_inner_product_above_censor() {
        let beta = vec(&[1.0, 1.0]);
        let x = vec(&[1.0, 2.0]);
        assert_eq!(censored_prediction(&beta, &x, 0.0).unwrap(), 3.0);
    }

    #[test]
    fn prediction_censoring_binds() {
        let beta = vec(&[-2.0]);
        let x = vec(&[1.0]);
        assert_eq!(censored_prediction(&beta, &x, -1.0).unwrap(), -1.0);
    }

    #[test]
    fn prediction_dimension_mismatch() {
        let beta = vec(&[1.0, 2.0]);
        let x = vec(&[1.0]);
        assert!(matches!(
            censored_prediction(&beta, &x, 0.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn objective_perfect_fit_zero_penalty_at_origin() {
        let data = Dataset::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            vec(&[0.0]),
            vec(&[0.0]),
        )
        .unwrap();
        let obj = censored_objective(&vec(&[0.0]), &data, 1.0).unwrap();
        assert_eq!(obj, 0.0);
    }

    /// Direct per-row loop, written independently of the gemv path.
    fn objective_loop_oracle(beta: &DVector<f64>, data: &Dataset, lambda: f64) -> f64 {
        let n = data.n();
        let mut loss = 0.0;
        for i in 0..n {
            let mut dot = 0.0;
            for j in 0..data.p() {
                dot += data.x()[(i, j)] * beta[j];
            }
            loss += (data.y()[i] - dot.max(data.c()[i])).abs();
        }
        loss / n as f64 + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    #[test]
    fn objective_hand_evaluated_example() {
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            vec(&[2.0, 0.0]),
            vec(&[0.0, 0.0]),
        )
        .unwrap();
        let beta = vec(&[1.0]);
        let got = censored_objective(&beta, &data, 0.5).unwrap();
        assert_abs_diff_eq!(got, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(got, objective_loop_oracle(&beta, &data, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn objective_zero_lambda_drops_penalty() {
        let data = Dataset::new(
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            vec(&[2.0, 0.0]),
            vec(&[0.0, 0.0]),
        )
        .unwrap();
        let beta = vec(&[1.0]);
        let with = censored_objective(&beta, &data, 0.5).unwrap();
        let without = censored_objective(&beta, &data, 0.0).unwrap();
        assert_abs_diff_eq!(with - without, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn objective_rejects_empty_dataset() {
        let data = Dataset::new(DMatrix::zeros(0, 2), DVector::zeros(0), DVector::zeros(0)).unwrap();
        assert!(matches!(
            censored_objective(&vec(&[0.0, 0.0]), &data, 1.0),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn dataset_rejects_response_below_censor() {
        let r = Dataset::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            vec(&[-1.0]),
            vec(&[0.0]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn prediction_error_matches_loop_oracle() {
        let x = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let bh = vec(&[0.3, -1.2, 0.8]);
        let b0 = vec(&[1.0, 0.0, -0.5]);
        let mut oracle = 0.0;
        for i in 0..5 {
            let mut d = 0.0;
            for j in 0..3 {
                d += x[(i, j)] * (bh[j] - b0[j]);
            }
            oracle += d * d;
        }
        oracle /= 5.0;
        assert_abs_diff_eq!(
            prediction_error(&x, &bh, &b0).unwrap(),
            oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn prediction_error_identical_coefficients() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(prediction_error(&x, &vec(&[1.0]), &vec(&[1.0])).unwrap(), 0.0);
        assert_eq!(prediction_error(&x, &vec(&[1.0]), &vec(&[0.0])).unwrap(), 1.0);
    }

    #[test]
    fn estimation_error_examples() {
        assert_eq!(
            estimation_error(&vec(&[1.0, -1.0]), &vec(&[0.0, 0.0])).unwrap(),
            2.0
        );
        assert_eq!(
            estimation_error(&vec(&[1.0, -1.0]), &vec(&[1.0, -1.0])).unwrap(),
            0.0
        );
        assert!(estimation_error(&vec(&[1.0]), &vec(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn censored_fraction_extremes() {
        let all_above = Dataset::new(
            DMatrix::zeros(3, 1),
            vec(&[1.0, 2.0, 3.0]),
            vec(&[0.0, 0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(censored_fraction(&all_above).unwrap(), 0.0);
        let all_at = Dataset::new(
            DMatrix::zeros(3, 1),
            vec(&[1.0, 2.0, 3.0]),
            vec(&[1.0, 2.0, 3.0]),
        )
        .unwrap();
        assert_eq!(censored_fraction(&all_at).unwrap(), 1.0);
    }

    fn small_design() -> DesignConfig {
        DesignConfig {
            n: 10,
            p: 4,
            s: 2,
            snr: 4.0,
            censor: CensorMode::default(),
            seed: 11,
        }
    }

    #[test]
    fn excess_risk_zero_at_truth_for_any_seed() {
        let design = small_design();
        let truth = GroundTruth::new(vec(&[1.0, -1.0, 0.0, 0.0]), 0.5, ErrorModel::Gaussian);
        for seed in [0, 1, 99] {
            let est = excess_risk_mc(&truth.beta0, &truth, &design, 500, seed).unwrap();
            assert_eq!(est.mean, 0.0);
        }
    }

    #[test]
    fn excess_risk_positive_far_from_truth() {
        let design = small_design();
        let truth = GroundTruth::new(vec(&[1.0, -1.0, 0.0, 0.0]), 0.5, ErrorModel::Gaussian);
        let mut far = truth.beta0.clone();
        far[0] += 10.0;
        let est = excess_risk_mc(&far, &truth, &design, 100_000, 7).unwrap();
        assert!(
            est.mean > 3.0 * est.std_error,
            "mean {} not more than 3 standard errors ({}) above zero",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn excess_risk_se_shrinks_with_sample_size() {
        let design = small_design();
        let truth = GroundTruth::new(vec(&[1.0, -1.0, 0.0, 0.0]), 0.5, ErrorModel::Gaussian);
        let mut far = truth.beta0.clone();
        far[1] -= 2.0;
        let small = excess_risk_mc(&far, &truth, &design, 50_000, 3).unwrap();
        let large = excess_risk_mc(&far, &truth, &design, 100_000, 3).unwrap();
        let ratio = large.std_error / small.std_error;
        // Expect roughly 1/sqrt(2) ~ 0.707.
        assert!(ratio > 0.6 && ratio < 0.82, "ratio {ratio}");
    }

    #[test]
    fn excess_risk_rejects_zero_samples() {
        let design = small_design();
        let truth = GroundTruth::new(vec(&[1.0, -1.0, 0.0, 0.0]), 0.5, ErrorModel::Gaussian);
        assert!(excess_risk_mc(&truth.beta0, &truth, &design, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn objective_invariant_under_row_permutation(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 2..12),
            beta in (-3.0f64..3.0),
            lambda in (0.0f64..2.0),
        ) {
            // y must dominate c; sort the pair per row.
            let n = rows.len();
            let x = DMatrix::from_fn(n, 1, |i, _| rows[i].0);
            let y = DVector::from_fn(n, |i, _| rows[i].1.max(rows[i].2));
            let c = DVector::from_fn(n, |i, _| rows[i].1.min(rows[i].2));
            let data = Dataset::new(x, y, c).unwrap();
            let b = DVector::from_element(1, beta);
            let base = censored_objective(&b, &data, lambda).unwrap();

            let perm: Vec<usize> = (0..n).rev().collect();
            let xp = DMatrix::from_fn(n, 1, |i, _| rows[perm[i]].0);
            let yp = DVector::from_fn(n, |i, _| rows[perm[i]].1.max(rows[perm[i]].2));
            let cp = DVector::from_fn(n, |i, _| rows[perm[i]].1.min(rows[perm[i]].2));
            let permuted = Dataset::new(xp, yp, cp).unwrap();
            let other = censored_objective(&b, &permuted, lambda).unwrap();
            prop_assert!((base - other).abs() <= 1e-12 * (1.0 + base.abs()));
        }

        #[test]
        fn objective_penalty_only_adds(
            beta in (-3.0f64..3.0),
            lambda in (0.0f64..2.0),
        ) {
            let data = Dataset::new(
                DMatrix::from_row_slice(2, 1, &[1.0, -0.5]),
                DVector::from_row_slice(&[2.0, 0.5]),
                DVector::from_row_slice(&[-1.0, -1.0]),
            ).unwrap();
            let b = DVector::from_element(1, beta);
            let with = censored_objective(&b, &data, lambda).unwrap();
            let without = censored_objective(&b, &data, 0.0).unwrap();
            prop_assert!(with >= without - 1e-15);
            if lambda > 0.0 && beta != 0.0 {
                prop_assert!(with > without);
            }
        }

        #[test]
        fn prediction_above_censor_always(
            b in (-4.0f64..4.0),
            x in (-4.0f64..4.0),
            c in (-4.0f64..4.0),
        ) {
            let beta = DVector::from_element(1, b);
            let row = DVector::from_element(1, x);
            prop_assert!(censored_prediction(&beta, &row, c).unwrap() >= c);
        }

        #[test]
        fn error_metrics_symmetric(
            a in proptest::collection::vec(-3.0f64..3.0, 3),
            b in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let va = DVector::from_row_slice(&a);
            let vb = DVector::from_row_slice(&b);
            let x = DMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64 * 0.31).cos());
            prop_assert!(
                (estimation_error(&va, &vb).unwrap() - estimation_error(&vb, &va).unwrap()).abs()
                    < 1e-12
            );
            prop_assert!(
                (prediction_error(&x, &va, &vb).unwrap()
                    - prediction_error(&x, &vb, &va).unwrap())
                .abs()
                    < 1e-12
            );
        }
    }
}
