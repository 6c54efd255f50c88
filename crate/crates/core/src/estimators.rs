//! The four fitting routines: the censored l1-penalised estimator (CL), the
//! naive full-data baseline (NL), the restricted uncensored-rows baseline
//! (RL), and the unpenalised censored fit as the zero-penalty special case.
//!
//! The censored criterion is nonconvex, so CL runs an alternating active-set
//! scheme: classify rows by whether the linear predictor clears the censoring
//! level, solve the convex LAD-LASSO restricted to the active rows, and only
//! accept steps that do not increase the full censored objective. Multiple
//! restarts hedge against bad basins; the result is a certified local
//! solution, not a global one.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{censored_objective, Dataset, FitResult, CENSOR_EQ_TOL};
use crate::solver::{l1_ball_projection, lad_lasso_warm, SolverOptions};

/// Starting points for the censored fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Restart {
    Zero,
    NlSolution,
    RlSolution,
}

/// Configuration of one fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub solver: SolverOptions,
    pub restarts: Vec<Restart>,
    pub max_outer_iter: usize,
    /// Objective-decrease threshold that ends an active-set descent.
    pub outer_tol: f64,
}

impl FitConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            solver: SolverOptions::default(),
            restarts: vec![Restart::Zero, Restart::NlSolution, Restart::RlSolution],
            max_outer_iter: 100,
            outer_tol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.restarts.is_empty() {
            return Err(Error::InvalidConfig("restarts must be nonempty".into()));
        }
        if self.max_outer_iter < 1 {
            return Err(Error::InvalidConfig("max_outer_iter must be at least 1".into()));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidConfig("outer_tol must be positive".into()));
        }
        self.solver.validate()
    }
}

/// Rows whose linear predictor strictly clears the censoring level.
/// Boundary rows count as censored; their loss contribution is already exact.
fn active_rows(pred: &DVector<f64>, c: &DVector<f64>) -> Vec<usize> {
    (0..pred.len()).filter(|&i| pred[i] > c[i]).collect()
}

fn uncensored_rows(data: &Dataset) -> Vec<usize> {
    (0..data.n())
        .filter(|&i| data.y()[i] - data.c()[i] > CENSOR_EQ_TOL)
        .collect()
}

fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|b| b.abs()).sum()
}

fn lad_objective_rows(
    data: &Dataset,
    rows: &[usize],
    beta: &DVector<f64>,
    lambda: f64,
    denom: f64,
) -> f64 {
    let pred = data.x() * beta;
    let loss: f64 = rows.iter().map(|&i| (data.y()[i] - pred[i]).abs()).sum();
    loss / denom + lambda * l1_norm(beta)
}

struct Candidate {
    beta: DVector<f64>,
    objective: f64,
    outer_iters: usize,
    converged: bool,
    degenerate: bool,
}

/// One active-set descent from a given starting point.
fn descend(data: &Dataset, cfg: &FitConfig, init: DVector<f64>) -> Result<Candidate> {
    let n = data.n();
    let mut beta = l1_ball_projection(&init, cfg.solver.l1_radius)?;
    let mut obj = censored_objective(&beta, data, cfg.lambda)?;
    let mut prev_active: Option<Vec<usize>> = None;
    let mut outer_iters = 0;
    let mut converged = false;
    let mut degenerate = false;

    for _ in 0..cfg.max_outer_iter {
        let pred = data.x() * &beta;
        let active = active_rows(&pred, data.c());
        if active.is_empty() {
            degenerate = true;
            break;
        }
        if prev_active.as_deref() == Some(active.as_slice()) {
            converged = true;
            break;
        }
        outer_iters += 1;

        // Rows outside the active set contribute the constant |y_i - c_i|/n,
        // so the subproblem keeps the 1/n scale via a rescaled penalty.
        let x_sub = data.x().select_rows(active.iter());
        let y_sub = data.y().select_rows(active.iter());
        let sub_lambda = cfg.lambda * n as f64 / active.len() as f64;
        let (beta_sub, _) = lad_lasso_warm(&x_sub, &y_sub, sub_lambda, &cfg.solver, &beta)?;
        let beta_new = l1_ball_projection(&beta_sub, cfg.solver.l1_radius)?;
        let obj_new = censored_objective(&beta_new, data, cfg.lambda)?;

        if obj_new > obj {
            // The full objective would increase; keep the current iterate.
            converged = true;
            break;
        }
        let decrease = obj - obj_new;
        beta = beta_new;
        obj = obj_new;
        prev_active = Some(active);
        if decrease < cfg.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(Candidate {
        beta,
        objective: obj,
        outer_iters,
        converged,
        degenerate,
    })
}

fn nl_coefficients(data: &Dataset, cfg: &FitConfig) -> Result<(DVector<f64>, crate::solver::SolverDiagnostics)> {
    lad_lasso_warm(
        data.x(),
        data.y(),
        cfg.lambda,
        &cfg.solver,
        &DVector::zeros(data.p()),
    )
}

fn rl_coefficients(
    data: &Dataset,
    cfg: &FitConfig,
    rows: &[usize],
) -> Result<(DVector<f64>, crate::solver::SolverDiagnostics)> {
    let x_sub = data.x().select_rows(rows.iter());
    let y_sub = data.y().select_rows(rows.iter());
    lad_lasso_warm(&x_sub, &y_sub, cfg.lambda, &cfg.solver, &DVector::zeros(data.p()))
}

/// Minimizes the penalised censored criterion over the l1 ball by alternating
/// active-set descents from every configured restart and keeping the best.
pub fn fit_cl(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut total_iters = 0;
    let mut restarts_used = 0;

    for restart in &cfg.restarts {
        let init = match restart {
            Restart::Zero => DVector::zeros(data.p()),
            Restart::NlSolution => nl_coefficients(data, cfg)?.0,
            Restart::RlSolution => {
                let rows = uncensored_rows(data);
                if rows.is_empty() {
                    continue; // nothing to restrict to; skip this start
                }
                rl_coefficients(data, cfg, &rows)?.0
            }
        };
        let cand = descend(data, cfg, init)?;
        total_iters += cand.outer_iters;
        restarts_used += 1;
        candidates.push(cand);
    }

    if candidates.is_empty() || candidates.iter().all(|c| c.degenerate) {
        // Every start ended with an empty active set.
        let beta = DVector::zeros(data.p());
        let objective = censored_objective(&beta, data, cfg.lambda)?;
        let pred = data.x() * &beta;
        return Ok(FitResult {
            beta_hat: beta,
            objective,
            iterations: total_iters,
            restarts_used,
            converged: false,
            active_obs: active_rows(&pred, data.c()),
        });
    }

    let best = candidates
        .into_iter()
        .min_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap())
        .unwrap();
    let pred = data.x() * &best.beta;
    Ok(FitResult {
        beta_hat: best.beta,
        objective: best.objective,
        iterations: total_iters,
        restarts_used,
        converged: best.converged && !best.degenerate,
        active_obs: active_rows(&pred, data.c()),
    })
}

/// LAD-LASSO on the full data, treating every observation as uncensored.
pub fn fit_nl(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let (mut beta, diag) = nl_coefficients(data, cfg)?;
    if l1_norm(&beta) > cfg.solver.l1_radius {
        beta = l1_ball_projection(&beta, cfg.solver.l1_radius)?;
    }
    let all_rows: Vec<usize> = (0..data.n()).collect();
    let objective = lad_objective_rows(data, &all_rows, &beta, cfg.lambda, data.n() as f64);
    let pred = data.x() * &beta;
    Ok(FitResult {
        beta_hat: beta,
        objective,
        iterations: diag.iterations,
        restarts_used: 1,
        converged: diag.converged,
        active_obs: active_rows(&pred, data.c()),
    })
}

/// LAD-LASSO restricted to the uncensored rows, averaged over that subset.
pub fn fit_rl(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let rows = uncensored_rows(data);
    if rows.is_empty() {
        return Err(Error::NoUncensoredRows);
    }
    let (mut beta, diag) = rl_coefficients(data, cfg, &rows)?;
    if l1_norm(&beta) > cfg.solver.l1_radius {
        beta = l1_ball_projection(&beta, cfg.solver.l1_radius)?;
    }
    let objective = lad_objective_rows(data, &rows, &beta, cfg.lambda, rows.len() as f64);
    let pred = data.x() * &beta;
    Ok(FitResult {
        beta_hat: beta,
        objective,
        iterations: diag.iterations,
        restarts_used: 1,
        converged: diag.converged,
        active_obs: active_rows(&pred, data.c()),
    })
}

/// Unpenalised censored fit: the zero-penalty case of [`fit_cl`], intended
/// for problems with many more observations than parameters.
pub fn fit_powell(data: &Dataset, solver: &SolverOptions) -> Result<FitResult> {
    let mut cfg = FitConfig::new(0.0);
    cfg.solver = *solver;
    fit_cl(data, &cfg)
}
