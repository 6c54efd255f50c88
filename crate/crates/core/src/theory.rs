//! Computable theoretical quantities: the tuning-parameter bound, oracle
//! bounds, the compatibility constant, the margin constant for Gaussian
//! errors, and Monte-Carlo checks of the censoring condition and of the
//! empirical-process concentration bound.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::datagen::{derive_seed, sample_population, DesignConfig};
use crate::error::{Error, Result};
use crate::model::GroundTruth;
use crate::solver::{l1_ball_projection, simplex_projection};

/// The constants appearing in the oracle bounds, bundled with consistency
/// checks: `c = 1 / (sqrt(c1_sq) * c2)` must hold to 1e-12.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TheoryParams {
    pub k_x: f64,
    pub k0: f64,
    pub c1_sq: f64,
    pub c2: f64,
    pub c: f64,
    pub phi0_sq: f64,
    pub lambda_sq: f64,
    pub lipschitz: f64,
    pub eps0: f64,
    pub alpha_eps: f64,
}

impl TheoryParams {
    /// Builds the bundle, deriving `c` from the margin and censoring
    /// constants so it can never drift out of sync.
    pub fn assemble(
        k_x: f64,
        k0: f64,
        margin: &MarginConstants,
        c2: f64,
        phi0_sq: f64,
    ) -> Result<Self> {
        let alpha_eps = margin.alpha_eps.ok_or_else(|| {
            Error::InvalidConfig(
                "margin constants have an empty infimum range; no alpha available".into(),
            )
        })?;
        let params = Self {
            k_x,
            k0,
            c1_sq: margin.c1_sq,
            c2,
            c: 1.0 / (margin.c1_sq.sqrt() * c2),
            phi0_sq,
            lambda_sq: margin.lambda_sq,
            lipschitz: margin.lipschitz,
            eps0: margin.eps0,
            alpha_eps,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k_x", self.k_x),
            ("k0", self.k0),
            ("c1_sq", self.c1_sq),
            ("c2", self.c2),
            ("c", self.c),
            ("phi0_sq", self.phi0_sq),
            ("lambda_sq", self.lambda_sq),
            ("lipschitz", self.lipschitz),
            ("eps0", self.eps0),
            ("alpha_eps", self.alpha_eps),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        let expected = 1.0 / (self.c1_sq.sqrt() * self.c2);
        if (self.c - expected).abs() > 1e-12 * expected.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "c = {} is inconsistent with 1/(c1*c2) = {}",
                self.c, expected
            )));
        }
        Ok(())
    }
}

/// `lambda(t) = 4 K_X sqrt(2 log(2p)/n) + K_X sqrt(8t/n)` with natural log.
pub fn lambda_t(k_x: f64, p: usize, n: usize, t: f64) -> Result<f64> {
    if p < 1 || n < 1 {
        return Err(Error::InvalidConfig(format!(
            "need p >= 1 and n >= 1, got p={p} n={n}"
        )));
    }
    if k_x < 0.0 || t < 0.0 {
        return Err(Error::InvalidConfig(
            "k_x and t must be nonnegative".into(),
        ));
    }
    let nf = n as f64;
    Ok(4.0 * k_x * (2.0 * (2.0 * p as f64).ln() / nf).sqrt() + k_x * (8.0 * t / nf).sqrt())
}

/// The excess-risk and l1-error bounds `(9 lambda^2 s C / phi0^2,
/// 6 lambda s C / phi0^2)`.
pub fn oracle_bounds(lambda: f64, s: usize, c: f64, phi0_sq: f64) -> Result<(f64, f64)> {
    if !(phi0_sq > 0.0) {
        return Err(Error::InvalidConfig("phi0_sq must be positive".into()));
    }
    let sf = s as f64;
    Ok((
        9.0 * lambda * lambda * sf * c / phi0_sq,
        6.0 * lambda * sf * c / phi0_sq,
    ))
}

// ---------------------------------------------------------------------------
// Compatibility constant
// ---------------------------------------------------------------------------

/// Estimate of the compatibility constant. `exact` is set when every sign
/// pattern of the support was enumerated; otherwise the value is only an
/// upper bound reached by multi-start descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompatEstimate {
    pub value: f64,
    pub exact: bool,
}

const COMPAT_EXACT_MAX_P: usize = 12;
const COMPAT_EXACT_MAX_S: usize = 10;

struct ConeProblem<'a> {
    sigma: &'a DMatrix<f64>,
    support: &'a [usize],
    complement: Vec<usize>,
    step: f64,
}

impl<'a> ConeProblem<'a> {
    fn new(sigma: &'a DMatrix<f64>, support: &'a [usize]) -> Self {
        let p = sigma.nrows();
        let in_support = |j: usize| support.contains(&j);
        let complement: Vec<usize> = (0..p).filter(|j| !in_support(*j)).collect();
        // Gershgorin bound on the largest eigenvalue gives a safe step size.
        let mut lmax: f64 = 0.0;
        for i in 0..p {
            let row_sum: f64 = (0..p).map(|j| sigma[(i, j)].abs()).sum();
            lmax = lmax.max(row_sum);
        }
        let step = 1.0 / (2.0 * lmax.max(1e-12));
        Self {
            sigma,
            support,
            complement,
            step,
        }
    }

    fn beta_from(&self, signs: &[f64], w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.sigma.nrows());
        for (k, &j) in self.support.iter().enumerate() {
            beta[j] = signs[k] * w[k];
        }
        for (k, &j) in self.complement.iter().enumerate() {
            beta[j] = v[k];
        }
        beta
    }

    fn quad(&self, beta: &DVector<f64>) -> f64 {
        (self.sigma * beta).dot(beta)
    }

    /// Accelerated projected gradient over one sign-pattern region: the
    /// support magnitudes live on the unit simplex, the off-support part in
    /// the l1 ball of radius 3. Convex, so this finds the region's minimum.
    fn minimize_pattern(&self, signs: &[f64], w0: DVector<f64>, v0: DVector<f64>, iters: usize) -> f64 {
        let s = self.support.len();
        let pc = self.complement.len();
        let mut w = simplex_projection(&w0, 1.0);
        let mut v = if pc > 0 {
            l1_ball_projection(&v0, 3.0).expect("radius is positive")
        } else {
            DVector::zeros(0)
        };
        let mut w_prev = w.clone();
        let mut v_prev = v.clone();
        let mut yw = w.clone();
        let mut yv = v.clone();
        let mut momentum = 1.0f64;

        for _ in 0..iters {
            let beta = self.beta_from(signs, &yw, &yv);
            let grad = self.sigma * &beta * 2.0;

            let mut w_next = DVector::zeros(s);
            for (k, &j) in self.support.iter().enumerate() {
                w_next[k] = yw[k] - self.step * signs[k] * grad[j];
            }
            let w_next = simplex_projection(&w_next, 1.0);

            let v_next = if pc > 0 {
                let mut cand = DVector::zeros(pc);
                for (k, &j) in self.complement.iter().enumerate() {
                    cand[k] = yv[k] - self.step * grad[j];
                }
                l1_ball_projection(&cand, 3.0).expect("radius is positive")
            } else {
                DVector::zeros(0)
            };

            // Gradient-scheme restart keeps the momentum from overshooting.
            let mut inner = 0.0;
            for k in 0..s {
                inner += (yw[k] - w_next[k]) * (w_next[k] - w[k]);
            }
            for k in 0..pc {
                inner += (yv[k] - v_next[k]) * (v_next[k] - v[k]);
            }
            let next_momentum = if inner > 0.0 {
                1.0
            } else {
                (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0
            };
            let mix = (momentum - 1.0) / next_momentum;

            w_prev.copy_from(&w);
            v_prev.copy_from(&v);
            w = w_next;
            v = v_next;
            for k in 0..s {
                yw[k] = w[k] + mix * (w[k] - w_prev[k]);
            }
            yw = simplex_projection(&yw, 1.0);
            if pc > 0 {
                let mut cand = DVector::zeros(pc);
                for k in 0..pc {
                    cand[k] = v[k] + mix * (v[k] - v_prev[k]);
                }
                yv = l1_ball_projection(&cand, 3.0).expect("radius is positive");
            }
            momentum = next_momentum;

            let move_sq = (&w - &w_prev).norm_squared() + (&v - &v_prev).norm_squared();
            if move_sq < 1e-26 {
                break;
            }
        }
        let beta = self.beta_from(signs, &w, &v);
        self.quad(&beta)
    }
}

/// Numeric estimate of the compatibility constant of `sigma` on `support`:
/// the minimum of `|S| * beta' Sigma beta` over the cone
/// `||beta_{S^c}||_1 <= 3 ||beta_S||_1` with `||beta_S||_1` normalized to 1.
pub fn compatibility_constant(sigma: &DMatrix<f64>, support: &[usize]) -> Result<CompatEstimate> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square, got {}x{}",
            p,
            sigma.ncols()
        )));
    }
    for i in 0..p {
        for j in (i + 1)..p {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-8 {
                return Err(Error::InvalidConfig(format!(
                    "covariance is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    if support.is_empty() {
        return Err(Error::InvalidConfig("support must be nonempty".into()));
    }
    let mut seen = vec![false; p];
    for &j in support {
        if j >= p {
            return Err(Error::InvalidConfig(format!(
                "support index {j} out of range for p={p}"
            )));
        }
        if seen[j] {
            return Err(Error::InvalidConfig(format!("duplicate support index {j}")));
        }
        seen[j] = true;
    }

    let s = support.len();
    let problem = ConeProblem::new(sigma, support);
    let exact = p <= COMPAT_EXACT_MAX_P && s <= COMPAT_EXACT_MAX_S;
    let mut best = f64::INFINITY;

    if exact {
        let w0 = DVector::from_element(s, 1.0 / s as f64);
        let v0 = DVector::zeros(problem.complement.len());
        for mask in 0..(1usize << s) {
            let signs: Vec<f64> = (0..s)
                .map(|k| if mask >> k & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let val = problem.minimize_pattern(&signs, w0.clone(), v0.clone(), 6000);
            if val < best {
                best = val;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0a7);
        let starts = 64.min(1usize << s.min(20)) + 16;
        for _ in 0..starts {
            let signs: Vec<f64> = (0..s)
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let w0 = DVector::from_fn(s, |_, _| rng.gen::<f64>() + 1e-3);
            let v0 = DVector::from_fn(problem.complement.len(), |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let val = problem.minimize_pattern(&signs, w0, v0, 3000);
            if val < best {
                best = val;
            }
        }
    }

    Ok(CompatEstimate {
        value: (s as f64 * best).max(0.0),
        exact,
    })
}

// ---------------------------------------------------------------------------
// Margin constant for Gaussian errors
// ---------------------------------------------------------------------------

/// Margin-related constants for a mean-zero Gaussian error distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginConstants {
    /// Error density at zero.
    pub lambda_sq: f64,
    /// Lipschitz constant of the error density.
    pub lipschitz: f64,
    pub eps0: f64,
    /// Infimum of the conditional risk gap over `eps0 <= |z| <= k0`;
    /// absent when that range is empty.
    pub alpha_eps: Option<f64>,
    pub c1_sq: f64,
    /// Set when `eps0 >= k0` left the infimum without a domain.
    pub domain_empty: bool,
}

fn gaussian_pdf(z: f64, sigma: f64) -> f64 {
    let u = z / sigma;
    (-(u * u) / 2.0).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Adaptive Simpson quadrature with Richardson correction.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + step(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fb, fm) = (f(a), f(b), f(m));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

const QUADRATURE_TOL: f64 = 1e-10;

/// The conditional excess-risk gap `h(z) = 2 int_0^z (z - e) dnu0(e)` for the
/// Gaussian error density, evaluated by adaptive quadrature.
pub fn margin_gap(z: f64, sigma: f64) -> f64 {
    let f = |e: f64| (z - e) * gaussian_pdf(e, sigma);
    2.0 * adaptive_simpson(&f, 0.0, z, QUADRATURE_TOL)
}

/// Margin constants for a Gaussian error with the given standard deviation
/// and range bound `k0`.
pub fn margin_constant(error_sigma: f64, k0: f64) -> Result<MarginConstants> {
    if !(error_sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "error sigma must be positive, got {error_sigma}"
        )));
    }
    if !(k0 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "k0 must be positive, got {k0}"
        )));
    }
    let lambda_sq = gaussian_pdf(0.0, error_sigma);
    // The density's slope is extremal at |z| = sigma.
    let lipschitz = gaussian_pdf(error_sigma, error_sigma) / error_sigma;
    let c_marg = lipschitz / 3.0;
    let eps0 = lambda_sq / (2.0 * c_marg);

    if eps0 >= k0 {
        // The infimum would run over an empty range; fall back to eps0 and flag it.
        return Ok(MarginConstants {
            lambda_sq,
            lipschitz,
            eps0,
            alpha_eps: None,
            c1_sq: eps0,
            domain_empty: true,
        });
    }

    // h is symmetric in z, so scanning the positive side suffices. The grid
    // guards against non-monotone surprises rather than assuming them away.
    let grid = 1000;
    let mut alpha = f64::INFINITY;
    for k in 0..=grid {
        let z = eps0 + (k0 - eps0) * k as f64 / grid as f64;
        alpha = alpha.min(margin_gap(z, error_sigma));
    }
    let c1_sq = eps0.min(alpha / (k0 * k0));
    Ok(MarginConstants {
        lambda_sq,
        lipschitz,
        eps0,
        alpha_eps: Some(alpha),
        c1_sq,
        domain_empty: false,
    })
}

// ---------------------------------------------------------------------------
// Censoring-condition Monte-Carlo check
// ---------------------------------------------------------------------------

/// Result of the censoring-condition scan: the smallest ratio found and the
/// delta-method standard error at that minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensoringCheck {
    pub c2_hat: f64,
    pub std_error: f64,
    pub directions_used: usize,
}

/// Scans random cone directions for the smallest Monte-Carlo ratio
/// `E[(f_beta - f_0)^2] / E[(x'(beta - beta0))^2]`, an upper estimate of the
/// censoring constant.
pub fn censoring_constant_check(
    truth: &GroundTruth,
    design: &DesignConfig,
    n_dirs: usize,
    n_mc: usize,
    seed: u64,
) -> Result<CensoringCheck> {
    if n_dirs < 1 || n_mc < 2 {
        return Err(Error::InvalidConfig(
            "need n_dirs >= 1 and n_mc >= 2".into(),
        ));
    }
    if truth.active_set.is_empty() {
        return Err(Error::InvalidConfig(
            "the truth has an empty active set; the cone is degenerate".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = sample_population(truth, design, n_mc, &mut rng)?;
    let f0: Vec<f64> = (0..n_mc)
        .map(|i| pop.true_pred[i].max(pop.c[i]))
        .collect();

    let p = design.p;
    let support = &truth.active_set;
    let off: Vec<usize> = (0..p).filter(|j| !support.contains(j)).collect();

    let mut best: Option<(f64, f64)> = None;
    let mut used = 0;
    for _ in 0..n_dirs {
        // Support part: standard normal. Off-support part: scaled to a
        // random fraction of the cone's slack.
        let mut delta = DVector::zeros(p);
        let mut s_norm1 = 0.0;
        for &j in support {
            let g: f64 = rng.sample(StandardNormal);
            delta[j] = g;
            s_norm1 += g.abs();
        }
        if s_norm1 == 0.0 {
            continue;
        }
        if !off.is_empty() {
            let mut raw: Vec<f64> = Vec::with_capacity(off.len());
            let mut raw_norm1 = 0.0;
            for _ in &off {
                let g: f64 = rng.sample(StandardNormal);
                raw.push(g);
                raw_norm1 += g.abs();
            }
            let target = rng.gen::<f64>() * 3.0 * s_norm1;
            if raw_norm1 > 0.0 {
                for (k, &j) in off.iter().enumerate() {
                    delta[j] = raw[k] / raw_norm1 * target;
                }
            }
        }

        let dpred = &pop.x * &delta;
        let mut num_sum = 0.0;
        let mut den_sum = 0.0;
        let mut rows = Vec::with_capacity(n_mc);
        for i in 0..n_mc {
            let fb = (pop.true_pred[i] + dpred[i]).max(pop.c[i]);
            let num = (fb - f0[i]) * (fb - f0[i]);
            let den = dpred[i] * dpred[i];
            num_sum += num;
            den_sum += den;
            rows.push((num, den));
        }
        if den_sum <= 0.0 {
            continue;
        }
        used += 1;
        let ratio = num_sum / den_sum;
        // Delta-method standard error of the ratio of means.
        let den_mean = den_sum / n_mc as f64;
        let mut dev_sq = 0.0;
        for (num, den) in rows {
            let d = num - ratio * den;
            dev_sq += d * d;
        }
        let se = (dev_sq / (n_mc as f64 * (n_mc - 1) as f64)).sqrt() / den_mean;
        if best.map_or(true, |(r, _)| ratio < r) {
            best = Some((ratio, se));
        }
    }

    let (c2_hat, std_error) = best.ok_or_else(|| {
        Error::DegenerateDirections("every direction had a zero denominator".into())
    })?;
    Ok(CensoringCheck {
        c2_hat,
        std_error,
        directions_used: used,
    })
}

// ---------------------------------------------------------------------------
// Concentration-inequality Monte-Carlo check
// ---------------------------------------------------------------------------

/// Outcome of the concentration check across replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationCheck {
    /// Fraction of replicates whose supremum lower bound cleared the threshold.
    pub exceed_freq: f64,
    pub mean_sup: f64,
    pub mean_threshold: f64,
}

/// Size of the independent sample used to estimate population expectations.
const POPULATION_SAMPLE: usize = 100_000;

/// Sparse direction on the l1 sphere of radius `m`: at most two coordinates.
#[derive(Clone, Copy)]
struct SphereDir {
    j1: usize,
    w1: f64,
    j2: usize,
    w2: f64,
}

fn score_direction(
    dir: &SphereDir,
    x: &DMatrix<f64>,
    true_pred: &[f64],
    y: &[f64],
    c: &[f64],
    base_loss_mean: f64,
    pop_x: &DMatrix<f64>,
    pop_true_pred: &[f64],
    pop_y: &[f64],
    pop_c: &[f64],
    pop_base_mean: f64,
) -> f64 {
    let n = y.len();
    let mut emp = 0.0;
    for i in 0..n {
        let pred = true_pred[i] + dir.w1 * x[(i, dir.j1)] + dir.w2 * x[(i, dir.j2)];
        emp += (y[i] - pred.max(c[i])).abs();
    }
    let emp_gamma = emp / n as f64 - base_loss_mean;

    let m = pop_y.len();
    let mut popv = 0.0;
    for i in 0..m {
        let pred = pop_true_pred[i] + dir.w1 * pop_x[(i, dir.j1)] + dir.w2 * pop_x[(i, dir.j2)];
        popv += (pop_y[i] - pred.max(pop_c[i])).abs();
    }
    let pop_gamma = popv / m as f64 - pop_base_mean;
    (emp_gamma - pop_gamma).abs()
}

/// Lower-bounds the supremum of the centered empirical process over the l1
/// ball of radius `m_radius` around the truth on `n_reps` fresh datasets and
/// reports how often the bound `m_radius * lambda(t)` is exceeded, with the
/// design bound taken as the empirical max |x_ij| of each replicate.
pub fn concentration_mc(
    truth: &GroundTruth,
    design: &DesignConfig,
    m_radius: f64,
    t: f64,
    n_dirs: usize,
    n_reps: usize,
    seed: u64,
) -> Result<ConcentrationCheck> {
    if !(m_radius > 0.0) || !(t > 0.0) {
        return Err(Error::InvalidConfig(
            "m_radius and t must be positive".into(),
        ));
    }
    if n_dirs < 1 || n_reps < 1 {
        return Err(Error::InvalidConfig(
            "need n_dirs >= 1 and n_reps >= 1".into(),
        ));
    }
    design.validate()?;
    if truth.beta0.len() != design.p {
        return Err(Error::DimensionMismatch(format!(
            "beta0 has length {} but the design has p={}",
            truth.beta0.len(),
            design.p
        )));
    }

    let results: Result<Vec<(bool, f64, f64)>> = (0..n_reps)
        .into_par_iter()
        .map(|rep| -> Result<(bool, f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, rep as u64));
            let data = sample_population(truth, design, design.n, &mut rng)?;
            let y: Vec<f64> = (0..design.n)
                .map(|i| (data.true_pred[i] + data.eps[i]).max(data.c[i]))
                .collect();
            let true_pred: Vec<f64> = data.true_pred.iter().copied().collect();
            let c: Vec<f64> = data.c.iter().copied().collect();
            let base_loss_mean = (0..design.n)
                .map(|i| (y[i] - true_pred[i].max(c[i])).abs())
                .sum::<f64>()
                / design.n as f64;

            let mut pop_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, rep as u64));
            let pop = sample_population(truth, design, POPULATION_SAMPLE, &mut pop_rng)?;
            let pop_y: Vec<f64> = (0..POPULATION_SAMPLE)
                .map(|i| (pop.true_pred[i] + pop.eps[i]).max(pop.c[i]))
                .collect();
            let pop_true_pred: Vec<f64> = pop.true_pred.iter().copied().collect();
            let pop_c: Vec<f64> = pop.c.iter().copied().collect();
            let pop_base_mean = (0..POPULATION_SAMPLE)
                .map(|i| (pop_y[i] - pop_true_pred[i].max(pop_c[i])).abs())
                .sum::<f64>()
                / POPULATION_SAMPLE as f64;

            let k_x = data.x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let threshold = m_radius * lambda_t(k_x, design.p, design.n, t)?;

            let eval = |dir: &SphereDir| {
                score_direction(
                    dir,
                    &data.x,
                    &true_pred,
                    &y,
                    &c,
                    base_loss_mean,
                    &pop.x,
                    &pop_true_pred,
                    &pop_y,
                    &pop_c,
                    pop_base_mean,
                )
            };

            // All one-coordinate extreme points first (or a random subset).
            let p = design.p;
            let mut vertex_ids: Vec<usize> = (0..2 * p).collect();
            if 2 * p > n_dirs {
                for k in 0..n_dirs {
                    let swap = rng.gen_range(k..2 * p);
                    vertex_ids.swap(k, swap);
                }
                vertex_ids.truncate(n_dirs);
            }
            let mut best_dir = SphereDir {
                j1: 0,
                w1: 0.0,
                j2: 0,
                w2: 0.0,
            };
            let mut best_score = f64::NEG_INFINITY;
            let mut budget = n_dirs;
            for id in vertex_ids {
                if budget == 0 {
                    break;
                }
                budget -= 1;
                let j = id / 2;
                let sign = if id % 2 == 0 { 1.0 } else { -1.0 };
                let dir = SphereDir {
                    j1: j,
                    w1: sign * m_radius,
                    j2: j,
                    w2: 0.0,
                };
                let sc = eval(&dir);
                if sc > best_score {
                    best_score = sc;
                    best_dir = dir;
                }
            }

            // Local perturbations: move part of the mass to another coordinate
            // while staying on the l1 sphere.
            while budget > 0 {
                budget -= 1;
                let frac = if rng.gen::<bool>() { 0.25 } else { 0.5 };
                let k = rng.gen_range(0..p);
                let tau = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let total = best_dir.w1.abs() + best_dir.w2.abs();
                let keep = best_dir.w1.signum() * (1.0 - frac) * total;
                let cand = SphereDir {
                    j1: best_dir.j1,
                    w1: keep,
                    j2: k,
                    w2: tau * frac * total,
                };
                let sc = eval(&cand);
                if sc > best_score {
                    best_score = sc;
                    best_dir = cand;
                }
            }

            Ok((best_score >= threshold, best_score, threshold))
        })
        .collect();

    let results = results?;
    let exceed = results.iter().filter(|r| r.0).count();
    let mean_sup = results.iter().map(|r| r.1).sum::<f64>() / n_reps as f64;
    let mean_threshold = results.iter().map(|r| r.2).sum::<f64>() / n_reps as f64;
    Ok(ConcentrationCheck {
        exceed_freq: exceed as f64 / n_reps as f64,
        mean_sup,
        mean_threshold,
    })
}
