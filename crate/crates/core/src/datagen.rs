//! Synthetic dataset generation with exact signal-to-noise control and
//! deterministic seeding.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, ErrorModel, GroundTruth};

/// Distribution of the per-observation censoring level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CensorMode {
    /// Independent normal censoring levels.
    Gaussian { mean: f64, sd: f64 },
    /// Every observation shares the same censoring level.
    Constant(f64),
}

impl Default for CensorMode {
    fn default() -> Self {
        CensorMode::Gaussian { mean: 0.0, sd: 2.0 }
    }
}

/// One simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DesignConfig {
    pub n: usize,
    pub p: usize,
    /// Number of nonzero coefficients in the true vector.
    pub s: usize,
    pub snr: f64,
    pub censor: CensorMode,
    pub seed: u64,
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.s < 1 || self.s > self.p {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= s <= p, got s={} p={}",
                self.s, self.p
            )));
        }
        if !(self.snr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "snr must be positive, got {}",
                self.snr
            )));
        }
        if let CensorMode::Gaussian { sd, .. } = self.censor {
            if sd < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "censor sd must be nonnegative, got {sd}"
                )));
            }
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit seed derivation so every replicate of every design draws an
/// independent, individually reproducible stream.
pub fn derive_seed(base: u64, design_id: u64, replicate: u64) -> u64 {
    let mut h = splitmix(base ^ 0x9e37_79b9_7f4a_7c15);
    h = splitmix(h ^ design_id.wrapping_mul(0xff51_afd7_ed55_8ccd));
    splitmix(h ^ replicate.wrapping_mul(0xc4ce_b9fe_1a85_ec53))
}

/// Rescales a drawn noise vector so the realized signal-to-noise ratio
/// `sqrt(sum_i (signal_i v 0)^2 / sum_i noise_i^2)` hits `snr` exactly.
///
/// The positive part in the numerator is part of the ratio's definition.
pub fn scale_noise_to_snr(signal: &DVector<f64>, noise: &DVector<f64>, snr: f64) -> Result<DVector<f64>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "snr must be positive, got {snr}"
        )));
    }
    let pos_sq: f64 = signal.iter().map(|v| v.max(0.0).powi(2)).sum();
    if pos_sq <= 0.0 {
        return Err(Error::ZeroSignal);
    }
    let noise_norm = noise.norm();
    if noise_norm == 0.0 {
        return Err(Error::InvalidConfig(
            "noise vector is identically zero".into(),
        ));
    }
    let k = pos_sq.sqrt() / (snr * noise_norm);
    Ok(noise * k)
}

/// Draws one dataset from a design: standard normal covariates, a +/-1 sparse
/// coefficient vector, Gaussian errors rescaled to the exact SNR, and
/// censoring levels from the configured mode.
pub fn generate_design(cfg: &DesignConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, p) = (cfg.n, cfg.p);

    // Draw order is frozen: X row-major, then signs, then errors, then censors.
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }

    let mut beta0 = DVector::zeros(p);
    for j in 0..cfg.s {
        beta0[j] = if rng.gen::<f64>() < 0.5 { 1.0 } else { -1.0 };
    }

    let raw_noise = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));

    let c = match cfg.censor {
        CensorMode::Gaussian { mean, sd } => {
            DVector::from_fn(n, |_, _| mean + sd * rng.sample::<f64, _>(StandardNormal))
        }
        CensorMode::Constant(c0) => DVector::from_element(n, c0),
    };

    let signal = &x * &beta0;
    let noise = scale_noise_to_snr(&signal, &raw_noise, cfg.snr)?;
    let sigma = noise.norm() / raw_noise.norm();

    let y = DVector::from_fn(n, |i, _| (signal[i] + noise[i]).max(c[i]));

    let data = Dataset::new(x, y, c)?;
    let truth = GroundTruth::new(beta0, sigma, ErrorModel::Gaussian);
    Ok((data, truth))
}

/// Fresh iid draws of `(x, c, eps)` from a design's population, used by the
/// Monte-Carlo checks. The latent predictor at the true coefficients comes
/// along precomputed.
pub struct PopulationSample {
    pub x: DMatrix<f64>,
    pub c: DVector<f64>,
    pub eps: DVector<f64>,
    /// `x beta0` per row.
    pub true_pred: DVector<f64>,
}

pub fn sample_population(
    truth: &GroundTruth,
    cfg: &DesignConfig,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PopulationSample> {
    if truth.beta0.len() != cfg.p {
        return Err(Error::DimensionMismatch(format!(
            "beta0 has length {} but the design has p={}",
            truth.beta0.len(),
            cfg.p
        )));
    }
    let mut x = DMatrix::zeros(m, cfg.p);
    for i in 0..m {
        for j in 0..cfg.p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let eps = DVector::from_fn(m, |_, _| truth.sigma * rng.sample::<f64, _>(StandardNormal));
    let c = match cfg.censor {
        CensorMode::Gaussian { mean, sd } => {
            DVector::from_fn(m, |_, _| mean + sd * rng.sample::<f64, _>(StandardNormal))
        }
        CensorMode::Constant(c0) => DVector::from_element(m, c0),
    };
    let true_pred = &x * &truth.beta0;
    Ok(PopulationSample {
        x,
        c,
        eps,
        true_pred,
    })
}

/// The 24 study designs, in order, as `(n, p, s, snr)`.
///
/// Entries 13-16 and 17-20 repeat the same settings on purpose; they are
/// distinct designs and receive distinct derived seeds.
const STUDY_SETTINGS: [(usize, usize, usize, f64); 24] = [
    (70, 250, 10, 8.0),
    (70, 100, 10, 8.0),
    (70, 250, 10, 2.0),
    (70, 100, 10, 2.0),
    (70, 250, 5, 8.0),
    (70, 100, 5, 8.0),
    (70, 250, 5, 2.0),
    (70, 100, 5, 2.0),
    (40, 100, 5, 8.0),
    (40, 100, 5, 2.0),
    (40, 100, 3, 8.0),
    (40, 100, 3, 2.0),
    (40, 50, 5, 8.0),
    (40, 50, 5, 2.0),
    (40, 50, 3, 8.0),
    (40, 50, 3, 2.0),
    (40, 50, 5, 8.0),
    (40, 50, 5, 2.0),
    (40, 50, 3, 8.0),
    (40, 50, 3, 2.0),
    (20, 30, 5, 8.0),
    (20, 30, 5, 2.0),
    (20, 30, 3, 8.0),
    (20, 30, 3, 2.0),
];

/// The full list of study designs with default Gaussian censoring and a
/// placeholder seed of 0; runners overwrite the seed.
pub fn table1_designs() -> Vec<DesignConfig> {
    STUDY_SETTINGS
        .iter()
        .map(|&(n, p, s, snr)| DesignConfig {
            n,
            p,
            s,
            snr,
            censor: CensorMode::default(),
            seed: 0,
        })
        .collect()
}
