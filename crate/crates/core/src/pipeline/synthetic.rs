//! Synthetic acid-base-style admission windows.
//!
//! Three smooth latent trajectories (CO2-like, SID-like, lactate-like) are
//! drawn from SE-kernel GPs over an hourly grid. The output is a monotone
//! readout of the three plus a smooth weak-acid component that the
//! covariates do not explain, plus noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ingest::RawTable;
use super::table::{Column, ColumnRole, ObservationTable};
use crate::error::Result;
use crate::kernel::factorize_with_jitter;
use crate::rng;

pub const OUTPUT: &str = "ph";
pub const COVARIATES: [&str; 3] = ["pco2", "sid", "lactate"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// `y = 1.6 tanh(s / 1.6)` on the weighted latent sum `s`.
    Tanh,
    /// `y = s`.
    Linear,
}

/// Weights of the latent sum: decreasing in CO2, increasing in SID,
/// decreasing in lactate.
pub const READOUT_WEIGHTS: [f64; 3] = [-1.0, 0.8, -0.6];

impl Readout {
    pub fn apply(self, w: [f64; 3]) -> f64 {
        let s = READOUT_WEIGHTS[0] * w[0] + READOUT_WEIGHTS[1] * w[1] + READOUT_WEIGHTS[2] * w[2];
        match self {
            Readout::Tanh => 1.6 * (s / 1.6).tanh(),
            Readout::Linear => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub min_len: usize,
    pub max_len: usize,
    /// Latent lengthscales (hours) are drawn uniformly from this range.
    pub latent_lengthscale_hours: [f64; 2],
    pub readout: Readout,
    pub output_noise_sd: f64,
    pub covariate_noise_sd: f64,
    pub weak_acid_sd: f64,
    pub weak_acid_lengthscale_hours: f64,
    /// Probability that an hour has no measurement at all.
    pub empty_row_prob: f64,
    /// Probability that a covariate is missing in an otherwise measured hour.
    pub covariate_missing_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            min_len: 19,
            max_len: 115,
            latent_lengthscale_hours: [6.0, 14.0],
            readout: Readout::Tanh,
            output_noise_sd: 0.05,
            covariate_noise_sd: 0.05,
            weak_acid_sd: 0.3,
            weak_acid_lengthscale_hours: 8.0,
            empty_row_prob: 0.05,
            covariate_missing_prob: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("synthetic lengths must satisfy 0 < min_len <= max_len");
        }
        let [a, b] = self.latent_lengthscale_hours;
        if !(a > 0.0 && b >= a && b.is_finite()) || !(self.weak_acid_lengthscale_hours > 0.0) {
            return bad("synthetic lengthscales must be positive");
        }
        let probs = [self.empty_row_prob, self.covariate_missing_prob];
        if probs.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("synthetic missingness probabilities must lie in [0, 1)");
        }
        let sds = [self.output_noise_sd, self.covariate_noise_sd, self.weak_acid_sd];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("synthetic noise levels must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWindow {
    /// Observed hourly data in original units, with natural missingness.
    pub raw: RawTable,
    /// Noise-free complete values in original units over the same hours.
    pub truth: ObservationTable,
    /// Latent trajectories in standardised units.
    pub latents: [Vec<f64>; 3],
}

pub fn covariates_to_original(w: [f64; 3]) -> [f64; 3] {
    [45.0 + 8.0 * w[0], 36.0 + 4.0 * w[1], (0.3 + 0.5 * w[2]).exp()]
}

pub fn output_to_original(y: f64) -> f64 {
    7.38 + 0.06 * y
}

fn gp_path<R: Rng + ?Sized>(times: &[f64], lengthscale: f64, rng: &mut R) -> Result<Vec<f64>> {
    let n = times.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = (times[i] - times[j]) / lengthscale;
        (-d * d).exp()
    });
    let (chol, _) = factorize_with_jitter(&k)?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((chol.l() * z).iter().copied().collect())
}

pub fn generate_synthetic_window<R: Rng + ?Sized>(config: &SyntheticConfig, rng: &mut R) -> Result<SyntheticWindow> {
    config.validate()?;
    let n = rng.random_range(config.min_len..=config.max_len);
    let hours: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let [lo, hi] = config.latent_lengthscale_hours;
    let mut latents: [Vec<f64>; 3] = Default::default();
    for l in latents.iter_mut() {
        let ell = if hi > lo { rng.random_range(lo..hi) } else { lo };
        *l = gp_path(&hours, ell, rng)?;
    }
    let acid = if config.weak_acid_sd > 0.0 {
        gp_path(&hours, config.weak_acid_lengthscale_hours, rng)?
    } else {
        vec![0.0; n]
    };

    let mut rows = Vec::with_capacity(n);
    let mut truth_cols: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n); 4];
    for i in 0..n {
        let w = [latents[0][i], latents[1][i], latents[2][i]];
        let clean = config.readout.apply(w) + config.weak_acid_sd * acid[i];
        truth_cols[0].push(Some(output_to_original(clean)));
        for (k, v) in covariates_to_original(w).into_iter().enumerate() {
            truth_cols[k + 1].push(Some(v));
        }

        let noisy_y = clean + config.output_noise_sd * rng.sample::<f64, _>(StandardNormal);
        let mut noisy_w = w;
        for v in noisy_w.iter_mut() {
            *v += config.covariate_noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let cov = covariates_to_original(noisy_w);
        // first and last hours are always measured so the window span is fixed
        let empty = i > 0 && i + 1 < n && rng.random::<f64>() < config.empty_row_prob;
        let mut row = vec![(!empty).then(|| output_to_original(noisy_y))];
        for v in cov {
            let missing = empty || rng.random::<f64>() < config.covariate_missing_prob;
            row.push((!missing).then_some(v));
        }
        rows.push(row);
    }
    let names: Vec<String> = std::iter::once(OUTPUT).chain(COVARIATES).map(String::from).collect();
    let truth = ObservationTable::new(
        hours.clone(),
        names
            .iter()
            .zip(truth_cols)
            .enumerate()
            .map(|(k, (name, v))| {
                let role = if k == 0 { ColumnRole::Output } else { ColumnRole::Covariate };
                Column::new(name, role, v)
            })
            .collect(),
    )?;
    Ok(SyntheticWindow {
        raw: RawTable {
            names,
            times: hours,
            rows,
        },
        truth,
        latents,
    })
}

/// `count` windows, window `w` drawn from its own stream of `seed`.
pub fn generate_windows(config: &SyntheticConfig, count: usize, seed: u64) -> Result<Vec<SyntheticWindow>> {
    (0..count)
        .map(|w| generate_synthetic_window(config, &mut rng::stream(seed, &[0x7379_6e74, w as u64])))
        .collect()
}
