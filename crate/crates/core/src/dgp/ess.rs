//! Elliptical slice sampling for targets of the form `N(mu, L L') x lik`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Smallest bracket width (radians) before the sampler gives up.
pub const MIN_BRACKET: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct EssOutcome {
    pub state: Vec<f64>,
    pub loglik: f64,
    /// Likelihood evaluations spent, including the accepted one.
    pub proposals: usize,
}

/// One ESS transition given the current log likelihood.
///
/// `prior_factor` is a lower-triangular `L` with prior covariance `L L'`.
pub fn ess_step<R, F>(
    prior_mean: &[f64],
    prior_factor: &DMatrix<f64>,
    current: &[f64],
    current_loglik: f64,
    loglik: &mut F,
    rng: &mut R,
) -> Result<EssOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    let n = current.len();
    if prior_mean.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: prior_mean.len(),
        });
    }
    if n == 0 {
        return Ok(EssOutcome {
            state: Vec::new(),
            loglik: current_loglik,
            proposals: 0,
        });
    }
    if prior_factor.nrows() != n || prior_factor.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: prior_factor.nrows(),
        });
    }
    if !current_loglik.is_finite() {
        return Err(Error::InvalidParameter(
            "elliptical slice sampling needs a finite log likelihood at the current state".into(),
        ));
    }

    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nu = prior_factor.lower_triangle() * z;
    let u: f64 = rng.random();
    let threshold = current_loglik + (1.0 - u).ln();

    let mut theta = rng.random::<f64>() * TAU;
    let mut lo = theta - TAU;
    let mut hi = theta;
    let mut proposal = vec![0.0; n];
    let mut proposals = 0;
    loop {
        let (s, c) = theta.sin_cos();
        for i in 0..n {
            proposal[i] = prior_mean[i] + (current[i] - prior_mean[i]) * c + nu[i] * s;
        }
        let ll = loglik(&proposal);
        proposals += 1;
        if ll > threshold {
            return Ok(EssOutcome {
                state: proposal,
                loglik: ll,
                proposals,
            });
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        if hi - lo < MIN_BRACKET {
            return Err(Error::EssStall {
                snapshot: current.to_vec(),
            });
        }
        theta = lo + rng.random::<f64>() * (hi - lo);
    }
}

/// One ESS transition; evaluates the log likelihood at `current` first.
pub fn ess_update<R, F>(
    prior_mean: &[f64],
    prior_factor: &DMatrix<f64>,
    current: &[f64],
    mut loglik: F,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    if current.is_empty() {
        return Ok(Vec::new());
    }
    let ll = loglik(current);
    ess_step(prior_mean, prior_factor, current, ll, &mut loglik, rng).map(|o| o.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn empty_state_is_returned_unchanged() {
        let mut r = rng::stream(1, &[]);
        let out = ess_update(&[], &DMatrix::zeros(0, 0), &[], |_| 0.0, &mut r).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn flat_likelihood_recovers_prior() {
        let mut r = rng::stream(2, &[]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let l = cov.clone().cholesky().unwrap().l();
        let mean = [0.5, -1.0];
        let mut x = vec![0.5, -1.0];
        let n = 20_000;
        let thin = 3;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n * thin {
            x = ess_update(&mean, &l, &x, |_| 0.0, &mut r).unwrap();
            if i % thin == 0 {
                samples.push(x.clone());
            }
        }
        let m0 = samples.iter().map(|s| s[0]).sum::<f64>() / n as f64;
        let m1 = samples.iter().map(|s| s[1]).sum::<f64>() / n as f64;
        assert!((m0 - 0.5).abs() < 0.03 && (m1 + 1.0).abs() < 0.03 * 2f64.sqrt());
        let c = |a: usize, b: usize, ma: f64, mb: f64| {
            samples.iter().map(|s| (s[a] - ma) * (s[b] - mb)).sum::<f64>() / (n - 1) as f64
        };
        assert!((c(0, 0, m0, m0) - 1.0).abs() < 0.03);
        assert!((c(1, 1, m1, m1) - 2.0).abs() < 0.06);
        assert!((c(0, 1, m0, m1) - 0.6).abs() < 0.03 * 2f64.sqrt());
    }

    #[test]
    fn rejects_non_finite_current_loglik() {
        let mut r = rng::stream(3, &[]);
        let l = DMatrix::identity(1, 1);
        let err = ess_update(&[0.0], &l, &[0.0], |_| f64::NEG_INFINITY, &mut r).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn impossible_likelihood_stalls() {
        let mut r = rng::stream(4, &[]);
        let l = DMatrix::identity(1, 1);
        let mut calls = 0;
        let res = ess_step(
            &[0.0],
            &l,
            &[0.0],
            0.0,
            &mut |_: &[f64]| {
                calls += 1;
                f64::NEG_INFINITY
            },
            &mut r,
        );
        assert!(matches!(res, Err(Error::EssStall { .. })));
    }
}
