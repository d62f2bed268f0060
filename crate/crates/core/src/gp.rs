//! Zero-mean Gaussian process regression.
//!
//! Hyperparameters are point estimates from the log marginal likelihood with
//! the scale `sigma^2` profiled out (`sigma^2 = y' R^{-1} y / N`); the
//! lengthscales and nugget are optimised in log space by multi-start L-BFGS.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::kernel::{
    build_correlation, cross_correlation, factorize_with_jitter,
    rows_identical, CorrelationMatrix, GpHyperparams, KernelFamily, KernelSpec,
};
use crate::optim::{self, LbfgsOptions};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Variance below this is reported as a numerical problem, not just clamped.
pub const NEGATIVE_VARIANCE_WARN: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl TrainingSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::InvalidParameter("training set is empty".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("training data must be finite".into()));
        }
        Ok(Self { x, y })
    }

    /// One-dimensional inputs, e.g. scaled time.
    pub fn from_1d(t: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(t.len(), 1, t), DVector::from_column_slice(y))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGaussian {
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveGaussian {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Clamps a numerically negative variance at zero. Returns `true` when a
/// clamp happened.
pub(crate) fn clamp_variance(v: &mut f64, what: &str) -> bool {
    if *v < 0.0 {
        if *v < NEGATIVE_VARIANCE_WARN {
            log::warn!("{what}: negative predictive variance {v:e} clamped to 0");
        }
        *v = 0.0;
        true
    } else {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub family: KernelFamily,
    /// Number of optimiser starts (at least one).
    pub starts: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Lengthscale bounds as multiples of each input dimension's range.
    pub lengthscale_bounds: [f64; 2],
    pub nugget_bounds: [f64; 2],
    /// Hold the nugget at this value instead of estimating it.
    pub fixed_nugget: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            starts: 5,
            max_iters: 200,
            seed: 0,
            lengthscale_bounds: [0.01, 10.0],
            nugget_bounds: [1e-8, 10.0],
            fixed_nugget: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let [l0, l1] = self.lengthscale_bounds;
        let [n0, n1] = self.nugget_bounds;
        if self.starts == 0 {
            return Err(Error::Config("fit.starts must be at least 1".into()));
        }
        if !(l0 > 0.0 && l1 > l0 && l1.is_finite()) {
            return Err(Error::Config(format!("bad lengthscale bounds {:?}", self.lengthscale_bounds)));
        }
        if !(n0 > 0.0 && n1 > n0 && n1.is_finite()) {
            return Err(Error::Config(format!("bad nugget bounds {:?}", self.nugget_bounds)));
        }
        if let Some(eta) = self.fixed_nugget {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(Error::Config(format!("bad fixed nugget {eta}")));
            }
        }
        Ok(())
    }
}

/// A GP conditioned on its training data with cached `R^{-1} y`.
#[derive(Debug)]
pub struct FittedGp {
    training: TrainingSet,
    hyper: GpHyperparams,
    corr: CorrelationMatrix,
    alpha: DVector<f64>,
    inverse: OnceLock<DMatrix<f64>>,
    clamp_count: AtomicU64,
}

impl Clone for FittedGp {
    fn clone(&self) -> Self {
        Self {
            training: self.training.clone(),
            hyper: self.hyper.clone(),
            corr: self.corr.clone(),
            alpha: self.alpha.clone(),
            inverse: self.inverse.clone(),
            clamp_count: AtomicU64::new(self.clamp_count.load(Ordering::Relaxed)),
        }
    }
}

impl FittedGp {
    /// Conditions a GP with known hyperparameters on `training`.
    pub fn new(training: TrainingSet, hyper: GpHyperparams) -> Result<Self> {
        hyper.validate()?;
        if training.dims() != hyper.kernel.dims() {
            return Err(Error::DimensionMismatch {
                expected: hyper.kernel.dims(),
                got: training.dims(),
            });
        }
        let corr = build_correlation(&hyper.kernel, hyper.nugget, &training.x)?;
        let alpha = corr.solve(&training.y);
        Ok(Self {
            training,
            hyper,
            corr,
            alpha,
            inverse: OnceLock::new(),
            clamp_count: AtomicU64::new(0),
        })
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn correlation(&self) -> &CorrelationMatrix {
        &self.corr
    }

    /// `R^{-1} y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `R^{-1}`, computed on first use.
    pub fn r_inverse(&self) -> &DMatrix<f64> {
        self.inverse.get_or_init(|| self.corr.inverse())
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count.load(Ordering::Relaxed)
    }

    pub(crate) fn record_clamp(&self) {
        self.clamp_count.fetch_add(1, Ordering::Relaxed);
    }

    /// Posterior predictive mean and variance at `x0`:
    /// `mu = r' R^{-1} y`, `var = sigma^2 (1 + eta - r' R^{-1} r)`.
    pub fn predict(&self, x0: &[f64]) -> Result<PredictiveGaussian> {
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("query point must be finite".into()));
        }
        let r = cross_correlation(&self.hyper.kernel, &self.training.x, x0)?;
        let mean = r.dot(&self.alpha);
        let v = self.corr.solve_lower(&r);
        let mut variance = self.hyper.scale * (1.0 + self.hyper.nugget - v.norm_squared());
        if clamp_variance(&mut variance, "gp predict") {
            self.record_clamp();
        }
        Ok(PredictiveGaussian { mean, variance })
    }

    pub fn log_likelihood(&self) -> f64 {
        gaussian_log_density(&self.corr, &self.training.y, self.hyper.scale)
    }
}

fn gaussian_log_density(corr: &CorrelationMatrix, y: &DVector<f64>, scale: f64) -> f64 {
    let n = y.len() as f64;
    let z = corr.solve_lower(y);
    -0.5 * z.norm_squared() / scale - 0.5 * (corr.ln_det() + n * scale.ln()) - 0.5 * n * LN_2PI
}

/// Zero-mean Gaussian log density of `y` under covariance `sigma^2 R(X)`.
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &DVector<f64>, hyper: &GpHyperparams) -> Result<f64> {
    hyper.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let corr = build_correlation(&hyper.kernel, hyper.nugget, x)?;
    Ok(gaussian_log_density(&corr, y, hyper.scale))
}

/// Pairwise data cached across objective evaluations.
struct ProfileProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    family: KernelFamily,
    /// `(i, j)` for `i > j` identical-row pairs.
    identical: Vec<(usize, usize)>,
    /// Squared per-dimension differences, packed over `i > j` row-major,
    /// one block of `n (n - 1) / 2` per dimension.
    sq: Vec<f64>,
}

impl<'a> ProfileProblem<'a> {
    fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, family: KernelFamily) -> Self {
        let n = x.nrows();
        let d = x.ncols();
        let mut identical = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if rows_identical(x, i, j) {
                    identical.push((i, j));
                }
            }
        }
        let pairs = n * n.saturating_sub(1) / 2;
        let mut sq = Vec::with_capacity(pairs * d);
        for dim in 0..d {
            let col = x.column(dim);
            for i in 0..n {
                for j in 0..i {
                    let t = col[i] - col[j];
                    sq.push(t * t);
                }
            }
        }
        Self {
            x,
            y,
            family,
            identical,
            sq,
        }
    }

    fn pairs(&self) -> usize {
        let n = self.x.nrows();
        n * n.saturating_sub(1) / 2
    }

    /// Correlation matrix with the nugget, both triangles filled, plus the
    /// packed kernel values (nugget excluded).
    fn correlation(&self, ls: &[f64], eta: f64) -> (DMatrix<f64>, Vec<f64>) {
        let n = self.x.nrows();
        let pairs = self.pairs();
        let mut kp = vec![0.0; pairs];
        match self.family {
            KernelFamily::SquaredExponential => {
                for (dim, l) in ls.iter().enumerate() {
                    let w = 1.0 / (l * l);
                    for (s, q) in kp.iter_mut().zip(&self.sq[dim * pairs..(dim + 1) * pairs]) {
                        *s += q * w;
                    }
                }
                for s in kp.iter_mut() {
                    *s = (-*s).exp();
                }
            }
            KernelFamily::Matern52 => {
                kp.iter_mut().for_each(|v| *v = 1.0);
                for (dim, l) in ls.iter().enumerate() {
                    for (v, q) in kp.iter_mut().zip(&self.sq[dim * pairs..(dim + 1) * pairs]) {
                        *v *= self.family.correlation(q.sqrt(), *l);
                    }
                }
            }
        }
        let mut r = DMatrix::<f64>::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            r[(i, i)] = 1.0 + eta;
            for j in 0..i {
                let v = kp[idx];
                r[(i, j)] = v;
                r[(j, i)] = v;
                idx += 1;
            }
        }
        for &(i, j) in &self.identical {
            r[(i, j)] += eta;
            r[(j, i)] += eta;
        }
        (r, kp)
    }

    /// Negative profiled log likelihood and its gradient with respect to
    /// `[ln l_1, ..., ln l_D, ln eta]`. When `nugget` is `Some` the nugget
    /// is held fixed and the gradient has length `D`.
    fn eval(&self, log_params: &[f64], nugget: Option<f64>, grad: Option<&mut [f64]>) -> f64 {
        let d = self.x.ncols();
        let n = self.x.nrows();
        let ls: Vec<f64> = log_params[..d].iter().map(|v| v.exp()).collect();
        let eta = nugget.unwrap_or_else(|| log_params[d].exp());
        if ls.iter().any(|l| !l.is_finite() || *l <= 0.0) || !eta.is_finite() {
            return f64::INFINITY;
        }
        let (r, kp) = self.correlation(&ls, eta);
        let Ok((chol, _)) = factorize_with_jitter(&r) else {
            return f64::INFINITY;
        };
        drop(r);
        let l = chol.l_dirty();
        let mut alpha = self.y.clone();
        dense::solve_spd(l, alpha.as_mut_slice());
        let q = self.y.dot(&alpha);
        if !(q > 0.0) {
            return f64::INFINITY;
        }
        let ln_det: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let nf = n as f64;
        let nll = 0.5 * nf * (q / nf).ln() + 0.5 * ln_det + 0.5 * nf * (1.0 + LN_2PI);

        if let Some(g) = grad {
            let rinv = dense::spd_inverse(l);
            let scale = nf / q;
            let pairs = self.pairs();
            // w_ij = scale a_i a_j - Rinv_ij, packed like `sq`.
            let mut w = Vec::with_capacity(pairs);
            for i in 0..n {
                for j in 0..i {
                    w.push(scale * alpha[i] * alpha[j] - rinv[(i, j)]);
                }
            }
            for (dim, gd) in g.iter_mut().enumerate().take(d) {
                let l_d = ls[dim];
                let sq = &self.sq[dim * pairs..(dim + 1) * pairs];
                let s: f64 = match self.family {
                    // d k / d ln l = k * 2 r^2 / l^2
                    KernelFamily::SquaredExponential => {
                        let inv = 2.0 / (l_d * l_d);
                        sq.iter()
                            .zip(&kp)
                            .zip(&w)
                            .map(|((q, k), w)| w * k * q)
                            .sum::<f64>()
                            * inv
                    }
                    KernelFamily::Matern52 => sq
                        .iter()
                        .zip(&kp)
                        .zip(&w)
                        .filter(|((q, k), _)| **q > 0.0 && **k != 0.0)
                        .map(|((q, k), w)| {
                            let dist = q.sqrt();
                            let kd = self.family.correlation(dist, l_d);
                            w * k * self.family.dcorr_dlog_lengthscale(dist, l_d) / kd
                        })
                        .sum(),
                };
                *gd = -s;
            }
            if nugget.is_none() {
                let mut quad: f64 = alpha.iter().map(|a| a * a).sum();
                let mut tr: f64 = (0..n).map(|i| rinv[(i, i)]).sum();
                for &(i, j) in &self.identical {
                    quad += 2.0 * alpha[i] * alpha[j];
                    tr += 2.0 * rinv[(i, j)];
                }
                g[d] = eta * (-0.5 * scale * quad + 0.5 * tr);
            }
        }
        nll
    }
}

/// Negative profiled log likelihood and gradient in `[ln l.., ln eta]`.
/// Exposed for gradient checks.
pub fn profiled_nll(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: KernelFamily,
    log_params: &[f64],
) -> (f64, Vec<f64>) {
    let problem = ProfileProblem::new(x, y, family);
    let mut g = vec![0.0; log_params.len()];
    let f = problem.eval(log_params, None, Some(&mut g));
    (f, g)
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Box bounds in log space with a smooth sigmoid reparameterisation.
struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn to_log(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (lo, hi))| lo + (hi - lo) * sigmoid(*u))
            .collect()
    }

    fn to_free(&self, log_params: &[f64]) -> Vec<f64> {
        log_params
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| {
                let p = ((v - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
                logit(p)
            })
            .collect()
    }

    fn jacobian(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (lo, hi))| {
                let s = sigmoid(*u);
                (hi - lo) * s * (1.0 - s)
            })
            .collect()
    }
}

fn bounds_for(x: &DMatrix<f64>, config: &FitConfig) -> Bounds {
    let mut lo = Vec::with_capacity(x.ncols() + 1);
    let mut hi = Vec::with_capacity(x.ncols() + 1);
    for d in 0..x.ncols() {
        let col = x.column(d);
        let range = col.max() - col.min();
        let range = if range > 0.0 { range } else { 1.0 };
        lo.push((config.lengthscale_bounds[0] * range).ln());
        hi.push((config.lengthscale_bounds[1] * range).ln());
    }
    if config.fixed_nugget.is_none() {
        lo.push(config.nugget_bounds[0].ln());
        hi.push(config.nugget_bounds[1].ln());
    }
    Bounds { lo, hi }
}

fn check_fit_inputs(x: &DMatrix<f64>, y: &DVector<f64>, config: &FitConfig) -> Result<()> {
    config.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "fitting needs at least 2 points, got {}",
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("training data must be finite".into()));
    }
    let first = y[0];
    if y.iter().all(|v| *v == first) {
        return Err(Error::DegenerateData("output is constant".into()));
    }
    Ok(())
}

struct StartResult {
    log_params: Vec<f64>,
    nll: f64,
}

fn optimise_from(
    problem: &ProfileProblem<'_>,
    bounds: &Bounds,
    start_log: &[f64],
    config: &FitConfig,
    max_iters: usize,
) -> Option<StartResult> {
    let nugget = config.fixed_nugget;
    let u0 = bounds.to_free(start_log);
    let mut log_buf = vec![0.0; u0.len()];
    let res = optim::minimize(
        |u, g| {
            let lp = bounds.to_log(u);
            log_buf.copy_from_slice(&lp);
            let f = problem.eval(&log_buf, nugget, Some(g));
            let jac = bounds.jacobian(u);
            for (gi, ji) in g.iter_mut().zip(jac) {
                *gi *= ji;
            }
            f
        },
        &u0,
        LbfgsOptions {
            max_iters,
            ..Default::default()
        },
    )?;
    Some(StartResult {
        log_params: bounds.to_log(&res.x),
        nll: res.f,
    })
}

fn finish(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &FitConfig,
    log_params: &[f64],
) -> Result<FittedGp> {
    let d = x.ncols();
    let lengthscales: Vec<f64> = log_params[..d].iter().map(|v| v.exp()).collect();
    let nugget = config.fixed_nugget.unwrap_or_else(|| log_params[d].exp());
    let kernel = KernelSpec::new(config.family, lengthscales)?;
    let corr = build_correlation(&kernel, nugget, x)?;
    let alpha = corr.solve(y);
    let scale = y.dot(&alpha) / y.len() as f64;
    let hyper = GpHyperparams::new(kernel, scale, nugget).map_err(|e| Error::FitFailure {
        reason: e.to_string(),
        best: None,
    })?;
    Ok(FittedGp {
        training: TrainingSet {
            x: x.clone(),
            y: y.clone(),
        },
        hyper,
        corr,
        alpha,
        inverse: OnceLock::new(),
        clamp_count: AtomicU64::new(0),
    })
}

/// `y` divided by the power of two at or below its largest magnitude, so
/// that rescaling by a power of two leaves the optimisation path unchanged.
fn binary_normalised(y: &DVector<f64>) -> DVector<f64> {
    let m = y.amax();
    if !(m.is_normal()) {
        return y.clone();
    }
    let e = ((m.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    y * 2f64.powi(-e)
}

/// Maximum-likelihood fit with `config.starts` seeded starts. The best
/// objective wins; ties go to the lowest start index.
pub fn fit_gp(x: &DMatrix<f64>, y: &DVector<f64>, config: &FitConfig) -> Result<FittedGp> {
    check_fit_inputs(x, y, config)?;
    let y_opt = binary_normalised(y);
    let problem = ProfileProblem::new(x, &y_opt, config.family);
    let bounds = bounds_for(x, config);
    let mut rng = rng::stream(config.seed, &[0x6669_7467]);

    let d = x.ncols();
    let mut ranges: Vec<(f64, f64)> = (0..d).map(|k| (bounds.lo[k], bounds.hi[k])).collect();
    if config.fixed_nugget.is_none() {
        let lo = bounds.lo[d].max(1e-4f64.ln());
        ranges.push((lo, bounds.hi[d].min(1e-1f64.ln()).max(lo + 1e-9)));
    }
    let starts = stratified_starts(&ranges, config.starts, &mut rng);
    let mut best: Option<StartResult> = None;
    for start in &starts {
        if let Some(res) = optimise_from(&problem, &bounds, start, config, config.max_iters) {
            if best.as_ref().is_none_or(|b| res.nll < b.nll) {
                best = Some(res);
            }
        }
    }
    let best = best.ok_or_else(|| Error::FitFailure {
        reason: "objective non-finite at every start".into(),
        best: None,
    })?;
    finish(x, y, config, &best.log_params).map_err(|e| match e {
        Error::FitFailure { .. } => e,
        other => Error::FitFailure {
            reason: other.to_string(),
            best: None,
        },
    })
}

/// Latin-hypercube starts: each coordinate's range is cut into `n` strata
/// and every stratum is used once, in a random order per coordinate.
fn stratified_starts<R: Rng + ?Sized>(ranges: &[(f64, f64)], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut starts = vec![Vec::with_capacity(ranges.len()); n];
    for &(lo, hi) in ranges {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (start, k) in starts.iter_mut().zip(strata) {
            let u: f64 = rng.random();
            start.push(lo + (k as f64 + u) / n as f64 * (hi - lo));
        }
    }
    starts
}

/// Single-start refit initialised at `init` (used by the SEM M-step).
pub fn refit_gp(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    init: &GpHyperparams,
    config: &FitConfig,
    max_iters: usize,
) -> Result<FittedGp> {
    check_fit_inputs(x, y, config)?;
    if init.kernel.dims() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: init.kernel.dims(),
        });
    }
    let y_opt = binary_normalised(y);
    let problem = ProfileProblem::new(x, &y_opt, config.family);
    let bounds = bounds_for(x, config);
    let mut start: Vec<f64> = init.kernel.lengthscales.iter().map(|l| l.ln()).collect();
    if config.fixed_nugget.is_none() {
        start.push(init.nugget.max(config.nugget_bounds[0]).ln());
    }
    let res = optimise_from(&problem, &bounds, &start, config, max_iters).ok_or_else(|| {
        Error::FitFailure {
            reason: "objective non-finite at warm start".into(),
            best: Some(Box::new(init.clone())),
        }
    })?;
    finish(x, y, config, &res.log_params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn se_hyper(l: f64, scale: f64, eta: f64) -> GpHyperparams {
        GpHyperparams::new(KernelSpec::squared_exponential(vec![l]).unwrap(), scale, eta).unwrap()
    }

    #[test]
    fn single_point_hand_evaluation() {
        let gp = FittedGp::new(TrainingSet::from_1d(&[0.0], &[2.0]).unwrap(), se_hyper(1.0, 1.0, 0.0)).unwrap();
        let p = gp.predict(&[0.0]).unwrap();
        assert!((p.mean - 2.0).abs() < 1e-12);
        assert!(p.variance.abs() < 1e-12);
        let r = 0.7f64;
        let k = (-r * r).exp();
        let p = gp.predict(&[r]).unwrap();
        assert!((p.mean - 2.0 * k).abs() < 1e-12);
        assert!((p.variance - (1.0 - k * k)).abs() < 1e-12);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let gp = FittedGp::new(
            TrainingSet::from_1d(&[0.0, 0.3, 0.5], &[1.0, -0.5, 0.2]).unwrap(),
            se_hyper(0.2, 1.7, 0.01),
        )
        .unwrap();
        let p = gp.predict(&[100.0]).unwrap();
        assert!(p.mean.abs() < 1e-12);
        assert!((p.variance - 1.7 * 1.01).abs() < 1e-12);
    }

    #[test]
    fn interpolates_training_points_with_tiny_nugget() {
        let t = [0.0, 0.2, 0.45, 0.7, 1.0];
        let y = [0.3, -1.0, 0.5, 1.2, -0.4];
        let gp = FittedGp::new(TrainingSet::from_1d(&t, &y).unwrap(), se_hyper(0.3, 1.0, 1e-8)).unwrap();
        for (ti, yi) in t.iter().zip(&y) {
            let p = gp.predict(&[*ti]).unwrap();
            assert!((p.mean - yi).abs() < 1e-6);
            assert!(p.variance < 1e-6);
        }
    }

    #[test]
    fn lml_single_point() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let y = DVector::from_vec(vec![0.0]);
        let v = log_marginal_likelihood(&x, &y, &se_hyper(1.0, 1.0, 0.0)).unwrap();
        assert!((v + 0.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn lml_matches_dense_evaluation() {
        let t = [0.0, 0.15, 0.4, 0.8];
        let y = DVector::from_vec(vec![0.5, -0.2, 1.1, 0.3]);
        let x = DMatrix::from_column_slice(4, 1, &t);
        let h = se_hyper(0.35, 1.3, 0.02);
        let got = log_marginal_likelihood(&x, &y, &h).unwrap();
        // dense oracle: explicit covariance, determinant and inverse
        let mut cov = DMatrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let d = (t[i] - t[j]) / 0.35;
                cov[(i, j)] = 1.3 * ((-d * d).exp() + if i == j { 0.02 } else { 0.0 });
            }
        }
        let det = cov.determinant();
        let inv = cov.clone().try_inverse().unwrap();
        let quad = (y.transpose() * inv * &y)[(0, 0)];
        let dense = -0.5 * quad - 0.5 * det.ln() - 2.0 * LN_2PI;
        assert!((got - dense).abs() < 1e-8);

        // doubling the scale: delta = -N/2 ln 2 + quad / (2 * 2 sigma^2)... in terms of
        // the sigma-free quadratic q = y' R^{-1} y: delta = -N/2 ln2 + q / (4 sigma^2)
        let h2 = GpHyperparams { scale: 2.6, ..h.clone() };
        let got2 = log_marginal_likelihood(&x, &y, &h2).unwrap();
        let q = quad * 1.3;
        assert!(((got2 - got) - (-2.0 * 2f64.ln() + q / (4.0 * 1.3))).abs() < 1e-8);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let t: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let y: Vec<f64> = t.iter().map(|v| (6.0 * v).sin() + 0.1 * (17.0 * v).cos()).collect();
        let x = DMatrix::from_column_slice(12, 1, &t);
        let yv = DVector::from_vec(y);
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let p = [(0.25f64).ln(), (0.01f64).ln()];
            let (_, g) = profiled_nll(&x, &yv, family, &p);
            for k in 0..2 {
                let h = 1e-5;
                let mut pp = p;
                pp[k] += h;
                let mut pm = p;
                pm[k] -= h;
                let fd = (profiled_nll(&x, &yv, family, &pp).0 - profiled_nll(&x, &yv, family, &pm).0) / (2.0 * h);
                let rel = (g[k] - fd).abs() / fd.abs().max(1e-3);
                assert!(rel < 1e-5, "{family:?} param {k}: analytic {} fd {}", g[k], fd);
            }
        }
    }

    #[test]
    fn gradient_check_two_dims() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 1.0, 0.2, 0.1, 0.5, -0.3, 0.9, 0.4, 0.3, 0.3, 0.7, -1.0]);
        let y = DVector::from_vec(vec![0.4, -0.1, 0.9, 0.2, -0.6, 0.3]);
        let p = [(0.5f64).ln(), (0.8f64).ln(), (0.05f64).ln()];
        let (_, g) = profiled_nll(&x, &y, KernelFamily::SquaredExponential, &p);
        for k in 0..3 {
            let h = 1e-5;
            let mut pp = p;
            pp[k] += h;
            let mut pm = p;
            pm[k] -= h;
            let fd = (profiled_nll(&x, &y, KernelFamily::SquaredExponential, &pp).0
                - profiled_nll(&x, &y, KernelFamily::SquaredExponential, &pm).0)
                / (2.0 * h);
            assert!((g[k] - fd).abs() / fd.abs().max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn constant_output_is_degenerate() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        assert!(matches!(fit_gp(&x, &y, &FitConfig::default()), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn two_point_fit_predicts_training_points() {
        let x = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let y = DVector::from_vec(vec![-1.0, 1.0]);
        let gp = fit_gp(&x, &y, &FitConfig::default()).unwrap();
        for i in 0..2 {
            let p = gp.predict(&[x[(i, 0)]]).unwrap();
            assert!((p.mean - y[i]).abs() < 0.1 * (1.0 + 3.0 * p.sd()), "{p:?}");
        }
    }

    #[test]
    fn power_of_two_rescale_scales_sigma_only() {
        let t: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        let y: Vec<f64> = t.iter().map(|v| (5.0 * v).sin() + 0.05 * (23.0 * v).sin()).collect();
        let x = DMatrix::from_column_slice(25, 1, &t);
        let y1 = DVector::from_vec(y);
        let y4 = &y1 * 4.0;
        let cfg = FitConfig { seed: 3, ..Default::default() };
        let a = fit_gp(&x, &y1, &cfg).unwrap();
        let b = fit_gp(&x, &y4, &cfg).unwrap();
        assert_eq!(a.hyper().kernel.lengthscales, b.hyper().kernel.lengthscales);
        assert_eq!(a.hyper().nugget, b.hyper().nugget);
        assert!((b.hyper().scale / a.hyper().scale - 16.0).abs() < 1e-12);
    }

    #[test]
    fn fit_is_deterministic() {
        let t: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
        let y: Vec<f64> = t.iter().map(|v| (4.0 * v).cos()).collect();
        let x = DMatrix::from_column_slice(15, 1, &t);
        let y = DVector::from_vec(y);
        let cfg = FitConfig { seed: 11, ..Default::default() };
        let a = fit_gp(&x, &y, &cfg).unwrap();
        let b = fit_gp(&x, &y, &cfg).unwrap();
        assert_eq!(a.hyper(), b.hyper());
    }

    proptest! {
        #[test]
        fn posterior_variance_bounded_by_prior(
            pts in prop::collection::vec(0.0..1.0f64, 1..15),
            ys in prop::collection::vec(-2.0..2.0f64, 15),
            l in 0.05..1.0f64,
            eta in 1e-6..0.3f64,
            q in -0.5..1.5f64,
        ) {
            let n = pts.len();
            let gp = FittedGp::new(TrainingSet::from_1d(&pts, &ys[..n]).unwrap(), se_hyper(l, 1.4, eta)).unwrap();
            let p = gp.predict(&[q]).unwrap();
            prop_assert!(p.variance <= 1.4 * (1.0 + eta) + 1e-12);
        }

        #[test]
        fn adding_a_point_never_increases_variance(
            pts in prop::collection::vec(0.0..1.0f64, 2..12),
            extra in 0.0..1.0f64,
            q in 0.0..1.0f64,
            l in 0.05..1.0f64,
        ) {
            let n = pts.len();
            let ys = vec![0.0; n + 1];
            let h = se_hyper(l, 1.0, 1e-3);
            let a = FittedGp::new(TrainingSet::from_1d(&pts, &ys[..n]).unwrap(), h.clone()).unwrap();
            let mut more = pts.clone();
            more.push(extra);
            let b = FittedGp::new(TrainingSet::from_1d(&more, &ys).unwrap(), h).unwrap();
            prop_assert!(b.predict(&[q]).unwrap().variance <= a.predict(&[q]).unwrap().variance + 1e-8);
        }

        #[test]
        fn predictive_mean_linear_in_y(
            pts in prop::collection::vec(0.0..1.0f64, 2..10),
            y1 in prop::collection::vec(-2.0..2.0f64, 10),
            y2 in prop::collection::vec(-2.0..2.0f64, 10),
            q in 0.0..1.0f64,
        ) {
            let n = pts.len();
            let h = se_hyper(0.3, 1.0, 1e-2);
            let sum: Vec<f64> = y1[..n].iter().zip(&y2[..n]).map(|(a, b)| a + b).collect();
            let g1 = FittedGp::new(TrainingSet::from_1d(&pts, &y1[..n]).unwrap(), h.clone()).unwrap();
            let g2 = FittedGp::new(TrainingSet::from_1d(&pts, &y2[..n]).unwrap(), h.clone()).unwrap();
            let gs = FittedGp::new(TrainingSet::from_1d(&pts, &sum).unwrap(), h).unwrap();
            let lhs = gs.predict(&[q]).unwrap().mean;
            let rhs = g1.predict(&[q]).unwrap().mean + g2.predict(&[q]).unwrap().mean;
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }
    }
}
