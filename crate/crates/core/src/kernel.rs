//! Stationary product kernels and correlation matrices.
//!
//! Squared exponential convention: `k(r) = exp(-r^2 / l^2)`. The closed-form
//! expectations [`expect_k`] and [`expect_kk`] are derived for exactly this
//! convention; changing one without the other silently breaks the linked GP.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Jitter ladder tried when a correlation matrix fails to factorize.
pub const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    /// Matérn with smoothness 5/2. Single-GP use only: the linked GP has
    /// no closed-form expectations for it here.
    Matern52,
}

impl KernelFamily {
    /// One-dimensional correlation at distance `r >= 0`.
    #[inline]
    pub fn correlation(self, r: f64, lengthscale: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => {
                let s = r / lengthscale;
                (-s * s).exp()
            }
            KernelFamily::Matern52 => {
                let s = SQRT5 * r / lengthscale;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    /// Derivative of the 1-D correlation with respect to `ln(lengthscale)`.
    #[inline]
    pub(crate) fn dcorr_dlog_lengthscale(self, r: f64, lengthscale: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => {
                let s2 = (r / lengthscale).powi(2);
                2.0 * s2 * (-s2).exp()
            }
            KernelFamily::Matern52 => {
                let s = SQRT5 * r / lengthscale;
                s * s / 3.0 * (1.0 + s) * (-s).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscales: Vec<f64>) -> Result<Self> {
        let spec = Self {
            family,
            lengthscales,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn squared_exponential(lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, lengthscales)
    }

    pub fn dims(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidParameter("kernel needs at least one lengthscale".into()));
        }
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive and finite, got {l}"
            )));
        }
        Ok(())
    }
}

/// Hyperparameters of one GP node: kernel, scale `sigma^2` and nugget `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub kernel: KernelSpec,
    pub scale: f64,
    pub nugget: f64,
}

impl GpHyperparams {
    pub fn new(kernel: KernelSpec, scale: f64, nugget: f64) -> Result<Self> {
        let h = Self {
            kernel,
            scale,
            nugget,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nugget must be non-negative and finite, got {}",
                self.nugget
            )));
        }
        Ok(())
    }
}

/// Product-form kernel value `prod_d k_d(|a_d - b_d|)`.
pub fn kernel_value(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    let d = spec.dims();
    if a.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.len(),
        });
    }
    if b.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.len(),
        });
    }
    Ok(kernel_value_unchecked(spec, a, b))
}

#[inline]
pub(crate) fn kernel_value_unchecked(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match spec.family {
        KernelFamily::SquaredExponential => {
            let mut s = 0.0;
            for ((x, y), l) in a.iter().zip(b).zip(&spec.lengthscales) {
                let t = (x - y) / l;
                s += t * t;
            }
            (-s).exp()
        }
        KernelFamily::Matern52 => a
            .iter()
            .zip(b)
            .zip(&spec.lengthscales)
            .map(|((x, y), l)| spec.family.correlation((x - y).abs(), *l))
            .product(),
    }
}

pub(crate) fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

pub(crate) fn rows_identical(x: &DMatrix<f64>, i: usize, j: usize) -> bool {
    (0..x.ncols()).all(|d| x[(i, d)] == x[(j, d)])
}

/// Kernel vector between every row of `x` and the point `x0`.
pub fn cross_correlation(spec: &KernelSpec, x: &DMatrix<f64>, x0: &[f64]) -> Result<DVector<f64>> {
    if x.ncols() != spec.dims() {
        return Err(Error::DimensionMismatch {
            expected: spec.dims(),
            got: x.ncols(),
        });
    }
    if x0.len() != spec.dims() {
        return Err(Error::DimensionMismatch {
            expected: spec.dims(),
            got: x0.len(),
        });
    }
    let mut buf = vec![0.0; x.ncols()];
    Ok(DVector::from_fn(x.nrows(), |i, _| {
        for (d, b) in buf.iter_mut().enumerate() {
            *b = x[(i, d)];
        }
        kernel_value_unchecked(spec, &buf, x0)
    }))
}

/// Correlation matrix `R(X)` with its Cholesky factor.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    values: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    jitter_applied: f64,
}

impl CorrelationMatrix {
    /// Wraps an already assembled symmetric matrix, applying the jitter
    /// ladder if needed.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let (factor, jitter_applied) = factorize_with_jitter(&values)?;
        Ok(Self {
            values,
            factor,
            jitter_applied,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.factor
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// `ln det` of the factorized (possibly jittered) matrix.
    pub fn ln_det(&self) -> f64 {
        let l = self.factor.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        dense::solve_spd(self.factor.l_dirty(), out.as_mut_slice());
        out
    }

    /// `L^{-1} b` for the lower factor `L`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        dense::solve_lower(self.factor.l_dirty(), out.as_mut_slice());
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        dense::spd_inverse(self.factor.l_dirty())
    }
}

/// Cholesky with the escalating jitter policy: plain first, then
/// `1e-10, 1e-9, ..., 1e-4` added to the diagonal.
pub fn factorize_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut a = m.clone();
    if dense::cholesky_in_place(&mut a) {
        return Ok((Cholesky::pack_dirty(a), 0.0));
    }
    for &j in &JITTER_LADDER {
        a.copy_from(m);
        for i in 0..a.nrows() {
            a[(i, i)] += j;
        }
        if dense::cholesky_in_place(&mut a) {
            return Ok((Cholesky::pack_dirty(a), j));
        }
    }
    Err(Error::SingularMatrix {
        jitter: *JITTER_LADDER.last().unwrap(),
    })
}

/// Kernel matrix over the rows of `x` without any nugget.
pub(crate) fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = kernel_value_unchecked(spec, &rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Adds `nugget` to every pair of identical rows (including the diagonal).
pub(crate) fn add_indicator_nugget(k: &mut DMatrix<f64>, x: &DMatrix<f64>, nugget: f64) {
    let n = x.nrows();
    for i in 0..n {
        k[(i, i)] += nugget;
        for j in 0..i {
            if rows_identical(x, i, j) {
                k[(i, j)] += nugget;
                k[(j, i)] += nugget;
            }
        }
    }
}

/// `R(X)`: kernel plus `eta * 1{X_i = X_j}`, factorized.
pub fn build_correlation(spec: &KernelSpec, nugget: f64, x: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    spec.validate()?;
    if x.nrows() == 0 {
        return Err(Error::InvalidParameter("correlation needs at least one row".into()));
    }
    if x.ncols() != spec.dims() {
        return Err(Error::DimensionMismatch {
            expected: spec.dims(),
            got: x.ncols(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("input rows must be finite".into()));
    }
    if !(nugget.is_finite() && nugget >= 0.0) {
        return Err(Error::InvalidParameter(format!("nugget {nugget} is invalid")));
    }
    let mut k = kernel_matrix(spec, x);
    add_indicator_nugget(&mut k, x, nugget);
    CorrelationMatrix::from_matrix(k)
}

fn require_se(family: KernelFamily) -> Result<()> {
    match family {
        KernelFamily::SquaredExponential => Ok(()),
        KernelFamily::Matern52 => Err(Error::NotImplemented(
            "kernel expectations for the Matérn-5/2 family",
        )),
    }
}

fn check_moments(mean: f64, var: f64) -> Result<()> {
    if !mean.is_finite() || !(var.is_finite() && var >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Gaussian input needs finite mean and non-negative variance, got ({mean}, {var})"
        )));
    }
    Ok(())
}

/// `E[k(W, w)]` for `W ~ N(mean, var)` under the 1-D SE kernel:
///
/// `(1 + 2v/l^2)^(-1/2) * exp(-(m - w)^2 / (l^2 + 2v))`.
pub fn expect_k(family: KernelFamily, lengthscale: f64, mean: f64, var: f64, w: f64) -> Result<f64> {
    require_se(family)?;
    check_moments(mean, var)?;
    Ok(se_expect_k(lengthscale, mean, var, w))
}

#[inline]
pub(crate) fn se_expect_k(l: f64, m: f64, v: f64, w: f64) -> f64 {
    let l2 = l * l;
    let d = m - w;
    (-d * d / (l2 + 2.0 * v)).exp() / (1.0 + 2.0 * v / l2).sqrt()
}

/// `E[k(W, w_i) k(W, w_j)]` for `W ~ N(mean, var)` under the 1-D SE kernel:
///
/// `(1 + 4v/l^2)^(-1/2) * exp(-(w_i - w_j)^2 / (2 l^2)) * exp(-2 (m - wbar)^2 / (l^2 + 4v))`
/// with `wbar = (w_i + w_j) / 2`.
pub fn expect_kk(
    family: KernelFamily,
    lengthscale: f64,
    mean: f64,
    var: f64,
    w_i: f64,
    w_j: f64,
) -> Result<f64> {
    require_se(family)?;
    check_moments(mean, var)?;
    Ok(se_expect_kk(lengthscale, mean, var, w_i, w_j))
}

#[inline]
pub(crate) fn se_expect_kk(l: f64, m: f64, v: f64, wi: f64, wj: f64) -> f64 {
    let l2 = l * l;
    let diff = wi - wj;
    let c = m - 0.5 * (wi + wj);
    let expo = -diff * diff / (2.0 * l2) - 2.0 * c * c / (l2 + 4.0 * v);
    expo.exp() / (1.0 + 4.0 * v / l2).sqrt()
}
