//! Reference imputation methods: last observation carried forward,
//! chained-equation imputation with Bayesian linear models, and
//! independent per-variable GP interpolation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitConfig};
use crate::pipeline::ObservationTable;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Locf,
    Mice,
    Gp,
    Lgp,
    DgpSi,
}

impl MethodTag {
    pub const ALL: [MethodTag; 5] = [
        MethodTag::Locf,
        MethodTag::Mice,
        MethodTag::Gp,
        MethodTag::Lgp,
        MethodTag::DgpSi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodTag::Locf => "locf",
            MethodTag::Mice => "mice",
            MethodTag::Gp => "gp",
            MethodTag::Lgp => "lgp",
            MethodTag::DgpSi => "dgp_si",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Output of an imputation method on one table.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationMethodResult {
    pub filled: ObservationTable,
    /// Per column, the predictive variance at imputed cells. `None` for
    /// methods without uncertainty.
    pub variance: Option<Vec<Vec<Option<f64>>>>,
    pub method: MethodTag,
    /// Free-form records such as fallbacks taken.
    pub notes: Vec<String>,
}

/// Fills the missing cells of `variable` with the most recent observed
/// value; a leading gap takes the first observed value.
pub fn locf_impute(table: &ObservationTable, variable: &str) -> Result<ImputationMethodResult> {
    let idx = table.column_index(variable)?;
    let mut filled = table.clone();
    let values = &mut filled.columns[idx].values;
    let first = values
        .iter()
        .flatten()
        .copied()
        .next()
        .ok_or_else(|| Error::EmptyColumn(variable.to_string()))?;
    let mut last = first;
    for v in values.iter_mut() {
        match v {
            Some(x) => last = *x,
            None => *v = Some(last),
        }
    }
    Ok(ImputationMethodResult {
        filled,
        variance: None,
        method: MethodTag::Locf,
        notes: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiceConfig {
    /// Number of imputed tables averaged for the point estimate.
    pub m: usize,
    pub cycles: usize,
    pub seed: u64,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self {
            m: 5,
            cycles: 10,
            seed: 0,
        }
    }
}

/// Draws `(beta, sigma)` from the normal-model posterior of a linear
/// regression of `y` on `x` (with `x` holding an intercept column).
/// Returns `true` in the third slot if a ridge term was needed.
fn draw_regression<R: Rng + ?Sized>(x: &DMatrix<f64>, y: &DVector<f64>, rng: &mut R) -> (DVector<f64>, f64, bool) {
    let k = x.ncols();
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(y);
    let scale = (xtx.trace() / k as f64).max(1e-300);
    let mut ridged = false;
    let mut factor = None;
    // reject near-singular Gram matrices by their smallest pivot
    if let Some(c) = xtx.clone().cholesky() {
        let min_pivot = c.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if min_pivot > 1e-10 * scale {
            factor = Some(c);
        }
    }
    let chol = match factor {
        Some(c) => c,
        None => {
            ridged = true;
            let mut a = xtx.clone();
            for i in 0..k {
                a[(i, i)] += 1e-5 * scale;
            }
            a.cholesky().expect("ridge-regularised Gram matrix is positive definite")
        }
    };
    let beta_hat = chol.solve(&xty);
    let resid = y - x * &beta_hat;
    let df = (y.len() as f64 - k as f64).max(1.0);
    let rss = resid.norm_squared().max(1e-12 * y.len() as f64);
    let chi: f64 = ChiSquared::new(df).expect("positive degrees of freedom").sample(rng);
    let sigma = (rss / chi).sqrt();
    // beta* = beta_hat + sigma * L^{-T} z, so cov(beta*) = sigma^2 (X'X)^{-1}
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("triangular factor has a nonzero diagonal");
    (beta_hat + u * sigma, sigma, ridged)
}

/// Chained-equation imputation of every missing cell in `table`, with time
/// as an extra fully observed predictor.
pub fn mice_impute(table: &ObservationTable, config: &MiceConfig) -> Result<ImputationMethodResult> {
    if config.m == 0 {
        return Err(Error::Config("mice.m must be at least 1".into()));
    }
    let n = table.n_rows();
    let c = table.columns.len();
    if c == 0 {
        return Err(Error::InvalidParameter("chained equations need at least one variable".into()));
    }
    for col in &table.columns {
        if col.observed_count() < 3 {
            return Err(Error::InvalidParameter(format!(
                "column {} has {} observed values, need 3",
                col.name,
                col.observed_count()
            )));
        }
    }
    let missing: Vec<Vec<usize>> = table
        .columns
        .iter()
        .map(|col| (0..n).filter(|&i| col.values[i].is_none()).collect())
        .collect();
    if missing.iter().all(Vec::is_empty) {
        return Ok(ImputationMethodResult {
            filled: table.clone(),
            variance: Some(vec![vec![None; n]; c]),
            method: MethodTag::Mice,
            notes: vec!["no missing cells; 0 cycles run".into()],
        });
    }

    let mut draws: Vec<Vec<Vec<f64>>> = Vec::with_capacity(config.m);
    let mut ridge_count = 0usize;
    for j in 0..config.m {
        let mut rng = rng::stream(config.seed, &[0x6d69_6365, j as u64]);
        // data[0] is time, data[1 + c] the table columns
        let mut data: Vec<Vec<f64>> = vec![table.times.clone()];
        for col in &table.columns {
            let obs: Vec<f64> = col.values.iter().flatten().copied().collect();
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            data.push(col.values.iter().map(|v| v.unwrap_or(mean)).collect());
        }
        for _ in 0..config.cycles {
            for (ci, miss) in missing.iter().enumerate() {
                if miss.is_empty() {
                    continue;
                }
                let target = ci + 1;
                let predictors: Vec<usize> = (0..data.len()).filter(|&k| k != target).collect();
                let design = |rows: &[usize]| {
                    DMatrix::from_fn(rows.len(), predictors.len() + 1, |r, k| {
                        if k == 0 {
                            1.0
                        } else {
                            data[predictors[k - 1]][rows[r]]
                        }
                    })
                };
                let obs = table.columns[ci].observed_rows();
                let x_obs = design(&obs);
                let y_obs = DVector::from_iterator(obs.len(), obs.iter().map(|&i| data[target][i]));
                let (beta, sigma, ridged) = draw_regression(&x_obs, &y_obs, &mut rng);
                ridge_count += ridged as usize;
                let x_mis = design(miss);
                let pred = x_mis * beta;
                for (r, &i) in miss.iter().enumerate() {
                    let eps: f64 = rng.sample(StandardNormal);
                    data[target][i] = pred[r] + sigma * eps;
                }
            }
        }
        draws.push(data.split_off(1));
    }

    let mut filled = table.clone();
    let mut variance = vec![vec![None; n]; c];
    let m = config.m as f64;
    for (ci, miss) in missing.iter().enumerate() {
        for &i in miss {
            let vals: Vec<f64> = draws.iter().map(|d| d[ci][i]).collect();
            let mean = vals.iter().sum::<f64>() / m;
            let var = if config.m > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            filled.columns[ci].values[i] = Some(mean);
            variance[ci][i] = Some(var);
        }
    }
    let mut notes = vec![format!("m={} cycles={}", config.m, config.cycles)];
    if ridge_count > 0 {
        notes.push(format!("ridge fallback used in {ridge_count} regressions"));
    }
    Ok(ImputationMethodResult {
        filled,
        variance: Some(variance),
        method: MethodTag::Mice,
        notes,
    })
}

/// GP interpolation over time of one column's observed values.
pub fn independent_gp_impute(table: &ObservationTable, variable: &str, fit: &FitConfig) -> Result<ImputationMethodResult> {
    let idx = table.column_index(variable)?;
    let col = &table.columns[idx];
    let obs = col.observed_rows();
    if obs.is_empty() {
        return Err(Error::EmptyColumn(variable.to_string()));
    }
    let n = table.n_rows();
    let mut filled = table.clone();
    let mut variance = vec![vec![None; n]; table.columns.len()];
    if obs.len() < n {
        let x = DMatrix::from_iterator(obs.len(), 1, obs.iter().map(|&i| table.times[i]));
        let y = DVector::from_iterator(obs.len(), obs.iter().map(|&i| col.values[i].unwrap()));
        let gp = fit_gp(&x, &y, fit)?;
        for i in (0..n).filter(|&i| col.values[i].is_none()) {
            let p = gp.predict(&[table.times[i]])?;
            filled.columns[idx].values[i] = Some(p.mean);
            variance[idx][i] = Some(p.variance);
        }
    }
    Ok(ImputationMethodResult {
        filled,
        variance: Some(variance),
        method: MethodTag::Gp,
        notes: Vec::new(),
    })
}
