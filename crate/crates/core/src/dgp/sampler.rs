//! Latent-layer imputation by elliptical slice sampling.
//!
//! For each latent column the prior over its missing entries is the
//! first-layer GP `N(0, sigma_p^2 R_p)` conditioned on the column's
//! observed entries. The likelihood is the output-layer GP density of `y`
//! given the full latent matrix. Observed entries are never touched.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use super::ess::ess_step;
use crate::dense;
use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitConfig};
use crate::kernel::{add_indicator_nugget, factorize_with_jitter, kernel_matrix, GpHyperparams, KernelFamily};
use crate::linked::LayerArchitecture;
use crate::pipeline::ObservationTable;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Training data for a two-layer DGP: inputs, partially observed latent
/// columns, and a complete output.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpData {
    pub inputs: DMatrix<f64>,
    pub latents: Vec<Vec<Option<f64>>>,
    pub output: DVector<f64>,
}

impl DgpData {
    pub fn new(inputs: DMatrix<f64>, latents: Vec<Vec<Option<f64>>>, output: DVector<f64>) -> Result<Self> {
        let n = inputs.nrows();
        if output.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: output.len(),
            });
        }
        if latents.is_empty() {
            return Err(Error::InvalidParameter("DGP data needs at least one latent column".into()));
        }
        if let Some(c) = latents.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.len(),
            });
        }
        if inputs.iter().chain(output.iter()).any(|v| !v.is_finite())
            || latents.iter().flatten().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter("DGP data must be finite".into()));
        }
        Ok(Self {
            inputs,
            latents,
            output,
        })
    }

    /// Rows of `table` where the output is observed, with time as the only
    /// input. Returns the data and the table row of each data row.
    pub fn from_table(table: &ObservationTable, arch: &LayerArchitecture) -> Result<(Self, Vec<usize>)> {
        if arch.input_dims != 1 {
            return Err(Error::InvalidParameter("tables provide a single time input".into()));
        }
        let out = table
            .column(&arch.output_node.name)
            .ok_or_else(|| Error::Schema(arch.output_node.name.clone()))?;
        let rows: Vec<usize> = (0..table.n_rows()).filter(|&i| out.values[i].is_some()).collect();
        let inputs = DMatrix::from_iterator(rows.len(), 1, rows.iter().map(|&i| table.times[i]));
        let output = DVector::from_iterator(rows.len(), rows.iter().map(|&i| out.values[i].unwrap()));
        let latents = arch
            .latent_nodes
            .iter()
            .map(|node| {
                let col = table
                    .column(&node.name)
                    .ok_or_else(|| Error::Schema(node.name.clone()))?;
                Ok(rows.iter().map(|&i| col.values[i]).collect())
            })
            .collect::<Result<Vec<Vec<Option<f64>>>>>()?;
        Ok((Self::new(inputs, latents, output)?, rows))
    }

    pub fn n_rows(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn n_latents(&self) -> usize {
        self.latents.len()
    }

    pub fn missing_rows(&self, p: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.latents[p][i].is_none()).collect()
    }

    pub fn observed_rows(&self, p: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.latents[p][i].is_some()).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.latents.iter().flatten().filter(|v| v.is_none()).count()
    }
}

/// One complete draw of the latent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerImputation {
    /// `N x P`, row-major per data row.
    pub values: DMatrix<f64>,
    /// `true` where the entry is observed data.
    pub fixed_mask: DMatrix<bool>,
    pub draw_index: usize,
}

/// Initial fill of missing latent entries by per-column GP interpolation.
/// Also returns the per-column fits, which seed the first-layer
/// hyperparameters. `fits` holds one config per latent column.
pub(crate) fn initial_fill(
    data: &DgpData,
    arch: &LayerArchitecture,
    fits: &[FitConfig],
) -> Result<(Vec<Vec<f64>>, Vec<GpHyperparams>)> {
    let mut values = Vec::with_capacity(data.n_latents());
    let mut hyper = Vec::with_capacity(data.n_latents());
    for (p, node) in arch.latent_nodes.iter().enumerate() {
        let obs = data.observed_rows(p);
        if obs.len() < 2 {
            return Err(Error::Sem {
                iteration: 0,
                node: node.name.clone(),
                source: Box::new(Error::InvalidParameter(format!(
                    "latent has {} observed entries, need 2",
                    obs.len()
                ))),
            });
        }
        let x = data.inputs.select_rows(&obs);
        let y = DVector::from_iterator(obs.len(), obs.iter().map(|&i| data.latents[p][i].unwrap()));
        let gp = fit_gp(&x, &y, &fits[p]).map_err(|e| Error::Sem {
            iteration: 0,
            node: node.name.clone(),
            source: Box::new(e),
        })?;
        let mut col = Vec::with_capacity(data.n_rows());
        for i in 0..data.n_rows() {
            col.push(match data.latents[p][i] {
                Some(v) => v,
                None => {
                    let x0: Vec<f64> = data.inputs.row(i).iter().copied().collect();
                    gp.predict(&x0)?.mean
                }
            });
        }
        values.push(col);
        hyper.push(gp.hyper().clone());
    }
    Ok((values, hyper))
}

struct ColumnPrior {
    missing: Vec<usize>,
    mean: Vec<f64>,
    factor: DMatrix<f64>,
}

/// Gaussian over the missing entries of one column given its observed
/// entries, under `N(0, scale * R)`.
fn column_prior(inputs: &DMatrix<f64>, column: &[Option<f64>], hyper: &GpHyperparams) -> Result<ColumnPrior> {
    let missing: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_none()).collect();
    let observed: Vec<usize> = (0..column.len()).filter(|&i| column[i].is_some()).collect();
    if missing.is_empty() {
        return Ok(ColumnPrior {
            missing,
            mean: Vec::new(),
            factor: DMatrix::zeros(0, 0),
        });
    }
    let mut r = kernel_matrix(&hyper.kernel, inputs);
    add_indicator_nugget(&mut r, inputs, hyper.nugget);
    let r_mm = r.select_rows(&missing).select_columns(&missing);
    let (cond, mean) = if observed.is_empty() {
        (r_mm, vec![0.0; missing.len()])
    } else {
        let r_oo = r.select_rows(&observed).select_columns(&observed);
        let r_om = r.select_rows(&observed).select_columns(&missing);
        let (chol, _) = factorize_with_jitter(&r_oo)?;
        let l = chol.l();
        let b = l
            .solve_lower_triangular(&r_om)
            .ok_or(Error::SingularMatrix { jitter: 0.0 })?;
        let w_o = DVector::from_iterator(observed.len(), observed.iter().map(|&i| column[i].unwrap()));
        let z = l
            .solve_lower_triangular(&w_o)
            .ok_or(Error::SingularMatrix { jitter: 0.0 })?;
        let mean = b.tr_mul(&z);
        let mut cond = r_mm - b.tr_mul(&b);
        // symmetrise against round-off
        let m = cond.nrows();
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (cond[(i, j)] + cond[(j, i)]);
                cond[(i, j)] = v;
                cond[(j, i)] = v;
            }
        }
        (cond, mean.iter().copied().collect())
    };
    let (chol, _) = factorize_with_jitter(&cond)?;
    let factor = chol.l() * hyper.scale.sqrt();
    Ok(ColumnPrior {
        missing,
        mean,
        factor,
    })
}

/// Output-layer Gaussian log density with cached per-column kernels.
struct OutputLikelihood {
    lengthscales: Vec<f64>,
    scale: f64,
    nugget: f64,
    kernels: Vec<DMatrix<f64>>,
}

impl OutputLikelihood {
    fn new(values: &[Vec<f64>], hyper: &GpHyperparams) -> Result<Self> {
        if hyper.kernel.family != KernelFamily::SquaredExponential {
            return Err(Error::NotImplemented("DGP output layer with a non-squared-exponential kernel"));
        }
        let mut lik = Self {
            lengthscales: hyper.kernel.lengthscales.clone(),
            scale: hyper.scale,
            nugget: hyper.nugget,
            kernels: Vec::with_capacity(values.len()),
        };
        for (p, col) in values.iter().enumerate() {
            let k = lik.column_kernel(p, col);
            lik.kernels.push(k);
        }
        Ok(lik)
    }

    fn column_kernel(&self, p: usize, col: &[f64]) -> DMatrix<f64> {
        let n = col.len();
        let inv_l2 = 1.0 / (self.lengthscales[p] * self.lengthscales[p]);
        let mut k = DMatrix::from_element(n, n, 1.0);
        for i in 0..n {
            for j in 0..i {
                let d = col[i] - col[j];
                let v = (-d * d * inv_l2).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    fn product_except(&self, p: usize) -> DMatrix<f64> {
        let n = self.kernels[0].nrows();
        let mut prod = DMatrix::from_element(n, n, 1.0);
        for (q, k) in self.kernels.iter().enumerate() {
            if q != p {
                prod.component_mul_assign(k);
            }
        }
        prod
    }

    /// `ln N(y; 0, scale * (others o k_p + eta * 1{w_i = w_j}))`.
    fn loglik(&self, y: &DVector<f64>, others: &DMatrix<f64>, kp: &DMatrix<f64>, values: &[Vec<f64>], p: usize, col: &[f64]) -> f64 {
        let n = y.len();
        let mut r = others.component_mul(kp);
        for i in 0..n {
            r[(i, i)] += self.nugget;
            for j in 0..i {
                if col[i] == col[j]
                    && values
                        .iter()
                        .enumerate()
                        .all(|(q, c)| q == p || c[i] == c[j])
                {
                    r[(i, j)] += self.nugget;
                    r[(j, i)] += self.nugget;
                }
            }
        }
        let Ok((chol, _)) = factorize_with_jitter(&r) else {
            return f64::NEG_INFINITY;
        };
        let l = chol.l_dirty();
        let mut z = y.clone();
        dense::solve_lower(l, z.as_mut_slice());
        let ln_det: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let nf = n as f64;
        -0.5 * z.norm_squared() / self.scale - 0.5 * (ln_det + nf * self.scale.ln()) - 0.5 * nf * LN_2PI
    }

    fn full_loglik(&self, y: &DVector<f64>, values: &[Vec<f64>]) -> f64 {
        let others = self.product_except(0);
        self.loglik(y, &others, &self.kernels[0], values, 0, &values[0])
    }
}

/// Gibbs-style sweeps of per-column ESS updates under fixed hyperparameters.
pub struct LatentSampler<'a> {
    data: &'a DgpData,
    values: Vec<Vec<f64>>,
    priors: Vec<ColumnPrior>,
    lik: OutputLikelihood,
    current_loglik: f64,
    randomize_order: bool,
}

impl<'a> LatentSampler<'a> {
    /// `init` holds a full value for every latent entry; observed entries
    /// are reset to the data.
    pub fn new(
        data: &'a DgpData,
        first: &[GpHyperparams],
        second: &GpHyperparams,
        init: Vec<Vec<f64>>,
        randomize_order: bool,
    ) -> Result<Self> {
        if first.len() != data.n_latents() || init.len() != data.n_latents() {
            return Err(Error::DimensionMismatch {
                expected: data.n_latents(),
                got: first.len().min(init.len()),
            });
        }
        if second.kernel.dims() != data.n_latents() {
            return Err(Error::DimensionMismatch {
                expected: data.n_latents(),
                got: second.kernel.dims(),
            });
        }
        let mut values = init;
        for (col, obs) in values.iter_mut().zip(&data.latents) {
            if col.len() != obs.len() {
                return Err(Error::DimensionMismatch {
                    expected: obs.len(),
                    got: col.len(),
                });
            }
            for (v, o) in col.iter_mut().zip(obs) {
                if let Some(o) = o {
                    *v = *o;
                }
            }
        }
        let priors = data
            .latents
            .iter()
            .zip(first)
            .map(|(col, h)| column_prior(&data.inputs, col, h))
            .collect::<Result<Vec<_>>>()?;
        let lik = OutputLikelihood::new(&values, second)?;
        let current_loglik = lik.full_loglik(&data.output, &values);
        if !current_loglik.is_finite() {
            return Err(Error::InvalidParameter(
                "output-layer likelihood is not finite at the initial latent values".into(),
            ));
        }
        Ok(Self {
            data,
            values,
            priors,
            lik,
            current_loglik,
            randomize_order,
        })
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Vec<f64>> {
        self.values
    }

    pub fn loglik(&self) -> f64 {
        self.current_loglik
    }

    /// One ESS update of each column's missing entries, in column order
    /// (shuffled if configured).
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        if self.randomize_order {
            order.shuffle(rng);
        }
        for p in order {
            if self.priors[p].missing.is_empty() {
                continue;
            }
            let others = self.lik.product_except(p);
            let prior = &self.priors[p];
            let current: Vec<f64> = prior.missing.iter().map(|&i| self.values[p][i]).collect();
            let mut col = self.values[p].clone();
            let lik = &self.lik;
            let values = &self.values;
            let y = &self.data.output;
            let mut loglik = |f: &[f64]| {
                for (k, &i) in prior.missing.iter().enumerate() {
                    col[i] = f[k];
                }
                let kp = lik.column_kernel(p, &col);
                lik.loglik(y, &others, &kp, values, p, &col)
            };
            let out = ess_step(&prior.mean, &prior.factor, &current, self.current_loglik, &mut loglik, rng)?;
            for (k, &i) in self.priors[p].missing.iter().enumerate() {
                self.values[p][i] = out.state[k];
            }
            self.lik.kernels[p] = self.lik.column_kernel(p, &self.values[p]);
            self.current_loglik = out.loglik;
        }
        Ok(())
    }

    /// Runs `sweeps` sweeps and returns the resulting draw.
    pub fn impute_latents<R: Rng + ?Sized>(&mut self, sweeps: usize, draw_index: usize, rng: &mut R) -> Result<LayerImputation> {
        for _ in 0..sweeps {
            self.sweep(rng)?;
        }
        Ok(self.snapshot(draw_index))
    }

    pub fn snapshot(&self, draw_index: usize) -> LayerImputation {
        let n = self.data.n_rows();
        let p = self.values.len();
        LayerImputation {
            values: DMatrix::from_fn(n, p, |i, q| self.values[q][i]),
            fixed_mask: DMatrix::from_fn(n, p, |i, q| self.data.latents[q][i].is_some()),
            draw_index,
        }
    }
}
