//! Stochastic EM training of the two-layer DGP.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::emulator::DgpSiEmulator;
use super::sampler::{initial_fill, DgpData, LatentSampler};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, refit_gp, FitConfig, FittedGp, TrainingSet};
use crate::kernel::{GpHyperparams, KernelFamily, KernelSpec};
use crate::linked::{LayerArchitecture, LinkedEmulator};
use crate::{par, rng};

const FIT_TAG: u64 = 0x6e6f_6465;
const SEM_TAG: u64 = 0x7365_6d00;
const IMPUTE_TAG: u64 = 0x696d_7075;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// ESS sweeps per E-step.
    pub ess_sweeps: usize,
    pub n_imputations: usize,
    /// ESS sweeps between the final SEM state and each imputation.
    pub imputation_sweeps: usize,
    pub randomize_sweep_order: bool,
    /// Optimiser iterations for each warm-started M-step refit.
    pub mstep_max_iters: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for SemConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            burn_in: 300,
            ess_sweeps: 10,
            n_imputations: 50,
            imputation_sweeps: 10,
            randomize_sweep_order: false,
            mstep_max_iters: 10,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

impl SemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("sem.iterations must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "sem.burn_in ({}) must be below sem.iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.n_imputations == 0 {
            return Err(Error::Config("sem.n_imputations must be at least 1".into()));
        }
        self.fit.validate()
    }
}

/// Per-iteration record of a SEM run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemTrace {
    /// Output-layer log likelihood after each E-step.
    pub loglik: Vec<f64>,
    /// Hyperparameters of every node (latents then output) after each M-step.
    pub hyperparams: Vec<Vec<GpHyperparams>>,
}

/// Fit configuration for each node: latents in order, then the output.
/// Each node gets its own seed derived from `config.seed`.
pub fn node_fit_configs(arch: &LayerArchitecture, config: &SemConfig) -> Vec<FitConfig> {
    arch.latent_nodes
        .iter()
        .chain(std::iter::once(&arch.output_node))
        .enumerate()
        .map(|(k, node)| FitConfig {
            family: node.family,
            seed: rng::derive_seed(config.seed, &[FIT_TAG, k as u64]),
            ..config.fit.clone()
        })
        .collect()
}

fn column_matrix(values: &[Vec<f64>]) -> DMatrix<f64> {
    let n = values.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, values.len(), |i, p| values[p][i])
}

fn sem_error(iteration: usize, node: &str, e: Error) -> Error {
    Error::Sem {
        iteration,
        node: node.to_string(),
        source: Box::new(e),
    }
}

/// Arithmetic mean in log space, returned exactly when all values agree.
fn geometric_mean(values: &[f64]) -> f64 {
    let first = values[0];
    if values.iter().all(|v| v.to_bits() == first.to_bits()) {
        return first;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

fn average_hyper(history: &[Vec<GpHyperparams>], node: usize) -> Result<GpHyperparams> {
    let h0 = &history[0][node];
    let pick = |f: &dyn Fn(&GpHyperparams) -> f64| -> f64 {
        let v: Vec<f64> = history.iter().map(|h| f(&h[node])).collect();
        geometric_mean(&v)
    };
    let lengthscales = (0..h0.kernel.dims())
        .map(|d| pick(&|h| h.kernel.lengthscales[d]))
        .collect();
    GpHyperparams::new(
        KernelSpec::new(h0.kernel.family, lengthscales)?,
        pick(&|h| h.scale),
        pick(&|h| h.nugget),
    )
}

/// Trains a DGP-SI emulator: SEM to point-estimate the hyperparameters,
/// then `n_imputations` latent draws, each turned into a linked emulator.
pub fn train_sem(data: &DgpData, arch: &LayerArchitecture, config: &SemConfig) -> Result<DgpSiEmulator> {
    let (emulator, _) = train_sem_traced(data, arch, config)?;
    Ok(emulator)
}

pub fn train_sem_traced(
    data: &DgpData,
    arch: &LayerArchitecture,
    config: &SemConfig,
) -> Result<(DgpSiEmulator, SemTrace)> {
    config.validate()?;
    arch.validate()?;
    if data.n_latents() != arch.latent_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.latent_count(),
            got: data.n_latents(),
        });
    }
    if data.inputs.ncols() != arch.input_dims {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dims,
            got: data.inputs.ncols(),
        });
    }
    if arch.output_node.family != KernelFamily::SquaredExponential {
        return Err(Error::NotImplemented("DGP output layer with a non-squared-exponential kernel"));
    }
    let p_count = data.n_latents();
    let fits = node_fit_configs(arch, config);
    let out_name = arch.output_node.name.as_str();

    let (mut values, mut first) = initial_fill(data, arch, &fits[..p_count])?;
    let mut second = fit_gp(&column_matrix(&values), &data.output, &fits[p_count])
        .map_err(|e| sem_error(0, out_name, e))?
        .hyper()
        .clone();

    let missing: Vec<bool> = (0..p_count).map(|p| !data.missing_rows(p).is_empty()).collect();
    let any_missing = missing.iter().any(|m| *m);
    let mut trace = SemTrace::default();

    let final_hyper: Vec<GpHyperparams> = if any_missing {
        let mut rng = rng::stream(config.seed, &[SEM_TAG]);
        for it in 0..config.iterations {
            let mut sampler =
                LatentSampler::new(data, &first, &second, values, config.randomize_sweep_order)
                    .map_err(|e| sem_error(it, out_name, e))?;
            for _ in 0..config.ess_sweeps {
                sampler.sweep(&mut rng).map_err(|e| sem_error(it, out_name, e))?;
            }
            trace.loglik.push(sampler.loglik());
            values = sampler.into_values();

            for p in (0..p_count).filter(|&p| missing[p]) {
                let y = DVector::from_column_slice(&values[p]);
                let gp = refit_gp(&data.inputs, &y, &first[p], &fits[p], config.mstep_max_iters)
                    .map_err(|e| sem_error(it, &arch.latent_nodes[p].name, e))?;
                first[p] = gp.hyper().clone();
            }
            let gp = refit_gp(
                &column_matrix(&values),
                &data.output,
                &second,
                &fits[p_count],
                config.mstep_max_iters,
            )
            .map_err(|e| sem_error(it, out_name, e))?;
            second = gp.hyper().clone();

            let mut all = first.clone();
            all.push(second.clone());
            trace.hyperparams.push(all);
        }
        let kept = &trace.hyperparams[config.burn_in..];
        (0..=p_count)
            .map(|k| average_hyper(kept, k))
            .collect::<Result<_>>()?
    } else {
        // nothing to impute: the E-step is a no-op and the M-step refits the
        // same data, so the initial fits are the estimates
        let mut all = first.clone();
        all.push(second.clone());
        all
    };
    let first = final_hyper[..p_count].to_vec();
    let second = final_hyper[p_count].clone();

    let draws = par::map_indexed(config.n_imputations, |i| {
        let mut rng = rng::stream(config.seed, &[IMPUTE_TAG, i as u64]);
        let mut sampler =
            LatentSampler::new(data, &first, &second, values.clone(), config.randomize_sweep_order)?;
        let imp = sampler.impute_latents(config.imputation_sweeps, i, &mut rng)?;
        let layer = (0..p_count)
            .map(|p| {
                let y = DVector::from_iterator(imp.values.nrows(), imp.values.column(p).iter().copied());
                FittedGp::new(TrainingSet::new(data.inputs.clone(), y)?, first[p].clone())
            })
            .collect::<Result<Vec<_>>>()?;
        let out = FittedGp::new(TrainingSet::new(imp.values.clone(), data.output.clone())?, second.clone())?;
        Ok((imp, LinkedEmulator::new(layer, out)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()
    .map_err(|e| sem_error(config.iterations, out_name, e))?;

    let (imputations, emulators) = draws.into_iter().unzip();
    let emulator = DgpSiEmulator::from_parts(
        arch.clone(),
        config.clone(),
        data.clone(),
        first,
        second,
        imputations,
        emulators,
    )?;
    Ok((emulator, trace))
}
