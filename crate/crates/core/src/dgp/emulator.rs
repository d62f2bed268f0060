//! The trained DGP-SI emulator: an ensemble of linked emulators, one per
//! latent-layer imputation, mixed by moment matching.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sampler::{DgpData, LayerImputation};
use super::sem::SemConfig;
use crate::error::{Error, Result};
use crate::gp::{FittedGp, PredictiveGaussian, TrainingSet};
use crate::kernel::{GpHyperparams, KernelSpec};
use crate::linked::{LayerArchitecture, LinkedEmulator, NodeManifest};
use crate::par;

pub const MANIFEST_FORMAT: &str = "dgpsi-emulator/1";

/// Mixture moments at one query point plus the per-imputation components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub mixture: PredictiveGaussian,
    pub components: Vec<PredictiveGaussian>,
}

/// Moment-matched equal-weight mixture of Gaussians.
pub fn mix(components: Vec<PredictiveGaussian>) -> Result<EnsemblePrediction> {
    if components.is_empty() {
        return Err(Error::InvalidParameter("mixture of zero components".into()));
    }
    if components.len() == 1 {
        return Ok(EnsemblePrediction {
            mixture: components[0],
            components,
        });
    }
    let n = components.len() as f64;
    let mean = components.iter().map(|c| c.mean).sum::<f64>() / n;
    let second = components.iter().map(|c| c.mean * c.mean + c.variance).sum::<f64>() / n;
    Ok(EnsemblePrediction {
        mixture: PredictiveGaussian {
            mean,
            variance: (second - mean * mean).max(0.0),
        },
        components,
    })
}

/// Reproducibility record of a trained emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorManifest {
    pub format: String,
    pub architecture: LayerArchitecture,
    pub config: SemConfig,
    pub seed: u64,
    pub n_rows: usize,
    pub n_imputations: usize,
    pub missing_latent_entries: usize,
    /// Final hyperparameters; `jitter_applied` is the largest over imputations.
    pub nodes: Vec<NodeManifest>,
    pub variance_clamps: u64,
}

#[derive(Debug, Clone)]
pub struct DgpSiEmulator {
    architecture: LayerArchitecture,
    config: SemConfig,
    data: DgpData,
    first_hyper: Vec<GpHyperparams>,
    second_hyper: GpHyperparams,
    imputations: Vec<LayerImputation>,
    emulators: Vec<LinkedEmulator>,
}

impl DgpSiEmulator {
    pub(crate) fn from_parts(
        architecture: LayerArchitecture,
        config: SemConfig,
        data: DgpData,
        first_hyper: Vec<GpHyperparams>,
        second_hyper: GpHyperparams,
        imputations: Vec<LayerImputation>,
        emulators: Vec<LinkedEmulator>,
    ) -> Result<Self> {
        if imputations.is_empty() || imputations.len() != emulators.len() {
            return Err(Error::InvalidParameter(format!(
                "{} imputations for {} emulators",
                imputations.len(),
                emulators.len()
            )));
        }
        if let Some(k) = imputations
            .iter()
            .zip(&emulators)
            .position(|(imp, em)| &imp.values != em.latent_values())
        {
            return Err(Error::InvalidParameter(format!("imputation {k} does not match its emulator")));
        }
        Ok(Self {
            architecture,
            config,
            data,
            first_hyper,
            second_hyper,
            imputations,
            emulators,
        })
    }

    pub fn architecture(&self) -> &LayerArchitecture {
        &self.architecture
    }

    pub fn config(&self) -> &SemConfig {
        &self.config
    }

    pub fn data(&self) -> &DgpData {
        &self.data
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn first_layer_hyper(&self) -> &[GpHyperparams] {
        &self.first_hyper
    }

    pub fn second_layer_hyper(&self) -> &GpHyperparams {
        &self.second_hyper
    }

    pub fn imputations(&self) -> &[LayerImputation] {
        &self.imputations
    }

    pub fn emulators(&self) -> &[LinkedEmulator] {
        &self.emulators
    }

    pub fn n_imputations(&self) -> usize {
        self.emulators.len()
    }

    pub fn clamp_count(&self) -> u64 {
        self.emulators
            .iter()
            .map(|em| {
                em.clamp_count()
                    + em.second_layer().clamp_count()
                    + em.first_layer().iter().map(FittedGp::clamp_count).sum::<u64>()
            })
            .sum()
    }

    /// Output prediction at a global input, mixing the linked predictions
    /// of every imputation.
    pub fn predict_ensemble(&self, x0: &[f64]) -> Result<EnsemblePrediction> {
        let comps = self
            .emulators
            .iter()
            .map(|em| em.link_predict(x0))
            .collect::<Result<Vec<_>>>()?;
        mix(comps)
    }

    pub fn predict_ensemble_many(&self, points: &[Vec<f64>]) -> Result<Vec<EnsemblePrediction>> {
        par::map_indexed(points.len(), |i| self.predict_ensemble(&points[i]))
            .into_iter()
            .collect()
    }

    /// Posterior of a latent node at query times, mixing the first-layer
    /// posteriors of every imputation. Requires a one-dimensional input.
    pub fn impute_covariates(&self, query_times: &[f64], target: &str) -> Result<Vec<EnsemblePrediction>> {
        let p = self.architecture.latent_index(target)?;
        if self.architecture.input_dims != 1 {
            return Err(Error::InvalidParameter("covariate imputation needs a time-only input".into()));
        }
        par::map_indexed(query_times.len(), |i| {
            let comps = self
                .emulators
                .iter()
                .map(|em| em.first_layer()[p].predict(&[query_times[i]]))
                .collect::<Result<Vec<_>>>()?;
            mix(comps)
        })
        .into_iter()
        .collect()
    }

    pub fn manifest(&self) -> EmulatorManifest {
        let names = self
            .architecture
            .latent_nodes
            .iter()
            .chain(std::iter::once(&self.architecture.output_node));
        let nodes = names
            .enumerate()
            .map(|(k, node)| {
                let gp_of = |em: &'_ LinkedEmulator| -> f64 {
                    let gp = if k < self.first_hyper.len() {
                        &em.first_layer()[k]
                    } else {
                        em.second_layer()
                    };
                    gp.correlation().jitter_applied()
                };
                let hyper = self.first_hyper.get(k).unwrap_or(&self.second_hyper);
                NodeManifest {
                    name: node.name.clone(),
                    layer: if k < self.first_hyper.len() { 1 } else { 2 },
                    family: hyper.kernel.family,
                    lengthscales: hyper.kernel.lengthscales.clone(),
                    scale: hyper.scale,
                    nugget: hyper.nugget,
                    training_size: self.data.n_rows(),
                    jitter_applied: self.emulators.iter().map(gp_of).fold(0.0, f64::max),
                }
            })
            .collect();
        EmulatorManifest {
            format: MANIFEST_FORMAT.into(),
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            seed: self.config.seed,
            n_rows: self.data.n_rows(),
            n_imputations: self.n_imputations(),
            missing_latent_entries: self.data.missing_count(),
            nodes,
            variance_clamps: self.clamp_count(),
        }
    }

    /// Writes `manifest.json`, `data.csv` and `imputations.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        serde_json::to_writer_pretty(File::create(dir.join("manifest.json"))?, &self.manifest())?;

        let d = self.data.inputs.ncols();
        let mut w = csv::Writer::from_path(dir.join("data.csv"))?;
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        header.push(self.architecture.output_node.name.clone());
        header.extend(self.architecture.latent_nodes.iter().map(|n| n.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.data.n_rows() {
            let mut rec: Vec<String> = (0..d).map(|k| self.data.inputs[(i, k)].to_string()).collect();
            rec.push(self.data.output[i].to_string());
            rec.extend(self.data.latents.iter().map(|c| c[i].map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("imputations.csv"))?;
        let mut header = vec!["draw".to_string(), "row".to_string()];
        header.extend(self.architecture.latent_nodes.iter().map(|n| n.name.clone()));
        w.write_record(&header)?;
        for imp in &self.imputations {
            for i in 0..imp.values.nrows() {
                let mut rec = vec![imp.draw_index.to_string(), i.to_string()];
                rec.extend(imp.values.row(i).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds an emulator written by [`DgpSiEmulator::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: EmulatorManifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Schema(format!("unknown emulator format {}", manifest.format)));
        }
        let arch = manifest.architecture.clone();
        arch.validate()?;
        let p_count = arch.latent_count();
        if manifest.nodes.len() != p_count + 1 {
            return Err(Error::Schema("manifest node count does not match architecture".into()));
        }
        let hyper = manifest
            .nodes
            .iter()
            .map(|n| GpHyperparams::new(KernelSpec::new(n.family, n.lengthscales.clone())?, n.scale, n.nugget))
            .collect::<Result<Vec<_>>>()?;

        let d = arch.input_dims;
        let n = manifest.n_rows;
        let mut r = csv::Reader::from_path(dir.join("data.csv"))?;
        let mut inputs = DMatrix::zeros(n, d);
        let mut output = DVector::zeros(n);
        let mut latents = vec![vec![None; n]; p_count];
        let mut rows = 0;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if i >= n || rec.len() != d + 1 + p_count {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: "unexpected data row".into(),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 2,
                    msg: e.to_string(),
                })
            };
            for k in 0..d {
                inputs[(i, k)] = num(&rec[k])?;
            }
            output[i] = num(&rec[d])?;
            for p in 0..p_count {
                let s = &rec[d + 1 + p];
                latents[p][i] = if s.is_empty() { None } else { Some(num(s)?) };
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::Schema(format!("data.csv has {rows} rows, manifest says {n}")));
        }
        let data = DgpData::new(inputs, latents, output)?;

        let mut values: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, p_count); manifest.n_imputations];
        let mut seen = vec![0usize; manifest.n_imputations];
        let mut r = csv::Reader::from_path(dir.join("imputations.csv"))?;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |msg: &str| Error::Parse {
                line: line + 2,
                msg: msg.into(),
            };
            if rec.len() != 2 + p_count {
                return Err(bad("unexpected imputation row"));
            }
            let draw: usize = rec[0].parse().map_err(|_| bad("bad draw index"))?;
            let row: usize = rec[1].parse().map_err(|_| bad("bad row index"))?;
            if draw >= values.len() || row >= n {
                return Err(bad("index out of range"));
            }
            for p in 0..p_count {
                values[draw][(row, p)] = rec[2 + p].parse().map_err(|_| bad("bad value"))?;
            }
            seen[draw] += 1;
        }
        if seen.iter().any(|&c| c != n) {
            return Err(Error::Schema("imputations.csv is incomplete".into()));
        }

        let first = hyper[..p_count].to_vec();
        let second = hyper[p_count].clone();
        let fixed_mask = DMatrix::from_fn(n, p_count, |i, p| data.latents[p][i].is_some());
        let mut imputations = Vec::with_capacity(values.len());
        let mut emulators = Vec::with_capacity(values.len());
        for (draw, v) in values.into_iter().enumerate() {
            for i in 0..n {
                for p in 0..p_count {
                    if let Some(obs) = data.latents[p][i] {
                        if obs.to_bits() != v[(i, p)].to_bits() {
                            return Err(Error::MaskConsistency(format!(
                                "draw {draw} changes observed entry ({i}, {p})"
                            )));
                        }
                    }
                }
            }
            let layer = (0..p_count)
                .map(|p| {
                    let y = DVector::from_iterator(n, v.column(p).iter().copied());
                    FittedGp::new(TrainingSet::new(data.inputs.clone(), y)?, first[p].clone())
                })
                .collect::<Result<Vec<_>>>()?;
            let out = FittedGp::new(TrainingSet::new(v.clone(), data.output.clone())?, second.clone())?;
            emulators.push(LinkedEmulator::new(layer, out)?);
            imputations.push(LayerImputation {
                values: v,
                fixed_mask: fixed_mask.clone(),
                draw_index: draw,
            });
        }
        Self::from_parts(arch, manifest.config, data, first, second, imputations, emulators)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mean: f64, variance: f64) -> PredictiveGaussian {
        PredictiveGaussian { mean, variance }
    }

    #[test]
    fn single_component_collapses_exactly() {
        let e = mix(vec![g(0.3, 0.07)]).unwrap();
        assert_eq!(e.mixture, g(0.3, 0.07));
    }

    #[test]
    fn symmetric_pair_adds_spread() {
        let e = mix(vec![g(-0.5, 0.2), g(0.5, 0.2)]).unwrap();
        assert!(e.mixture.mean.abs() < 1e-15);
        assert!((e.mixture.variance - 0.45).abs() < 1e-12);
    }

    #[test]
    fn empty_mixture_is_an_error() {
        assert!(mix(Vec::new()).is_err());
    }
}
