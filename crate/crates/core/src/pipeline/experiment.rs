//! Benchmark runner: mask, standardise, impute and score every
//! (window, proportion, method) job, then aggregate across windows.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::eval::{aggregate, evaluate_mae};
use super::ingest::{ingest_csv, RawTable};
use super::mask::{apply_mask, Cell, MaskPlan, MaskUnit, MaskedTruth};
use super::preprocess::{discretise_hourly, standardise, StandardisationRecord};
use super::synthetic::{generate_windows, SyntheticConfig, SyntheticWindow, COVARIATES, OUTPUT};
use super::table::ObservationTable;
use crate::baselines::{
    independent_gp_impute, locf_impute, mice_impute, ImputationMethodResult, MethodTag, MiceConfig,
};
use crate::dgp::{train_sem, DgpData, SemConfig};
use crate::error::{Error, Result};
use crate::gp::FitConfig;
use crate::linked::{fit_sequential_lgp, LayerArchitecture, NodeSpec};
use crate::{par, rng};

const MASK_TAG: u64 = 0x6d61_736b;
const METHOD_TAG: u64 = 0x6d65_7468;
const SYNTH_TAG: u64 = 0x7379_6e00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Mask the output; methods see time only at masked rows.
    PredictOutput,
    /// Mask covariates; methods may use everything else that is observed.
    ImputeCovariates,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "predict-output" | "predict_output" => Ok(Mode::PredictOutput),
            "impute-covariates" | "impute_covariates" => Ok(Mode::ImputeCovariates),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub methods: Vec<MethodTag>,
    pub proportions: Vec<f64>,
    /// Number of synthetic windows; ignored when `inputs` is non-empty.
    pub windows: usize,
    pub seed: u64,
    pub mask_unit: MaskUnit,
    pub output: String,
    pub covariates: Vec<String>,
    /// Raw CSV windows to use instead of synthetic data.
    pub inputs: Vec<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub fit: FitConfig,
    pub sem: SemConfig,
    pub mice: MiceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ImputeCovariates,
            methods: MethodTag::ALL.to_vec(),
            proportions: vec![0.1, 0.2, 0.3, 0.4],
            windows: 20,
            seed: 0,
            mask_unit: MaskUnit::Cell,
            output: OUTPUT.into(),
            covariates: COVARIATES.iter().map(|s| s.to_string()).collect(),
            inputs: Vec::new(),
            synthetic: SyntheticConfig::default(),
            fit: FitConfig::default(),
            sem: SemConfig::default(),
            mice: MiceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::Config(format!("method {} listed twice", m.name())));
            }
        }
        if self.proportions.is_empty() || self.proportions.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config("proportions must be non-empty and in [0, 1)".into()));
        }
        if self.inputs.is_empty() && self.windows == 0 {
            return Err(Error::Config("windows must be at least 1".into()));
        }
        if self.covariates.is_empty() || self.covariates.contains(&self.output) {
            return Err(Error::Config("covariates must be non-empty and exclude the output".into()));
        }
        self.architecture()?;
        self.synthetic.validate()?;
        self.fit.validate()?;
        self.sem.validate()
    }

    pub fn architecture(&self) -> Result<LayerArchitecture> {
        LayerArchitecture::new(
            1,
            self.covariates.iter().map(|c| NodeSpec::se(c)).collect(),
            NodeSpec::se(&self.output),
        )
    }

    /// Methods that run in this mode. The linked GP is dropped when
    /// covariates are imputed: with no output layer in play it is just
    /// independent GPs.
    pub fn active_methods(&self) -> Vec<MethodTag> {
        self.methods
            .iter()
            .copied()
            .filter(|m| !(self.mode == Mode::ImputeCovariates && *m == MethodTag::Lgp))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub preprocessing: Vec<String>,
    pub window_lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: usize,
    pub method: MethodTag,
    pub proportion: f64,
    /// Standardised units.
    pub mae: f64,
    /// Per variable, original units.
    pub mae_original: BTreeMap<String, f64>,
    pub cells: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub method: MethodTag,
    pub proportion: f64,
    pub mean_mae: f64,
    pub std_error: f64,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub window: usize,
    pub proportion: f64,
    pub method: Option<MethodTag>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub manifest: RunManifest,
    pub summary: Vec<SummaryEntry>,
    pub per_window: Vec<WindowResult>,
    pub failures: Vec<Failure>,
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn summary_for(&self, method: MethodTag, proportion: f64) -> Option<&SummaryEntry> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.proportion == proportion)
    }

    pub fn window_mae(&self, window: usize, method: MethodTag, proportion: f64) -> Option<f64> {
        self.per_window
            .iter()
            .find(|r| r.window == window && r.method == method && r.proportion == proportion)
            .map(|r| r.mae)
    }
}

/// One cell of a per-method prediction table, in standardised units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub window: usize,
    pub method: MethodTag,
    pub proportion: f64,
    pub time: f64,
    pub variable: String,
    pub mean: f64,
    pub variance: Option<f64>,
    pub truth: Option<f64>,
    pub masked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: EvaluationReport,
    pub predictions: Vec<PredictionRow>,
}

/// The synthetic windows a run without `inputs` would use.
pub fn synthetic_windows(config: &ExperimentConfig) -> Result<Vec<SyntheticWindow>> {
    generate_windows(
        &config.synthetic,
        config.windows,
        rng::derive_seed(config.seed, &[SYNTH_TAG]),
    )
}

/// Loads the configured windows as discretised tables with roles set.
pub fn load_windows(config: &ExperimentConfig) -> Result<Vec<ObservationTable>> {
    let raws: Vec<RawTable> = if config.inputs.is_empty() {
        synthetic_windows(config)?.into_iter().map(|w| w.raw).collect()
    } else {
        let mut declared = vec![config.output.clone()];
        declared.extend(config.covariates.iter().cloned());
        config
            .inputs
            .iter()
            .map(|p| ingest_csv(std::fs::File::open(p)?, &declared))
            .collect::<Result<_>>()?
    };
    raws.iter()
        .map(|raw| discretise_hourly(raw)?.with_output(&config.output))
        .collect()
}

struct Prepared {
    z: ObservationTable,
    record: StandardisationRecord,
    truth_z: MaskedTruth,
    truth: MaskedTruth,
    targets: Vec<String>,
}

fn prepare(table: &ObservationTable, config: &ExperimentConfig, proportion: f64, mask_seed: u64) -> Result<Prepared> {
    let targets = match config.mode {
        Mode::PredictOutput => vec![config.output.clone()],
        Mode::ImputeCovariates => config.covariates.clone(),
    };
    let plan = MaskPlan::draw(table, proportion, &targets, mask_seed, config.mask_unit.clone())?;
    let (mut masked, truth) = apply_mask(table, &plan)?;
    if config.mode == Mode::PredictOutput {
        // inference at masked output rows sees time only
        for cell in &truth.cells {
            for name in &config.covariates {
                masked.column_mut(name).unwrap().values[cell.row] = None;
            }
        }
    }
    let (z, record) = standardise(&masked)?;
    let truth_z = truth.standardised(table, &record)?;
    Ok(Prepared {
        z,
        record,
        truth_z,
        truth,
        targets,
    })
}

fn merge_column(into: &mut ImputationMethodResult, from: ImputationMethodResult, col: usize) {
    into.filled.columns[col] = from.filled.columns[col].clone();
    if let (Some(dst), Some(src)) = (into.variance.as_mut(), from.variance) {
        dst[col] = src[col].clone();
    }
    into.notes.extend(from.notes);
}

fn empty_result(table: &ObservationTable, method: MethodTag, with_variance: bool) -> ImputationMethodResult {
    ImputationMethodResult {
        filled: table.clone(),
        variance: with_variance.then(|| vec![vec![None; table.n_rows()]; table.columns.len()]),
        method,
        notes: Vec::new(),
    }
}

fn run_method(
    method: MethodTag,
    prep: &Prepared,
    config: &ExperimentConfig,
    arch: &LayerArchitecture,
    seed: u64,
) -> Result<ImputationMethodResult> {
    let z = &prep.z;
    let fit = FitConfig {
        seed,
        ..config.fit.clone()
    };
    match method {
        MethodTag::Locf => {
            let mut out = empty_result(z, method, false);
            for t in &prep.targets {
                let col = z.column_index(t)?;
                let r = locf_impute(z, t)?;
                merge_column(&mut out, r, col);
            }
            Ok(out)
        }
        MethodTag::Gp => {
            let mut out = empty_result(z, method, true);
            for t in &prep.targets {
                let col = z.column_index(t)?;
                let r = independent_gp_impute(z, t, &fit)?;
                merge_column(&mut out, r, col);
            }
            Ok(out)
        }
        MethodTag::Mice => {
            let mice = MiceConfig {
                seed,
                ..config.mice.clone()
            };
            match config.mode {
                Mode::PredictOutput => {
                    let col = z.column_index(&config.output)?;
                    let only = ObservationTable::new(z.times.clone(), vec![z.columns[col].clone()])?;
                    let r = mice_impute(&only, &mice)?;
                    let mut out = empty_result(z, method, true);
                    out.filled.columns[col] = r.filled.columns[0].clone();
                    if let (Some(dst), Some(src)) = (out.variance.as_mut(), r.variance) {
                        dst[col] = src[0].clone();
                    }
                    out.notes = r.notes;
                    Ok(out)
                }
                Mode::ImputeCovariates => mice_impute(z, &mice),
            }
        }
        MethodTag::Lgp => {
            let x = DMatrix::from_column_slice(z.n_rows(), 1, &z.times);
            let latents: Vec<Vec<Option<f64>>> = config
                .covariates
                .iter()
                .map(|c| Ok(z.column(c).ok_or_else(|| Error::Schema(c.clone()))?.values.clone()))
                .collect::<Result<_>>()?;
            let col = z.column_index(&config.output)?;
            let em = fit_sequential_lgp(&x, &latents, &z.columns[col].values, arch, &fit)?;
            let mut out = empty_result(z, method, true);
            for i in 0..z.n_rows() {
                if z.columns[col].values[i].is_none() {
                    let p = em.link_predict(&[z.times[i]])?;
                    out.filled.columns[col].values[i] = Some(p.mean);
                    out.variance.as_mut().unwrap()[col][i] = Some(p.variance);
                }
            }
            Ok(out)
        }
        MethodTag::DgpSi => {
            let sem = SemConfig {
                seed,
                fit: fit.clone(),
                ..config.sem.clone()
            };
            let (data, _) = DgpData::from_table(z, arch)?;
            let em = train_sem(&data, arch, &sem)?;
            let mut out = empty_result(z, method, true);
            for t in &prep.targets {
                let col = z.column_index(t)?;
                let rows: Vec<usize> = (0..z.n_rows()).filter(|&i| z.columns[col].values[i].is_none()).collect();
                let times: Vec<f64> = rows.iter().map(|&i| z.times[i]).collect();
                let preds = if *t == config.output {
                    let pts: Vec<Vec<f64>> = times.iter().map(|t| vec![*t]).collect();
                    em.predict_ensemble_many(&pts)?
                } else {
                    em.impute_covariates(&times, t)?
                };
                for (&i, p) in rows.iter().zip(preds) {
                    out.filled.columns[col].values[i] = Some(p.mixture.mean);
                    out.variance.as_mut().unwrap()[col][i] = Some(p.mixture.variance);
                }
            }
            out.notes.push(format!(
                "n_imputations={} variance_clamps={}",
                em.n_imputations(),
                em.clamp_count()
            ));
            Ok(out)
        }
    }
}

fn original_mae(prep: &Prepared, result: &ImputationMethodResult) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (cell, truth) in prep.truth.cells.iter().zip(&prep.truth.values) {
        let name = &prep.z.columns[cell.column].name;
        let est = result.filled.columns[cell.column].values[cell.row]
            .ok_or_else(|| Error::IncompleteResult(format!("no estimate at {cell:?}")))?;
        let e = acc.entry(name.clone()).or_insert((0.0, 0));
        e.0 += (prep.record.to_original(name, est)? - truth).abs();
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

fn predictions(
    window: usize,
    proportion: f64,
    prep: &Prepared,
    result: &ImputationMethodResult,
) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::new();
    for t in &prep.targets {
        let col = prep.z.column_index(t)?;
        for i in 0..prep.z.n_rows() {
            let cell = Cell { column: col, row: i };
            let masked = prep.truth_z.value(cell);
            let Some(mean) = result.filled.columns[col].values[i] else {
                continue;
            };
            rows.push(PredictionRow {
                window,
                method: result.method,
                proportion,
                time: prep.z.times[i],
                variable: t.clone(),
                mean,
                variance: result.variance.as_ref().and_then(|v| v[col][i]),
                truth: masked.or(prep.z.columns[col].values[i]),
                masked: masked.is_some(),
            });
        }
    }
    Ok(rows)
}

struct JobOutput {
    results: Vec<WindowResult>,
    failures: Vec<Failure>,
    predictions: Vec<PredictionRow>,
}

fn run_job(
    window: usize,
    k: usize,
    table: &ObservationTable,
    config: &ExperimentConfig,
    arch: &LayerArchitecture,
) -> JobOutput {
    let proportion = config.proportions[k];
    let mut out = JobOutput {
        results: Vec::new(),
        failures: Vec::new(),
        predictions: Vec::new(),
    };
    let mask_seed = rng::derive_seed(config.seed, &[MASK_TAG, window as u64, k as u64]);
    let prep = match prepare(table, config, proportion, mask_seed) {
        Ok(p) => p,
        Err(e) => {
            out.failures.push(Failure {
                window,
                proportion,
                method: None,
                error: e.to_string(),
            });
            return out;
        }
    };
    for method in config.active_methods() {
        let seed = rng::derive_seed(config.seed, &[METHOD_TAG, window as u64, k as u64, method as u64]);
        let scored = run_method(method, &prep, config, arch, seed).and_then(|r| {
            let mae = evaluate_mae(&prep.truth_z, &r, &prep.truth_z.cells)?;
            let orig = original_mae(&prep, &r)?;
            let preds = predictions(window, proportion, &prep, &r)?;
            Ok((mae, orig, preds))
        });
        match scored {
            Ok((mae, mae_original, preds)) => {
                out.results.push(WindowResult {
                    window,
                    method,
                    proportion,
                    mae,
                    mae_original,
                    cells: prep.truth_z.cells.len(),
                    seed,
                });
                out.predictions.extend(preds);
            }
            Err(e) => {
                log::warn!("window {window} method {} proportion {proportion}: {e}", method.name());
                out.failures.push(Failure {
                    window,
                    proportion,
                    method: Some(method),
                    error: e.to_string(),
                });
            }
        }
    }
    out
}

/// Mean and across-window standard error per (method, proportion), in
/// method then proportion order.
pub fn summarise(per_window: &[WindowResult]) -> Vec<SummaryEntry> {
    let mut groups: BTreeMap<(MethodTag, u64), Vec<f64>> = BTreeMap::new();
    let mut props: BTreeMap<u64, f64> = BTreeMap::new();
    for r in per_window {
        let key = r.proportion.to_bits();
        props.insert(key, r.proportion);
        groups.entry((r.method, key)).or_default().push(r.mae);
    }
    let mut out: Vec<SummaryEntry> = groups
        .into_iter()
        .filter_map(|((method, key), v)| {
            aggregate(&v).map(|a| SummaryEntry {
                method,
                proportion: props[&key],
                mean_mae: a.mean,
                std_error: a.std_error,
                n_windows: a.n,
            })
        })
        .collect();
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.proportion.total_cmp(&b.proportion)));
    out
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let arch = config.architecture()?;
    let tables = load_windows(config)?;
    let n_props = config.proportions.len();
    let jobs = par::map_indexed(tables.len() * n_props, |j| {
        let (w, k) = (j / n_props, j % n_props);
        run_job(w, k, &tables[w], config, &arch)
    });

    let mut per_window = Vec::new();
    let mut failures = Vec::new();
    let mut preds = Vec::new();
    for job in jobs {
        per_window.extend(job.results);
        failures.extend(job.failures);
        preds.extend(job.predictions);
    }
    let mut notes = Vec::new();
    if config.mode == Mode::ImputeCovariates && config.methods.contains(&MethodTag::Lgp) {
        notes.push("lgp skipped: with covariates as targets it reduces to independent GPs".into());
    }
    if config.mode == Mode::PredictOutput {
        notes.push("covariates withheld at masked output rows; mice sees time and output only".into());
    }
    let report = EvaluationReport {
        manifest: RunManifest {
            tool: "dgpsi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            preprocessing: ["discretise", "mask", "standardise", "impute", "evaluate"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            window_lengths: tables.iter().map(ObservationTable::n_rows).collect(),
        },
        summary: summarise(&per_window),
        per_window,
        failures,
        notes,
    };
    Ok(ExperimentOutput {
        report,
        predictions: preds,
    })
}

pub fn write_report_json<W: Write>(report: &EvaluationReport, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

pub fn read_report_json<R: Read>(r: R) -> Result<EvaluationReport> {
    Ok(serde_json::from_reader(r)?)
}

/// `window,method,proportion,mae`.
pub fn write_long_csv<W: Write>(rows: &[WindowResult], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["window", "method", "proportion", "mae"])?;
    for r in rows {
        w.write_record([
            r.window.to_string(),
            r.method.name().to_string(),
            r.proportion.to_string(),
            r.mae.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `window,method,proportion,mae` rows back (other fields empty).
pub fn read_long_csv<R: Read>(r: R) -> Result<Vec<WindowResult>> {
    let mut r = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse { line: k + 2, msg };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        out.push(WindowResult {
            window: rec[0].parse().map_err(|e| bad(format!("window: {e}")))?,
            method: MethodTag::parse(&rec[1]).map_err(|e| bad(e.to_string()))?,
            proportion: rec[2].parse().map_err(|e| bad(format!("proportion: {e}")))?,
            mae: rec[3].parse().map_err(|e| bad(format!("mae: {e}")))?,
            mae_original: BTreeMap::new(),
            cells: 0,
            seed: 0,
        });
    }
    Ok(out)
}

/// `window,time,variable,mean,variance,truth,masked` for the given rows.
pub fn write_predictions_csv<'a, W: Write>(rows: impl IntoIterator<Item = &'a PredictionRow>, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["window", "time", "variable", "mean", "variance", "truth", "masked"])?;
    for r in rows {
        w.write_record([
            r.window.to_string(),
            r.time.to_string(),
            r.variable.clone(),
            r.mean.to_string(),
            r.variance.map(|v| v.to_string()).unwrap_or_default(),
            r.truth.map(|v| v.to_string()).unwrap_or_default(),
            (r.masked as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Average target predictive variance over an interval when every
/// covariate is masked there, and when only the target is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult {
    pub all_masked: f64,
    pub target_only: f64,
    pub cells: usize,
}

/// Interval-masking comparison on one discretised table (original units).
pub fn uncertainty_coupling(
    table: &ObservationTable,
    arch: &LayerArchitecture,
    target: &str,
    interval: (f64, f64),
    sem: &SemConfig,
) -> Result<CouplingResult> {
    arch.latent_index(target)?;
    let unit = MaskUnit::Interval {
        start: interval.0,
        end: interval.1,
    };
    let all: Vec<String> = arch.latent_nodes.iter().map(|n| n.name.clone()).collect();
    let run = |targets: &[String]| -> Result<(f64, usize)> {
        let plan = MaskPlan::draw(table, 0.0, targets, 0, unit.clone())?;
        let (masked, _) = apply_mask(table, &plan)?;
        let (z, _) = standardise(&masked)?;
        let (data, _) = DgpData::from_table(&z, arch)?;
        let em = train_sem(&data, arch, sem)?;
        let col = table.column_index(target)?;
        let times: Vec<f64> = plan
            .masked_cells
            .iter()
            .filter(|c| c.column == col)
            .map(|c| table.times[c.row])
            .collect();
        if times.is_empty() {
            return Err(Error::InvalidParameter("interval masks no target cells".into()));
        }
        let preds = em.impute_covariates(&times, target)?;
        Ok((
            preds.iter().map(|p| p.mixture.variance).sum::<f64>() / preds.len() as f64,
            times.len(),
        ))
    };
    let (all_masked, cells) = run(&all)?;
    let (target_only, _) = run(&[target.to_string()])?;
    Ok(CouplingResult {
        all_masked,
        target_only,
        cells,
    })
}
