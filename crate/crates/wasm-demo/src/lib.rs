//! Browser bindings: generate a masked synthetic window, then fill the
//! gaps with an independent GP or a DGP-SI emulator. Every call takes and
//! returns JSON strings.

use dgpsi::dgp::{train_sem, DgpData, EnsemblePrediction, SemConfig};
use dgpsi::gp::{fit_gp, FitConfig};
use dgpsi::linked::{LayerArchitecture, NodeSpec};
use dgpsi::pipeline::synthetic::{COVARIATES, OUTPUT};
use dgpsi::pipeline::{
    apply_mask, discretise_hourly, generate_synthetic_window, standardise, Column, ColumnRole, MaskPlan,
    MaskUnit, ObservationTable, SyntheticConfig,
};
use dgpsi::rng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Serialize, Deserialize)]
pub struct DemoTable {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `columns[j][i]`, standardised; `null` where missing or masked.
    pub columns: Vec<Vec<Option<f64>>>,
    /// Withheld values at masked cells, same layout.
    pub masked: Vec<Vec<Option<f64>>>,
}

#[derive(Serialize)]
pub struct Curve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Per-imputation component means, empty for a single GP.
    pub components: Vec<Vec<f64>>,
    pub note: String,
}

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1).max(1) as f64).collect()
}

fn architecture() -> LayerArchitecture {
    LayerArchitecture::new(1, COVARIATES.iter().map(|c| NodeSpec::se(c)).collect(), NodeSpec::se(OUTPUT))
        .expect("fixed acid-base architecture")
}

fn to_table(t: &DemoTable) -> Result<ObservationTable, JsValue> {
    let cols = t
        .names
        .iter()
        .zip(&t.columns)
        .map(|(n, v)| {
            let role = if n == OUTPUT { ColumnRole::Output } else { ColumnRole::Covariate };
            Column::new(n, role, v.clone())
        })
        .collect();
    ObservationTable::new(t.times.clone(), cols).map_err(js_err)
}

/// A synthetic window with `proportion` of the `target` column's observed
/// cells masked, standardised after masking.
#[wasm_bindgen]
pub fn generate(seed: u32, proportion: f64, target: &str) -> Result<String, JsValue> {
    let cfg = SyntheticConfig {
        max_len: 60,
        ..SyntheticConfig::default()
    };
    let win = generate_synthetic_window(&cfg, &mut rng::stream(seed as u64, &[])).map_err(js_err)?;
    let table = discretise_hourly(&win.raw).and_then(|t| t.with_output(OUTPUT)).map_err(js_err)?;
    let plan = MaskPlan::draw(&table, proportion, &[target.to_string()], seed as u64, MaskUnit::Cell).map_err(js_err)?;
    let (masked, truth) = apply_mask(&table, &plan).map_err(js_err)?;
    let (z, record) = standardise(&masked).map_err(js_err)?;
    let mut hidden = vec![vec![None; z.n_rows()]; z.columns.len()];
    for (cell, v) in truth.cells.iter().zip(&truth.values) {
        let s = record.stats(&z.columns[cell.column].name).map_err(js_err)?;
        hidden[cell.column][cell.row] = Some((v - s.mean) / s.sd);
    }
    let out = DemoTable {
        times: z.times.clone(),
        names: z.columns.iter().map(|c| c.name.clone()).collect(),
        columns: z.columns.iter().map(|c| c.values.clone()).collect(),
        masked: hidden,
    };
    serde_json::to_string(&out).map_err(js_err)
}

/// Independent GP on one column's observed cells, evaluated on a grid.
#[wasm_bindgen]
pub fn gp_curve(table_json: &str, target: &str, points: usize) -> Result<String, JsValue> {
    let t: DemoTable = serde_json::from_str(table_json).map_err(js_err)?;
    let j = t.names.iter().position(|n| n == target).ok_or_else(|| js_err(format!("no column {target}")))?;
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        t.times.iter().zip(&t.columns[j]).filter_map(|(x, v)| v.map(|v| (*x, v))).unzip();
    let x = DMatrix::from_column_slice(xs.len(), 1, &xs);
    let gp = fit_gp(&x, &DVector::from_vec(ys), &FitConfig::default()).map_err(js_err)?;
    let times = grid(points);
    let mut mean = Vec::with_capacity(points);
    let mut sd = Vec::with_capacity(points);
    for &q in &times {
        let p = gp.predict(&[q]).map_err(js_err)?;
        mean.push(p.mean);
        sd.push(p.sd());
    }
    let h = gp.hyper();
    let note = format!(
        "lengthscale {:.3}, scale {:.3}, nugget {:.2e}",
        h.kernel.lengthscales[0], h.scale, h.nugget
    );
    serde_json::to_string(&Curve { times, mean, sd, components: Vec::new(), note }).map_err(js_err)
}

/// DGP-SI trained with a reduced budget, then the target's ensemble
/// posterior on a grid.
#[wasm_bindgen]
pub fn dgp_curve(table_json: &str, target: &str, points: usize, iterations: usize, seed: u32) -> Result<String, JsValue> {
    let t: DemoTable = serde_json::from_str(table_json).map_err(js_err)?;
    let table = to_table(&t)?;
    let arch = architecture();
    let (data, _) = DgpData::from_table(&table, &arch).map_err(js_err)?;
    let cfg = SemConfig {
        iterations,
        burn_in: iterations * 3 / 5,
        n_imputations: 10,
        seed: seed as u64,
        ..SemConfig::default()
    };
    let em = train_sem(&data, &arch, &cfg).map_err(js_err)?;
    let times = grid(points);
    let preds: Vec<EnsemblePrediction> = if target == OUTPUT {
        let qs: Vec<Vec<f64>> = times.iter().map(|&q| vec![q]).collect();
        em.predict_ensemble_many(&qs)
    } else {
        em.impute_covariates(&times, target)
    }
    .map_err(js_err)?;
    let components = (0..em.n_imputations())
        .map(|k| preds.iter().map(|p| p.components[k].mean).collect())
        .collect();
    let curve = Curve {
        mean: preds.iter().map(|p| p.mixture.mean).collect(),
        sd: preds.iter().map(|p| p.mixture.sd()).collect(),
        times,
        components,
        note: format!("{} imputations, {} missing latent entries", em.n_imputations(), data.missing_count()),
    };
    serde_json::to_string(&curve).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_then_fit_both_ways() {
        let json = generate(4, 0.2, "sid").unwrap();
        let t: DemoTable = serde_json::from_str(&json).unwrap();
        let j = t.names.iter().position(|n| n == "sid").unwrap();
        assert!(t.masked[j].iter().any(Option::is_some));
        for (v, m) in t.columns[j].iter().zip(&t.masked[j]) {
            assert!(!(v.is_some() && m.is_some()));
        }
        let gp: serde_json::Value = serde_json::from_str(&gp_curve(&json, "sid", 25).unwrap()).unwrap();
        assert_eq!(gp["mean"].as_array().unwrap().len(), 25);
        let dgp: serde_json::Value = serde_json::from_str(&dgp_curve(&json, "sid", 25, 10, 1).unwrap()).unwrap();
        assert_eq!(dgp["components"].as_array().unwrap().len(), 10);
        assert!(dgp["sd"].as_array().unwrap().iter().all(|s| s.as_f64().unwrap() >= 0.0));
    }
}
