//! Mean absolute error over masked cells, and across-window aggregation.

use serde::{Deserialize, Serialize};

use super::mask::{Cell, MaskedTruth};
use super::preprocess::StandardisationRecord;
use super::table::ObservationTable;
use crate::baselines::ImputationMethodResult;
use crate::error::{Error, Result};

/// `(1 / n) sum |truth - estimate|`.
pub fn mae(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::IncompleteResult("no cells to evaluate".into()));
    }
    Ok(truth.iter().zip(estimate).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64)
}

impl MaskedTruth {
    /// Truth values z-scored with `record`, looked up through `table`'s
    /// column names.
    pub fn standardised(&self, table: &ObservationTable, record: &StandardisationRecord) -> Result<MaskedTruth> {
        let values = self
            .cells
            .iter()
            .zip(&self.values)
            .map(|(c, v)| {
                let s = record.stats(&table.columns[c.column].name)?;
                Ok((v - s.mean) / s.sd)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaskedTruth {
            cells: self.cells.clone(),
            values,
        })
    }

    pub fn value(&self, cell: Cell) -> Option<f64> {
        self.cells.iter().position(|c| *c == cell).map(|k| self.values[k])
    }
}

/// MAE of `result` over `cells`, all of which must be masked cells.
pub fn evaluate_mae(truth: &MaskedTruth, result: &ImputationMethodResult, cells: &[Cell]) -> Result<f64> {
    let mut t = Vec::with_capacity(cells.len());
    let mut e = Vec::with_capacity(cells.len());
    for &cell in cells {
        let v = truth
            .value(cell)
            .ok_or_else(|| Error::MaskConsistency(format!("cell {cell:?} was not masked")))?;
        let est = result
            .filled
            .columns
            .get(cell.column)
            .and_then(|c| c.values.get(cell.row).copied().flatten())
            .ok_or_else(|| Error::IncompleteResult(format!("no estimate at {cell:?}")))?;
        t.push(v);
        e.push(est);
    }
    mae(&t, &e)
}

/// Mean and standard error across windows (sample sd / sqrt(n)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Some(Aggregate {
        mean,
        std_error,
        n: values.len(),
    })
}
