//! Masking protocol for benchmark runs.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::table::ObservationTable;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskUnit {
    /// Cells drawn uniformly without replacement, per target column.
    Cell,
    /// Whole rows of the target columns.
    Row,
    /// Every observed target cell with time in `[start, end]`.
    Interval { start: f64, end: f64 },
}

/// A masked cell: column index and row index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub column: usize,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub proportion: f64,
    pub target_columns: Vec<String>,
    pub seed: u64,
    pub unit: MaskUnit,
    /// Sorted by column, then row.
    pub masked_cells: Vec<Cell>,
}

fn masked_count(proportion: f64, observed: usize) -> usize {
    (proportion * observed as f64).round() as usize
}

impl MaskPlan {
    /// Draws the cells to mask. For `Cell`, each target column loses
    /// `round(proportion x observed)` cells; for `Row`, that many rows are
    /// drawn among rows with any observed target cell.
    pub fn draw(table: &ObservationTable, proportion: f64, targets: &[String], seed: u64, unit: MaskUnit) -> Result<Self> {
        if !(0.0..=1.0).contains(&proportion) {
            return Err(Error::Config(format!("mask proportion {proportion} outside [0, 1]")));
        }
        let cols = targets
            .iter()
            .map(|t| table.column_index(t))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::new();
        match &unit {
            MaskUnit::Cell => {
                for &c in &cols {
                    let obs = table.columns[c].observed_rows();
                    let k = masked_count(proportion, obs.len());
                    let mut r = rng::stream(seed, &[0x6365_6c6c, c as u64]);
                    cells.extend(sample(&mut r, obs.len(), k).into_iter().map(|i| Cell {
                        column: c,
                        row: obs[i],
                    }));
                }
            }
            MaskUnit::Row => {
                let rows: Vec<usize> = (0..table.n_rows())
                    .filter(|&i| cols.iter().any(|&c| table.columns[c].values[i].is_some()))
                    .collect();
                let k = masked_count(proportion, rows.len());
                let mut r = rng::stream(seed, &[0x726f_7773]);
                for i in sample(&mut r, rows.len(), k) {
                    for &c in &cols {
                        if table.columns[c].values[rows[i]].is_some() {
                            cells.push(Cell { column: c, row: rows[i] });
                        }
                    }
                }
            }
            MaskUnit::Interval { start, end } => {
                for &c in &cols {
                    for i in table.columns[c].observed_rows() {
                        if table.times[i] >= *start && table.times[i] <= *end {
                            cells.push(Cell { column: c, row: i });
                        }
                    }
                }
            }
        }
        cells.sort();
        Ok(Self {
            proportion,
            target_columns: targets.to_vec(),
            seed,
            unit,
            masked_cells: cells,
        })
    }
}

/// Original values of the masked cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedTruth {
    pub cells: Vec<Cell>,
    pub values: Vec<f64>,
}

/// Removes the planned cells and returns their values separately.
pub fn apply_mask(table: &ObservationTable, plan: &MaskPlan) -> Result<(ObservationTable, MaskedTruth)> {
    let mut out = table.clone();
    let mut values = Vec::with_capacity(plan.masked_cells.len());
    for (k, cell) in plan.masked_cells.iter().enumerate() {
        if plan.masked_cells[..k].contains(cell) {
            return Err(Error::MaskConsistency(format!("cell {cell:?} listed twice")));
        }
        let col = out
            .columns
            .get_mut(cell.column)
            .ok_or_else(|| Error::MaskConsistency(format!("column {} out of range", cell.column)))?;
        if !plan.target_columns.contains(&col.name) {
            return Err(Error::MaskConsistency(format!("column {} is not a mask target", col.name)));
        }
        let v = col
            .values
            .get_mut(cell.row)
            .ok_or_else(|| Error::MaskConsistency(format!("row {} out of range", cell.row)))?
            .take()
            .ok_or_else(|| Error::MaskConsistency(format!("cell {cell:?} is not observed")))?;
        values.push(v);
    }
    Ok((
        out,
        MaskedTruth {
            cells: plan.masked_cells.clone(),
            values,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{Column, ColumnRole};

    fn table(n: usize) -> ObservationTable {
        ObservationTable::new(
            (0..n).map(|i| i as f64 / n as f64).collect(),
            vec![
                Column::new("a", ColumnRole::Covariate, (0..n).map(|i| Some(i as f64)).collect()),
                Column::new("b", ColumnRole::Output, (0..n).map(|i| (i % 3 != 0).then_some(1.0)).collect()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_proportion_is_identity() {
        let t = table(20);
        let plan = MaskPlan::draw(&t, 0.0, &["a".into()], 1, MaskUnit::Cell).unwrap();
        let (m, truth) = apply_mask(&t, &plan).unwrap();
        assert_eq!(m, t);
        assert!(truth.values.is_empty());
    }

    #[test]
    fn rounding_rule_and_determinism() {
        let t = table(100);
        let plan = MaskPlan::draw(&t, 0.10, &["a".into()], 5, MaskUnit::Cell).unwrap();
        assert_eq!(plan.masked_cells.len(), 10);
        let again = MaskPlan::draw(&t, 0.10, &["a".into()], 5, MaskUnit::Cell).unwrap();
        assert_eq!(plan, again);
        // only observed cells of b are eligible: 66 of 100
        let plan = MaskPlan::draw(&t, 0.25, &["b".into()], 5, MaskUnit::Cell).unwrap();
        assert_eq!(plan.masked_cells.len(), 17);
        let (_, truth) = apply_mask(&t, &plan).unwrap();
        assert!(truth.values.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn rows_and_intervals() {
        let t = table(10);
        let plan = MaskPlan::draw(&t, 0.2, &["a".into(), "b".into()], 0, MaskUnit::Row).unwrap();
        let rows: std::collections::BTreeSet<usize> = plan.masked_cells.iter().map(|c| c.row).collect();
        assert_eq!(rows.len(), 2);
        let plan = MaskPlan::draw(&t, 0.0, &["a".into()], 0, MaskUnit::Interval { start: 0.2, end: 0.45 }).unwrap();
        assert_eq!(plan.masked_cells.iter().map(|c| c.row).collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn inconsistent_plans_are_rejected() {
        let t = table(6);
        let mut plan = MaskPlan::draw(&t, 0.0, &["b".into()], 0, MaskUnit::Cell).unwrap();
        plan.masked_cells.push(Cell { column: 1, row: 0 });
        assert!(matches!(apply_mask(&t, &plan), Err(Error::MaskConsistency(_))));
        plan.masked_cells = vec![Cell { column: 1, row: 99 }];
        assert!(matches!(apply_mask(&t, &plan), Err(Error::MaskConsistency(_))));
    }
}
