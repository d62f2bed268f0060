//! Hourly discretisation and z-scoring.

use serde::{Deserialize, Serialize};

use super::ingest::RawTable;
use super::table::{Column, ColumnRole, ObservationTable};
use crate::error::{Error, Result};

/// One row per hour from the first observation to the last; each cell is
/// the mean of that variable's observations in the hour, aggregated per
/// column. Time is then scaled affinely to `[0, 1]` (a single hour maps
/// to 0).
pub fn discretise_hourly(raw: &RawTable) -> Result<ObservationTable> {
    if raw.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let t0 = raw.times[0];
    let bucket = |t: f64| ((t - t0).floor()) as usize;
    let n = bucket(raw.times[raw.len() - 1]) + 1;
    let p = raw.names.len();
    let mut sums = vec![vec![0.0; n]; p];
    let mut counts = vec![vec![0usize; n]; p];
    for (t, row) in raw.times.iter().zip(&raw.rows) {
        let b = bucket(*t);
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                sums[j][b] += v;
                counts[j][b] += 1;
            }
        }
    }
    let times = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
    };
    let columns = raw
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let values = (0..n)
                .map(|b| (counts[j][b] > 0).then(|| sums[j][b] / counts[j][b] as f64))
                .collect();
            Column::new(name, ColumnRole::Covariate, values)
        })
        .collect();
    ObservationTable::new(times, columns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Per-column statistics of a z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardisationRecord {
    pub columns: Vec<ColumnStats>,
}

impl StandardisationRecord {
    pub fn stats(&self, name: &str) -> Result<&ColumnStats> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("no standardisation record for {name}")))
    }

    pub fn to_original(&self, name: &str, z: f64) -> Result<f64> {
        let s = self.stats(name)?;
        Ok(s.mean + s.sd * z)
    }

    pub fn variance_to_original(&self, name: &str, var: f64) -> Result<f64> {
        let s = self.stats(name)?;
        Ok(s.sd * s.sd * var)
    }

    pub fn invert(&self, table: &ObservationTable) -> Result<ObservationTable> {
        let mut out = table.clone();
        for col in &mut out.columns {
            let s = self.stats(&col.name)?;
            for v in col.values.iter_mut().flatten() {
                *v = s.mean + s.sd * *v;
            }
        }
        Ok(out)
    }
}

/// z-scores every column using the mean and sample (n - 1) standard
/// deviation of its observed cells.
pub fn standardise(table: &ObservationTable) -> Result<(ObservationTable, StandardisationRecord)> {
    let mut out = table.clone();
    let mut stats = Vec::with_capacity(table.columns.len());
    for col in &mut out.columns {
        let obs: Vec<f64> = col.values.iter().flatten().copied().collect();
        if obs.len() < 2 {
            return Err(Error::DegenerateColumn(format!("{} has fewer than 2 observed values", col.name)));
        }
        let n = obs.len() as f64;
        let mean = obs.iter().sum::<f64>() / n;
        let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::DegenerateColumn(format!("{} has zero spread", col.name)));
        }
        for v in col.values.iter_mut().flatten() {
            *v = (*v - mean) / sd;
        }
        stats.push(ColumnStats {
            name: col.name.clone(),
            mean,
            sd,
        });
    }
    Ok((out, StandardisationRecord { columns: stats }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ingest::ingest_csv;

    #[test]
    fn same_hour_values_are_averaged() {
        let raw = ingest_csv("time,ph\n0.1,7.38\n0.7,7.42\n1.2,7.3\n".as_bytes(), &[]).unwrap();
        let t = discretise_hourly(&raw).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert!((t.columns[0].values[0].unwrap() - 7.40).abs() < 1e-12);
    }

    #[test]
    fn empty_hours_become_missing_cells() {
        let raw = ingest_csv("time,ph\n0,7.4\n2,7.3\n".as_bytes(), &[]).unwrap();
        let t = discretise_hourly(&raw).unwrap();
        assert_eq!(t.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(t.columns[0].values, vec![Some(7.4), None, Some(7.3)]);
    }

    #[test]
    fn single_hour_window() {
        let raw = ingest_csv("time,ph\n5.2,7.4\n5.9,7.2\n".as_bytes(), &[]).unwrap();
        let t = discretise_hourly(&raw).unwrap();
        assert_eq!(t.times, vec![0.0]);
        assert!(matches!(
            discretise_hourly(&RawTable {
                names: vec![],
                times: vec![],
                rows: vec![]
            }),
            Err(Error::EmptyWindow)
        ));
    }

    fn table(values: Vec<Option<f64>>) -> ObservationTable {
        let times = (0..values.len()).map(|i| i as f64).collect();
        ObservationTable::new(times, vec![Column::new("a", ColumnRole::Covariate, values)]).unwrap()
    }

    #[test]
    fn sample_sd_convention() {
        let (z, rec) = standardise(&table(vec![Some(1.0), Some(3.0)])).unwrap();
        assert_eq!(z.columns[0].values, vec![Some(-1.0 / 2f64.sqrt()), Some(1.0 / 2f64.sqrt())]);
        assert!((rec.columns[0].sd - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn round_trip_and_missing_cells() {
        let t = table(vec![Some(7.31), None, Some(7.45), Some(7.2)]);
        let (z, rec) = standardise(&t).unwrap();
        assert_eq!(z.columns[0].values[1], None);
        let back = rec.invert(&z).unwrap();
        for (a, b) in back.columns[0].values.iter().zip(&t.columns[0].values) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => panic!("mask changed"),
            }
        }
    }

    #[test]
    fn constant_column_is_degenerate() {
        assert!(matches!(
            standardise(&table(vec![Some(2.0), Some(2.0)])),
            Err(Error::DegenerateColumn(_))
        ));
    }
}
