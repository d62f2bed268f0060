//! Time-indexed tables of partially observed variables.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Output,
    Covariate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub role: ColumnRole,
    /// `None` marks a missing cell.
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn new(name: &str, role: ColumnRole, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.to_string(),
            role,
            values,
        }
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn observed_rows(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i].is_some()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    /// Strictly increasing.
    pub times: Vec<f64>,
    pub columns: Vec<Column>,
}

impl ObservationTable {
    pub fn new(times: Vec<f64>, columns: Vec<Column>) -> Result<Self> {
        let t = Self { times, columns };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.iter().any(|t| !t.is_finite()) || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("times must be finite and strictly increasing".into()));
        }
        for c in &self.columns {
            if c.values.len() != self.times.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.times.len(),
                    got: c.values.len(),
                });
            }
            if c.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("column {} has a non-finite value", c.name)));
            }
        }
        for (i, c) in self.columns.iter().enumerate() {
            if self.columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate column {}", c.name)));
            }
        }
        if self.columns.iter().filter(|c| c.role == ColumnRole::Output).count() > 1 {
            return Err(Error::Schema("more than one output column".into()));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.times.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown column {name}")))
    }

    pub fn output(&self) -> Option<&Column> {
        self.columns.iter().find(|c| c.role == ColumnRole::Output)
    }

    pub fn covariates(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(|c| c.role == ColumnRole::Covariate)
    }

    /// Per column, `true` where the cell is observed.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.columns
            .iter()
            .map(|c| c.values.iter().map(Option::is_some).collect())
            .collect()
    }

    /// Makes `name` the output column and every other column a covariate.
    pub fn with_output(mut self, name: &str) -> Result<Self> {
        self.column_index(name)?;
        for c in &mut self.columns {
            c.role = if c.name == name {
                ColumnRole::Output
            } else {
                ColumnRole::Covariate
            };
        }
        Ok(self)
    }

    /// CSV with header `time,<columns...>`; empty fields are missing.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![self.times[i].to_string()];
            rec.extend(self.columns.iter().map(|c| c.values[i].map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`ObservationTable::write_csv`]. All columns
    /// are covariates until [`ObservationTable::with_output`] is called.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(r);
        let header = r.headers()?.clone();
        if header.get(0).map(str::trim) != Some("time") {
            return Err(Error::Schema("first column must be time".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = k + 2;
            if rec.len() != names.len() + 1 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, got {}", names.len() + 1, rec.len()),
                });
            }
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    msg: format!("{s:?}: {e}"),
                })
            };
            times.push(num(&rec[0])?);
            for (j, col) in cols.iter_mut().enumerate() {
                let s = rec[j + 1].trim();
                col.push(if s.is_empty() { None } else { Some(num(s)?) });
            }
        }
        let columns = names
            .iter()
            .zip(cols)
            .map(|(n, v)| Column::new(n, ColumnRole::Covariate, v))
            .collect();
        Self::new(times, columns)
    }
}
