//! Raw timestamped CSV input.

use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};

/// Unaggregated observations, sorted by time; duplicate times are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    /// Hours (numeric timestamps as given; ISO-8601 as hours since the epoch).
    pub times: Vec<f64>,
    /// `rows[i][j]` is variable `names[j]` at `times[i]`.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `time,<var>...` with numeric-hour timestamps and empty
    /// fields for missing values.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.rows) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parses a numeric hour offset or an ISO-8601 date-time into hours.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(h) = s.parse::<f64>() {
        return h.is_finite().then_some(h);
    }
    let secs = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9
    } else if let Some(dt) = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
    {
        let utc = dt.and_utc();
        utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9
    } else {
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
        d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64
    };
    Some(secs / 3600.0)
}

/// Reads a CSV with header `time,<var>...`. With a non-empty `declared`
/// list, every declared column must be present and no others may appear;
/// the result keeps the declared order.
pub fn ingest_csv<R: Read>(reader: R, declared: &[String]) -> Result<RawTable> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("time") {
        return Err(Error::Schema("first column must be named time".into()));
    }
    let present = &header[1..];
    let names: Vec<String> = if declared.is_empty() {
        present.to_vec()
    } else {
        if let Some(missing) = declared.iter().find(|d| !present.contains(d)) {
            return Err(Error::Schema(format!("declared column {missing} not found")));
        }
        if let Some(extra) = present.iter().find(|p| !declared.contains(p)) {
            return Err(Error::Schema(format!("unknown column {extra}")));
        }
        declared.to_vec()
    };
    let src: Vec<usize> = names
        .iter()
        .map(|n| present.iter().position(|p| p == n).unwrap() + 1)
        .collect();

    let mut entries: Vec<(f64, Vec<Option<f64>>)> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", header.len(), rec.len()),
            });
        }
        let t = parse_timestamp(&rec[0]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad timestamp {:?}", &rec[0]),
        })?;
        let vals = src
            .iter()
            .map(|&j| {
                let s = rec[j].trim();
                if s.is_empty() {
                    return Ok(None);
                }
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(Error::Parse {
                        line,
                        msg: format!("bad value {s:?} in column {}", header[j]),
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push((t, vals));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (times, rows) = entries.into_iter().unzip();
    Ok(RawTable { names, times, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows() {
        let raw = ingest_csv("time,ph,pco2\n0,7.4,40\n1,,41\n2.5,7.3,\n".as_bytes(), &[]).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(raw.rows[1], vec![None, Some(41.0)]);
    }

    #[test]
    fn shuffled_rows_are_sorted() {
        let raw = ingest_csv("time,ph\n3,1\n1,2\n2,3\n1,4\n".as_bytes(), &[]).unwrap();
        assert_eq!(raw.times, vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(raw.rows[0], vec![Some(2.0)]);
        assert_eq!(raw.rows[1], vec![Some(4.0)]);
    }

    #[test]
    fn missing_declared_column_is_named() {
        let err = ingest_csv("time,ph\n0,1\n".as_bytes(), &["ph".into(), "sid".into()]).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("sid")));
        let err = ingest_csv("time,ph,x\n0,1,2\n".as_bytes(), &["ph".into()]).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains('x')));
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let err = ingest_csv("time,ph\n0,1\n1,abc\n".as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = ingest_csv("time,ph\nyesterday,1\n".as_bytes(), &[]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn iso_timestamps_are_hours() {
        let a = parse_timestamp("2020-01-01T00:00:00Z").unwrap();
        let b = parse_timestamp("2020-01-01 01:30:00").unwrap();
        assert!((b - a - 1.5).abs() < 1e-9);
    }

    #[test]
    fn written_csv_reads_back_exactly() {
        let raw = RawTable {
            names: vec!["ph".into(), "sid".into()],
            times: vec![0.1, 0.1, 2.0 / 3.0],
            rows: vec![vec![Some(7.1), None], vec![None, Some(1e-17)], vec![Some(-0.3), Some(36.25)]],
        };
        let mut buf = Vec::new();
        raw.write_csv(&mut buf).unwrap();
        assert_eq!(ingest_csv(buf.as_slice(), &[]).unwrap(), raw);
    }
}
