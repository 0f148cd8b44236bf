use std::collections::BTreeMap;

use thiserror::Error;

use super::TrialLog;
use crate::workflow::{EventKind, Step};

pub const CSV_HEADER: [&str; 12] = ["t", "x", "y", "z", "vx", "vy", "vz", "fx", "fy", "fz", "step", "event"];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Field { row: usize, reason: String },
}

/// One CSV row: the sample fields carried in the export.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub tip: [f64; 3],
    pub vel: [f64; 3],
    pub force: [f64; 3],
    pub step: Step,
    pub events: Vec<EventKind>,
}

/// One row per sample. Events are attached to the sample with the same
/// timestamp, `;`-separated. Floats use the shortest exact representation.
pub fn export_csv(log: &TrialLog) -> Result<Vec<u8>, CsvError> {
    let mut by_time: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for e in &log.events {
        by_time.entry(e.t.to_bits()).or_default().push(format!("{:?}", e.kind));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for s in &log.samples {
        let mut rec: Vec<String> = Vec::with_capacity(12);
        rec.push(s.t.to_string());
        for v in s.tip.iter().chain(&s.vel).chain(&s.force) {
            rec.push(v.to_string());
        }
        rec.push(format!("{:?}", s.step));
        rec.push(by_time.get(&s.t.to_bits()).map(|v| v.join(";")).unwrap_or_default());
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

fn parse_step(s: &str) -> Option<Step> {
    (0..8).filter_map(Step::from_code).find(|st| format!("{st:?}") == s)
}

fn parse_event(s: &str) -> Option<EventKind> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
}

pub fn import_csv(bytes: &[u8]) -> Result<Vec<CsvRow>, CsvError> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(CsvError::Field {
            row: 0,
            reason: format!("unexpected header {headers:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let bad = |reason: String| CsvError::Field { row, reason };
        let num = |k: usize| {
            rec[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("{}: {e}", CSV_HEADER[k])))
        };
        let step = parse_step(&rec[10]).ok_or_else(|| bad(format!("step {:?}", &rec[10])))?;
        let events = if rec[11].is_empty() {
            Vec::new()
        } else {
            rec[11]
                .split(';')
                .map(|e| parse_event(e).ok_or_else(|| bad(format!("event {e:?}"))))
                .collect::<Result<_, _>>()?
        };
        rows.push(CsvRow {
            t: num(0)?,
            tip: [num(1)?, num(2)?, num(3)?],
            vel: [num(4)?, num(5)?, num(6)?],
            force: [num(7)?, num(8)?, num(9)?],
            step,
            events,
        });
    }
    Ok(rows)
}
