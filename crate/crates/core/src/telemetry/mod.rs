//! Trial logs: recording, the binary file format, CSV export, summaries and
//! replay.

mod binary;
mod csv_export;
mod replay;
mod summary;

pub use binary::{decode, encode, DecodeError, MAGIC, VERSION};
pub use csv_export::{export_csv, import_csv, CsvError, CSV_HEADER};
pub use replay::{replay, replay_to_end, Divergence, ReplayError, ReplayReport};
pub use summary::{insertion_distances_um, summarize, TrialSummary};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{content_hash, SimConfig};
use crate::eye_sim::{FailureCause, Scenario};
use crate::protocol::ClientMessage;
use crate::workflow::{Step, WorkflowEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub scenario_hash: String,
    pub config_hash: String,
    pub seed: u64,
    /// Simulation time of the first sample.
    pub start_time: f64,
    pub scenario: Scenario,
    pub config: SimConfig,
}

impl LogHeader {
    pub fn new(scenario: &Scenario, config: &SimConfig, seed: u64) -> Self {
        LogHeader {
            scenario_hash: content_hash(scenario),
            config_hash: content_hash(config),
            seed,
            start_time: 0.0,
            scenario: scenario.clone(),
            config: config.clone(),
        }
    }

    /// True when the embedded scenario and config still match their hashes.
    pub fn is_consistent(&self) -> bool {
        self.scenario_hash == content_hash(&self.scenario) && self.config_hash == content_hash(&self.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub joints: [f64; 5],
    pub tip: [f64; 3],
    pub vel: [f64; 3],
    pub force: [f64; 3],
    pub rcm_deviation_um: f64,
    pub step: Step,
}

impl Sample {
    /// Fields compared bit-for-bit by replay, with their names.
    pub fn scalar_fields(&self) -> Vec<(String, f64)> {
        let mut out = vec![("t".to_string(), self.t)];
        let groups: [(&str, &[f64]); 4] = [
            ("joints", &self.joints),
            ("tip", &self.tip),
            ("vel", &self.vel),
            ("force", &self.force),
        ];
        for (name, vals) in groups {
            for (i, v) in vals.iter().enumerate() {
                out.push((format!("{name}[{i}]"), *v));
            }
        }
        out.push(("rcm_deviation_um".to_string(), self.rcm_deviation_um));
        out
    }
}

/// A client message accepted before simulation tick `tick`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedInput {
    pub tick: u64,
    pub message: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    pub failure_cause: Option<FailureCause>,
    pub final_step: Step,
    pub end_time: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("sample time {t} does not follow {last}")]
    OutOfOrder { t: f64, last: f64 },
    #[error("event time {t} precedes {last}")]
    EventOutOfOrder { t: f64, last: f64 },
    #[error("input tick {tick} precedes {last}")]
    InputOutOfOrder { tick: u64, last: u64 },
    #[error("log is closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub header: LogHeader,
    pub samples: Vec<Sample>,
    pub events: Vec<WorkflowEvent>,
    pub inputs: Vec<LoggedInput>,
    pub outcome: Option<Outcome>,
}

impl TrialLog {
    pub fn new(header: LogHeader) -> Self {
        TrialLog {
            header,
            samples: Vec::new(),
            events: Vec::new(),
            inputs: Vec::new(),
            outcome: None,
        }
    }

    pub fn record_sample(&mut self, s: Sample) -> Result<(), RecordError> {
        self.open()?;
        if let Some(last) = self.samples.last() {
            if !(s.t > last.t) {
                return Err(RecordError::OutOfOrder { t: s.t, last: last.t });
            }
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn record_event(&mut self, e: WorkflowEvent) -> Result<(), RecordError> {
        self.open()?;
        if let Some(last) = self.events.last() {
            if e.t < last.t {
                return Err(RecordError::EventOutOfOrder { t: e.t, last: last.t });
            }
        }
        self.events.push(e);
        Ok(())
    }

    pub fn record_input(&mut self, tick: u64, message: ClientMessage) -> Result<(), RecordError> {
        self.open()?;
        if let Some(last) = self.inputs.last() {
            if tick < last.tick {
                return Err(RecordError::InputOutOfOrder { tick, last: last.tick });
            }
        }
        self.inputs.push(LoggedInput { tick, message });
        Ok(())
    }

    pub fn close(&mut self, outcome: Outcome) {
        if self.outcome.is_none() {
            self.outcome = Some(outcome);
        }
    }

    pub fn is_closed(&self) -> bool {
        self.outcome.is_some()
    }

    fn open(&self) -> Result<(), RecordError> {
        if self.is_closed() {
            Err(RecordError::Closed)
        } else {
            Ok(())
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}
