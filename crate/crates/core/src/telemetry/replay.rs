use thiserror::Error;

use super::TrialLog;
use crate::config::{content_hash, SimConfig};
use crate::eye_sim::Scenario;
use crate::sim::{SimError, Simulation};

#[derive(Debug, Error)]
pub enum ReplayError {
    /// The log's embedded scenario or config no longer matches its hashes,
    /// or does not match the files the caller expects.
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// First point where the re-run departs from the recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// Sample index, or event/input index for non-sample fields.
    pub index: usize,
    pub field: String,
    pub expected: String,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub samples_compared: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn matched(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Re-executes a log from its header and recorded inputs and compares every
/// sample bit for bit, then the events and the outcome.
///
/// `scenario` and `config` optionally name the inputs the caller believes
/// produced the log; a hash mismatch refuses the replay.
pub fn replay(
    log: &TrialLog,
    scenario: Option<&Scenario>,
    config: Option<&SimConfig>,
) -> Result<ReplayReport, ReplayError> {
    replay_to_end(log, scenario, config).map(|(report, _)| report)
}

/// [`replay`], also returning the re-run simulation in its final state.
pub fn replay_to_end(
    log: &TrialLog,
    scenario: Option<&Scenario>,
    config: Option<&SimConfig>,
) -> Result<(ReplayReport, Simulation), ReplayError> {
    let h = &log.header;
    if !h.is_consistent() {
        return Err(ReplayError::Refused(
            "embedded scenario or config does not match its hash".into(),
        ));
    }
    if let Some(scenario) = scenario {
        if content_hash(scenario) != h.scenario_hash {
            return Err(ReplayError::Refused(format!(
                "scenario hash {} differs from logged {}",
                content_hash(scenario),
                h.scenario_hash
            )));
        }
    }
    if let Some(config) = config {
        if content_hash(config) != h.config_hash {
            return Err(ReplayError::Refused(format!(
                "config hash {} differs from logged {}",
                content_hash(config),
                h.config_hash
            )));
        }
    }
    let mut sim = Simulation::new(h.scenario.clone(), h.config.clone(), h.seed)?;
    let mut inputs = log.inputs.iter().peekable();
    let mut divergence = None;
    let target = log.samples.len();
    let mut compared = 0;
    loop {
        let got = sim.log().samples.len();
        if got > compared {
            // Compare the newest sample as soon as it exists.
            let i = got - 1;
            if i < target {
                if let Some(d) = compare_sample(log, &sim, i) {
                    divergence = Some(d);
                    break;
                }
            }
            compared = got;
        }
        if got >= target || sim.finished() {
            break;
        }
        while let Some(inp) = inputs.next_if(|i| i.tick == sim.tick_index()) {
            // Rejections are part of the recording too; outcome is compared below.
            let _ = sim.apply(&inp.message);
        }
        sim.tick();
    }
    if divergence.is_none() {
        while let Some(inp) = inputs.next_if(|i| i.tick == sim.tick_index()) {
            let _ = sim.apply(&inp.message);
        }
        if log.outcome.is_some() && !sim.finished() {
            sim.abort();
        }
        divergence = compare_tail(log, sim.log());
    }
    let report = ReplayReport {
        samples_compared: compared.min(target),
        divergence,
    };
    Ok((report, sim))
}

fn compare_sample(log: &TrialLog, sim: &Simulation, i: usize) -> Option<Divergence> {
    let (a, b) = (&log.samples[i], &sim.log().samples[i]);
    for ((name, x), (_, y)) in a.scalar_fields().into_iter().zip(b.scalar_fields()) {
        if x.to_bits() != y.to_bits() {
            return Some(Divergence {
                index: i,
                field: name,
                expected: format!("{x:e}"),
                got: format!("{y:e}"),
            });
        }
    }
    (a.step != b.step).then(|| Divergence {
        index: i,
        field: "step".into(),
        expected: format!("{:?}", a.step),
        got: format!("{:?}", b.step),
    })
}

fn compare_tail(want: &TrialLog, got: &TrialLog) -> Option<Divergence> {
    let diff = |index: usize, field: &str, e: String, g: String| {
        Some(Divergence {
            index,
            field: field.into(),
            expected: e,
            got: g,
        })
    };
    if want.samples.len() != got.samples.len() {
        return diff(
            want.samples.len().min(got.samples.len()),
            "sample count",
            want.samples.len().to_string(),
            got.samples.len().to_string(),
        );
    }
    for (i, (a, b)) in want.events.iter().zip(&got.events).enumerate() {
        if a != b {
            return diff(i, "event", format!("{a:?}"), format!("{b:?}"));
        }
    }
    if want.events.len() != got.events.len() {
        return diff(
            want.events.len().min(got.events.len()),
            "event count",
            want.events.len().to_string(),
            got.events.len().to_string(),
        );
    }
    if want.outcome != got.outcome {
        return diff(
            0,
            "outcome",
            format!("{:?}", want.outcome),
            format!("{:?}", got.outcome),
        );
    }
    None
}
