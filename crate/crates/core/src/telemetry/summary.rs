use serde::{Deserialize, Serialize};

use super::TrialLog;
use crate::eye_sim::{count_spikes, FailureCause};
use crate::workflow::{step_durations, EventKind, Step, StepDurations};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub durations: StepDurations,
    /// Tip path length during each puncture attempt, µm.
    pub insertion_um: Vec<f64>,
    pub max_rcm_deviation_um: f64,
    pub success: bool,
    pub failure_cause: Option<FailureCause>,
    pub final_step: Option<Step>,
    /// Handle-force excursions above the spike threshold.
    pub force_spikes: usize,
    pub duration_s: f64,
}

/// Path length of the tip over each puncture attempt. An attempt covers the
/// samples tagged `Puncture` up to and including the sample stamped with its
/// `PuncturePulseDone` event.
pub fn insertion_distances_um(log: &TrialLog) -> Vec<f64> {
    let mut done_times = log
        .events
        .iter()
        .filter(|e| e.kind == EventKind::PuncturePulseDone)
        .map(|e| e.t)
        .peekable();
    let mut out = Vec::new();
    let mut acc = 0.0;
    for w in log.samples.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let closes = done_times.peek() == Some(&cur.t);
        if cur.step == Step::Puncture || closes {
            let d: f64 = (0..3).map(|k| (cur.tip[k] - prev.tip[k]).powi(2)).sum::<f64>().sqrt();
            acc += d * 1e3;
        }
        if closes {
            out.push(acc);
            acc = 0.0;
            done_times.next();
        }
    }
    out
}

pub fn summarize(log: &TrialLog) -> TrialSummary {
    let max_rcm_deviation_um = log.samples.iter().map(|s| s.rcm_deviation_um).fold(0.0, f64::max);
    let mags: Vec<f64> = log
        .samples
        .iter()
        .map(|s| s.force.iter().map(|f| f * f).sum::<f64>().sqrt())
        .collect();
    let outcome = log.outcome.as_ref();
    TrialSummary {
        durations: step_durations(&log.events),
        insertion_um: insertion_distances_um(log),
        max_rcm_deviation_um,
        success: outcome.is_some_and(|o| o.success),
        failure_cause: outcome.and_then(|o| o.failure_cause),
        final_step: outcome.map(|o| o.final_step),
        force_spikes: count_spikes(&mags, log.header.config.force.spike_threshold_mn()),
        duration_s: log.duration(),
    }
}
