//! Six-step cannulation workflow with verification gates and the retry loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eye_sim::FailureCause;
use crate::robot::{Key, KeySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    Preparation,
    Navigation,
    Puncture,
    VerifyRetract,
    Infusion,
    Retraction,
    Done,
    Failed,
}

impl Step {
    pub fn is_terminal(self) -> bool {
        matches!(self, Step::Done | Step::Failed)
    }

    /// Compact code used in numeric log samples.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Step> {
        use Step::*;
        [
            Preparation,
            Navigation,
            Puncture,
            VerifyRetract,
            Infusion,
            Retraction,
            Done,
            Failed,
        ]
        .get(c as usize)
        .copied()
    }
}

/// Everything that gets time-stamped into the log: workflow transitions and
/// tissue events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    RcmRegistered,
    ContactVerified,
    PuncturePulseDone,
    VerificationPassed,
    VerificationFailed,
    FlushConfirmed,
    InfusionComplete,
    InfusionFailed,
    NeedleExited,
    PunctureOccurred,
    WallSlip,
}

impl EventKind {
    pub fn is_workflow(self) -> bool {
        !matches!(self, EventKind::PunctureOccurred | EventKind::WallSlip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEvent {
    pub kind: EventKind,
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<FailureCause>,
}

impl WorkflowEvent {
    pub fn new(kind: EventKind, t: f64) -> Self {
        WorkflowEvent { kind, t, cause: None }
    }

    pub fn failed(kind: EventKind, t: f64, cause: FailureCause) -> Self {
        WorkflowEvent {
            kind,
            t,
            cause: Some(cause),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error("{event:?} is not accepted in {step:?}")]
    RejectedTransition { step: Step, event: EventKind },
    #[error("verification cannot pass before the test flush is confirmed")]
    FlushNotConfirmed,
    #[error("event time {t} precedes the last transition at {last}")]
    NonMonotonic { t: f64, last: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FlushOrder {
    /// Classify from the B-scan first, then flush.
    #[default]
    AfterClassification,
    BeforeClassification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkflowConfig {
    pub max_attempts: u32,
    pub flush_order: FlushOrder,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            max_attempts: 10,
            flush_order: FlushOrder::AfterClassification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub step: Step,
    /// Current puncture attempt, 1-based once Puncture is first entered.
    pub attempt: u32,
    /// Entry time of each step, in order.
    pub history: Vec<(Step, f64)>,
    pub flush_confirmed: bool,
    pub failure_cause: Option<FailureCause>,
    pub max_attempts: u32,
}

impl WorkflowState {
    pub fn new(cfg: &WorkflowConfig) -> Self {
        WorkflowState {
            step: Step::Preparation,
            attempt: 0,
            history: vec![(Step::Preparation, 0.0)],
            flush_confirmed: false,
            failure_cause: None,
            max_attempts: cfg.max_attempts,
        }
    }

    pub fn last_time(&self) -> f64 {
        self.history.last().map_or(0.0, |h| h.1)
    }
}

/// Applies one event. Illegal pairs leave the state untouched.
pub fn advance(state: &WorkflowState, event: &WorkflowEvent) -> Result<WorkflowState, WorkflowError> {
    use EventKind as E;
    use Step as S;
    let reject = || WorkflowError::RejectedTransition {
        step: state.step,
        event: event.kind,
    };
    if !event.kind.is_workflow() {
        return Err(reject());
    }
    if event.t < state.last_time() {
        return Err(WorkflowError::NonMonotonic {
            t: event.t,
            last: state.last_time(),
        });
    }
    let mut next = state.clone();
    let target = match (state.step, event.kind) {
        (S::Preparation, E::RcmRegistered) => S::Navigation,
        (S::Navigation, E::ContactVerified) => {
            next.attempt = 1;
            S::Puncture
        }
        (S::Puncture, E::PuncturePulseDone) => {
            next.flush_confirmed = false;
            S::VerifyRetract
        }
        (S::VerifyRetract, E::FlushConfirmed) => {
            next.flush_confirmed = true;
            return Ok(next);
        }
        (S::VerifyRetract, E::VerificationPassed) => {
            if !state.flush_confirmed {
                return Err(WorkflowError::FlushNotConfirmed);
            }
            S::Infusion
        }
        (S::VerifyRetract, E::VerificationFailed) => {
            if state.attempt >= state.max_attempts {
                next.failure_cause = Some(FailureCause::MaxAttempts);
                S::Failed
            } else {
                next.attempt += 1;
                S::Puncture
            }
        }
        (S::Infusion, E::InfusionComplete) => S::Retraction,
        (S::Infusion, E::InfusionFailed) => {
            next.failure_cause = Some(event.cause.unwrap_or(FailureCause::NotIntraluminal));
            S::Failed
        }
        (S::Retraction, E::NeedleExited) => S::Done,
        _ => return Err(reject()),
    };
    next.step = target;
    next.history.push((target, event.t));
    Ok(next)
}

/// Keys the operator may use in a step.
pub fn gate_keys(step: Step) -> KeySet {
    use Key::*;
    match step {
        Step::Navigation => KeySet::of(&[Left, Right, Up, Down, D, U]),
        Step::Puncture => KeySet::of(&[P]),
        Step::VerifyRetract => KeySet::of(&[R, Left, Right, Up, Down]),
        Step::Retraction => KeySet::of(&[R]),
        Step::Preparation | Step::Infusion | Step::Done | Step::Failed => KeySet::empty(),
    }
}

/// Per-step timing, grouped as navigation, puncture with verification,
/// infusion and retraction. Rows are `None` when the trial never got there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDurations {
    pub navigation_s: Option<f64>,
    pub puncture_retract_s: Option<f64>,
    pub infusion_s: Option<f64>,
    pub retraction_s: Option<f64>,
}

impl StepDurations {
    pub fn rows(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("navigation", self.navigation_s),
            ("puncture_retract", self.puncture_retract_s),
            ("infusion", self.infusion_s),
            ("retraction", self.retraction_s),
        ]
    }

    pub fn total(&self) -> f64 {
        self.rows().iter().filter_map(|r| r.1).sum()
    }
}

pub fn step_durations(events: &[WorkflowEvent]) -> StepDurations {
    let first = |k: EventKind| events.iter().find(|e| e.kind == k).map(|e| e.t);
    let last = |k: EventKind| events.iter().rev().find(|e| e.kind == k).map(|e| e.t);
    let diff = |a: Option<f64>, b: Option<f64>| Some(b? - a?);
    let registered = first(EventKind::RcmRegistered);
    let contact = first(EventKind::ContactVerified);
    let passed = last(EventKind::VerificationPassed);
    let infused = first(EventKind::InfusionComplete);
    let infusion_end = infused.or(first(EventKind::InfusionFailed));
    StepDurations {
        navigation_s: diff(registered, contact),
        puncture_retract_s: diff(contact, passed),
        infusion_s: diff(passed, infusion_end),
        retraction_s: diff(infused, first(EventKind::NeedleExited)),
    }
}
