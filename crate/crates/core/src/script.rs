//! Timed input scripts for headless trials.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{ClientMessage, PlaneRequest, ServerMessage};
use crate::robot::{Key, KeyAction};
use crate::session::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptAction {
    KeyDown,
    KeyUp,
    RequestBscan,
    DeclareVerification,
    BeginInfusion,
    ConfirmContact,
}

/// One scripted input, applied before the tick nearest to `at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    /// Simulation time, s.
    pub at: f64,
    pub action: ScriptAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Key>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<PlaneRequest>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("entry {index}: {reason}")]
    Entry { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Script(pub Vec<ScriptEntry>);

impl ScriptEntry {
    pub fn new(at: f64, action: ScriptAction) -> Self {
        ScriptEntry {
            at,
            action,
            key: None,
            passed: None,
            plane: None,
        }
    }

    pub fn key(at: f64, action: ScriptAction, key: Key) -> Self {
        ScriptEntry {
            key: Some(key),
            ..ScriptEntry::new(at, action)
        }
    }

    pub fn to_message(&self) -> Result<ClientMessage, String> {
        let key = || self.key.ok_or_else(|| "missing key".to_string());
        Ok(match self.action {
            ScriptAction::KeyDown => ClientMessage::Key {
                key: key()?,
                action: KeyAction::Down,
            },
            ScriptAction::KeyUp => ClientMessage::Key {
                key: key()?,
                action: KeyAction::Up,
            },
            ScriptAction::RequestBscan => ClientMessage::RequestBscan { plane: self.plane },
            ScriptAction::DeclareVerification => ClientMessage::DeclareVerification {
                passed: self.passed.ok_or("missing passed")?,
            },
            ScriptAction::BeginInfusion => ClientMessage::BeginInfusion,
            ScriptAction::ConfirmContact => ClientMessage::ConfirmContact,
        })
    }
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let s: Script = serde_json::from_str(text)?;
        s.messages(1.0)?;
        Ok(s)
    }

    /// Messages with the tick they apply before, in stable time order.
    pub fn messages(&self, dt: f64) -> Result<Vec<(u64, ClientMessage)>, ScriptError> {
        let mut out = Vec::with_capacity(self.0.len());
        for (index, e) in self.0.iter().enumerate() {
            if !(e.at >= 0.0 && e.at.is_finite()) {
                return Err(ScriptError::Entry {
                    index,
                    reason: format!("bad time {}", e.at),
                });
            }
            let msg = e.to_message().map_err(|reason| ScriptError::Entry { index, reason })?;
            out.push(((e.at / dt).round() as u64, msg));
        }
        out.sort_by_key(|(tick, _)| *tick);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    /// The trial reached `Done` or `Failed`.
    Finished,
    /// Nothing left to do: the script ran out and the robot is idle.
    Stalled,
    /// The configured maximum duration elapsed.
    TimedOut,
}

/// Drives `session` with `script` until the trial ends or stalls. Inputs go
/// through [`Session::ingest`], the path live clients use; `on_reply` sees
/// each scripted input with its tick and the server's replies.
pub fn run_script(
    session: &mut Session,
    script: &Script,
    mut on_reply: impl FnMut(u64, &ClientMessage, &[ServerMessage]),
) -> Result<RunEnd, ScriptError> {
    let cfg = session.sim().config();
    let messages = script.messages(cfg.dt_s())?;
    let max_ticks = (cfg.session.max_duration_s / cfg.dt_s()).ceil() as u64;
    let mut pending = messages.into_iter().peekable();
    loop {
        let now = session.sim().tick_index();
        while let Some((_, message)) = pending.next_if(|(t, _)| *t <= now) {
            let replies = session.ingest(&message);
            on_reply(now, &message, &replies);
        }
        if session.finished() {
            return Ok(RunEnd::Finished);
        }
        if pending.peek().is_none() && session.sim().quiescent() {
            return Ok(RunEnd::Stalled);
        }
        if now >= max_ticks {
            return Ok(RunEnd::TimedOut);
        }
        session.tick();
    }
}
