//! JSON messages exchanged with operator clients. Every message is an object
//! with a `type` discriminator.

use serde::{Deserialize, Serialize};

use crate::oct::ScanPlane;
use crate::robot::{Key, KeyAction};
use crate::workflow::{EventKind, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

/// Where to take a B-scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlaneRequest {
    /// Plane through the tip, normal to the vessel (assist feature).
    Auto(AutoKeyword),
    /// Explicit plane; it becomes the session's current plane.
    Manual(ScanPlane),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Key {
        key: Key,
        action: KeyAction,
    },
    /// Without a plane, the current plane is reused.
    RequestBscan {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plane: Option<PlaneRequest>,
    },
    BeginInfusion,
    ConfirmContact,
    DeclareVerification {
        passed: bool,
    },
}

impl ClientMessage {
    pub fn key_down(key: Key) -> Self {
        ClientMessage::Key {
            key,
            action: KeyAction::Down,
        }
    }

    pub fn key_up(key: Key) -> Self {
        ClientMessage::Key {
            key,
            action: KeyAction::Up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// The key is not permitted in the current workflow step.
    KeyGated,
    /// The key cannot be combined with keys already held.
    KeyConflict,
    /// Unparseable or schema-invalid message.
    BadMessage,
    /// The action is not legal in the current workflow step.
    RejectedTransition,
    /// The trial is still running.
    TrialLive,
    /// The trial has ended; no further commands are accepted.
    TrialEnded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub t: f64,
    pub joints: [f64; 5],
    pub tip: [f64; 3],
    pub tip_velocity: [f64; 3],
    pub force: [f64; 3],
    pub rcm_deviation_um: f64,
    pub step: Step,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    Bscan {
        t: f64,
        w: usize,
        h: usize,
        pitch_um: f64,
        /// Row-major 8-bit grayscale, base64.
        pixels_b64: String,
    },
    Event {
        kind: EventKind,
        t: f64,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

/// Parses a client message, mapping any failure to a `bad_message` reply.
pub fn parse_client(text: &str) -> Result<ClientMessage, ServerMessage> {
    serde_json::from_str(text).map_err(|e| ServerMessage::error(ErrorCode::BadMessage, e.to_string()))
}
