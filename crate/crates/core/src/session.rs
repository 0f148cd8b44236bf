//! One operator session: the simulation behind the JSON message protocol.
//! Transports (the WebSocket service, scripted runs) drive a [`Session`] by
//! feeding it client messages and calling [`Session::tick`] on the fixed
//! step; everything it returns is ready to send.

use base64::Engine;

use crate::config::SimConfig;
use crate::eye_sim::Scenario;
use crate::oct::BScan;
use crate::protocol::{parse_client, ClientMessage, ErrorCode, ServerMessage};
use crate::sim::{SimError, Simulation};
use crate::telemetry::{encode, TrialLog};
use crate::workflow::WorkflowEvent;

pub struct Session {
    sim: Simulation,
}

fn event_message(e: &WorkflowEvent) -> ServerMessage {
    ServerMessage::Event { kind: e.kind, t: e.t }
}

pub fn bscan_message(scan: &BScan) -> ServerMessage {
    ServerMessage::Bscan {
        t: scan.t,
        w: scan.width,
        h: scan.height,
        pitch_um: scan.lateral_pitch_um,
        pixels_b64: base64::engine::general_purpose::STANDARD.encode(scan.to_bytes()),
    }
}

impl Session {
    pub fn new(scenario: Scenario, config: SimConfig, seed: u64) -> Result<Self, SimError> {
        Ok(Session {
            sim: Simulation::new(scenario, config, seed)?,
        })
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn ingest(&mut self, msg: &ClientMessage) -> Vec<ServerMessage> {
        match self.sim.apply(msg) {
            Ok(applied) => {
                let mut out: Vec<_> = applied.events.iter().map(event_message).collect();
                out.extend(applied.bscan.as_ref().map(bscan_message));
                out
            }
            Err(r) => {
                let mut out: Vec<_> = r.events.iter().map(event_message).collect();
                out.push(ServerMessage::error(r.code, r.message));
                out
            }
        }
    }

    /// Parses and applies one text frame. Malformed input changes nothing.
    pub fn ingest_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match parse_client(text) {
            Ok(msg) => self.ingest(&msg),
            Err(reply) => vec![reply],
        }
    }

    /// Advances one step; returns events and, at the frame rate, a state frame.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        let out = self.sim.tick();
        let mut msgs: Vec<_> = out.events.iter().map(event_message).collect();
        if out.frame_due {
            msgs.push(ServerMessage::State(self.sim.state_frame()));
        }
        msgs
    }

    pub fn finished(&self) -> bool {
        self.sim.finished()
    }

    /// Encoded log, available once the trial has ended.
    pub fn fetch_log(&self) -> Result<Vec<u8>, ServerMessage> {
        if self.sim.log().is_closed() {
            Ok(encode(self.sim.log()))
        } else {
            Err(ServerMessage::error(ErrorCode::TrialLive, "the trial is still running"))
        }
    }

    /// Ends the trial where it stands (shutdown) and returns its log.
    pub fn abort(&mut self) -> &TrialLog {
        self.sim.abort();
        self.sim.log()
    }

    pub fn into_log(self) -> TrialLog {
        self.sim.into_log()
    }
}
