//! Simulation configuration and content hashing.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eye_sim::{ForceConfig, InfusionConfig, TissueConfig};
use crate::oct::OctConfig;
use crate::robot::{ControllerConfig, RobotModel};
use crate::workflow::WorkflowConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RcmSettings {
    pub rot_stop_threshold_deg: f64,
    pub max_correction_rate: f64,
}

impl Default for RcmSettings {
    fn default() -> Self {
        RcmSettings {
            rot_stop_threshold_deg: 0.1,
            max_correction_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    /// State frames per second of simulated time.
    pub frame_rate_hz: f64,
    /// Use the geometric classifier for verification instead of the operator's call.
    pub assist: bool,
    /// Allow `request_bscan` with `plane: "auto"`.
    pub auto_plane: bool,
    /// The needle counts as withdrawn once the tip is this close to the RCM point along the shaft.
    pub exit_margin_mm: f64,
    /// Below this tip-to-RCM distance the RCM correction is suspended.
    pub min_lever_mm: f64,
    /// Hard stop for headless runs.
    pub max_duration_s: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            frame_rate_hz: 30.0,
            assist: false,
            auto_plane: false,
            exit_margin_mm: 0.5,
            min_lever_mm: 1.0,
            max_duration_s: 900.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt_ms: f64,
    pub robot: RobotModel,
    pub controller: ControllerConfig,
    pub rcm: RcmSettings,
    pub tissue: TissueConfig,
    pub force: ForceConfig,
    pub infusion: InfusionConfig,
    pub oct: OctConfig,
    pub workflow: WorkflowConfig,
    pub session: SessionConfig,
    /// Perturb prismatic steps by the robot's actuation noise.
    pub actuation_noise: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_ms: 5.0,
            robot: RobotModel::default(),
            controller: ControllerConfig::default(),
            rcm: RcmSettings::default(),
            tissue: TissueConfig::default(),
            force: ForceConfig::default(),
            infusion: InfusionConfig::default(),
            oct: OctConfig::default(),
            workflow: WorkflowConfig::default(),
            session: SessionConfig::default(),
            actuation_noise: false,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: SimConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dt_s(&self) -> f64 {
        self.dt_ms * 1e-3
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad = Vec::new();
        if !(self.dt_ms > 0.0 && self.dt_ms <= 50.0) {
            bad.push("dt_ms: must be in (0, 50]".to_string());
        }
        if let Err(e) = self.robot.validate() {
            bad.push(format!("robot: {e}"));
        }
        let c = &self.controller;
        for (name, v) in [
            ("controller.gain_per_s", c.gain_per_s),
            ("controller.navigate_speed_mm_s", c.navigate_speed_mm_s),
            ("controller.puncture_speed_mm_s", c.puncture_speed_mm_s),
            ("controller.retract_speed_mm_s", c.retract_speed_mm_s),
            ("controller.puncture_pulse_ms", c.puncture_pulse_ms),
            ("rcm.max_correction_rate", self.rcm.max_correction_rate),
            ("session.frame_rate_hz", self.session.frame_rate_hz),
            ("infusion.pressure_mmhg", self.infusion.pressure_mmhg),
            ("tissue.relax_tau_s", self.tissue.relax_tau_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{name}: must be positive"));
            }
        }
        if !(self.oct.width_px > 0 && self.oct.height_px > 0) {
            bad.push("oct: image dimensions must be positive".to_string());
        }
        if self.workflow.max_attempts == 0 {
            bad.push("workflow.max_attempts: must be at least 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(bad))
        }
    }
}

/// Hex SHA-256 of a value's compact JSON form.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&json))
}
