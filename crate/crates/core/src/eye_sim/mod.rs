//! Eye and vessel scene, needle–tissue interaction, infusion, handle force
//! and hand-tremor injection.
//!
//! The globe is a sphere centred at the origin; the retina is its interior
//! surface. Vessels are tubes whose axis lies on that surface. Lengths are
//! millimetres internally; fields suffixed `_um` are micrometres.

mod force;
mod tissue;
mod tremor;

pub use force::{count_spikes, ForceConfig, ForceSample, ForceSynth};
pub use tissue::{
    closing_speed, infuse, is_intraluminal, step_tissue, tip_tissue_query, ContactPhase, ContactReport, InfusionConfig,
    InfusionResult, LumenFluid, TissueConfig, TissueError, TissueEvent, TissueState, TissueStep,
};
pub use tremor::Tremor;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean central retinal vein diameter 251.0 µm.
pub const CENTRAL_VEIN_RADIUS_UM: f64 = 125.5;
/// Mean branch retinal vein diameter 151.32 µm.
pub const BRANCH_VEIN_RADIUS_UM: f64 = 75.66;
pub const NEEDLE_DIAMETER_UM: f64 = 100.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl ScenarioError {
    /// Names of the offending fields, when validation failed; empty for
    /// a parse error.
    pub fn fields(&self) -> Vec<String> {
        match self {
            ScenarioError::Invalid(v) => v.iter().map(|m| m.split(':').next().unwrap_or(m).to_string()).collect(),
            ScenarioError::Parse(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FailureInjection {
    #[default]
    None,
    /// Residual air in the needle; infusion is blocked.
    AirBubble,
    /// Not enough intraluminal blood for the infusion to take.
    NoIntraluminalBlood,
}

/// Why a trial ended in failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureCause {
    AirBubble,
    NoIntraluminalBlood,
    NotIntraluminal,
    MaxAttempts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vessel {
    /// Axis polyline, mm, lying on the retina surface.
    pub centerline: Vec<Vector3<f64>>,
    pub lumen_radius_um: f64,
    pub wall_thickness_um: f64,
    /// Deflection cap before the tip slips along the wall.
    pub max_deflection_um: f64,
}

/// Closest point on a vessel axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisPoint {
    pub point: Vector3<f64>,
    pub tangent: Vector3<f64>,
    /// Arc length from the first centerline vertex, mm.
    pub arc_mm: f64,
    /// Distance from the query point to the axis, mm.
    pub distance_mm: f64,
}

impl Vessel {
    /// A great-circle vessel through the bottom of the globe, running along `y`.
    pub fn straight(globe_radius_mm: f64, half_length_mm: f64, lumen_radius_um: f64) -> Self {
        let spacing = 0.05;
        let n = (2.0 * half_length_mm / spacing).round() as usize;
        let centerline = (0..=n)
            .map(|i| {
                let s = -half_length_mm + i as f64 * spacing;
                let a = s / globe_radius_mm;
                Vector3::new(0.0, globe_radius_mm * a.sin(), -globe_radius_mm * a.cos())
            })
            .collect();
        Vessel {
            centerline,
            lumen_radius_um,
            wall_thickness_um: 15.0,
            max_deflection_um: 0.5 * lumen_radius_um,
        }
    }

    pub fn lumen_radius_mm(&self) -> f64 {
        self.lumen_radius_um * 1e-3
    }

    pub fn outer_radius_mm(&self) -> f64 {
        (self.lumen_radius_um + self.wall_thickness_um) * 1e-3
    }

    pub fn length_mm(&self) -> f64 {
        self.centerline.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Nearest axis point to `p` (first segment wins ties).
    pub fn nearest(&self, p: &Vector3<f64>) -> AxisPoint {
        let mut best: Option<AxisPoint> = None;
        let mut arc = 0.0;
        for w in self.centerline.windows(2) {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let dir = seg / len;
            let s = (p - w[0]).dot(&dir).clamp(0.0, len);
            let point = w[0] + dir * s;
            let distance_mm = (p - point).norm();
            if best.is_none_or(|b| distance_mm < b.distance_mm) {
                best = Some(AxisPoint {
                    point,
                    tangent: dir,
                    arc_mm: arc + s,
                    distance_mm,
                });
            }
            arc += len;
        }
        best.expect("vessel has at least one segment")
    }

    /// Point on the axis at arc length `arc_mm` (clamped to the ends).
    pub fn point_at(&self, arc_mm: f64) -> AxisPoint {
        let mut arc = 0.0;
        let last = self.centerline.len() - 2;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if arc_mm <= arc + len || i == last {
                let s = (arc_mm - arc).clamp(0.0, len);
                let dir = seg / len;
                return AxisPoint {
                    point: w[0] + dir * s,
                    tangent: dir,
                    arc_mm: arc + s,
                    distance_mm: 0.0,
                };
            }
            arc += len;
        }
        unreachable!("validated vessel has segments")
    }
}

/// Unit normal pointing from a retina point toward the globe centre.
pub fn inward_normal(p: &Vector3<f64>) -> Vector3<f64> {
    -p.normalize()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_globe_radius")]
    pub globe_radius_mm: f64,
    #[serde(default = "default_retina_thickness")]
    pub retina_thickness_um: f64,
    pub vessel: Vessel,
    pub sclerotomy_points: Vec<Vector3<f64>>,
    #[serde(default = "default_threshold")]
    pub puncture_speed_threshold_mm_s: f64,
    /// Blood pushed toward the target by the spatula.
    #[serde(default = "default_true")]
    pub blood_present: bool,
    #[serde(default)]
    pub failure_injection: FailureInjection,
    #[serde(default)]
    pub tremor_enabled: bool,
    #[serde(default = "default_tremor")]
    pub tremor_amplitude_um: f64,
    /// Where along the vessel the needle starts; defaults to the midpoint.
    #[serde(default)]
    pub target_arc_mm: Option<f64>,
    /// Initial tip height above the superficial wall.
    #[serde(default = "default_standoff")]
    pub initial_standoff_um: f64,
}

fn default_globe_radius() -> f64 {
    12.0
}
fn default_retina_thickness() -> f64 {
    250.0
}
fn default_threshold() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}
fn default_tremor() -> f64 {
    180.0
}
fn default_standoff() -> f64 {
    300.0
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::branch_vein()
    }
}

impl Scenario {
    pub fn branch_vein() -> Self {
        Scenario::with_vessel(Vessel::straight(12.0, 2.0, BRANCH_VEIN_RADIUS_UM))
    }

    pub fn central_vein() -> Self {
        Scenario::with_vessel(Vessel::straight(12.0, 2.0, CENTRAL_VEIN_RADIUS_UM))
    }

    fn with_vessel(vessel: Vessel) -> Self {
        let r = default_globe_radius();
        let a = 45f64.to_radians();
        Scenario {
            globe_radius_mm: r,
            retina_thickness_um: default_retina_thickness(),
            vessel,
            sclerotomy_points: vec![Vector3::new(r * a.sin(), 0.0, r * a.cos())],
            puncture_speed_threshold_mm_s: default_threshold(),
            blood_present: true,
            failure_injection: FailureInjection::None,
            tremor_enabled: false,
            tremor_amplitude_um: default_tremor(),
            target_arc_mm: None,
            initial_standoff_um: default_standoff(),
        }
    }

    pub fn with_injection(mut self, injection: FailureInjection) -> Self {
        self.failure_injection = injection;
        if injection == FailureInjection::NoIntraluminalBlood {
            self.blood_present = false;
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut bad = Vec::new();
        if !(self.globe_radius_mm > 0.0 && self.globe_radius_mm.is_finite()) {
            bad.push("globe_radius_mm: must be positive".to_string());
        }
        if !(self.retina_thickness_um > 0.0) {
            bad.push("retina_thickness_um: must be positive".to_string());
        }
        let v = &self.vessel;
        if !(v.lumen_radius_um > 0.0 && v.lumen_radius_um * 1e-3 < self.globe_radius_mm) {
            bad.push("vessel.lumen_radius_um: must be in (0, globe radius)".to_string());
        }
        if !(v.wall_thickness_um > 0.0) {
            bad.push("vessel.wall_thickness_um: must be positive".to_string());
        }
        if !(v.max_deflection_um > 0.0) {
            bad.push("vessel.max_deflection_um: must be positive".to_string());
        }
        if v.centerline.len() < 2 {
            bad.push("vessel.centerline: needs at least two points".to_string());
        } else {
            for (i, p) in v.centerline.iter().enumerate() {
                if (p.norm() - self.globe_radius_mm).abs() > 1e-3 {
                    bad.push(format!("vessel.centerline[{i}]: not on the retina surface"));
                    break;
                }
            }
            if v.centerline.windows(2).any(|w| (w[1] - w[0]).norm() < 1e-9) {
                bad.push("vessel.centerline: repeated points".to_string());
            }
        }
        if self.sclerotomy_points.is_empty() {
            bad.push("sclerotomy_points: at least one required".to_string());
        }
        let thr = self.puncture_speed_threshold_mm_s;
        if !(thr > 0.2 && thr < 5.4) {
            bad.push("puncture_speed_threshold_mm_s: must lie strictly between 0.2 and 5.4".to_string());
        }
        if self.tremor_amplitude_um < 0.0 {
            bad.push("tremor_amplitude_um: must be non-negative".to_string());
        }
        if !(self.initial_standoff_um >= 0.0) {
            bad.push("initial_standoff_um: must be non-negative".to_string());
        }
        if let Some(a) = self.target_arc_mm {
            if v.centerline.len() >= 2 && !(a >= 0.0 && a <= v.length_mm()) {
                bad.push("target_arc_mm: outside the vessel".to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(bad))
        }
    }

    /// Speed needed for a puncture. Collapsed vessels (no blood pushed in)
    /// need 50% more.
    pub fn effective_puncture_threshold(&self) -> f64 {
        if self.blood_present {
            self.puncture_speed_threshold_mm_s
        } else {
            self.puncture_speed_threshold_mm_s * 1.5
        }
    }

    pub fn rcm_point(&self) -> Vector3<f64> {
        self.sclerotomy_points[0]
    }

    /// Top of the superficial wall at the target, and the wall's outward normal there.
    pub fn target_wall_point(&self) -> (Vector3<f64>, Vector3<f64>) {
        let arc = self.target_arc_mm.unwrap_or_else(|| self.vessel.length_mm() * 0.5);
        let axis = self.vessel.point_at(arc).point;
        let n = inward_normal(&axis);
        (axis + n * self.vessel.outer_radius_mm(), n)
    }

    /// Initial tip: directly above the target wall by the standoff.
    pub fn initial_tip(&self) -> Vector3<f64> {
        let (wall, n) = self.target_wall_point();
        wall + n * (self.initial_standoff_um * 1e-3)
    }

    pub fn inside_globe(&self, p: &Vector3<f64>) -> bool {
        p.norm() < self.globe_radius_mm
    }
}
