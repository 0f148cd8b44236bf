use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{inward_normal, FailureCause, FailureInjection, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TissueError {
    #[error("infusion requested before any puncture")]
    NotPunctured,
    #[error("infusion pressure must be positive (got {0})")]
    BadPressure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LumenFluid {
    Blood,
    Flushed,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueState {
    /// Wall deflection at the contact point, µm.
    pub deflection_um: f64,
    pub punctured: bool,
    pub puncture_location: Option<Vector3<f64>>,
    pub puncture_arc_mm: Option<f64>,
    pub lumen_fluid: LumenFluid,
    /// Length of lumen cleared by infusion, centred on the puncture, mm.
    pub flushed_length_mm: f64,
    pub bleb_present: bool,
    /// Set when the tip has slid along the wall at the deflection cap.
    pub slipped: bool,
}

impl TissueState {
    pub fn new(scenario: &Scenario) -> Self {
        TissueState {
            deflection_um: 0.0,
            punctured: false,
            puncture_location: None,
            puncture_arc_mm: None,
            lumen_fluid: if scenario.blood_present {
                LumenFluid::Blood
            } else {
                LumenFluid::Empty
            },
            flushed_length_mm: 0.0,
            bleb_present: true,
            slipped: false,
        }
    }

    /// Fluid at a given arc position along the vessel.
    pub fn fluid_at(&self, arc_mm: f64) -> LumenFluid {
        match (self.lumen_fluid, self.puncture_arc_mm) {
            (LumenFluid::Flushed, Some(p)) if (arc_mm - p).abs() <= self.flushed_length_mm => LumenFluid::Flushed,
            (LumenFluid::Flushed, _) => LumenFluid::Blood,
            (f, _) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactPhase {
    Free,
    OnWall,
    Intraluminal,
    ThroughWall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactReport {
    pub phase: ContactPhase,
    /// Signed distance to the (deflected) outer wall; negative = penetration.
    pub gap_um: f64,
    pub distance_to_axis_um: f64,
    /// Unit vector from the vessel axis toward the tip.
    pub normal: Vector3<f64>,
    /// True when the tip sits on the globe-centre side of the axis.
    pub superficial: bool,
    pub arc_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TissueEvent {
    PunctureOccurred,
    WallSlip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TissueConfig {
    /// Required clearance inside the lumen to count as intraluminal.
    pub intraluminal_margin_um: f64,
    /// Wall relaxation time constant after the tip withdraws.
    pub relax_tau_s: f64,
}

impl Default for TissueConfig {
    fn default() -> Self {
        TissueConfig {
            intraluminal_margin_um: 5.0,
            relax_tau_s: 0.2,
        }
    }
}

fn radial(tip: &Vector3<f64>, scenario: &Scenario) -> (super::AxisPoint, Vector3<f64>, bool) {
    let axis = scenario.vessel.nearest(tip);
    let offset = tip - axis.point;
    let inward = inward_normal(&axis.point);
    let normal = if axis.distance_mm > 1e-12 {
        offset / axis.distance_mm
    } else {
        inward
    };
    (axis, normal, offset.dot(&inward) >= 0.0)
}

/// Classifies the tip against the deflected wall and the lumen.
pub fn tip_tissue_query(tip: &Vector3<f64>, scenario: &Scenario, tissue: &TissueState) -> ContactReport {
    let (axis, normal, superficial) = radial(tip, scenario);
    let d = axis.distance_mm;
    let r_out = scenario.vessel.outer_radius_mm();
    let r_in = scenario.vessel.lumen_radius_mm();
    let (phase, gap_mm) = if tissue.punctured {
        let gap = d - r_out;
        let phase = if d <= r_in {
            ContactPhase::Intraluminal
        } else if d <= r_out || !superficial {
            ContactPhase::ThroughWall
        } else {
            ContactPhase::Free
        };
        (phase, gap)
    } else {
        let gap = d - (r_out - tissue.deflection_um * 1e-3);
        let phase = if gap > 0.0 {
            ContactPhase::Free
        } else {
            ContactPhase::OnWall
        };
        (phase, gap)
    };
    ContactReport {
        phase,
        gap_um: gap_mm * 1e3,
        distance_to_axis_um: d * 1e3,
        normal,
        superficial,
        arc_mm: axis.arc_mm,
    }
}

/// Closing speed toward the vessel axis: the full tip speed when moving into
/// the wall, zero when moving away.
pub fn closing_speed(tip: &Vector3<f64>, velocity: &Vector3<f64>, scenario: &Scenario) -> f64 {
    let (_, normal, _) = radial(tip, scenario);
    if velocity.dot(&normal) < 0.0 {
        velocity.norm()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueStep {
    pub tissue: TissueState,
    pub events: Vec<TissueEvent>,
    pub report: ContactReport,
}

/// Advances the wall over one step ending with the tip at `tip`.
///
/// In contact, an approach at or above the puncture threshold punctures the
/// wall. Slower contact deflects it up to the cap, after which the tip slips.
/// Out of contact the deflection decays toward zero.
pub fn step_tissue(
    tissue: &TissueState,
    tip: &Vector3<f64>,
    dt: f64,
    approach_speed: f64,
    scenario: &Scenario,
    cfg: &TissueConfig,
) -> TissueStep {
    let mut next = tissue.clone();
    let mut events = Vec::new();
    let (axis, _, superficial) = radial(tip, scenario);
    let r_out = scenario.vessel.outer_radius_mm();
    let indent_um = (r_out - axis.distance_mm) * 1e3;
    let decayed = relax(tissue.deflection_um, dt, cfg.relax_tau_s);

    if !tissue.punctured {
        let contact = indent_um >= 0.0 && indent_um >= decayed;
        if contact && approach_speed >= scenario.effective_puncture_threshold() {
            next.punctured = true;
            next.puncture_location = Some(*tip);
            next.puncture_arc_mm = Some(axis.arc_mm);
            next.deflection_um = 0.0;
            next.slipped = false;
            events.push(TissueEvent::PunctureOccurred);
        } else if contact {
            let cap = scenario.vessel.max_deflection_um;
            next.deflection_um = indent_um.min(cap);
            if indent_um > cap && !tissue.slipped {
                next.slipped = true;
                events.push(TissueEvent::WallSlip);
            }
        } else {
            next.deflection_um = decayed;
            if indent_um < 0.0 {
                next.slipped = false;
            }
        }
    } else {
        next.deflection_um = decayed;
        if indent_um < 0.0 && superficial {
            // Withdrawn through the entry side; the wall closes behind the tip.
            next.punctured = false;
            next.puncture_location = None;
        }
    }
    let report = tip_tissue_query(tip, scenario, &next);
    TissueStep {
        tissue: next,
        events,
        report,
    }
}

fn relax(deflection_um: f64, dt: f64, tau: f64) -> f64 {
    let d = deflection_um * (-dt / tau).exp();
    if d < 1e-3 {
        0.0
    } else {
        d
    }
}

/// Punctured and inside the lumen by at least the configured margin.
pub fn is_intraluminal(tip: &Vector3<f64>, scenario: &Scenario, tissue: &TissueState, cfg: &TissueConfig) -> bool {
    if !tissue.punctured {
        return false;
    }
    let d = scenario.vessel.nearest(tip).distance_mm;
    d <= scenario.vessel.lumen_radius_mm() - cfg.intraluminal_margin_um * 1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfusionConfig {
    pub pressure_mmhg: f64,
    pub duration_s: f64,
    /// Flushed lumen length per unit pressure·time.
    pub flush_mm_per_mmhg_s: f64,
    /// Reference lumen segment used for the reflux check.
    pub lumen_segment_mm: f64,
    /// Reflux once the infused volume exceeds this multiple of the segment volume.
    pub reflux_factor: f64,
}

impl Default for InfusionConfig {
    fn default() -> Self {
        InfusionConfig {
            pressure_mmhg: 12.0,
            duration_s: 60.0,
            flush_mm_per_mmhg_s: 0.005,
            lumen_segment_mm: 5.0,
            reflux_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfusionResult {
    pub success: bool,
    pub flushed_length_mm: f64,
    pub reflux: bool,
    pub failure_cause: Option<FailureCause>,
}

/// Pressure-regulated flush through the needle.
#[allow(clippy::too_many_arguments)]
pub fn infuse(
    pressure_mmhg: f64,
    duration_s: f64,
    tip: &Vector3<f64>,
    scenario: &Scenario,
    tissue: &TissueState,
    tissue_cfg: &TissueConfig,
    cfg: &InfusionConfig,
) -> Result<(InfusionResult, TissueState), TissueError> {
    if !tissue.punctured {
        return Err(TissueError::NotPunctured);
    }
    if !(pressure_mmhg > 0.0) {
        return Err(TissueError::BadPressure(pressure_mmhg));
    }
    let fail = |cause| {
        Ok((
            InfusionResult {
                success: false,
                flushed_length_mm: 0.0,
                reflux: false,
                failure_cause: Some(cause),
            },
            tissue.clone(),
        ))
    };
    if !is_intraluminal(tip, scenario, tissue, tissue_cfg) {
        return fail(FailureCause::NotIntraluminal);
    }
    match scenario.failure_injection {
        FailureInjection::AirBubble => return fail(FailureCause::AirBubble),
        FailureInjection::NoIntraluminalBlood if !scenario.blood_present => {
            return fail(FailureCause::NoIntraluminalBlood)
        }
        _ => {}
    }
    let mut next = tissue.clone();
    next.flushed_length_mm += cfg.flush_mm_per_mmhg_s * pressure_mmhg * duration_s.max(0.0);
    next.lumen_fluid = LumenFluid::Flushed;
    // Volumes share the lumen cross-section, so lengths compare directly.
    let reflux = next.flushed_length_mm > cfg.reflux_factor * cfg.lumen_segment_mm;
    Ok((
        InfusionResult {
            success: true,
            flushed_length_mm: next.flushed_length_mm,
            reflux,
            failure_cause: None,
        },
        next,
    ))
}
