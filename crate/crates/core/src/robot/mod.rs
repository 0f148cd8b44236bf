//! Robot model, RCM constraint controller and keyboard command resolution.

mod kinematics;

pub(crate) use kinematics::{fk_unchecked, jacobian_unchecked};
pub use kinematics::{
    forward_kinematics, jacobian, Jacobian, JointLimits, JointRates, JointState, RobotModel, JOINT_NAMES,
};

use std::fmt;

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{align_axis, rotation_error, skew, GeometryError, Rotation};

/// Distance below which the tip is considered coincident with the RCM point.
pub const DEGENERATE_LEVER_MM: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("joint {joint} = {value} outside [{lower}, {upper}]")]
    LimitViolation {
        joint: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite joint state")]
    NonFinite,
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("tool tip coincides with the RCM point ({distance_mm:.6} mm)")]
    DegenerateGeometry { distance_mm: f64 },
    #[error("conflicting keys: {0}")]
    ConflictingKeys(String),
    #[error("least-squares solve failed: {0}")]
    Solve(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The eight controller keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Key {
    #[serde(alias = "left", alias = "ArrowLeft")]
    Left,
    #[serde(alias = "right", alias = "ArrowRight")]
    Right,
    #[serde(alias = "up", alias = "ArrowUp")]
    Up,
    #[serde(alias = "down", alias = "ArrowDown")]
    Down,
    #[serde(alias = "d")]
    D,
    #[serde(alias = "u")]
    U,
    #[serde(alias = "p")]
    P,
    #[serde(alias = "r")]
    R,
}

impl Key {
    pub const ALL: [Key; 8] = [
        Key::Left,
        Key::Right,
        Key::Up,
        Key::Down,
        Key::D,
        Key::U,
        Key::P,
        Key::R,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    /// Robot-space direction for the six translation keys.
    pub fn translation_axis(self) -> Option<Vector3<f64>> {
        match self {
            Key::Left => Some(-Vector3::x()),
            Key::Right => Some(Vector3::x()),
            Key::Up => Some(Vector3::y()),
            Key::Down => Some(-Vector3::y()),
            Key::D => Some(-Vector3::z()),
            Key::U => Some(Vector3::z()),
            Key::P | Key::R => None,
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyAction {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCommand {
    pub key: Key,
    pub action: KeyAction,
}

/// A set of keys, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct KeySet(u8);

impl KeySet {
    pub const fn empty() -> Self {
        KeySet(0)
    }

    pub fn of(keys: &[Key]) -> Self {
        keys.iter().fold(KeySet::empty(), |s, k| s.with(*k))
    }

    pub fn with(self, key: Key) -> Self {
        KeySet(self.0 | key.bit())
    }

    pub fn without(self, key: Key) -> Self {
        KeySet(self.0 & !key.bit())
    }

    pub fn contains(&self, key: Key) -> bool {
        self.0 & key.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn intersection(self, other: KeySet) -> KeySet {
        KeySet(self.0 & other.0)
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = Key> + '_ {
        Key::ALL.into_iter().filter(|k| self.contains(*k))
    }

    pub fn bits(&self) -> u8 {
        self.0
    }
}

impl fmt::Debug for KeySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Idle,
    Navigate,
    Puncture,
    Retract,
}

/// Commanded tip linear velocity (mm/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    pub linear: Vector3<f64>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Proportional gain on the rotation error, 1/s.
    pub gain_per_s: f64,
    pub navigate_speed_mm_s: f64,
    pub puncture_speed_mm_s: f64,
    pub retract_speed_mm_s: f64,
    pub puncture_pulse_ms: f64,
    /// Rates are scaled linearly to zero across this band before a prismatic limit.
    pub limit_zone_mm: f64,
    /// Same, for the revolute joints.
    pub limit_zone_rad: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            gain_per_s: 5.0,
            navigate_speed_mm_s: 0.2,
            puncture_speed_mm_s: 5.4,
            retract_speed_mm_s: 0.2,
            // 0.335 mm / 5.4 mm/s
            puncture_pulse_ms: 62.0,
            limit_zone_mm: 1.0,
            limit_zone_rad: 1f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcmRegistration {
    pub point: Vector3<f64>,
    pub rot_stop_threshold_deg: f64,
    /// Cap on the correction angular speed, rad/s.
    pub max_correction_rate: f64,
}

impl RcmRegistration {
    pub fn new(point: Vector3<f64>) -> Self {
        RcmRegistration {
            point,
            rot_stop_threshold_deg: 0.1,
            max_correction_rate: 0.2,
        }
    }
}

/// Desired tool rotation: the current frame rotated by the minimal amount
/// that points its shaft from the RCM point toward the tip.
pub fn desired_shaft_rotation(
    q: &JointState,
    rcm: &RcmRegistration,
    model: &RobotModel,
) -> Result<Rotation, RobotError> {
    let pose = forward_kinematics(q, model)?;
    desired_from_pose(&pose.rotation, &pose.translation, rcm)
}

fn desired_from_pose(rc: &Rotation, tip: &Vector3<f64>, rcm: &RcmRegistration) -> Result<Rotation, RobotError> {
    let line = tip - rcm.point;
    let distance_mm = line.norm();
    if distance_mm <= DEGENERATE_LEVER_MM {
        return Err(RobotError::DegenerateGeometry { distance_mm });
    }
    let target = line / distance_mm;
    let align = align_axis(&rc.shaft_axis(), &target)?;
    Ok(align * *rc)
}

/// World-frame angular velocity that drives the shaft onto the RCM line.
///
/// Proportional to `log(Rc^T Rd)` (mapped to the world frame), capped at
/// `max_correction_rate`, and exactly zero below the stop threshold.
pub fn rcm_correction(
    q: &JointState,
    rcm: &RcmRegistration,
    model: &RobotModel,
    ctrl: &ControllerConfig,
) -> Result<Vector3<f64>, RobotError> {
    let pose = forward_kinematics(q, model)?;
    correction_from_pose(&pose.rotation, &pose.translation, rcm, ctrl)
}

fn correction_from_pose(
    rc: &Rotation,
    tip: &Vector3<f64>,
    rcm: &RcmRegistration,
    ctrl: &ControllerConfig,
) -> Result<Vector3<f64>, RobotError> {
    let rd = desired_from_pose(rc, tip, rcm)?;
    let err = rotation_error(rc, &rd)?;
    if err.angle() < rcm.rot_stop_threshold_deg.to_radians() {
        return Ok(Vector3::zeros());
    }
    let mut omega = rc.apply(err.vector()) * ctrl.gain_per_s;
    let speed = omega.norm();
    if speed > rcm.max_correction_rate {
        omega *= rcm.max_correction_rate / speed;
    }
    Ok(omega)
}

/// Perpendicular distance from the RCM point to the shaft line, mm.
pub fn rcm_deviation(q: &JointState, rcm: &RcmRegistration, model: &RobotModel) -> Result<f64, RobotError> {
    let pose = forward_kinematics(q, model)?;
    Ok(deviation_from_pose(&pose.rotation, &pose.translation, &rcm.point))
}

pub(crate) fn deviation_from_pose(rc: &Rotation, tip: &Vector3<f64>, point: &Vector3<f64>) -> f64 {
    (point - tip).cross(&rc.shaft_axis()).norm()
}

/// Output of [`resolve_command`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedCommand {
    pub rates: JointRates,
    pub velocity: VelocityCommand,
    /// World angular velocity requested by the RCM correction.
    pub correction: Vector3<f64>,
    /// Shaft rotation rate that keeps the shaft on the RCM line while the
    /// tip moves at the commanded velocity.
    pub feedforward: Vector3<f64>,
    /// True when rates were scaled down near a joint limit.
    pub limited: bool,
}

impl ResolvedCommand {
    fn idle() -> Self {
        ResolvedCommand {
            rates: JointRates::zeros(),
            velocity: VelocityCommand {
                linear: Vector3::zeros(),
                mode: Mode::Idle,
            },
            correction: Vector3::zeros(),
            feedforward: Vector3::zeros(),
            limited: false,
        }
    }
}

/// Commanded tip velocity for a key set, before RCM correction.
pub fn commanded_velocity(
    keys: KeySet,
    shaft: &Vector3<f64>,
    ctrl: &ControllerConfig,
) -> Result<VelocityCommand, RobotError> {
    for exclusive in [Key::P, Key::R] {
        if keys.contains(exclusive) && keys.len() > 1 {
            return Err(RobotError::ConflictingKeys(format!(
                "{exclusive} cannot be combined with {:?}",
                keys.without(exclusive)
            )));
        }
    }
    if keys.contains(Key::P) {
        return Ok(VelocityCommand {
            linear: shaft * ctrl.puncture_speed_mm_s,
            mode: Mode::Puncture,
        });
    }
    if keys.contains(Key::R) {
        return Ok(VelocityCommand {
            linear: -shaft * ctrl.retract_speed_mm_s,
            mode: Mode::Retract,
        });
    }
    let mut linear = Vector3::zeros();
    for key in keys.iter() {
        if let Some(axis) = key.translation_axis() {
            linear += axis * ctrl.navigate_speed_mm_s;
        }
    }
    let mode = if keys.is_empty() { Mode::Idle } else { Mode::Navigate };
    Ok(VelocityCommand { linear, mode })
}

/// Joint rates realizing the keyed tip velocity while the shaft is steered
/// toward the RCM line. `rcm = None` disables the correction.
///
/// The task is five-dimensional: three tip-linear rows plus the two shaft
/// direction rates `ω × s`; roll about the shaft is left free.
pub fn resolve_command(
    keys: KeySet,
    q: &JointState,
    rcm: Option<&RcmRegistration>,
    model: &RobotModel,
    ctrl: &ControllerConfig,
) -> Result<ResolvedCommand, RobotError> {
    let pose = forward_kinematics(q, model)?;
    let shaft = pose.rotation.shaft_axis();
    let velocity = commanded_velocity(keys, &shaft, ctrl)?;
    let (correction, feedforward) = match rcm {
        Some(rcm) => (
            correction_from_pose(&pose.rotation, &pose.translation, rcm, ctrl)?,
            line_following_rate(&pose.translation, &velocity.linear, rcm),
        ),
        None => (Vector3::zeros(), Vector3::zeros()),
    };
    if velocity.mode == Mode::Idle && correction == Vector3::zeros() {
        return Ok(ResolvedCommand::idle());
    }

    let j = jacobian_unchecked(q, model);
    let neg_s = -skew(&shaft);
    let mut a = SMatrix::<f64, 6, 5>::zeros();
    a.fixed_view_mut::<3, 5>(0, 0).copy_from(&j.fixed_view::<3, 5>(0, 0));
    a.fixed_view_mut::<3, 5>(3, 0)
        .copy_from(&(neg_s * j.fixed_view::<3, 5>(3, 0)));
    let mut b = SVector::<f64, 6>::zeros();
    b.fixed_view_mut::<3, 1>(0, 0).copy_from(&velocity.linear);
    b.fixed_view_mut::<3, 1>(3, 0)
        .copy_from(&(correction + feedforward).cross(&shaft));

    let rates = a.svd(true, true).solve(&b, 1e-12).map_err(RobotError::Solve)?;
    let (rates, limited) = scale_for_limits(rates, q, model, ctrl);
    Ok(ResolvedCommand {
        rates,
        velocity,
        correction,
        feedforward,
        limited,
    })
}

/// Angular velocity of the tip–RCM line when the tip moves at `v`:
/// `d × v / L` with `d` the unit line direction and `L` its length.
fn line_following_rate(tip: &Vector3<f64>, v: &Vector3<f64>, rcm: &RcmRegistration) -> Vector3<f64> {
    let line = tip - rcm.point;
    let l2 = line.norm_squared();
    if l2 <= DEGENERATE_LEVER_MM * DEGENERATE_LEVER_MM {
        return Vector3::zeros();
    }
    line.cross(v) / l2
}

fn scale_for_limits(
    rates: JointRates,
    q: &JointState,
    model: &RobotModel,
    ctrl: &ControllerConfig,
) -> (JointRates, bool) {
    let pos = q.to_array();
    let mut scale: f64 = 1.0;
    for i in 0..5 {
        let zone = if i < 3 { ctrl.limit_zone_mm } else { ctrl.limit_zone_rad };
        let room = if rates[i] > 0.0 {
            model.limits.upper[i] - pos[i]
        } else if rates[i] < 0.0 {
            pos[i] - model.limits.lower[i]
        } else {
            continue;
        };
        scale = scale.min((room / zone).clamp(0.0, 1.0));
    }
    if scale < 1.0 {
        (rates * scale, true)
    } else {
        (rates, false)
    }
}
