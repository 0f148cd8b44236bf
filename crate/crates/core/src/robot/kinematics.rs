//! Five-joint chain: a base-fixed XYZ prismatic stage carrying a two-axis
//! wrist (pitch about base `x`, then yaw about the pitched `y`) and a
//! straight tool whose shaft is the wrist frame's `+z`.

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::RobotError;
use crate::geometry::{RigidTransform, Rotation};

pub type JointRates = SVector<f64, 5>;
pub type Jacobian = SMatrix<f64, 6, 5>;

pub const JOINT_NAMES: [&str; 5] = ["x", "y", "z", "theta1", "theta2"];

/// Prismatic positions in mm, revolute angles in rad.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl JointState {
    pub fn to_vector(&self) -> SVector<f64, 5> {
        SVector::<f64, 5>::new(self.x, self.y, self.z, self.theta1, self.theta2)
    }

    pub fn from_vector(v: &SVector<f64, 5>) -> Self {
        JointState {
            x: v[0],
            y: v[1],
            z: v[2],
            theta1: v[3],
            theta2: v[4],
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.x, self.y, self.z, self.theta1, self.theta2]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        JointState::from_vector(&SVector::<f64, 5>::from(a))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimits {
    pub lower: [f64; 5],
    pub upper: [f64; 5],
}

impl Default for JointLimits {
    fn default() -> Self {
        let rev = 60f64.to_radians();
        JointLimits {
            lower: [-30.0, -30.0, -30.0, -rev, -rev],
            upper: [30.0, 30.0, 30.0, rev, rev],
        }
    }
}

impl JointLimits {
    pub fn contains(&self, q: &JointState) -> bool {
        q.to_array()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    pub fn clamp(&self, q: &JointState) -> JointState {
        let mut a = q.to_array();
        for (i, v) in a.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
        JointState::from_array(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotModel {
    pub limits: JointLimits,
    /// Wrist-to-tip shaft length, mm.
    pub tool_length_mm: f64,
    pub base: RigidTransform,
    /// Per-axis standard deviation of prismatic actuation noise, mm.
    pub actuation_noise_mm: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        RobotModel {
            limits: JointLimits::default(),
            tool_length_mm: 40.0,
            // Shaft points straight down (world -z) at home.
            base: RigidTransform::new(Rotation::about_x(std::f64::consts::PI), Vector3::new(0.0, 0.0, 40.0)),
            actuation_noise_mm: 0.005,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), RobotError> {
        if !(self.tool_length_mm > 0.0) {
            return Err(RobotError::InvalidModel("tool_length_mm must be > 0".into()));
        }
        for (i, name) in JOINT_NAMES.iter().enumerate() {
            if !(self.limits.lower[i] < self.limits.upper[i]) {
                return Err(RobotError::InvalidModel(format!(
                    "limits for joint {name} are not ordered"
                )));
            }
        }
        Ok(())
    }

    fn check_limits(&self, q: &JointState) -> Result<(), RobotError> {
        if !q.is_finite() {
            return Err(RobotError::NonFinite);
        }
        let a = q.to_array();
        for i in 0..5 {
            if a[i] < self.limits.lower[i] || a[i] > self.limits.upper[i] {
                return Err(RobotError::LimitViolation {
                    joint: JOINT_NAMES[i],
                    value: a[i],
                    lower: self.limits.lower[i],
                    upper: self.limits.upper[i],
                });
            }
        }
        Ok(())
    }

    fn wrist_rotation(&self, q: &JointState) -> Rotation {
        self.base.rotation * Rotation::about_x(q.theta1) * Rotation::about_y(q.theta2)
    }

    fn wrist_point(&self, q: &JointState) -> Vector3<f64> {
        self.base.translation + Vector3::new(q.x, q.y, q.z)
    }

    /// Prismatic values that put the tip at `tip` for the given wrist angles.
    pub fn place_tip(&self, theta1: f64, theta2: f64, tip: &Vector3<f64>) -> JointState {
        let mut q = JointState {
            x: 0.0,
            y: 0.0,
            z: 0.0,
            theta1,
            theta2,
        };
        let d = tip - self.wrist_rotation(&q).shaft_axis() * self.tool_length_mm - self.base.translation;
        q.x = d.x;
        q.y = d.y;
        q.z = d.z;
        q
    }

    /// Joint values placing the tip at `tip` with the shaft along `shaft`.
    pub fn joints_for_tip(&self, tip: &Vector3<f64>, shaft: &Vector3<f64>) -> Result<JointState, RobotError> {
        let s = shaft.normalize();
        let local = self.base.rotation.transpose().apply(&s);
        // Rx(θ1)·Ry(θ2)·ẑ = (sin θ2, -sin θ1 cos θ2, cos θ1 cos θ2)
        let theta2 = local.x.clamp(-1.0, 1.0).asin();
        let theta1 = (-local.y).atan2(local.z);
        let wrist = tip - s * self.tool_length_mm;
        let d = wrist - self.base.translation;
        let q = JointState {
            x: d.x,
            y: d.y,
            z: d.z,
            theta1,
            theta2,
        };
        self.check_limits(&q)?;
        Ok(q)
    }
}

/// Tip pose. The rotation's `+z` column is the shaft direction.
pub fn forward_kinematics(q: &JointState, model: &RobotModel) -> Result<RigidTransform, RobotError> {
    model.check_limits(q)?;
    Ok(fk_unchecked(q, model))
}

pub(crate) fn fk_unchecked(q: &JointState, model: &RobotModel) -> RigidTransform {
    let r = model.wrist_rotation(q);
    let tip = model.wrist_point(q) + r.shaft_axis() * model.tool_length_mm;
    RigidTransform::new(r, tip)
}

/// Geometric Jacobian: rows 0..3 tip linear velocity (mm/s), rows 3..6 world
/// angular velocity (rad/s), per unit joint rate.
pub fn jacobian(q: &JointState, model: &RobotModel) -> Result<Jacobian, RobotError> {
    model.check_limits(q)?;
    Ok(jacobian_unchecked(q, model))
}

pub(crate) fn jacobian_unchecked(q: &JointState, model: &RobotModel) -> Jacobian {
    let base = model.base.rotation;
    let lever = model.wrist_rotation(q).shaft_axis() * model.tool_length_mm;
    let a1 = base.apply(&Vector3::x());
    let a2 = (base * Rotation::about_x(q.theta1)).apply(&Vector3::y());

    let mut j = Jacobian::zeros();
    for i in 0..3 {
        j[(i, i)] = 1.0;
    }
    j.fixed_view_mut::<3, 1>(0, 3).copy_from(&a1.cross(&lever));
    j.fixed_view_mut::<3, 1>(3, 3).copy_from(&a1);
    j.fixed_view_mut::<3, 1>(0, 4).copy_from(&a2.cross(&lever));
    j.fixed_view_mut::<3, 1>(3, 4).copy_from(&a2);
    j
}
