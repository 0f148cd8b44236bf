//! Rotation and rigid-transform primitives.
//!
//! Frames are right-handed. The tool shaft is the local `+z` axis of a tool
//! frame. Angles are radians throughout; degrees only appear in
//! configuration fields that say so in their name.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating orthonormality and unit vectors.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a rotation: |R^T R - I| = {orthogonality:.3e}, det = {det:.12}")]
    InvalidRotation { orthogonality: f64, det: f64 },
    #[error("vector is not unit length (norm {0:.12})")]
    NotUnit(f64),
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
}

/// A proper rotation matrix (`R^T R = I`, `det R = +1`).
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        write!(
            f,
            "Rotation[[{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}], [{:.6}, {:.6}, {:.6}]]",
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)]
        )
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates `m` against the rotation invariants.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        let orthogonality = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if orthogonality > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::InvalidRotation { orthogonality, det });
        }
        Ok(Rotation(m))
    }

    /// Builds a rotation from a matrix known to be orthonormal by construction.
    #[cfg(test)]
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// The tool shaft direction, i.e. the image of local `+z`.
    pub fn shaft_axis(&self) -> Vector3<f64> {
        self.0.column(2).into_owned()
    }

    /// Frobenius distance to another rotation.
    pub fn distance(&self, other: &Rotation) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = &self.0;
        let rows = [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ];
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        let m = Matrix3::from_fn(|i, j| rows[i][j]);
        Rotation::new(m).map_err(serde::de::Error::custom)
    }
}

/// Axis-angle vector; the magnitude is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotVec(pub Vector3<f64>);

impl RotVec {
    pub fn zero() -> Self {
        RotVec(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Tip pose container: rotation plus translation in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Flips `v` so its first component above 1e-12 in magnitude is positive.
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Rodrigues exponential map.
pub fn so3_exp(w: &RotVec) -> Rotation {
    let w = w.0;
    let theta = w.norm();
    let k = skew(&w);
    if theta < SMALL_ANGLE {
        return Rotation(Matrix3::identity() + k);
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map. At an angle of exactly π the axis sign is fixed so the
/// first non-negligible component is positive.
pub fn so3_log(r: &Rotation) -> Result<RotVec, GeometryError> {
    let r = Rotation::new(r.0)?.0;
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let antisym = vee(&(r - r.transpose())) * 0.5; // = sin(theta) * axis
                                                   // atan2 keeps full precision at both ends, where acos alone does not.
    let theta = antisym.norm().atan2(cos_theta);

    if theta < SMALL_ANGLE {
        return Ok(RotVec(antisym));
    }
    let sin_theta = theta.sin();
    if sin_theta > 1e-4 || cos_theta > 0.0 {
        return Ok(RotVec(antisym * (theta / sin_theta)));
    }

    // Near π: sym(R) = cos(θ)·I + (1 - cos θ)·a·aᵀ.
    let sym = (r + r.transpose()) * 0.5;
    let one_minus_cos = 1.0 - cos_theta;
    let mut col = 0;
    for i in 1..3 {
        if sym[(i, i)] > sym[(col, col)] {
            col = i;
        }
    }
    let mut axis = Vector3::zeros();
    axis[col] = ((sym[(col, col)] - cos_theta) / one_minus_cos).max(0.0).sqrt();
    for i in 0..3 {
        if i != col {
            axis[i] = sym[(i, col)] / (one_minus_cos * axis[col]);
        }
    }
    axis.normalize_mut();
    if antisym.norm() > 1e-15 {
        if axis.dot(&antisym) < 0.0 {
            axis = -axis;
        }
    } else {
        axis = canonical_sign(axis);
    }
    Ok(RotVec(axis * theta))
}

/// `log(rc^T rd)`: the error rotation expressed in the current frame.
pub fn rotation_error(rc: &Rotation, rd: &Rotation) -> Result<RotVec, GeometryError> {
    Rotation::new(rc.0)?;
    Rotation::new(rd.0)?;
    so3_log(&Rotation(rc.0.transpose() * rd.0))
}

fn check_unit(v: &Vector3<f64>) -> Result<(), GeometryError> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(GeometryError::NonFinite("axis"));
    }
    let n = v.norm();
    if (n - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(GeometryError::NotUnit(n));
    }
    Ok(())
}

/// Minimal-angle rotation carrying `current` onto `target`.
///
/// Antiparallel inputs yield a half turn about `normalize(current × e_k)`
/// where `e_k` is the basis vector along the smallest-magnitude component
/// of `current` (lowest index on ties).
pub fn align_axis(current: &Vector3<f64>, target: &Vector3<f64>) -> Result<Rotation, GeometryError> {
    check_unit(current)?;
    check_unit(target)?;
    let v = current.cross(target);
    let c = current.dot(target);
    let s = v.norm();

    if c > 0.0 {
        // 1/(1+c) is well conditioned here.
        let k = skew(&v);
        return Ok(Rotation(Matrix3::identity() + k + k * k * (1.0 / (1.0 + c))));
    }
    if s > 1e-12 {
        let angle = s.atan2(c);
        return Ok(so3_exp(&RotVec(v / s * angle)));
    }
    let mut k = 0;
    for i in 1..3 {
        if current[i].abs() < current[k].abs() {
            k = i;
        }
    }
    let axis = current.cross(&Vector3::ith(k, 1.0)).normalize();
    Ok(so3_exp(&RotVec(axis * PI)))
}

pub fn deg_to_rad(deg: f64) -> f64 {
    deg.to_radians()
}
