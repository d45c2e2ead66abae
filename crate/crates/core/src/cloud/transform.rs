use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Point;

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_inverse(&self, p: &Point) -> Point {
        self.rotation.tr_mul(&(p - self.translation))
    }

    pub fn inverse(&self) -> RigidTransform {
        let r = self.rotation.transpose();
        RigidTransform {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// `rotation` is stored row-major.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigidTransformRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

pub(crate) fn matrix_to_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

pub(crate) fn matrix_from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RigidTransformRepr {
            rotation: matrix_to_row_major(&self.rotation),
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = RigidTransformRepr::deserialize(d)?;
        Ok(RigidTransform {
            rotation: matrix_from_row_major(&r.rotation),
            translation: Vector3::from_row_slice(&r.translation),
        })
    }
}
