//! Parallel-jaw gripper geometry, grasp poses and region extraction.
//!
//! The gripper frame has its origin at the midpoint between the fingertips.
//! Local x is the approach axis (pointing from the palm toward the object),
//! local y the closing axis and local z the minor axis.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GripperGeometry {
    pub max_aperture: f64,
    pub finger_depth: f64,
    pub finger_thickness: f64,
    pub finger_height: f64,
    pub base_depth: f64,
}

impl Default for GripperGeometry {
    fn default() -> Self {
        GripperGeometry {
            max_aperture: 0.10,
            finger_depth: 0.04,
            finger_thickness: 0.01,
            finger_height: 0.02,
            base_depth: 0.02,
        }
    }
}

/// Axis-aligned box in the gripper frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn extents(&self) -> Point {
        self.max - self.min
    }

    pub fn center(&self) -> Point {
        (self.min + self.max) * 0.5
    }

    /// Strictly inside on every axis; boundary points are outside.
    #[inline]
    pub fn contains_open(&self, p: &Point) -> bool {
        (0..3).all(|k| p[k] > self.min[k] && p[k] < self.max[k])
    }

    #[inline]
    pub fn contains_closed(&self, p: &Point) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Euclidean distance from `p` to the solid box (zero inside).
    #[inline]
    pub fn distance(&self, p: &Point) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let e = (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0);
            d2 += e * e;
        }
        d2.sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Aabb {
        let c = self.center();
        let h = self.extents() * (0.5 * factor);
        Aabb { min: c - h, max: c + h }
    }

    pub fn corners(&self) -> [Point; 8] {
        let mut out = [Point::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = Point::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            );
        }
        out
    }
}

impl GripperGeometry {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("max_aperture", self.max_aperture),
            ("finger_depth", self.finger_depth),
            ("finger_thickness", self.finger_thickness),
            ("finger_height", self.finger_height),
            ("base_depth", self.base_depth),
        ];
        for (name, v) in dims {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("gripper.{name} must be positive, got {v}")));
            }
        }
        if self.max_aperture < 1e-3 {
            return Err(Error::Config("gripper.max_aperture must be at least 1 mm".into()));
        }
        Ok(())
    }

    /// The volume swept between the open jaws.
    pub fn closing_volume(&self, width: f64) -> Aabb {
        Aabb {
            min: Point::new(-self.finger_depth, -width / 2.0, -self.finger_height / 2.0),
            max: Point::new(0.0, width / 2.0, self.finger_height / 2.0),
        }
    }

    pub fn finger_boxes(&self, width: f64) -> [Aabb; 2] {
        let (d, t, h) = (self.finger_depth, self.finger_thickness, self.finger_height / 2.0);
        [
            Aabb {
                min: Point::new(-d, -width / 2.0 - t, -h),
                max: Point::new(0.0, -width / 2.0, h),
            },
            Aabb {
                min: Point::new(-d, width / 2.0, -h),
                max: Point::new(0.0, width / 2.0 + t, h),
            },
        ]
    }

    pub fn base_box(&self, width: f64) -> Aabb {
        let half = width / 2.0 + self.finger_thickness;
        Aabb {
            min: Point::new(-self.finger_depth - self.base_depth, -half, -self.finger_height / 2.0),
            max: Point::new(-self.finger_depth, half, self.finger_height / 2.0),
        }
    }

    /// Both fingers followed by the hand base.
    pub fn body_boxes(&self, width: f64) -> [Aabb; 3] {
        let [f1, f2] = self.finger_boxes(width);
        [f1, f2, self.base_box(width)]
    }

    /// Radius of a ball around the gripper origin that contains the hand body
    /// and the closing volume.
    pub fn bounding_radius(&self, width: f64) -> f64 {
        self.base_box(width)
            .corners()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

/// Where a grasp hypothesis came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspSource {
    GpgRaw,
    GpgInpainted,
    #[serde(rename = "heuristic4dof")]
    Heuristic4Dof,
}

/// A 7-DoF grasp: fingertip-midpoint position, orientation and aperture.
///
/// Rotation columns are the approach, closing and minor axes in world
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspPose {
    pub position: Point,
    pub rotation: Matrix3<f64>,
    pub width: f64,
    pub source: GraspSource,
    pub score: Option<f64>,
}

impl GraspPose {
    /// Builds a pose from an approach and closing direction; the minor axis
    /// completes a right-handed frame.
    pub fn from_axes(position: Point, approach: Vector3<f64>, closing: Vector3<f64>, width: f64, source: GraspSource) -> Self {
        let a = approach.normalize();
        let c = (closing - a * a.dot(&closing)).normalize();
        let m = a.cross(&c);
        GraspPose {
            position,
            rotation: Matrix3::from_columns(&[a, c, m]),
            width,
            source,
            score: None,
        }
    }

    pub fn approach(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn closing(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    pub fn minor(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    #[inline]
    pub fn to_local(&self, p: &Point) -> Point {
        self.rotation.tr_mul(&(p - self.position))
    }

    #[inline]
    pub fn to_world(&self, p: &Point) -> Point {
        self.rotation * p + self.position
    }

    pub fn validate(&self, g: &GripperGeometry) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Matrix3::identity()).iter().any(|e| e.abs() > 1e-6) || self.rotation.determinant() <= 0.0 {
            return Err(Error::Precondition("grasp rotation is not a proper rotation".into()));
        }
        if !(self.width > 0.0 && self.width <= g.max_aperture) {
            return Err(Error::Precondition(format!(
                "grasp width {} outside (0, {}]",
                self.width, g.max_aperture
            )));
        }
        if !self.position.iter().all(|c| c.is_finite()) {
            return Err(Error::Precondition("grasp position is not finite".into()));
        }
        Ok(())
    }
}

/// Points and normals expressed in the gripper frame: `p' = Rᵀ(p − t)`.
pub fn to_gripper_frame(pose: &GraspPose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.to_local(p)).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| pose.rotation.tr_mul(n)).collect()),
        frame_id: "gripper".to_string(),
    }
}

pub fn closing_volume(g: &GripperGeometry, width: f64) -> Result<Aabb> {
    if !(width > 0.0 && width <= g.max_aperture) {
        return Err(Error::Precondition(format!(
            "width {width} outside (0, {}]",
            g.max_aperture
        )));
    }
    Ok(g.closing_volume(width))
}

/// True when any gripper-frame point is within `clearance` of a finger or the
/// hand base.
pub fn body_collides_local<'a>(
    g: &GripperGeometry,
    width: f64,
    local_points: impl IntoIterator<Item = &'a Point>,
    clearance: f64,
) -> bool {
    let boxes = g.body_boxes(width);
    local_points
        .into_iter()
        .any(|p| boxes.iter().any(|b| b.distance(p) <= clearance))
}

pub fn body_collides(g: &GripperGeometry, pose: &GraspPose, cloud: &PointCloud, clearance: f64) -> bool {
    let boxes = g.body_boxes(pose.width);
    cloud.points.iter().any(|p| {
        let q = pose.to_local(p);
        boxes.iter().any(|b| b.distance(&q) <= clearance)
    })
}

/// Inside and outside regions of a grasp, both in the gripper frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPair {
    pub inside: PointCloud,
    pub outside: PointCloud,
}

/// Per-point region label used by [`extract_regions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Inside,
    Outside,
    Elsewhere,
}

pub fn classify_local(g: &GripperGeometry, width: f64, outside_scale: f64, p: &Point) -> Region {
    let closing = g.closing_volume(width);
    if closing.contains_open(p) {
        return Region::Inside;
    }
    if closing.scaled(outside_scale).contains_closed(p)
        || g.body_boxes(width).iter().any(|b| b.contains_closed(p))
    {
        Region::Outside
    } else {
        Region::Elsewhere
    }
}

/// Splits `cloud` into points between the fingers and points in the
/// surrounding context box (the closing volume scaled by `outside_scale`
/// about its center, plus the hand body).
pub fn extract_regions(g: &GripperGeometry, pose: &GraspPose, cloud: &PointCloud, outside_scale: f64) -> Result<RegionPair> {
    if !(outside_scale > 1.0) {
        return Err(Error::Precondition(format!("outside_scale must exceed 1, got {outside_scale}")));
    }
    let closing = g.closing_volume(pose.width);
    let context = closing.scaled(outside_scale);
    let body = g.body_boxes(pose.width);
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for p in &cloud.points {
        let q = pose.to_local(p);
        if closing.contains_open(&q) {
            inside.push(q);
        } else if context.contains_closed(&q) || body.iter().any(|b| b.contains_closed(&q)) {
            outside.push(q);
        }
    }
    let frame = |points| PointCloud {
        points,
        normals: None,
        frame_id: "gripper".to_string(),
    };
    Ok(RegionPair {
        inside: frame(inside),
        outside: frame(outside),
    })
}

/// Translation distance and geodesic rotation angle between two poses.
///
/// The angle is `arccos((tr(RaᵀRb) − 1) / 2)`, evaluated as `atan2` of the
/// skew and trace parts of the relative rotation for accuracy near 0 and π.
pub fn pose_distance(a: &GraspPose, b: &GraspPose) -> (f64, f64) {
    let translation = (a.position - b.position).norm();
    let r = a.rotation.tr_mul(&b.rotation);
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let cos2 = r.trace() - 1.0;
    let angle = skew.norm().atan2(cos2).clamp(0.0, std::f64::consts::PI);
    (translation, angle)
}
