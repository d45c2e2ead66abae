//! Analytic grasp labels on known primitive scenes.
//!
//! A grasp collides when the hand body touches densely sampled object
//! surfaces, sits inside a solid, or dips below the support plane. Otherwise
//! the jaws are closed onto the scene and the minimum friction coefficient for
//! two-contact force closure decides between the low-quality band and a
//! continuous score.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, SpatialIndex};
use crate::gripper::{Aabb, GraspPose, GripperGeometry};
use crate::scene::SceneModel;
use crate::{Error, Result};

pub const COLLISION_SCORE: f64 = -1.0;
pub const LOW_QUALITY_SCORE: f64 = -0.5;
/// Spacing of the friction grid that required friction is rounded up to; it
/// is also the best attainable quantized friction.
pub const MU_GRID_STEP: f64 = 0.1;

/// Samples within this distance of the extreme closing coordinate belong to
/// the same contact patch.
const PATCH_TOLERANCE: f64 = 1e-6;
/// Spacing of the probe grid used to detect a hand buried inside a solid.
const SOLID_PROBE_SPACING: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub mu_threshold: f64,
    pub surface_spacing: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mu_threshold: 1.0,
            surface_spacing: 0.001,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_threshold > MU_GRID_STEP) || !self.mu_threshold.is_finite() {
            return Err(Error::Config(format!("oracle.mu_threshold must exceed {MU_GRID_STEP}")));
        }
        if !(self.surface_spacing > 0.0) {
            return Err(Error::Config("oracle.surface_spacing must be positive".into()));
        }
        Ok(())
    }
}

/// A point contact with its outward surface normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub point: Point,
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspLabel {
    pub score: f64,
    pub mu_required: Option<f64>,
    pub collision: bool,
    pub contacts: Option<[Contact; 2]>,
}

/// Dense surface sampling of a scene with a spatial index over the samples.
#[derive(Debug, Clone)]
pub struct SceneSurface {
    pub scene: SceneModel,
    pub points: Vec<Point>,
    pub normals: Vec<Vector3<f64>>,
    pub object_ids: Vec<u32>,
    index: SpatialIndex,
}

impl SceneSurface {
    pub fn new(scene: &SceneModel, spacing: f64) -> Result<SceneSurface> {
        scene.validate()?;
        if !(spacing > 0.0) {
            return Err(Error::Precondition("surface spacing must be positive".into()));
        }
        let (points, normals, object_ids) = scene.surface_samples(spacing);
        let index = SpatialIndex::new(&points);
        Ok(SceneSurface {
            scene: scene.clone(),
            points,
            normals,
            object_ids,
            index,
        })
    }

    /// Ids of samples inside a gripper-frame box, by exhaustive check of a
    /// ball query around the box.
    fn samples_in_box(&self, pose: &GraspPose, b: &Aabb, keep: impl Fn(&Point) -> bool) -> Vec<(usize, Point)> {
        let radius = b.extents().norm() / 2.0;
        self.index
            .radius_search(&pose.to_world(&b.center()), radius)
            .into_iter()
            .filter_map(|i| {
                let q = pose.to_local(&self.points[i]);
                keep(&q).then_some((i, q))
            })
            .collect()
    }

    /// Object owning the sample nearest to `p`.
    pub fn nearest_object(&self, p: &Point) -> Option<u32> {
        self.index.knn(p, 1).first().map(|&(i, _)| self.object_ids[i])
    }

    /// Hand-body collision with the scene: surface contact, a body probe
    /// point inside a solid, or a body corner below the support plane.
    pub fn collides(&self, g: &GripperGeometry, pose: &GraspPose) -> bool {
        let boxes = g.body_boxes(pose.width);
        let plane = self.scene.support_plane;
        for b in &boxes {
            if b.corners().iter().any(|c| pose.to_world(c).z < plane) {
                return true;
            }
        }
        for b in &boxes {
            if !self.samples_in_box(pose, b, |q| b.contains_closed(q)).is_empty() {
                return true;
            }
        }
        boxes
            .iter()
            .any(|b| probe_grid(b).any(|q| self.scene.solid_containing(&pose.to_world(&q)).is_some()))
    }

    /// Closes the jaws along the closing axis. Each finger stops at the first
    /// surface samples its inner face meets; the contact is the centroid of
    /// that patch with the averaged normal.
    pub fn find_contacts(&self, g: &GripperGeometry, pose: &GraspPose) -> Option<[Contact; 2]> {
        let vol = g.closing_volume(pose.width);
        let half = pose.width / 2.0;
        let hits = self.samples_in_box(pose, &vol, |q| {
            q.x >= vol.min.x && q.x <= vol.max.x && q.z >= vol.min.z && q.z <= vol.max.z && q.y.abs() < half
        });
        if hits.is_empty() {
            return None;
        }
        let ymin = hits.iter().map(|h| h.1.y).fold(f64::INFINITY, f64::min);
        let ymax = hits.iter().map(|h| h.1.y).fold(f64::NEG_INFINITY, f64::max);
        let patch = |pick: &dyn Fn(f64) -> bool| -> Option<Contact> {
            let mut point = Point::zeros();
            let mut normal = Vector3::zeros();
            let mut n = 0usize;
            for (i, _) in hits.iter().filter(|h| pick(h.1.y)) {
                point += self.points[*i];
                normal += self.normals[*i];
                n += 1;
            }
            let len = normal.norm();
            (len > 1e-12).then(|| Contact {
                point: point / n as f64,
                normal: normal / len,
            })
        };
        let c1 = patch(&|y| y <= ymin + PATCH_TOLERANCE)?;
        let c2 = patch(&|y| y >= ymax - PATCH_TOLERANCE)?;
        ((c2.point - c1.point).norm() > 1e-9).then_some([c1, c2])
    }
}

/// Regular probe points covering a box, boundary included.
fn probe_grid(b: &Aabb) -> impl Iterator<Item = Point> + '_ {
    let e = b.extents();
    let n: [usize; 3] = std::array::from_fn(|k| (e[k] / SOLID_PROBE_SPACING).ceil() as usize);
    (0..=n[0]).flat_map(move |i| {
        (0..=n[1]).flat_map(move |j| {
            (0..=n[2]).map(move |l| {
                let f = |k: usize, c: usize| if n[k] == 0 { 0.5 } else { c as f64 / n[k] as f64 };
                b.min + e.component_mul(&Vector3::new(f(0, i), f(1, j), f(2, l)))
            })
        })
    })
}

/// Smallest friction coefficient whose cones at both contacts contain the
/// grasp line; infinite when a normal is at or beyond 90° from it.
pub fn min_friction(c1: &Point, n1: &Vector3<f64>, c2: &Point, n2: &Vector3<f64>) -> Result<f64> {
    let d = c2 - c1;
    let len = d.norm();
    if !(len > 0.0) {
        return Err(Error::Precondition("contacts coincide".into()));
    }
    let u = d / len;
    let angle = |a: &Vector3<f64>, b: &Vector3<f64>| a.cross(b).norm().atan2(a.dot(b));
    let mu = |theta: f64| {
        if theta >= std::f64::consts::FRAC_PI_2 {
            f64::INFINITY
        } else {
            theta.tan()
        }
    };
    Ok(mu(angle(n1, &-u)).max(mu(angle(n2, &u))))
}

/// Required friction rounded up to the grid and capped at the threshold.
pub fn quantize_mu(mu: f64, mu_threshold: f64) -> f64 {
    let steps = (mu / MU_GRID_STEP - 1e-9).ceil().max(1.0);
    (steps * MU_GRID_STEP).min(mu_threshold)
}

/// Linear map from quantized friction to `[0, 1]`: 1 at the grid minimum,
/// 0 at the threshold.
pub fn score_from_mu(mu: f64, mu_threshold: f64) -> f64 {
    (mu_threshold - quantize_mu(mu, mu_threshold)) / (mu_threshold - MU_GRID_STEP)
}

pub fn label_grasp(surface: &SceneSurface, pose: &GraspPose, g: &GripperGeometry, cfg: &OracleConfig) -> GraspLabel {
    if surface.collides(g, pose) {
        return GraspLabel {
            score: COLLISION_SCORE,
            mu_required: None,
            collision: true,
            contacts: None,
        };
    }
    let contacts = surface.find_contacts(g, pose);
    let mu = contacts.and_then(|[a, b]| min_friction(&a.point, &a.normal, &b.point, &b.normal).ok());
    let score = match mu {
        Some(m) if m <= cfg.mu_threshold => score_from_mu(m, cfg.mu_threshold),
        _ => LOW_QUALITY_SCORE,
    };
    GraspLabel {
        score,
        mu_required: mu,
        collision: false,
        contacts,
    }
}

/// Labels many grasps in parallel, preserving order.
pub fn label_grasps(surface: &SceneSurface, poses: &[GraspPose], g: &GripperGeometry, cfg: &OracleConfig) -> Vec<GraspLabel> {
    poses.par_iter().map(|p| label_grasp(surface, p, g, cfg)).collect()
}

/// Success at friction `mu`: collision-free and closable with at most `mu`.
pub fn evaluate_at_mu(label: &GraspLabel, mu: f64) -> bool {
    !label.collision && label.mu_required.is_some_and(|m| m <= mu)
}
