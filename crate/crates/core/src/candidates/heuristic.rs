use std::collections::BTreeSet;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, PointCloud, SpatialIndex};
use crate::gripper::{GraspPose, GraspSource, GripperGeometry};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Heuristic4DofConfig {
    pub xy_step: f64,
    pub z_step: f64,
    pub z_min: f64,
    pub yaw_step: f64,
    pub fixed_width: f64,
    pub min_inside_points: usize,
}

impl Default for Heuristic4DofConfig {
    fn default() -> Self {
        Heuristic4DofConfig {
            xy_step: 0.01,
            z_step: 0.01,
            z_min: 0.0,
            yaw_step: 30f64.to_radians(),
            fixed_width: 0.10,
            min_inside_points: 5,
        }
    }
}

impl Heuristic4DofConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("xy_step", self.xy_step), ("z_step", self.z_step), ("yaw_step", self.yaw_step), ("fixed_width", self.fixed_width)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("heuristic.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Every top-down pose on the occupied grid, before any filtering. Cells are
/// visited in (x, y, z) index order and yaws in increasing order.
pub fn heuristic_4dof_raw(cloud: &PointCloud, cfg: &Heuristic4DofConfig) -> Result<Vec<GraspPose>> {
    cfg.validate()?;
    if cloud.is_empty() {
        return Err(Error::Precondition("heuristic 4-DoF generation needs a non-empty cloud".into()));
    }
    let floor = (cfg.z_min / cfg.z_step).round() as i64;
    let mut cells = BTreeSet::new();
    for p in &cloud.points {
        let (i, j, k) = (
            (p.x / cfg.xy_step).round() as i64,
            (p.y / cfg.xy_step).round() as i64,
            (p.z / cfg.z_step).round() as i64,
        );
        for level in floor..=k {
            cells.insert((i, j, level));
        }
    }
    let mut yaws = Vec::new();
    while (yaws.len() as f64) * cfg.yaw_step < std::f64::consts::PI - 1e-9 {
        yaws.push(yaws.len() as f64 * cfg.yaw_step);
    }
    let approach = -Point::z();
    let mut out = Vec::with_capacity(cells.len() * yaws.len());
    for (i, j, k) in cells {
        let position = Point::new(i as f64 * cfg.xy_step, j as f64 * cfg.xy_step, k as f64 * cfg.z_step);
        for &yaw in &yaws {
            let closing = Point::new(yaw.cos(), yaw.sin(), 0.0);
            out.push(GraspPose {
                position,
                rotation: Matrix3::from_columns(&[approach, closing, approach.cross(&closing)]),
                width: cfg.fixed_width,
                source: GraspSource::Heuristic4Dof,
                score: None,
            });
        }
    }
    Ok(out)
}

/// Grid poses that enclose at least `min_inside_points` of the original
/// cloud between the fingers.
pub fn heuristic_4dof_generate(cloud: &PointCloud, g: &GripperGeometry, cfg: &Heuristic4DofConfig) -> Result<Vec<GraspPose>> {
    let raw = heuristic_4dof_raw(cloud, cfg)?;
    let index = SpatialIndex::new(&cloud.points);
    let closing = g.closing_volume(cfg.fixed_width);
    let reach = closing.corners().iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(raw
        .into_iter()
        .filter(|pose| {
            index
                .radius_search(&pose.position, reach)
                .into_iter()
                .filter(|&i| closing.contains_open(&pose.to_local(&cloud.points[i])))
                .count()
                >= cfg.min_inside_points
        })
        .collect())
}
