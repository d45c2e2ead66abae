//! Point clouds and the geometric primitives the rest of the pipeline is
//! built on: spatial queries, downsampling, denoising, normals and farthest
//! point sampling.

mod depth;
mod filter;
mod fps;
mod index;
pub mod io;
mod normals;
mod preprocess;
mod transform;

use nalgebra::{Matrix3, Vector3};

pub use depth::{load_depth, save_depth, DepthImage, Intrinsics};
pub use filter::{voxel_downsample, weighted_knn_denoise, DENOISE_DISTANCE_FLOOR};
pub use fps::farthest_point_sample;
pub use index::SpatialIndex;
pub use io::{load_cloud, save_cloud, score_color, CloudFormat};
pub use normals::{estimate_normals, DEFAULT_NORMAL_RADIUS};
pub use preprocess::{depth_to_cloud, preprocess_depth, PreprocessConfig};
pub use transform::RigidTransform;
pub(crate) use transform::{matrix_from_row_major, matrix_to_row_major};

use crate::{Error, Result};

pub type Point = Vector3<f64>;

/// Positions in meters with optional per-point unit normals.
///
/// A normal that could not be estimated is stored as the zero vector; every
/// other normal has unit length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub normals: Option<Vec<Point>>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        PointCloud {
            points,
            normals: None,
            frame_id: "world".to_string(),
        }
    }

    pub fn with_normals(points: Vec<Point>, normals: Vec<Point>) -> Self {
        PointCloud {
            points,
            normals: Some(normals),
            frame_id: "world".to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The normal of point `i` if one is present and valid.
    pub fn normal(&self, i: usize) -> Option<Point> {
        let n = self.normals.as_ref()?[i];
        (n.norm_squared() > 0.25).then_some(n)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Precondition(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::Precondition(format!(
                    "{} normals for {} points",
                    normals.len(),
                    self.points.len()
                )));
            }
            for (i, n) in normals.iter().enumerate() {
                let norm = n.norm();
                if norm != 0.0 && (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Precondition(format!(
                        "normal {i} has norm {norm}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `p -> rotation * p + translation`; normals are rotated.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Point) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| rotation * p + translation)
                .collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| rotation * n).collect()),
            frame_id: self.frame_id.clone(),
        }
    }

    /// Keeps the points selected by `ids`, in that order.
    pub fn select(&self, ids: &[usize]) -> PointCloud {
        PointCloud {
            points: ids.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ids.iter().map(|&i| ns[i]).collect()),
            frame_id: self.frame_id.clone(),
        }
    }

    pub fn centroid(&self) -> Option<Point> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Point = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }
}

#[inline]
pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}
