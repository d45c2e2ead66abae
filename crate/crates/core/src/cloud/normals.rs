use nalgebra::Matrix3;
use rayon::prelude::*;

use super::{Point, PointCloud, SpatialIndex};
use crate::{Error, Result};

pub const DEFAULT_NORMAL_RADIUS: f64 = 0.01;

/// PCA normals over a radius neighborhood, oriented toward `viewpoint`.
///
/// Points with fewer than three neighbors (itself included) get an invalid
/// zero normal.
pub fn estimate_normals(cloud: &PointCloud, radius: f64, viewpoint: &Point) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::Precondition(format!("normal radius must be positive, got {radius}")));
    }
    let index = SpatialIndex::new(&cloud.points);
    let normals = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.points[i];
            let nbrs = index.radius_search(&p, radius);
            if nbrs.len() < 3 {
                return Point::zeros();
            }
            let mean: Point = nbrs.iter().map(|&j| cloud.points[j]).sum::<Point>() / nbrs.len() as f64;
            let mut cov = Matrix3::zeros();
            for &j in &nbrs {
                let d = cloud.points[j] - mean;
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let n = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            let norm = n.norm();
            if !(norm > 0.0) || !n.iter().all(|c| c.is_finite()) {
                return Point::zeros();
            }
            let n = n / norm;
            if n.dot(&(viewpoint - p)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
        frame_id: cloud.frame_id.clone(),
    })
}
