use nalgebra::Matrix3;

use crate::cloud::{Point, PointCloud, SpatialIndex};

/// Eigenvalue gap below which the curvature direction is treated as
/// ambiguous and replaced by the projected global +x axis.
pub const EIGEN_TIE_GAP: f64 = 1e-9;

/// Local surface frame at a seed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarbouxFrame {
    /// Inverted surface normal.
    pub approach: Point,
    /// Minor principal curvature direction, orthogonal to `approach`.
    pub curvature_axis: Point,
    /// `approach × curvature_axis`.
    pub binormal: Point,
}

impl DarbouxFrame {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.approach, self.curvature_axis, self.binormal])
    }
}

/// Builds the frame from the normals within `radius` of the seed; `None` when
/// the seed has no valid normal, fewer than three neighbors carry valid
/// normals, or the curvature direction is parallel to the normal.
pub fn darboux_frame(cloud: &PointCloud, index: &SpatialIndex, seed: usize, radius: f64) -> Option<DarbouxFrame> {
    let normal = cloud.normal(seed)?;
    let mut m = Matrix3::zeros();
    let mut count = 0;
    for j in index.radius_search(&cloud.points[seed], radius) {
        if let Some(n) = cloud.normal(j) {
            m += n * n.transpose();
            count += 1;
        }
    }
    if count < 3 {
        return None;
    }
    let eig = m.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let approach = -normal;
    let project = |v: Point| v - approach * approach.dot(&v);
    let gap = eig.eigenvalues[order[1]] - eig.eigenvalues[order[0]];
    let axis = if gap < EIGEN_TIE_GAP {
        let px = project(Point::x());
        if px.norm() >= 1e-6 {
            px
        } else {
            project(Point::y())
        }
    } else {
        project(eig.eigenvectors.column(order[0]).into_owned())
    };
    let norm = axis.norm();
    if norm < 1e-6 {
        return None;
    }
    let curvature_axis = axis / norm;
    Some(DarbouxFrame {
        approach,
        curvature_axis,
        binormal: approach.cross(&curvature_axis),
    })
}
