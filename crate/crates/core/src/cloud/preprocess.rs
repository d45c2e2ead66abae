use serde::{Deserialize, Serialize};

use super::{estimate_normals, voxel_downsample, weighted_knn_denoise, DepthImage, Point, PointCloud, RigidTransform};
use crate::{Error, Result};

/// Sensor-cloud cleanup applied before candidate generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Neighbors of the inverse-distance denoiser; `None` disables it.
    pub denoise_k: Option<usize>,
    pub voxel: f64,
    pub normal_radius: f64,
    /// World-frame crop box `[xmin, ymin, zmin, xmax, ymax, zmax]`.
    pub workspace: Option<[f64; 6]>,
    pub inpaint_max_iters: usize,
    pub inpaint_tol: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            denoise_k: Some(10),
            voxel: 0.002,
            normal_radius: super::DEFAULT_NORMAL_RADIUS,
            workspace: None,
            inpaint_max_iters: 3000,
            inpaint_tol: 1e-5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel > 0.0) || !(self.normal_radius > 0.0) || !(self.inpaint_tol > 0.0) {
            return Err(Error::Config("preprocess: voxel, normal_radius and inpaint_tol must be positive".into()));
        }
        if self.denoise_k == Some(0) {
            return Err(Error::Config("preprocess.denoise_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Pinhole back-projection of every valid pixel, in the camera frame.
pub fn depth_to_cloud(img: &DepthImage) -> PointCloud {
    let mut points = Vec::with_capacity(img.depths.len());
    for v in 0..img.height {
        for u in 0..img.width {
            let idx = v * img.width + u;
            if !img.is_hole(idx) {
                points.push(img.backproject(u as f64, v as f64, img.depths[idx] as f64));
            }
        }
    }
    PointCloud {
        points,
        normals: None,
        frame_id: "camera".to_string(),
    }
}

/// Depth image to a cleaned world-frame cloud with normals facing the camera.
pub fn preprocess_depth(img: &DepthImage, camera_to_world: &RigidTransform, cfg: &PreprocessConfig) -> Result<PointCloud> {
    let camera = depth_to_cloud(img);
    let mut points: Vec<Point> = camera.points.iter().map(|p| camera_to_world.apply(p)).collect();
    if let Some(w) = cfg.workspace {
        points.retain(|p| p.x >= w[0] && p.y >= w[1] && p.z >= w[2] && p.x <= w[3] && p.y <= w[4] && p.z <= w[5]);
    }
    let mut cloud = PointCloud::new(points);
    if let Some(k) = cfg.denoise_k {
        if cloud.len() > k {
            cloud = weighted_knn_denoise(&cloud, k)?;
        }
    }
    let cloud = voxel_downsample(&cloud, cfg.voxel)?;
    estimate_normals(&cloud, cfg.normal_radius, &camera_to_world.translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Intrinsics;

    fn image(depths: Vec<f32>, w: usize, h: usize) -> DepthImage {
        let k = Intrinsics { fx: 100.0, fy: 120.0, cx: (w as f64 - 1.0) / 2.0, cy: (h as f64 - 1.0) / 2.0 };
        DepthImage::new(w, h, depths, k).unwrap()
    }

    #[test]
    fn center_pixel_backprojects_to_axis() {
        let mut d = vec![0.0; 9];
        d[4] = 1.0;
        let c = depth_to_cloud(&image(d, 3, 3));
        assert_eq!(c.points, vec![Point::new(0.0, 0.0, 1.0)]);
    }

    #[test]
    fn corner_pixel_projection_round_trip() {
        let img = image(vec![1.7; 12], 4, 3);
        let c = depth_to_cloud(&img);
        let (u, v, z) = img.project(&c.points[11]);
        let back = img.backproject(u, v, z);
        assert!((back - c.points[11]).norm() < 1e-9);
        assert!((u - 3.0).abs() < 1e-9 && (v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn all_hole_image_gives_empty_cloud() {
        let c = depth_to_cloud(&image(vec![0.0, f32::NAN, 0.0, 0.0], 2, 2));
        assert!(c.is_empty());
    }
}
