use super::{gpg_generate_from, inpaint_depth, nms_poses, GpgConfig};
use crate::cloud::{preprocess_depth, DepthImage, PointCloud, PreprocessConfig, RigidTransform};
use crate::gripper::{GraspPose, GraspSource, GripperGeometry};
use crate::{derive_seed, Result};

/// Position threshold of the NMS pass that merges the two candidate sets.
pub const DUAL_NMS_POSITION: f64 = 0.005;
/// Angle threshold (1°) of the merging NMS pass.
pub const DUAL_NMS_ANGLE: f64 = std::f64::consts::PI / 180.0;

/// The depth frame behind a raw cloud and how to turn it into a cloud again.
#[derive(Debug, Clone, Copy)]
pub struct DepthSource<'a> {
    pub image: &'a DepthImage,
    pub camera_to_world: &'a RigidTransform,
    pub preprocess: &'a PreprocessConfig,
}

/// GPG on the raw cloud and, when a depth frame is given, again on the
/// cloud rebuilt from the inpainted frame; the union is thinned with a tight
/// NMS. The raw branch uses `seed` directly so that without depth the result
/// is `nms(gpg_generate(cloud, seed))`.
pub fn dual_cloud_generate(
    cloud: &PointCloud,
    depth: Option<DepthSource<'_>>,
    g: &GripperGeometry,
    cfg: &GpgConfig,
    seed: u64,
) -> Result<Vec<GraspPose>> {
    let mut poses = gpg_generate_from(cloud, g, cfg, seed, GraspSource::GpgRaw)?;
    if let Some(src) = depth {
        let filled = inpaint_depth(src.image, src.preprocess.inpaint_max_iters, src.preprocess.inpaint_tol)?;
        let inpainted = preprocess_depth(&filled, src.camera_to_world, src.preprocess)?;
        poses.extend(gpg_generate_from(&inpainted, g, cfg, derive_seed(seed, 1), GraspSource::GpgInpainted)?);
    }
    Ok(nms_poses(&poses, DUAL_NMS_POSITION, DUAL_NMS_ANGLE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::gpg_generate;
    use crate::cloud::Intrinsics;

    /// Top-down view of a 4 cm cube on a table, 0.4 m below the camera.
    fn cube_frame() -> (DepthImage, RigidTransform) {
        let (w, h) = (64, 64);
        let k = Intrinsics { fx: 160.0, fy: 160.0, cx: 31.5, cy: 31.5 };
        let mut depths = vec![0.4f32; w * h];
        for v in 0..h {
            for u in 0..w {
                let x = (u as f64 - k.cx) * 0.36 / k.fx;
                let y = (v as f64 - k.cy) * 0.36 / k.fy;
                if x.abs() < 0.02 && y.abs() < 0.02 {
                    depths[v * w + u] = 0.36;
                }
            }
        }
        // camera looks down: camera z maps to world -z
        let rot = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let pose = RigidTransform::new(rot, nalgebra::Vector3::new(0.0, 0.0, 0.4));
        (DepthImage::new(w, h, depths, k).unwrap(), pose)
    }

    fn config() -> GpgConfig {
        GpgConfig { n_samples: 1_000_000, ..GpgConfig::default() }
    }

    #[test]
    fn without_depth_it_is_nms_over_raw_gpg() {
        let (img, pose) = cube_frame();
        let pre = PreprocessConfig { denoise_k: None, voxel: 0.004, ..PreprocessConfig::default() };
        let cloud = preprocess_depth(&img, &pose, &pre).unwrap();
        let g = GripperGeometry::default();
        let cfg = GpgConfig { n_samples: 40, ..GpgConfig::default() };
        let dual = dual_cloud_generate(&cloud, None, &g, &cfg, 5).unwrap();
        let raw = gpg_generate(&cloud, &g, &cfg, 5).unwrap();
        assert_eq!(dual, nms_poses(&raw, DUAL_NMS_POSITION, DUAL_NMS_ANGLE));
    }

    #[test]
    fn duplicates_across_branches_are_suppressed() {
        let (img, pose) = cube_frame();
        let pre = PreprocessConfig { denoise_k: None, voxel: 0.004, ..PreprocessConfig::default() };
        let cloud = preprocess_depth(&img, &pose, &pre).unwrap();
        let g = GripperGeometry::default();
        let raw = gpg_generate(&cloud, &g, &config(), 0).unwrap();
        assert!(!raw.is_empty());
        let src = DepthSource { image: &img, camera_to_world: &pose, preprocess: &pre };
        let merged = dual_cloud_generate(&cloud, Some(src), &g, &config(), 0).unwrap();
        assert!(merged.len() < 2 * raw.len());
        assert!(merged.iter().all(|p| p.source == GraspSource::GpgRaw));
    }

    #[test]
    fn empty_inputs_give_empty_output() {
        let cloud = PointCloud::with_normals(vec![], vec![]);
        let out = dual_cloud_generate(&cloud, None, &GripperGeometry::default(), &config(), 0).unwrap();
        assert!(out.is_empty());
    }
}
