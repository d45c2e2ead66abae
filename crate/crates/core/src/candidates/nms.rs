use crate::gripper::{pose_distance, GraspPose};

/// Greedy pose suppression. Poses are visited best score first (unscored
/// poses after scored ones, in input order); each kept pose removes every
/// later pose that is within both `d_pos` and `d_ang` of it.
pub fn nms_poses(poses: &[GraspPose], d_pos: f64, d_ang: f64) -> Vec<GraspPose> {
    let mut order: Vec<usize> = (0..poses.len()).collect();
    order.sort_by(|&a, &b| match (poses[a].score, poses[b].score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let mut kept: Vec<&GraspPose> = Vec::new();
    for i in order {
        let p = &poses[i];
        let suppressed = kept.iter().any(|k| {
            // cheap translation check first
            (k.position - p.position).norm() <= d_pos && pose_distance(k, p).1 <= d_ang
        });
        if !suppressed {
            kept.push(p);
        }
    }
    kept.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;
    use crate::gripper::GraspSource;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(p: Point, yaw: f64, score: Option<f64>) -> GraspPose {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        GraspPose {
            position: p,
            rotation: *r.matrix(),
            width: 0.08,
            source: GraspSource::GpgRaw,
            score,
        }
    }

    #[test]
    fn identical_poses_collapse() {
        let p = pose(Point::new(0.1, 0.0, 0.0), 0.3, Some(0.5));
        assert_eq!(nms_poses(&[p.clone(), p], 0.005, 1f64.to_radians()).len(), 1);
    }

    #[test]
    fn distant_poses_both_survive() {
        let a = pose(Point::zeros(), 0.0, None);
        let b = pose(Point::new(1.0, 0.0, 0.0), 0.0, None);
        assert_eq!(nms_poses(&[a, b], 0.03, 0.5).len(), 2);
    }

    #[test]
    fn needs_both_thresholds() {
        let a = pose(Point::zeros(), 0.0, Some(1.0));
        let b = pose(Point::new(0.001, 0.0, 0.0), 1.0, Some(0.5));
        assert_eq!(nms_poses(&[a, b], 0.03, 0.5).len(), 2);
    }

    #[test]
    fn scored_poses_come_first_in_descending_order() {
        let poses = vec![
            pose(Point::new(0.0, 0.0, 0.0), 0.0, None),
            pose(Point::new(1.0, 0.0, 0.0), 0.0, Some(0.2)),
            pose(Point::new(2.0, 0.0, 0.0), 0.0, Some(0.9)),
        ];
        let out = nms_poses(&poses, 0.01, 0.1);
        let scores: Vec<_> = out.iter().map(|p| p.score).collect();
        assert_eq!(scores, vec![Some(0.9), Some(0.2), None]);
    }

    fn reference(poses: &[GraspPose], d_pos: f64, d_ang: f64) -> Vec<GraspPose> {
        let mut idx: Vec<usize> = (0..poses.len()).collect();
        idx.sort_by(|&a, &b| poses[b].score.unwrap().partial_cmp(&poses[a].score.unwrap()).unwrap());
        let mut alive = vec![true; poses.len()];
        let mut out = Vec::new();
        for (rank, &i) in idx.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            out.push(poses[i].clone());
            for &j in &idx[rank + 1..] {
                let (t, a) = pose_distance(&poses[i], &poses[j]);
                if t <= d_pos && a <= d_ang {
                    alive[j] = false;
                }
            }
        }
        out
    }

    #[test]
    fn matches_quadratic_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let poses: Vec<GraspPose> = (0..50)
                .map(|_| {
                    let p = Point::new(rng.random_range(0.0..0.06), rng.random_range(0.0..0.06), 0.0);
                    pose(p, rng.random_range(0.0..1.5), Some(rng.random()))
                })
                .collect();
            let ours = nms_poses(&poses, 0.03, 30f64.to_radians());
            assert_eq!(ours, reference(&poses, 0.03, 30f64.to_radians()));
            assert_eq!(nms_poses(&ours, 0.03, 30f64.to_radians()), ours);
        }
    }
}
