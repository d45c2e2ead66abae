use std::collections::HashMap;

use rayon::prelude::*;

use super::{Point, PointCloud, SpatialIndex};
use crate::{Error, Result};

/// Smallest neighbor distance used for inverse-distance weights, so exact
/// duplicates get a large finite weight.
pub const DENOISE_DISTANCE_FLOOR: f64 = 1e-9;

/// One point per occupied voxel at the centroid of its members.
///
/// Output order follows the first point that fell into each voxel. Normals are
/// averaged and renormalized; a voxel whose normals cancel gets an invalid
/// (zero) normal.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) {
        return Err(Error::Precondition(format!("voxel size must be positive, got {voxel}")));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut sums: Vec<(Point, Point, usize)> = Vec::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Point::zeros(), Point::zeros(), 0));
            sums.len() - 1
        });
        let acc = &mut sums[slot];
        acc.0 += p;
        if let Some(n) = cloud.normal(i) {
            acc.1 += n;
        }
        acc.2 += 1;
    }
    let points = sums.iter().map(|(s, _, c)| s / *c as f64).collect();
    let normals = cloud.normals.as_ref().map(|_| {
        sums.iter()
            .map(|(_, n, _)| {
                let norm = n.norm();
                if norm > 1e-9 {
                    n / norm
                } else {
                    Point::zeros()
                }
            })
            .collect()
    });
    Ok(PointCloud {
        points,
        normals,
        frame_id: cloud.frame_id.clone(),
    })
}

/// Replaces every point by the inverse-distance weighted mean of its `k`
/// nearest neighbors (itself excluded). Normals are carried over untouched.
pub fn weighted_knn_denoise(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k == 0 || cloud.len() <= k {
        return Err(Error::Precondition(format!(
            "denoise needs more than k={k} points, got {}",
            cloud.len()
        )));
    }
    let index = SpatialIndex::new(&cloud.points);
    let points = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let p = cloud.points[i];
            let mut offset = Point::zeros();
            let mut total = 0.0;
            for (j, d) in index
                .knn(&p, k + 1)
                .into_iter()
                .filter(|&(j, _)| j != i)
                .take(k)
            {
                let w = 1.0 / d.max(DENOISE_DISTANCE_FLOOR);
                offset += (cloud.points[j] - p) * w;
                total += w;
            }
            p + offset / total
        })
        .collect();
    Ok(PointCloud {
        points,
        normals: cloud.normals.clone(),
        frame_id: cloud.frame_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn sorted(mut pts: Vec<Point>) -> Vec<Point> {
        pts.sort_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        });
        pts
    }

    #[test]
    fn two_points_in_one_voxel_merge_to_midpoint() {
        let c = PointCloud::new(vec![Point::new(0.0002, 0.0002, 0.0002), Point::new(0.0012, 0.0008, 0.0004)]);
        let d = voxel_downsample(&c, 0.002).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d.points[0] - Point::new(0.0007, 0.0005, 0.0003)).norm() < 1e-15);
    }

    #[test]
    fn sparse_points_pass_through() {
        let c = PointCloud::new(vec![
            Point::new(0.0101, 0.0, 0.0),
            Point::new(0.0, 0.0101, 0.0),
            Point::new(0.0, 0.0, 0.0101),
        ]);
        let d = voxel_downsample(&c, 0.002).unwrap();
        assert_eq!(sorted(d.points), sorted(c.points));
    }

    #[test]
    fn grid_cube_count_matches_hash_oracle() {
        let mut pts = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                for k in 0..15 {
                    pts.push(Point::new(i as f64 * 0.001 + 1e-4, j as f64 * 0.001 + 1e-4, k as f64 * 0.001 + 1e-4));
                }
            }
        }
        let occupied: HashSet<(i64, i64, i64)> = pts
            .iter()
            .map(|p| ((p.x / 0.002).floor() as i64, (p.y / 0.002).floor() as i64, (p.z / 0.002).floor() as i64))
            .collect();
        let d = voxel_downsample(&PointCloud::new(pts), 0.002).unwrap();
        assert_eq!(d.len(), occupied.len());
    }

    #[test]
    fn voxel_downsample_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..2000)
            .map(|_| Point::new(rng.random::<f64>() * 0.05, rng.random::<f64>() * 0.05, rng.random::<f64>() * 0.05))
            .collect();
        let once = voxel_downsample(&PointCloud::new(pts), 0.002).unwrap();
        let twice = voxel_downsample(&once, 0.002).unwrap();
        assert_eq!(once.len(), twice.len());
        for (a, b) in sorted(once.points).iter().zip(sorted(twice.points).iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn voxel_rejects_non_positive_size() {
        assert!(voxel_downsample(&PointCloud::new(vec![]), 0.0).is_err());
    }

    #[test]
    fn identical_points_unchanged_by_denoise() {
        let c = PointCloud::new(vec![Point::new(0.1, 0.2, 0.3); 20]);
        let d = weighted_knn_denoise(&c, 10).unwrap();
        assert_eq!(d.points, c.points);
    }

    #[test]
    fn outlier_moves_toward_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts: Vec<Point> = (0..100)
            .map(|_| {
                let v = Point::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                v.normalize() * 0.001 * rng.random::<f64>()
            })
            .collect();
        let blob_centroid: Point = pts.iter().sum::<Point>() / 100.0;
        let outlier = Point::new(0.1, 0.0, 0.0);
        pts.push(outlier);
        let d = weighted_knn_denoise(&PointCloud::new(pts), 10).unwrap();
        let moved = d.points[100];
        assert!((moved - blob_centroid).norm() < (outlier - blob_centroid).norm());
    }

    #[test]
    fn symmetric_middle_point_is_fixed() {
        let c = PointCloud::new(vec![
            Point::new(-0.01, 0.0, 0.0),
            Point::new(0.0, 0.0, 0.0),
            Point::new(0.01, 0.0, 0.0),
        ]);
        let d = weighted_knn_denoise(&c, 2).unwrap();
        assert_eq!(d.points[1], Point::zeros());
    }

    #[test]
    fn denoise_needs_more_than_k_points() {
        assert!(weighted_knn_denoise(&PointCloud::new(vec![Point::zeros(); 3]), 3).is_err());
    }
}
