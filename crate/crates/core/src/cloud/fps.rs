use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{dist2, Point};

/// Greedy farthest point sampling.
///
/// Returns every id when `points.len() <= max_points`. Otherwise starts from
/// the lexicographically smallest point, or from a random index when `seed`
/// is given, and repeatedly adds the point farthest from the current
/// selection (ties go to the smaller id).
pub fn farthest_point_sample(points: &[Point], max_points: usize, seed: Option<u64>) -> Vec<usize> {
    let n = points.len();
    if n <= max_points {
        return (0..n).collect();
    }
    if max_points == 0 {
        return Vec::new();
    }
    let start = match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s).random_range(0..n),
        None => (0..n)
            .min_by(|&a, &b| {
                let (p, q) = (&points[a], &points[b]);
                p.x.total_cmp(&q.x)
                    .then(p.y.total_cmp(&q.y))
                    .then(p.z.total_cmp(&q.z))
                    .then(a.cmp(&b))
            })
            .expect("non-empty"),
    };
    let mut selected = Vec::with_capacity(max_points);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        selected.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        if selected.len() == max_points {
            break;
        }
        let anchor = points[current];
        let mut best = usize::MAX;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, d) in min_d2.iter_mut().enumerate() {
            if *d == f64::NEG_INFINITY {
                continue;
            }
            let cand = dist2(&anchor, &points[i]);
            if cand < *d {
                *d = cand;
            }
            if *d > best_d2 {
                best_d2 = *d;
                best = i;
            }
        }
        current = best;
    }
    selected
}
