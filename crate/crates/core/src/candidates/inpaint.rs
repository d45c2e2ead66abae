use std::collections::VecDeque;

use crate::cloud::DepthImage;
use crate::{Error, Result};

/// Fills holes with the discrete harmonic interpolant of the surrounding
/// valid depths. Hole pixels are seeded by breadth-first propagation from the
/// nearest valid pixel, then relaxed with Gauss-Seidel sweeps of the
/// 4-neighbor average until the largest update drops below `tol` or
/// `max_iters` sweeps have run. Valid pixels are copied through unchanged.
pub fn inpaint_depth(img: &DepthImage, max_iters: usize, tol: f64) -> Result<DepthImage> {
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let holes: Vec<usize> = (0..n).filter(|&i| img.is_hole(i)).collect();
    if holes.is_empty() {
        return Ok(img.clone());
    }
    if holes.len() == n {
        return Err(Error::Precondition("cannot inpaint a depth image without valid pixels".into()));
    }

    let mut z: Vec<f64> = img.depths.iter().map(|&d| d as f64).collect();
    let mut known: Vec<bool> = (0..n).map(|i| !img.is_hole(i)).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| known[i]).collect();
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i, w, h).into_iter().flatten() {
            if !known[j] {
                known[j] = true;
                z[j] = z[i];
                queue.push_back(j);
            }
        }
    }

    for _ in 0..max_iters {
        let mut max_update = 0.0f64;
        for &i in &holes {
            let (sum, count) = neighbors(i, w, h)
                .into_iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), j| (s + z[j], c + 1));
            let next = sum / count as f64;
            max_update = max_update.max((next - z[i]).abs());
            z[i] = next;
        }
        if max_update < tol {
            break;
        }
    }

    let mut out = img.clone();
    for &i in &holes {
        out.depths[i] = z[i] as f32;
    }
    Ok(out)
}

fn neighbors(i: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let (u, v) = (i % w, i / w);
    [
        (u > 0).then(|| i - 1),
        (u + 1 < w).then(|| i + 1),
        (v > 0).then(|| i - w),
        (v + 1 < h).then(|| i + w),
    ]
}
