use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Point;
use crate::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Row-major depth raster in meters; `0` or NaN marks a hole.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f32>,
    pub intrinsics: Intrinsics,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    width: usize,
    height: usize,
    #[serde(flatten)]
    intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depths: Vec<f32>, intrinsics: Intrinsics) -> Result<Self> {
        if width * height != depths.len() {
            return Err(Error::Precondition(format!(
                "{width}x{height} image with {} depth values",
                depths.len()
            )));
        }
        if let Some(i) = depths.iter().position(|&d| d.is_finite() && d < 0.0 || d.is_infinite()) {
            return Err(Error::Precondition(format!("pixel {i} has invalid depth {}", depths[i])));
        }
        Ok(DepthImage {
            width,
            height,
            depths,
            intrinsics,
        })
    }

    pub fn is_hole(&self, idx: usize) -> bool {
        let d = self.depths[idx];
        !(d.is_finite() && d > 0.0)
    }

    pub fn valid_count(&self) -> usize {
        (0..self.depths.len()).filter(|&i| !self.is_hole(i)).count()
    }

    /// Camera-frame point of pixel `(u, v)` at depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Point {
        let k = &self.intrinsics;
        Point::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z)
    }

    /// Pixel coordinates and depth of a camera-frame point.
    pub fn project(&self, p: &Point) -> (f64, f64, f64) {
        let k = &self.intrinsics;
        (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z)
    }
}

/// Writes a little-endian PFM raster plus a `.json` sidecar with intrinsics.
pub fn save_depth(img: &DepthImage, path: &Path) -> Result<()> {
    let mut bytes = format!("Pf\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    // PFM stores rows bottom to top
    for row in (0..img.height).rev() {
        for d in &img.depths[row * img.width..(row + 1) * img.width] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = Sidecar {
        width: img.width,
        height: img.height,
        intrinsics: img.intrinsics,
    };
    let side_path = path.with_extension("json");
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side_path, json).map_err(|e| Error::io(&side_path, e))
}

pub fn load_depth(path: &Path) -> Result<DepthImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let loc = |off: usize| format!("{}: byte {off}", path.display());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(loc(pos), "truncated PFM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(Error::parse(loc(0), format!("expected grayscale PFM magic 'Pf', found '{}'", fields[0])));
    }
    let width: usize = fields[1].parse().map_err(|_| Error::parse(loc(3), "bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| Error::parse(loc(3), "bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| Error::parse(loc(3), "bad scale"))?;
    if scale >= 0.0 {
        return Err(Error::parse(loc(3), "only little-endian PFM (negative scale) is supported"));
    }
    let need = width * height * 4;
    if bytes.len() < pos + need {
        return Err(Error::parse(loc(bytes.len()), format!("truncated payload, expected {need} bytes")));
    }
    let mut depths = vec![0f32; width * height];
    for (k, chunk) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
        let file_row = k / width;
        let col = k % width;
        let row = height - 1 - file_row;
        depths[row * width + col] = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
    }
    let side_path = path.with_extension("json");
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&side_text)
        .map_err(|e| Error::parse(format!("{}: line {}", side_path.display(), e.line()), e.to_string()))?;
    if sidecar.width != width || sidecar.height != height {
        return Err(Error::Format(format!(
            "sidecar says {}x{}, raster is {width}x{height}",
            sidecar.width, sidecar.height
        )));
    }
    DepthImage::new(width, height, depths, sidecar.intrinsics)
}
