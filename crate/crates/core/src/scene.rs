//! Synthetic tabletop scenes built from primitives, and a virtual depth camera.
//!
//! Objects rest on a horizontal support plane `z = support_plane`. Scenes are
//! stored as JSON together with the camera that observes them; rendering casts
//! one ray per pixel with hidden-surface removal and simple sensor artifacts.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{preprocess_depth, DepthImage, Intrinsics, Point, PointCloud, PreprocessConfig, RigidTransform};
use crate::{derive_seed, Error, Result};

/// Solid primitive in its own frame, centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// Full edge lengths along local x, y, z.
    Box { extents: [f64; 3] },
    /// Axis along local z.
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
}

/// Ray hit in the primitive frame.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LocalHit {
    t: f64,
    normal: Vector3<f64>,
}

const RAY_EPS: f64 = 1e-12;

impl Primitive {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Box { extents } => extents.iter().all(|&e| e.is_finite() && e > 0.0),
            Primitive::Cylinder { radius, height } => radius.is_finite() && radius > 0.0 && height.is_finite() && height > 0.0,
            Primitive::Sphere { radius } => radius.is_finite() && radius > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("primitive {self:?} has a non-positive dimension")))
        }
    }

    /// Strict interior test in the primitive frame.
    pub fn contains(&self, p: &Point) -> bool {
        match *self {
            Primitive::Box { extents } => (0..3).all(|k| p[k].abs() < extents[k] / 2.0),
            Primitive::Cylinder { radius, height } => p.x * p.x + p.y * p.y < radius * radius && p.z.abs() < height / 2.0,
            Primitive::Sphere { radius } => p.norm_squared() < radius * radius,
        }
    }

    fn ray_intersect(&self, o: &Point, d: &Vector3<f64>) -> Option<LocalHit> {
        match *self {
            Primitive::Box { extents } => ray_box(o, d, &extents),
            Primitive::Cylinder { radius, height } => ray_cylinder(o, d, radius, height / 2.0),
            Primitive::Sphere { radius } => {
                let a = d.norm_squared();
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > RAY_EPS)?;
                Some(LocalHit {
                    t,
                    normal: (o + d * t) / radius,
                })
            }
        }
    }

    /// Cell-centered surface samples with outward normals, roughly `spacing`
    /// apart. Box and cylinder edges carry no samples.
    pub fn surface_samples(&self, spacing: f64) -> Vec<(Point, Vector3<f64>)> {
        let cells = |len: f64| ((len / spacing).ceil() as usize).max(1);
        let mut out = Vec::new();
        match *self {
            Primitive::Box { extents } => {
                for k in 0..3 {
                    let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                    let (ni, nj) = (cells(extents[i]), cells(extents[j]));
                    for sign in [-1.0, 1.0] {
                        let mut n = Vector3::zeros();
                        n[k] = sign;
                        for a in 0..ni {
                            for b in 0..nj {
                                let mut p = Point::zeros();
                                p[k] = sign * extents[k] / 2.0;
                                p[i] = -extents[i] / 2.0 + (a as f64 + 0.5) * extents[i] / ni as f64;
                                p[j] = -extents[j] / 2.0 + (b as f64 + 0.5) * extents[j] / nj as f64;
                                out.push((p, n));
                            }
                        }
                    }
                }
            }
            Primitive::Cylinder { radius, height } => {
                let nt = cells(2.0 * PI * radius);
                let nz = cells(height);
                for a in 0..nt {
                    let th = (a as f64 + 0.5) * 2.0 * PI / nt as f64;
                    let n = Vector3::new(th.cos(), th.sin(), 0.0);
                    for b in 0..nz {
                        let z = -height / 2.0 + (b as f64 + 0.5) * height / nz as f64;
                        out.push((Point::new(radius * n.x, radius * n.y, z), n));
                    }
                }
                let nc = cells(2.0 * radius);
                let step = 2.0 * radius / nc as f64;
                for sign in [-1.0, 1.0] {
                    for a in 0..nc {
                        for b in 0..nc {
                            let x = -radius + (a as f64 + 0.5) * step;
                            let y = -radius + (b as f64 + 0.5) * step;
                            if x * x + y * y < radius * radius {
                                out.push((Point::new(x, y, sign * height / 2.0), Vector3::new(0.0, 0.0, sign)));
                            }
                        }
                    }
                }
            }
            Primitive::Sphere { radius } => {
                // Fibonacci lattice.
                let n = ((4.0 * PI * radius * radius / (spacing * spacing)).ceil() as usize).max(12);
                let golden = PI * (3.0 - 5f64.sqrt());
                for i in 0..n {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let th = golden * i as f64;
                    let dir = Vector3::new(r * th.cos(), r * th.sin(), z);
                    out.push((dir * radius, dir));
                }
            }
        }
        out
    }
}

fn ray_box(o: &Point, d: &Vector3<f64>, extents: &[f64; 3]) -> Option<LocalHit> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for k in 0..3 {
        let h = extents[k] / 2.0;
        if d[k] == 0.0 {
            if o[k].abs() > h {
                return None;
            }
            continue;
        }
        let (t0, t1) = {
            let a = (-h - o[k]) / d[k];
            let b = (h - o[k]) / d[k];
            (a.min(b), a.max(b))
        };
        if t0 > t_near {
            t_near = t0;
            axis = k;
        }
        t_far = t_far.min(t1);
    }
    if t_near > t_far || t_near <= RAY_EPS {
        return None;
    }
    let mut normal = Vector3::zeros();
    normal[axis] = -d[axis].signum();
    Some(LocalHit { t: t_near, normal })
}

fn ray_cylinder(o: &Point, d: &Vector3<f64>, r: f64, hh: f64) -> Option<LocalHit> {
    let mut best: Option<LocalHit> = None;
    let mut consider = |hit: LocalHit| {
        if hit.t > RAY_EPS && best.is_none_or(|b| hit.t < b.t) {
            best = Some(hit);
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 0.0 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let p = o + d * t;
                if p.z.abs() <= hh {
                    consider(LocalHit {
                        t,
                        normal: Vector3::new(p.x / r, p.y / r, 0.0),
                    });
                }
            }
        }
    }
    if d.z != 0.0 {
        for sign in [-1.0, 1.0] {
            let t = (sign * hh - o.z) / d.z;
            let p = o + d * t;
            if p.x * p.x + p.y * p.y <= r * r {
                consider(LocalHit {
                    t,
                    normal: Vector3::new(0.0, 0.0, sign),
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub shape: Primitive,
    /// Object frame to world.
    pub pose: RigidTransform,
}

/// Ray hit in world coordinates; `object` is `None` for the support plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point,
    pub normal: Vector3<f64>,
    pub object: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneModel {
    pub objects: Vec<SceneObject>,
    pub support_plane: f64,
}

impl SceneModel {
    pub fn validate(&self) -> Result<()> {
        if !self.support_plane.is_finite() {
            return Err(Error::Precondition("support plane height is not finite".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.shape
                .validate()
                .map_err(|e| Error::Precondition(format!("object {i}: {e}")))?;
            let r = o.pose.rotation;
            let rtr = r.transpose() * r;
            if (rtr - Matrix3::identity()).iter().any(|e| e.abs() > 1e-6)
                || r.determinant() <= 0.0
                || !o.pose.translation.iter().all(|c| c.is_finite())
            {
                return Err(Error::Precondition(format!("object {i} has an invalid pose")));
            }
        }
        Ok(())
    }

    /// Nearest hit along `origin + t·dir` for `t > 0`, including the plane.
    pub fn ray_cast(&self, origin: &Point, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if dir.z != 0.0 {
            let t = (self.support_plane - origin.z) / dir.z;
            if t > RAY_EPS {
                best = Some(Hit {
                    t,
                    point: origin + dir * t,
                    normal: Vector3::z(),
                    object: None,
                });
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let o = obj.pose.apply_inverse(origin);
            let d = obj.pose.rotation.tr_mul(dir);
            if let Some(h) = obj.shape.ray_intersect(&o, &d) {
                if best.is_none_or(|b| h.t < b.t) {
                    best = Some(Hit {
                        t: h.t,
                        point: origin + dir * h.t,
                        normal: obj.pose.rotation * h.normal,
                        object: Some(i),
                    });
                }
            }
        }
        best
    }

    /// Index of an object whose interior strictly contains `p`.
    pub fn solid_containing(&self, p: &Point) -> Option<usize> {
        self.objects
            .iter()
            .position(|o| o.shape.contains(&o.pose.apply_inverse(p)))
    }

    /// World-frame surface samples of every object, with outward normals and
    /// owning object ids. The support plane is not sampled.
    pub fn surface_samples(&self, spacing: f64) -> (Vec<Point>, Vec<Vector3<f64>>, Vec<u32>) {
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let mut ids = Vec::new();
        for (i, o) in self.objects.iter().enumerate() {
            for (p, n) in o.shape.surface_samples(spacing) {
                points.push(o.pose.apply(&p));
                normals.push(o.pose.rotation * n);
                ids.push(i as u32);
            }
        }
        (points, normals, ids)
    }
}

/// Pinhole camera; the pose maps camera coordinates (x right, y down, z
/// forward) to world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub pose: RigidTransform,
}

impl Camera {
    /// Camera at `eye` looking at `target` with world +z as up.
    pub fn look_at(eye: Point, target: Point, width: usize, height: usize, focal: f64) -> Result<Camera> {
        let f = target - eye;
        if f.norm() == 0.0 {
            return Err(Error::Precondition("camera eye coincides with its target".into()));
        }
        let f = f.normalize();
        let right = f.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            return Err(Error::Precondition("camera looks straight along the up axis".into()));
        }
        let right = right.normalize();
        let down = f.cross(&right);
        Ok(Camera {
            width,
            height,
            intrinsics: Intrinsics {
                fx: focal,
                fy: focal,
                cx: (width as f64 - 1.0) / 2.0,
                cy: (height as f64 - 1.0) / 2.0,
            },
            pose: RigidTransform::new(Matrix3::from_columns(&[right, down, f]), eye),
        })
    }
}

/// Depth sensor artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Standard deviation of additive depth noise in meters.
    pub noise_std: f64,
    /// Probability that a valid pixel is dropped.
    pub dropout: f64,
    /// Surfaces seen at a larger angle from their normal return no depth.
    pub grazing_limit_deg: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            noise_std: 0.0005,
            dropout: 0.01,
            grazing_limit_deg: 78.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !(0.0..1.0).contains(&self.dropout) || !(self.grazing_limit_deg > 0.0 && self.grazing_limit_deg <= 90.0) {
            return Err(Error::Config(
                "render: noise_std must be >= 0, dropout in [0, 1), grazing_limit_deg in (0, 90]".into(),
            ));
        }
        Ok(())
    }
}

/// Renders a depth image; rows draw noise from independent seeded streams so
/// the result does not depend on the thread count.
pub fn render_depth(scene: &SceneModel, camera: &Camera, cfg: &RenderConfig, seed: u64) -> Result<DepthImage> {
    cfg.validate()?;
    scene.validate()?;
    let k = camera.intrinsics;
    let cos_limit = cfg.grazing_limit_deg.to_radians().cos();
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(format!("render noise: {e}")))?;
    let rows: Vec<Vec<f32>> = (0..camera.height)
        .into_par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, v as u64));
            (0..camera.width)
                .map(|u| {
                    // Unnormalized so that the hit parameter is the depth.
                    let dc = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                    let dir = camera.pose.rotation * dc;
                    let eps: f64 = noise.sample(&mut rng);
                    let drop = rng.random_bool(cfg.dropout);
                    let Some(hit) = scene.ray_cast(&camera.pose.translation, &dir) else {
                        return 0.0;
                    };
                    if hit.normal.dot(&dir).abs() < cos_limit * dir.norm() || drop {
                        return 0.0;
                    }
                    let z = hit.t + eps;
                    if z > 0.0 {
                        z as f32
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    DepthImage::new(camera.width, camera.height, rows.concat(), k)
}

/// A generated scene, the camera observing it and its stable id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    pub id: u64,
    pub model: SceneModel,
    pub camera: Camera,
}

impl SyntheticScene {
    /// Renders the scene and preprocesses it into a world-frame cloud.
    pub fn observe(&self, render: &RenderConfig, preprocess: &PreprocessConfig, seed: u64) -> Result<(DepthImage, PointCloud)> {
        let img = render_depth(&self.model, &self.camera, render, seed)?;
        let cloud = preprocess_depth(&img, &self.camera.pose, preprocess)?;
        Ok((img, cloud))
    }
}

/// File stem used for every per-scene artifact.
pub fn scene_stem(id: u64) -> String {
    format!("scene_{id:04}")
}

pub fn save_scene(scene: &SyntheticScene, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(scene).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: &Path) -> Result<SyntheticScene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let scene: SyntheticScene = serde_json::from_str(&text)
        .map_err(|e| Error::parse(format!("{}:{}", path.display(), e.line()), e.to_string()))?;
    scene.model.validate()?;
    Ok(scene)
}

/// Random scene layout and camera placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneGenConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object footprints stay within `[-half_extent, half_extent]²`.
    pub half_extent: f64,
    /// Minimum horizontal gap between object footprints.
    pub min_gap: f64,
    pub camera_distance: [f64; 2],
    pub camera_elevation_deg: [f64; 2],
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            min_objects: 3,
            max_objects: 6,
            half_extent: 0.12,
            min_gap: 0.01,
            camera_distance: [0.5, 0.7],
            camera_elevation_deg: [40.0, 70.0],
            image_width: 256,
            image_height: 192,
            focal: 320.0,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges_ok = self.camera_distance[0] > 0.0
            && self.camera_distance[0] <= self.camera_distance[1]
            && self.camera_elevation_deg[0] > 0.0
            && self.camera_elevation_deg[0] <= self.camera_elevation_deg[1]
            && self.camera_elevation_deg[1] < 90.0;
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config("scenes: need 1 <= min_objects <= max_objects".into()));
        }
        if !(self.half_extent > 0.0) || !(self.min_gap >= 0.0) || !ranges_ok {
            return Err(Error::Config("scenes: invalid extent, gap or camera ranges".into()));
        }
        if self.image_width == 0 || self.image_height == 0 || !(self.focal > 0.0) {
            return Err(Error::Config("scenes: image size and focal length must be positive".into()));
        }
        Ok(())
    }
}

fn yaw(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner()
}

/// One resting object at the origin of the plane, with its footprint radius.
fn random_object(rng: &mut ChaCha8Rng, plane: f64) -> (SceneObject, f64) {
    let heading = rng.random_range(0.0..PI);
    match rng.random_range(0..3) {
        0 => {
            let e = [
                rng.random_range(0.025..0.07),
                rng.random_range(0.025..0.07),
                rng.random_range(0.03..0.08),
            ];
            let obj = SceneObject {
                shape: Primitive::Box { extents: e },
                pose: RigidTransform::new(yaw(heading), Vector3::new(0.0, 0.0, plane + e[2] / 2.0)),
            };
            (obj, (e[0] * e[0] + e[1] * e[1]).sqrt() / 2.0)
        }
        1 => {
            let radius = rng.random_range(0.015..0.035);
            let height = rng.random_range(0.04..0.10);
            if rng.random_bool(0.6) {
                let obj = SceneObject {
                    shape: Primitive::Cylinder { radius, height },
                    pose: RigidTransform::new(yaw(heading), Vector3::new(0.0, 0.0, plane + height / 2.0)),
                };
                (obj, radius)
            } else {
                // Lying on its side: local z mapped onto the horizontal.
                let tip = Rotation3::from_axis_angle(&Vector3::y_axis(), PI / 2.0).into_inner();
                let obj = SceneObject {
                    shape: Primitive::Cylinder { radius, height },
                    pose: RigidTransform::new(yaw(heading) * tip, Vector3::new(0.0, 0.0, plane + radius)),
                };
                (obj, (height * height / 4.0 + radius * radius).sqrt())
            }
        }
        _ => {
            let radius = rng.random_range(0.02..0.04);
            let obj = SceneObject {
                shape: Primitive::Sphere { radius },
                pose: RigidTransform::from_translation(Vector3::new(0.0, 0.0, plane + radius)),
            };
            (obj, radius)
        }
    }
}

/// Draws a scene of non-overlapping resting primitives and a camera on the
/// upper hemisphere looking at the workspace center.
pub fn random_scene(id: u64, cfg: &SceneGenConfig, seed: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id));
    let plane = 0.0;
    let target = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut footprints: Vec<(f64, f64, f64)> = Vec::new();
    let mut attempts = 0;
    while objects.len() < target {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config(format!(
                "scenes: could not place {target} objects within half extent {}",
                cfg.half_extent
            )));
        }
        let (mut obj, r) = random_object(&mut rng, plane);
        if r >= cfg.half_extent {
            continue;
        }
        let lim = cfg.half_extent - r;
        let x = rng.random_range(-lim..=lim);
        let y = rng.random_range(-lim..=lim);
        let free = footprints
            .iter()
            .all(|&(fx, fy, fr)| ((x - fx).powi(2) + (y - fy).powi(2)).sqrt() >= r + fr + cfg.min_gap);
        if free {
            obj.pose.translation.x = x;
            obj.pose.translation.y = y;
            objects.push(obj);
            footprints.push((x, y, r));
        }
    }
    let azimuth = rng.random_range(0.0..2.0 * PI);
    let el = rng
        .random_range(cfg.camera_elevation_deg[0]..=cfg.camera_elevation_deg[1])
        .to_radians();
    let dist = rng.random_range(cfg.camera_distance[0]..=cfg.camera_distance[1]);
    let look = Point::new(0.0, 0.0, plane + 0.03);
    let eye = look + Vector3::new(el.cos() * azimuth.cos(), el.cos() * azimuth.sin(), el.sin()) * dist;
    let camera = Camera::look_at(eye, look, cfg.image_width, cfg.image_height, cfg.focal)?;
    Ok(SyntheticScene {
        id,
        model: SceneModel {
            objects,
            support_plane: plane,
        },
        camera,
    })
}
