//! Grasp candidates as small point graphs: up to 70 farthest-point samples
//! from between the fingers and 70 from the surrounding context, linked by
//! directed k-nearest-neighbor edges.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{farthest_point_sample, Point, PointCloud, SpatialIndex};
use crate::gripper::{GraspPose, GripperGeometry};
use crate::{derive_seed, Error, Result};

pub const FEATURE_DIM: usize = 5;
const MAGIC: &[u8; 4] = b"GTGG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub max_inside: usize,
    pub max_outside: usize,
    pub k: usize,
    pub outside_scale: f64,
    /// When false only the inside region becomes nodes.
    pub include_outside: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            max_inside: 70,
            max_outside: 70,
            k: 5,
            outside_scale: 2.0,
            include_outside: true,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_inside == 0 || self.k == 0 {
            return Err(Error::Config("graph.max_inside and graph.k must be at least 1".into()));
        }
        if !(self.outside_scale > 1.0) {
            return Err(Error::Config(format!("graph.outside_scale must exceed 1, got {}", self.outside_scale)));
        }
        Ok(())
    }
}

/// Nodes are the inside samples followed by the outside samples. Each node
/// carries its gripper-frame position and a one-hot region flag.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspGraph {
    pub node_features: Vec<[f32; FEATURE_DIM]>,
    /// Directed `(src, dst)` pairs; `dst` is one of the k nearest nodes of `src`.
    pub edges: Vec<(u32, u32)>,
    pub n_inside: usize,
    pub n_outside: usize,
}

impl GraspGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.len()
    }

    /// Builds a graph from given features, with edges from [`knn_edges`].
    pub fn from_features(node_features: Vec<[f32; FEATURE_DIM]>, n_inside: usize, k: usize) -> Self {
        let coords: Vec<[f32; 3]> = node_features.iter().map(|f| [f[0], f[1], f[2]]).collect();
        let n_outside = node_features.len() - n_inside;
        GraspGraph {
            edges: knn_edges(&coords, k),
            node_features,
            n_inside,
            n_outside,
        }
    }

    /// The graph without its outside nodes. Inside nodes are sampled from
    /// their own seed stream, so this equals building with
    /// `include_outside = false`.
    pub fn inside_only(&self, k: usize) -> GraspGraph {
        GraspGraph::from_features(self.node_features[..self.n_inside].to_vec(), self.n_inside, k)
    }
}

/// `(a, b)` for each of the `k` nearest other nodes `b` of every node `a`,
/// ties broken by the smaller index. Distances are taken on the stored
/// single-precision coordinates so the edges can be rebuilt from features.
pub fn knn_edges(coords: &[[f32; 3]], k: usize) -> Vec<(u32, u32)> {
    let pts: Vec<Point> = coords
        .iter()
        .map(|c| Point::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let k = k.min(pts.len().saturating_sub(1));
    if k == 0 {
        return Vec::new();
    }
    let index = SpatialIndex::new(&pts);
    let mut edges = Vec::with_capacity(pts.len() * k);
    for (a, p) in pts.iter().enumerate() {
        let nearest = index.knn(p, k + 1);
        edges.extend(
            nearest
                .into_iter()
                .filter(|&(b, _)| b != a)
                .take(k)
                .map(|(b, _)| (a as u32, b as u32)),
        );
    }
    edges
}

/// Inside and outside points of `pose` in the gripper frame, using `index`
/// to skip points that cannot be near the hand. Same result as
/// [`crate::gripper::extract_regions`].
pub fn regions_near(
    g: &GripperGeometry,
    pose: &GraspPose,
    cloud: &PointCloud,
    index: &SpatialIndex,
    outside_scale: f64,
) -> (Vec<Point>, Vec<Point>) {
    let closing = g.closing_volume(pose.width);
    let context = closing.scaled(outside_scale);
    let body = g.body_boxes(pose.width);
    let reach = std::iter::once(&context)
        .chain(&body)
        .flat_map(|b| b.corners())
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    for i in index.radius_search(&pose.position, reach + 1e-9) {
        let q = pose.to_local(&cloud.points[i]);
        if closing.contains_open(&q) {
            inside.push(q);
        } else if context.contains_closed(&q) || body.iter().any(|b| b.contains_closed(&q)) {
            outside.push(q);
        }
    }
    (inside, outside)
}

/// Graph of one candidate. `seed` should be derived per candidate, e.g.
/// `derive_seed(global_seed, candidate_index)`.
pub fn build_graph(
    pose: &GraspPose,
    cloud: &PointCloud,
    index: &SpatialIndex,
    g: &GripperGeometry,
    cfg: &GraphConfig,
    seed: u64,
) -> Result<GraspGraph> {
    let (inside, outside) = regions_near(g, pose, cloud, index, cfg.outside_scale);
    graph_from_regions(&inside, &outside, cfg, seed)
}

/// Samples and links already-extracted gripper-frame regions.
pub fn graph_from_regions(inside: &[Point], outside: &[Point], cfg: &GraphConfig, seed: u64) -> Result<GraspGraph> {
    if inside.is_empty() {
        return Err(Error::Precondition("grasp has no points between the fingers".into()));
    }
    let mut features = Vec::new();
    for i in farthest_point_sample(inside, cfg.max_inside, Some(derive_seed(seed, 0))) {
        let p = inside[i];
        features.push([p.x as f32, p.y as f32, p.z as f32, 1.0, 0.0]);
    }
    let n_inside = features.len();
    if cfg.include_outside {
        for i in farthest_point_sample(outside, cfg.max_outside, Some(derive_seed(seed, 1))) {
            let p = outside[i];
            features.push([p.x as f32, p.y as f32, p.z as f32, 0.0, 1.0]);
        }
    }
    Ok(GraspGraph::from_features(features, n_inside, cfg.k))
}

pub fn serialize_graph(gr: &GraspGraph) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + gr.num_nodes() * 20 + gr.edges.len() * 8);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, gr.n_inside as u32, gr.n_outside as u32, gr.edges.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for f in gr.node_features.iter().flatten() {
        out.extend_from_slice(&f.to_le_bytes());
    }
    for &(a, b) in &gr.edges {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("graph truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }
}

pub fn parse_graph(bytes: &[u8]) -> Result<GraspGraph> {
    let mut c = Cursor { bytes, pos: 0 };
    if &c.take::<4>()? != MAGIC {
        return Err(Error::Format("not a grasp graph (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("graph version {version}, expected {VERSION}")));
    }
    let n_inside = c.u32()? as usize;
    let n_outside = c.u32()? as usize;
    let n_edges = c.u32()? as usize;
    let n = n_inside + n_outside;
    let expected = 20 + n * FEATURE_DIM * 4 + n_edges * 8;
    if bytes.len() < expected {
        return Err(Error::Format(format!("graph truncated: {} of {expected} bytes", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!("{} trailing bytes after graph", bytes.len() - expected)));
    }
    let mut node_features = Vec::with_capacity(n);
    for _ in 0..n {
        let mut f = [0f32; FEATURE_DIM];
        for v in &mut f {
            *v = f32::from_le_bytes(c.take::<4>()?);
        }
        node_features.push(f);
    }
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let (a, b) = (c.u32()?, c.u32()?);
        if a as usize >= n || b as usize >= n {
            return Err(Error::Format(format!("edge ({a}, {b}) out of range for {n} nodes")));
        }
        edges.push((a, b));
    }
    Ok(GraspGraph {
        node_features,
        edges,
        n_inside,
        n_outside,
    })
}

/// Writes graphs as consecutive `u32` length-prefixed records.
pub fn write_graph_dataset(path: &Path, graphs: &[GraspGraph]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for gr in graphs {
        let bytes = serialize_graph(gr);
        w.write_all(&(bytes.len() as u32).to_le_bytes())
            .and_then(|_| w.write_all(&bytes))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_graph_dataset(path: &Path) -> Result<Vec<GraspGraph>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let len_bytes = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::Format(format!("{}: truncated length at byte {pos}", path.display())))?;
        let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(pos + 4..pos + 4 + len)
            .ok_or_else(|| Error::Format(format!("{}: truncated graph at byte {}", path.display(), pos + 4)))?;
        out.push(parse_graph(body).map_err(|e| Error::Format(format!("{}: graph {}: {e}", path.display(), out.len())))?);
        pos += 4 + len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
            .collect()
    }

    #[test]
    fn tiny_graph_clips_k() {
        let inside = vec![Point::new(0.0, 0.0, 0.0), Point::new(0.01, 0.0, 0.0), Point::new(0.0, 0.02, 0.0)];
        let gr = graph_from_regions(&inside, &[], &GraphConfig::default(), 0).unwrap();
        assert_eq!(gr.num_nodes(), 3);
        assert_eq!(gr.edges.len(), 6);
        for a in 0..3u32 {
            assert_eq!(gr.edges.iter().filter(|e| e.0 == a).count(), 2);
        }
    }

    #[test]
    fn regions_are_capped_at_seventy_each() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inside = random_points(&mut rng, 200, 0.02);
        let outside = random_points(&mut rng, 200, 0.05);
        let gr = graph_from_regions(&inside, &outside, &GraphConfig::default(), 3).unwrap();
        assert_eq!((gr.n_inside, gr.n_outside), (70, 70));
        let col: (usize, usize) = gr
            .node_features
            .iter()
            .fold((0, 0), |(a, b), f| (a + f[3] as usize, b + f[4] as usize));
        assert_eq!(col, (70, 70));
    }

    #[test]
    fn empty_inside_is_rejected() {
        assert!(graph_from_regions(&[], &[Point::zeros()], &GraphConfig::default(), 0).is_err());
    }

    #[test]
    fn edges_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(2..140);
            let coords: Vec<[f32; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let edges = knn_edges(&coords, 5);
            let mut expected = Vec::new();
            for a in 0..n {
                let d = |b: usize| {
                    (0..3)
                        .map(|i| (coords[a][i] as f64 - coords[b][i] as f64).powi(2))
                        .sum::<f64>()
                };
                let mut others: Vec<usize> = (0..n).filter(|&b| b != a).collect();
                others.sort_by(|&x, &y| d(x).total_cmp(&d(y)).then(x.cmp(&y)));
                expected.extend(others.into_iter().take(5).map(|b| (a as u32, b as u32)));
            }
            assert_eq!(edges, expected);
        }
    }

    #[test]
    fn serialization_round_trips() {
        let empty = GraspGraph::from_features(vec![[0.1, 0.2, 0.3, 1.0, 0.0]], 1, 5);
        assert!(empty.edges.is_empty());
        assert_eq!(parse_graph(&serialize_graph(&empty)).unwrap(), empty);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inside = random_points(&mut rng, 100, 0.02);
        let outside = random_points(&mut rng, 100, 0.05);
        let full = graph_from_regions(&inside, &outside, &GraphConfig::default(), 0).unwrap();
        assert_eq!(full.num_nodes(), 140);
        let bytes = serialize_graph(&full);
        assert_eq!(parse_graph(&bytes).unwrap(), full);
        assert!(parse_graph(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(parse_graph(&bad).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn dataset_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let graphs: Vec<GraspGraph> = (0..5)
            .map(|s| {
                let inside = random_points(&mut rng, 10 + s, 0.02);
                graph_from_regions(&inside, &[], &GraphConfig::default(), s as u64).unwrap()
            })
            .collect();
        write_graph_dataset(&path, &graphs).unwrap();
        assert_eq!(read_graph_dataset(&path).unwrap(), graphs);
    }
}
