//! Benchmark protocol: pose NMS, a per-object cap and a global top-k on
//! predicted scores, then precision@k over a friction grid averaged into AP.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point, SpatialIndex};
use crate::config::PipelineConfig;
use crate::gnn::{ensemble_score, Ensemble};
use crate::graph::regions_near;
use crate::gripper::{pose_distance, GraspPose};
use crate::oracle::{evaluate_at_mu, label_grasps, GraspLabel, SceneSurface};
use crate::pipeline::{scene_candidates, SceneCandidates};
use crate::scene::SyntheticScene;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub nms_dt: f64,
    pub nms_da_deg: f64,
    pub per_object_cap: usize,
    pub top_k: usize,
    pub mu_grid: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            nms_dt: 0.03,
            nms_da_deg: 30.0,
            per_object_cap: 10,
            top_k: 50,
            mu_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nms_dt > 0.0) || !(self.nms_da_deg > 0.0) || self.per_object_cap == 0 || self.top_k == 0 {
            return Err(Error::Config("eval: thresholds, per_object_cap and top_k must be positive".into()));
        }
        if self.mu_grid.is_empty() || self.mu_grid.windows(2).any(|w| !(w[0] < w[1])) || !(self.mu_grid[0] > 0.0) {
            return Err(Error::Config("eval.mu_grid must be a non-empty ascending list of positive values".into()));
        }
        Ok(())
    }
}

/// Indices of the poses that survive the protocol, best first. Scores rank
/// descending with ties broken by the lower index; a pose is dropped when it
/// lies within both NMS thresholds of a better kept pose, then when its
/// object already has `per_object_cap` survivors; the first `top_k` remain.
pub fn filter_predictions(poses: &[GraspPose], objects: &[u32], cfg: &EvalConfig) -> Result<Vec<usize>> {
    if objects.len() != poses.len() {
        return Err(Error::Shape(format!("{} object ids for {} poses", objects.len(), poses.len())));
    }
    let scores: Vec<f64> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| p.score.ok_or_else(|| Error::Precondition(format!("pose {i} has no score"))))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..poses.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let da = cfg.nms_da_deg.to_radians();
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let p = &poses[i];
        let close = |k: &usize| {
            let q = &poses[*k];
            (q.position - p.position).norm() <= cfg.nms_dt && pose_distance(q, p).1 <= da
        };
        if !kept.iter().any(close) {
            kept.push(i);
        }
    }
    let mut per_object: HashMap<u32, usize> = HashMap::new();
    let mut out = Vec::new();
    for i in kept {
        let n = per_object.entry(objects[i]).or_default();
        if *n < cfg.per_object_cap {
            *n += 1;
            out.push(i);
            if out.len() == cfg.top_k {
                break;
            }
        }
    }
    Ok(out)
}

/// `P@k` for `k = 1..=filtered.len()` at friction `mu`.
pub fn precision_at_k(filtered: &[usize], labels: &[GraspLabel], mu: f64) -> Vec<f64> {
    let mut hits = 0usize;
    filtered
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            hits += usize::from(evaluate_at_mu(&labels[i], mu));
            hits as f64 / (k + 1) as f64
        })
        .collect()
}

/// Mean over the friction grid of the mean precision over `k`; 0 when
/// nothing survived filtering.
pub fn average_precision(filtered: &[usize], labels: &[GraspLabel], cfg: &EvalConfig) -> f64 {
    if filtered.is_empty() {
        return 0.0;
    }
    let per_mu: f64 = cfg
        .mu_grid
        .iter()
        .map(|&mu| {
            let p = precision_at_k(filtered, labels, mu);
            p.iter().sum::<f64>() / p.len() as f64
        })
        .sum();
    per_mu / cfg.mu_grid.len() as f64
}

/// Candidates of one evaluation scene with everything the protocol needs
/// except predicted scores.
#[derive(Debug, Clone)]
pub struct BenchmarkScene {
    pub scene: SyntheticScene,
    pub candidates: SceneCandidates,
    /// Object owning each candidate, from its inside-point centroid.
    pub objects: Vec<u32>,
    pub labels: Vec<GraspLabel>,
}

impl BenchmarkScene {
    /// The same scene with graphs reduced to their inside nodes.
    pub fn inside_only(&self, k: usize) -> BenchmarkScene {
        let mut out = self.clone();
        out.candidates.graphs = self.candidates.graphs.iter().map(|g| g.inside_only(k)).collect();
        out
    }
}

/// Generates, assigns and labels candidates of every scene.
pub fn prepare_benchmark(scenes: &[SyntheticScene], cfg: &PipelineConfig, seed: u64) -> Result<Vec<BenchmarkScene>> {
    scenes
        .par_iter()
        .map(|scene| {
            let (obs, candidates) = scene_candidates(scene, cfg, seed)?;
            let surface = SceneSurface::new(&scene.model, cfg.oracle.surface_spacing)?;
            let index = SpatialIndex::new(&obs.cloud.points);
            let objects = candidates
                .poses
                .iter()
                .map(|p| {
                    let (inside, _) = regions_near(&cfg.gripper, p, &obs.cloud, &index, cfg.graph.outside_scale);
                    let centroid = inside.iter().fold(Point::zeros(), |a, q| a + q) / inside.len().max(1) as f64;
                    surface.nearest_object(&p.to_world(&centroid)).unwrap_or(u32::MAX)
                })
                .collect();
            let labels = label_grasps(&surface, &candidates.poses, &cfg.gripper, &cfg.oracle);
            Ok(BenchmarkScene {
                scene: scene.clone(),
                candidates,
                objects,
                labels,
            })
        })
        .collect()
}

/// Produces one score per candidate of a prepared scene.
pub trait Scorer: Sync {
    fn score(&self, scene: &BenchmarkScene) -> Result<Vec<f64>>;
}

pub struct EnsembleScorer<'a>(pub &'a Ensemble);

impl Scorer for EnsembleScorer<'_> {
    fn score(&self, scene: &BenchmarkScene) -> Result<Vec<f64>> {
        let s = ensemble_score(self.0, &scene.candidates.graphs)?;
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("scene {} candidate {i} scored {}", scene.scene.id, s[i])));
        }
        Ok(s.into_iter().map(f64::from).collect())
    }
}

/// Uniform scores in `[0, 1)`, seeded per scene.
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, scene: &BenchmarkScene) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, scene.scene.id));
        Ok((0..scene.labels.len()).map(|_| rng.random::<f64>()).collect())
    }
}

/// The ground-truth label used as the score.
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&self, scene: &BenchmarkScene) -> Result<Vec<f64>> {
        Ok(scene.labels.iter().map(|l| l.score).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEval {
    pub scene_id: u64,
    pub n_candidates: usize,
    pub n_evaluated: usize,
    pub ap: f64,
    /// One precision@k curve per friction value of the grid.
    pub precision_at_k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub mu_grid: Vec<f64>,
    pub scenes: Vec<SceneEval>,
    pub mean_ap: f64,
    pub n_evaluated: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Format(e.to_string()))
    }

    /// One row per scene: counts, AP and the AP at each friction value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,n_candidates,n_evaluated,ap");
        for mu in &self.mu_grid {
            out.push_str(&format!(",ap_mu_{mu}"));
        }
        out.push('\n');
        for s in &self.scenes {
            out.push_str(&format!("{},{},{},{}", s.scene_id, s.n_candidates, s.n_evaluated, s.ap));
            for p in &s.precision_at_k {
                let v = if p.is_empty() { 0.0 } else { p.iter().sum::<f64>() / p.len() as f64 };
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate_scene(scene: &BenchmarkScene, scores: &[f64], cfg: &EvalConfig) -> Result<SceneEval> {
    if scores.len() != scene.candidates.poses.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} candidates",
            scores.len(),
            scene.candidates.poses.len()
        )));
    }
    let scored: Vec<GraspPose> = scene
        .candidates
        .poses
        .iter()
        .zip(scores)
        .map(|(p, &s)| GraspPose {
            score: Some(s),
            ..p.clone()
        })
        .collect();
    let filtered = filter_predictions(&scored, &scene.objects, cfg)?;
    Ok(SceneEval {
        scene_id: scene.scene.id,
        n_candidates: scored.len(),
        n_evaluated: filtered.len(),
        ap: average_precision(&filtered, &scene.labels, cfg),
        precision_at_k: cfg.mu_grid.iter().map(|&mu| precision_at_k(&filtered, &scene.labels, mu)).collect(),
    })
}

/// Scores and evaluates prepared scenes; the report lists scenes in input
/// order.
pub fn evaluate_prepared(scenes: &[BenchmarkScene], scorer: &dyn Scorer, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let evals: Vec<SceneEval> = scenes
        .par_iter()
        .map(|s| evaluate_scene(s, &scorer.score(s)?, cfg))
        .collect::<Result<_>>()?;
    let mean_ap = if evals.is_empty() {
        0.0
    } else {
        evals.iter().map(|e| e.ap).sum::<f64>() / evals.len() as f64
    };
    Ok(EvalReport {
        mu_grid: cfg.mu_grid.clone(),
        n_evaluated: evals.iter().map(|e| e.n_evaluated).sum(),
        scenes: evals,
        mean_ap,
    })
}

pub fn run_benchmark(scenes: &[SyntheticScene], scorer: &dyn Scorer, cfg: &PipelineConfig, seed: u64) -> Result<EvalReport> {
    let prepared = prepare_benchmark(scenes, cfg, seed)?;
    evaluate_prepared(&prepared, scorer, &cfg.eval)
}
