//! The inference path as reusable stages: observe a scene, generate
//! candidates, turn them into graphs and score them.
//!
//! Seeds are derived per scene and per stage so that every stage can be run
//! on its own (as the command-line tool does) and still reproduce the
//! composed result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{dual_cloud_generate, gpg_generate, heuristic_4dof_generate, DepthSource};
use crate::cloud::{DepthImage, PointCloud, RigidTransform, SpatialIndex};
use crate::config::PipelineConfig;
use crate::gnn::{ensemble_score, Ensemble};
use crate::graph::{build_graph, GraspGraph};
use crate::gripper::GraspPose;
use crate::scene::SyntheticScene;
use crate::{derive_seed, Error, Result};

/// Which candidate generator the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    Gpg,
    #[default]
    Dual,
    #[serde(rename = "heuristic4dof")]
    Heuristic4Dof,
}

/// Seed streams of one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSeeds {
    pub render: u64,
    pub generate: u64,
    pub graph: u64,
}

impl SceneSeeds {
    pub fn new(seed: u64, scene_id: u64) -> SceneSeeds {
        let s = derive_seed(seed, scene_id);
        SceneSeeds {
            render: derive_seed(s, 0),
            generate: derive_seed(s, 1),
            graph: derive_seed(s, 2),
        }
    }
}

/// A rendered depth frame and the preprocessed world-frame cloud.
#[derive(Debug, Clone)]
pub struct SceneObservation {
    pub depth: DepthImage,
    pub camera_to_world: RigidTransform,
    pub cloud: PointCloud,
}

pub fn observe(scene: &SyntheticScene, cfg: &PipelineConfig, seed: u64) -> Result<SceneObservation> {
    let (depth, cloud) = scene.observe(&cfg.render, &cfg.preprocess, SceneSeeds::new(seed, scene.id).render)?;
    if cloud.is_empty() {
        return Err(Error::Precondition(format!("scene {} renders to an empty cloud", scene.id)));
    }
    Ok(SceneObservation {
        depth,
        camera_to_world: scene.camera.pose,
        cloud,
    })
}

/// Runs the configured generator. The dual generator falls back to the raw
/// cloud alone when no depth frame is available.
pub fn generate(
    cloud: &PointCloud,
    depth: Option<(&DepthImage, &RigidTransform)>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<GraspPose>> {
    match cfg.generator {
        GeneratorMode::Gpg => gpg_generate(cloud, &cfg.gripper, &cfg.gpg, seed),
        GeneratorMode::Dual => {
            let src = depth.map(|(image, camera_to_world)| DepthSource {
                image,
                camera_to_world,
                preprocess: &cfg.preprocess,
            });
            dual_cloud_generate(cloud, src, &cfg.gripper, &cfg.gpg, seed)
        }
        GeneratorMode::Heuristic4Dof => {
            if cloud.is_empty() {
                return Ok(Vec::new());
            }
            heuristic_4dof_generate(cloud, &cfg.gripper, &cfg.heuristic4dof)
        }
    }
}

/// One graph per candidate, built from `cloud`. Candidates with no cloud
/// points between the fingers get `None`. Candidate `i` samples with
/// `derive_seed(seed, i)`.
pub fn candidate_graphs(poses: &[GraspPose], cloud: &PointCloud, cfg: &PipelineConfig, seed: u64) -> Vec<Option<GraspGraph>> {
    let index = SpatialIndex::new(&cloud.points);
    poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| build_graph(p, cloud, &index, &cfg.gripper, &cfg.graph, derive_seed(seed, i as u64)).ok())
        .collect()
}

/// Candidates of one scene that produced a graph, in generation order.
#[derive(Debug, Clone)]
pub struct SceneCandidates {
    pub scene_id: u64,
    pub poses: Vec<GraspPose>,
    pub graphs: Vec<GraspGraph>,
    /// Generated candidates dropped for lack of inside points.
    pub dropped: usize,
}

/// Keeps the candidates whose graph exists.
pub fn keep_with_graphs(scene_id: u64, poses: Vec<GraspPose>, graphs: Vec<Option<GraspGraph>>) -> SceneCandidates {
    let mut out = SceneCandidates {
        scene_id,
        poses: Vec::new(),
        graphs: Vec::new(),
        dropped: 0,
    };
    for (p, g) in poses.into_iter().zip(graphs) {
        match g {
            Some(g) => {
                out.poses.push(p);
                out.graphs.push(g);
            }
            None => out.dropped += 1,
        }
    }
    out
}

/// Observe, generate and build graphs for one scene.
pub fn scene_candidates(scene: &SyntheticScene, cfg: &PipelineConfig, seed: u64) -> Result<(SceneObservation, SceneCandidates)> {
    let seeds = SceneSeeds::new(seed, scene.id);
    let obs = observe(scene, cfg, seed)?;
    let poses = generate(&obs.cloud, Some((&obs.depth, &obs.camera_to_world)), cfg, seeds.generate)?;
    let graphs = candidate_graphs(&poses, &obs.cloud, cfg, seeds.graph);
    Ok((obs, keep_with_graphs(scene.id, poses, graphs)))
}

/// Attaches ensemble scores and sorts descending; ties keep generation
/// order.
pub fn rank_candidates(candidates: &SceneCandidates, ensemble: &Ensemble) -> Result<Vec<GraspPose>> {
    let scores = ensemble_score(ensemble, &candidates.graphs)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("scene {} candidate {i} scored {}", candidates.scene_id, scores[i])));
    }
    let mut ranked: Vec<GraspPose> = candidates
        .poses
        .iter()
        .zip(&scores)
        .map(|(p, &s)| GraspPose {
            score: Some(s as f64),
            ..p.clone()
        })
        .collect();
    ranked.sort_by(|a, b| b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)));
    Ok(ranked)
}

/// Full inference on a sensor cloud: generate, build graphs, score, rank.
/// Seeds are those of scene 0.
pub fn score_cloud(
    cloud: &PointCloud,
    depth: Option<(&DepthImage, &RigidTransform)>,
    ensemble: &Ensemble,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<GraspPose>> {
    let seeds = SceneSeeds::new(seed, 0);
    let poses = generate(cloud, depth, cfg, seeds.generate)?;
    let graphs = candidate_graphs(&poses, cloud, cfg, seeds.graph);
    rank_candidates(&keep_with_graphs(0, poses, graphs), ensemble)
}
