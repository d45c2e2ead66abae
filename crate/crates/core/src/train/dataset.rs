use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{write_candidates, CandidateRecord};
use crate::cloud::{save_cloud, CloudFormat, PointCloud};
use crate::config::PipelineConfig;
use crate::graph::{read_graph_dataset, write_graph_dataset, GraspGraph};
use crate::gripper::GraspPose;
use crate::oracle::{label_grasps, GraspLabel, SceneSurface, COLLISION_SCORE, LOW_QUALITY_SCORE};
use crate::pipeline::scene_candidates;
use crate::scene::{scene_stem, SyntheticScene};
use crate::{Error, Result};

pub const NUM_FOLDS: usize = 5;

/// The three label bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelClass {
    Positive,
    LowQuality,
    Collision,
}

impl LabelClass {
    pub fn of(score: f64) -> Result<LabelClass> {
        if (0.0..=1.0).contains(&score) {
            Ok(LabelClass::Positive)
        } else if score == LOW_QUALITY_SCORE {
            Ok(LabelClass::LowQuality)
        } else if score == COLLISION_SCORE {
            Ok(LabelClass::Collision)
        } else {
            Err(Error::Precondition(format!("{score} is not a valid grasp label")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub graph: GraspGraph,
    pub label: f32,
    pub scene_id: u64,
    pub fold: usize,
}

/// Labeled graphs with a class index. Folds are `scene_id mod 5`; fold `i`
/// validates on its own scenes and trains on the rest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledGraphSet {
    records: Vec<LabeledRecord>,
    classes: [Vec<usize>; 3],
}

fn class_slot(c: LabelClass) -> usize {
    match c {
        LabelClass::Positive => 0,
        LabelClass::LowQuality => 1,
        LabelClass::Collision => 2,
    }
}

impl LabeledGraphSet {
    /// Records as `(graph, label, scene_id)`; folds are assigned here.
    pub fn new(items: impl IntoIterator<Item = (GraspGraph, f32, u64)>) -> Result<Self> {
        let mut set = LabeledGraphSet::default();
        for (graph, label, scene_id) in items {
            let class = LabelClass::of(label as f64)?;
            set.classes[class_slot(class)].push(set.records.len());
            set.records.push(LabeledRecord {
                graph,
                label,
                scene_id,
                fold: (scene_id % NUM_FOLDS as u64) as usize,
            });
        }
        Ok(set)
    }

    pub fn from_scenes(scenes: &[SceneDataset]) -> Result<Self> {
        let mut items = Vec::new();
        for s in scenes {
            for (g, c) in s.graphs.iter().zip(&s.candidates) {
                let label = c
                    .label
                    .ok_or_else(|| Error::Precondition(format!("scene {} has an unlabeled candidate", s.scene_id)))?;
                items.push((g.clone(), label as f32, s.scene_id));
            }
        }
        LabeledGraphSet::new(items)
    }

    pub fn records(&self) -> &[LabeledRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record ids of one band, ascending.
    pub fn class_ids(&self, class: LabelClass) -> &[usize] {
        &self.classes[class_slot(class)]
    }

    /// Ids usable for training in `fold` (records of the other folds).
    pub fn train_ids(&self, fold: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.records.len()).filter(move |&i| self.records[i].fold != fold)
    }

    pub fn val_ids(&self, fold: usize) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].fold == fold).collect()
    }

    /// Training ids of one band in `fold`, ascending.
    pub fn train_class_ids(&self, fold: usize, class: LabelClass) -> Vec<usize> {
        self.class_ids(class)
            .iter()
            .copied()
            .filter(|&i| self.records[i].fold != fold)
            .collect()
    }
}

/// Everything produced for one scene: the cloud, labeled candidates that
/// have a graph, and those graphs.
#[derive(Debug, Clone)]
pub struct SceneDataset {
    pub scene_id: u64,
    pub cloud: PointCloud,
    pub candidates: Vec<CandidateRecord>,
    pub graphs: Vec<GraspGraph>,
}

/// Candidate record carrying the oracle's verdict. Infinite required
/// friction is stored as absent.
pub fn labeled_record(pose: &GraspPose, label: &GraspLabel) -> CandidateRecord {
    CandidateRecord {
        label: Some(label.score),
        mu_required: label.mu_required.filter(|m| m.is_finite()),
        collision: Some(label.collision),
        ..CandidateRecord::from(pose)
    }
}

/// Oracle labels of poses in a scene.
pub fn label_scene(scene: &SyntheticScene, poses: &[GraspPose], cfg: &PipelineConfig) -> Result<Vec<GraspLabel>> {
    let surface = SceneSurface::new(&scene.model, cfg.oracle.surface_spacing)?;
    Ok(label_grasps(&surface, poses, &cfg.gripper, &cfg.oracle))
}

pub fn build_scene(scene: &SyntheticScene, cfg: &PipelineConfig, seed: u64) -> Result<SceneDataset> {
    let (obs, cands) = scene_candidates(scene, cfg, seed)?;
    let labels = label_scene(scene, &cands.poses, cfg)?;
    Ok(SceneDataset {
        scene_id: scene.id,
        cloud: obs.cloud,
        candidates: cands.poses.iter().zip(&labels).map(|(p, l)| labeled_record(p, l)).collect(),
        graphs: cands.graphs,
    })
}

/// Renders, generates, labels and builds graphs for every scene.
pub fn build_dataset(scenes: &[SyntheticScene], cfg: &PipelineConfig, seed: u64) -> Result<(LabeledGraphSet, Vec<SceneDataset>)> {
    if scenes.is_empty() {
        return Err(Error::Precondition("dataset needs at least one scene".into()));
    }
    let mut ids: Vec<u64> = scenes.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Precondition("scene ids must be unique".into()));
    }
    let data: Vec<SceneDataset> = scenes
        .par_iter()
        .map(|s| build_scene(s, cfg, seed))
        .collect::<Result<_>>()?;
    Ok((LabeledGraphSet::from_scenes(&data)?, data))
}

/// One line of `labels.jsonl`: the label of graph `index` of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub scene_id: u64,
    pub index: usize,
    pub label: f64,
}

/// Writes `clouds/`, `candidates/`, `graphs/` and `labels.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, scenes: &[SceneDataset]) -> Result<()> {
    for sub in ["clouds", "candidates", "graphs"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let labels_path = dir.join("labels.jsonl");
    let mut w = BufWriter::new(File::create(&labels_path).map_err(|e| Error::io(&labels_path, e))?);
    for s in scenes {
        let stem = scene_stem(s.scene_id);
        save_cloud(&s.cloud, &dir.join("clouds").join(format!("{stem}.ply")), CloudFormat::PlyBinaryLe, None)?;
        write_candidates(&dir.join("candidates").join(format!("{stem}.jsonl")), &s.candidates)?;
        write_graph_dataset(&dir.join("graphs").join(format!("{stem}.bin")), &s.graphs)?;
        for (index, c) in s.candidates.iter().enumerate() {
            let label = c
                .label
                .ok_or_else(|| Error::Precondition(format!("scene {} candidate {index} is unlabeled", s.scene_id)))?;
            let entry = LabelEntry {
                scene_id: s.scene_id,
                index,
                label,
            };
            let line = serde_json::to_string(&entry).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&labels_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))
}

/// Reads `labels.jsonl` and the graphs it refers to.
pub fn read_dataset(dir: &Path) -> Result<LabeledGraphSet> {
    let labels_path = dir.join("labels.jsonl");
    let file = File::open(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let mut by_scene: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    let mut order = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&labels_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: LabelEntry = serde_json::from_str(&line)
            .map_err(|err| Error::parse(format!("{}:{}", labels_path.display(), n + 1), err.to_string()))?;
        if !by_scene.contains_key(&e.scene_id) {
            order.push(e.scene_id);
        }
        by_scene.entry(e.scene_id).or_default().push((e.index, e.label));
    }
    let mut items = Vec::new();
    for id in order {
        let path = dir.join("graphs").join(format!("{}.bin", scene_stem(id)));
        let graphs = read_graph_dataset(&path)?;
        let entries = &by_scene[&id];
        if entries.len() != graphs.len() || entries.iter().enumerate().any(|(i, e)| e.0 != i) {
            return Err(Error::Format(format!(
                "{}: {} graphs but labels list {} entries for scene {id}",
                path.display(),
                graphs.len(),
                entries.len()
            )));
        }
        items.extend(graphs.into_iter().zip(entries).map(|(g, e)| (g, e.1 as f32, id)));
    }
    LabeledGraphSet::new(items)
}
