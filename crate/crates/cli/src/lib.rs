//! The `gtg` command-line tool. Every subcommand is a thin composition of
//! library calls so its output equals what the library API produces.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use gtg_core::candidates::{read_candidates, write_candidates, CandidateRecord};
use gtg_core::cloud::{estimate_normals, load_cloud, save_cloud, score_color, CloudFormat, Point, PointCloud};
use gtg_core::config::PipelineConfig;
use gtg_core::eval::{run_benchmark, EnsembleScorer, OracleScorer, RandomScorer, Scorer};
use gtg_core::gnn::{load_ensemble, save_checkpoint, save_ensemble, load_checkpoint, Ensemble, ENSEMBLE_SIZE};
use gtg_core::graph::write_graph_dataset;
use gtg_core::gripper::GraspPose;
use gtg_core::pipeline::{
    candidate_graphs, generate, keep_with_graphs, observe, rank_candidates, scene_candidates, score_cloud, GeneratorMode,
    SceneCandidates, SceneSeeds,
};
use gtg_core::scene::{load_scene, random_scene, save_scene, scene_stem, SyntheticScene};
use gtg_core::train::{label_scene, labeled_record, read_dataset, train_member_with, FoldReport, LabelEntry};
use gtg_core::Error;

#[derive(Debug, Parser)]
#[command(name = "gtg", version, about = "Grasp candidate generation and GNN ensemble scoring")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration (JSON). Missing sections take defaults.
    #[arg(long, env = "GTG_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Overrides the configuration's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Gpg,
    Dual,
    Heuristic4dof,
}

impl From<Mode> for GeneratorMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Gpg => GeneratorMode::Gpg,
            Mode::Dual => GeneratorMode::Dual,
            Mode::Heuristic4dof => GeneratorMode::Heuristic4Dof,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScorerKind {
    Ensemble,
    Random,
    Oracle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create random synthetic scenes and their observed clouds.
    Scenes {
        #[arg(long)]
        n: u64,
        /// Id of the first scene; ids are consecutive.
        #[arg(long, default_value_t = 0)]
        first_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate grasp candidates for a scene, a cloud or a dataset directory.
    #[command(group(ArgGroup::new("input").required(true).args(["scene", "cloud", "data"])))]
    Generate {
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Cloud file; normals are estimated (facing the origin) when absent.
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// Dataset directory: writes `candidates/` and `graphs/` per scene.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Candidate JSONL (with `--scene` or `--cloud`).
        #[arg(long, required_unless_present = "data")]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Label candidates with the analytic oracle.
    #[command(group(ArgGroup::new("input").required(true).args(["candidates", "data"])))]
    Label {
        #[arg(long, requires_all = ["scene", "out"])]
        candidates: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dataset directory: labels every scene's candidates in place and
        /// writes `labels.jsonl`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the five-member ensemble on a labeled dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep members already finished in `out`; the configuration must
        /// hash identically.
        #[arg(long)]
        resume: bool,
    },
    /// Generate, score and rank grasps.
    #[command(group(ArgGroup::new("input").required(true).args(["scene", "cloud"])))]
    Score {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        cloud: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the benchmark on every scene of a directory.
    Eval {
        /// Directory holding `scenes/*.json`.
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, required_if_eq("scorer", "ensemble"))]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScorerKind::Ensemble)]
        scorer: ScorerKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a colored cloud with the best grasps drawn as wireframes.
    Viz {
        #[arg(long)]
        grasps: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        top: usize,
    },
}

/// 2 for configuration errors, 4 for numeric failures, 3 for everything
/// else (bad or missing data).
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 2,
                Error::Numeric(_) => 4,
                _ => 3,
            };
        }
    }
    3
}

pub fn load_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let base = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = base.with_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli.common)?;
    if let Some(n) = cli.common.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()).into());
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Scenes { n, first_id, out } => cmd_scenes(&cfg, first_id, n, &out),
        Command::Generate {
            scene,
            cloud,
            data,
            out,
            mode,
        } => {
            if let Some(m) = mode {
                cfg.generator = m.into();
            }
            match (scene, cloud, data) {
                (Some(s), _, _) => cmd_generate_scene(&cfg, &s, &out.expect("required by clap")),
                (_, Some(c), _) => cmd_generate_cloud(&cfg, &c, &out.expect("required by clap")),
                (_, _, Some(d)) => cmd_generate_data(&cfg, &d),
                _ => unreachable!("clap requires one input"),
            }
        }
        Command::Label {
            candidates,
            scene,
            out,
            data,
        } => match (candidates, data) {
            (Some(c), _) => cmd_label_file(&cfg, &c, &scene.expect("required by clap"), &out.expect("required by clap")),
            (_, Some(d)) => cmd_label_data(&cfg, &d),
            _ => unreachable!("clap requires one input"),
        },
        Command::Train { data, out, resume } => cmd_train(&cfg, &data, &out, resume).map(|_| ()),
        Command::Score {
            scene,
            cloud,
            checkpoint,
            out,
        } => cmd_score(&cfg, scene.as_deref(), cloud.as_deref(), &checkpoint, &out),
        Command::Eval {
            scenes,
            checkpoint,
            scorer,
            out,
        } => cmd_eval(&cfg, &scenes, checkpoint.as_deref(), scorer, &out),
        Command::Viz { grasps, cloud, out, top } => cmd_viz(&cfg, &grasps, &cloud, &out, top),
    }
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

/// Scene files under `dir/scenes`, by file name.
pub fn list_scenes(dir: &Path) -> anyhow::Result<Vec<SyntheticScene>> {
    let sub = dir.join("scenes");
    let entries = fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("listing {}", sub.display()))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths.iter().map(|p| load_scene(p)).collect::<Result<_, _>>()?)
}

fn load_cloud_any(path: &Path) -> anyhow::Result<PointCloud> {
    Ok(load_cloud(path, CloudFormat::detect(path)?)?)
}

fn records(poses: &[GraspPose]) -> Vec<CandidateRecord> {
    poses.iter().map(CandidateRecord::from).collect()
}

/// Writes `scenes/*.json`, the observed `clouds/*.ply` and `manifest.json`.
pub fn cmd_scenes(cfg: &PipelineConfig, first_id: u64, n: u64, out: &Path) -> anyhow::Result<()> {
    create_dir(&out.join("scenes"))?;
    create_dir(&out.join("clouds"))?;
    let ids: Vec<u64> = (first_id..first_id + n).collect();
    ids.par_iter().try_for_each(|&id| -> anyhow::Result<()> {
        let scene = random_scene(id, &cfg.scenes, cfg.seed)?;
        let obs = observe(&scene, cfg, cfg.seed)?;
        let stem = scene_stem(id);
        save_scene(&scene, &out.join("scenes").join(format!("{stem}.json")))?;
        save_cloud(&obs.cloud, &out.join("clouds").join(format!("{stem}.ply")), CloudFormat::PlyBinaryLe, None)?;
        Ok(())
    })?;
    write_json(
        &out.join("manifest.json"),
        &json!({ "kind": "scenes", "seed": cfg.seed, "config_hash": cfg.hash(), "scene_ids": ids }),
    )
}

pub fn cmd_generate_scene(cfg: &PipelineConfig, scene: &Path, out: &Path) -> anyhow::Result<()> {
    let scene = load_scene(scene)?;
    let (_, cands) = scene_candidates(&scene, cfg, cfg.seed)?;
    Ok(write_candidates(out, &records(&cands.poses))?)
}

/// Candidates with a graph for a stand-alone cloud, using the seeds of
/// scene 0 and no depth frame.
pub fn cloud_candidates(cfg: &PipelineConfig, cloud: &PointCloud) -> anyhow::Result<SceneCandidates> {
    if cloud.is_empty() {
        return Ok(keep_with_graphs(0, Vec::new(), Vec::new()));
    }
    let seeds = SceneSeeds::new(cfg.seed, 0);
    let poses = generate(cloud, None, cfg, seeds.generate)?;
    let graphs = candidate_graphs(&poses, cloud, cfg, seeds.graph);
    Ok(keep_with_graphs(0, poses, graphs))
}

fn cloud_with_normals(cfg: &PipelineConfig, path: &Path) -> anyhow::Result<PointCloud> {
    let cloud = load_cloud_any(path)?;
    if cloud.normals.is_some() || cloud.is_empty() {
        return Ok(cloud);
    }
    Ok(estimate_normals(&cloud, cfg.preprocess.normal_radius, &Point::zeros())?)
}

pub fn cmd_generate_cloud(cfg: &PipelineConfig, cloud: &Path, out: &Path) -> anyhow::Result<()> {
    let cloud = cloud_with_normals(cfg, cloud)?;
    let cands = cloud_candidates(cfg, &cloud)?;
    Ok(write_candidates(out, &records(&cands.poses))?)
}

pub fn cmd_generate_data(cfg: &PipelineConfig, data: &Path) -> anyhow::Result<()> {
    let scenes = list_scenes(data)?;
    create_dir(&data.join("candidates"))?;
    create_dir(&data.join("graphs"))?;
    let dropped: Vec<usize> = scenes
        .par_iter()
        .map(|scene| -> anyhow::Result<usize> {
            let (_, cands) = scene_candidates(scene, cfg, cfg.seed)?;
            let stem = scene_stem(scene.id);
            write_candidates(&data.join("candidates").join(format!("{stem}.jsonl")), &records(&cands.poses))?;
            write_graph_dataset(&data.join("graphs").join(format!("{stem}.bin")), &cands.graphs)?;
            Ok(cands.dropped)
        })
        .collect::<anyhow::Result<_>>()?;
    eprintln!(
        "generated candidates for {} scenes ({} dropped without inside points)",
        scenes.len(),
        dropped.iter().sum::<usize>()
    );
    Ok(())
}

fn label_records(cfg: &PipelineConfig, scene: &SyntheticScene, cands: &[CandidateRecord]) -> anyhow::Result<Vec<CandidateRecord>> {
    let poses: Vec<GraspPose> = cands.iter().map(|c| c.pose()).collect();
    let labels = label_scene(scene, &poses, cfg)?;
    Ok(cands
        .iter()
        .zip(poses.iter().zip(&labels))
        .map(|(c, (p, l))| CandidateRecord {
            score: c.score,
            ..labeled_record(p, l)
        })
        .collect())
}

pub fn cmd_label_file(cfg: &PipelineConfig, candidates: &Path, scene: &Path, out: &Path) -> anyhow::Result<()> {
    let scene = load_scene(scene)?;
    let cands = read_candidates(candidates)?;
    Ok(write_candidates(out, &label_records(cfg, &scene, &cands)?)?)
}

pub fn cmd_label_data(cfg: &PipelineConfig, data: &Path) -> anyhow::Result<()> {
    let scenes = list_scenes(data)?;
    let labeled: Vec<Vec<CandidateRecord>> = scenes
        .par_iter()
        .map(|scene| {
            let path = data.join("candidates").join(format!("{}.jsonl", scene_stem(scene.id)));
            label_records(cfg, scene, &read_candidates(&path)?)
        })
        .collect::<anyhow::Result<_>>()?;
    let mut lines = String::new();
    for (scene, cands) in scenes.iter().zip(&labeled) {
        let path = data.join("candidates").join(format!("{}.jsonl", scene_stem(scene.id)));
        write_candidates(&path, cands)?;
        for (index, c) in cands.iter().enumerate() {
            let entry = LabelEntry {
                scene_id: scene.id,
                index,
                label: c.label.expect("just labeled"),
            };
            lines.push_str(&serde_json::to_string(&entry)?);
            lines.push('\n');
        }
    }
    write_file(&data.join("labels.jsonl"), lines)
}

fn member_paths(out: &Path, fold: usize) -> (PathBuf, PathBuf, PathBuf) {
    (
        out.join(format!("member_{fold}.bin")),
        out.join(format!("fold_{fold}.json")),
        out.join(format!("curves_{fold}.csv")),
    )
}

/// Trains every member not already present in `out` (with `resume`) and
/// writes `ensemble.bin`, per-member checkpoints, fold reports, learning
/// curves and `manifest.json`.
pub fn cmd_train(cfg: &PipelineConfig, data: &Path, out: &Path, resume: bool) -> anyhow::Result<Vec<FoldReport>> {
    let manifest_path = out.join("manifest.json");
    if resume && manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
        let previous = manifest.get("config_hash").and_then(Value::as_str).unwrap_or("");
        if previous != cfg.hash() {
            return Err(Error::Config(format!(
                "cannot resume {}: it was trained with configuration {previous}, this run uses {}",
                out.display(),
                cfg.hash()
            ))
            .into());
        }
    }
    let set = read_dataset(data)?;
    create_dir(out)?;
    write_json(
        &manifest_path,
        &json!({ "kind": "train", "seed": cfg.seed, "config_hash": cfg.hash(), "records": set.len() }),
    )?;
    write_file(&out.join("config.json"), cfg.to_json())?;
    let hook = |fold: usize, epoch: usize, train: f64, val: f64| {
        eprintln!("fold {fold} epoch {epoch} train_mse {train:.6} val_mse {val:.6}");
    };
    let members: Vec<(gtg_core::gnn::NetworkParams<f32>, FoldReport)> = (0..ENSEMBLE_SIZE)
        .into_par_iter()
        .map(|fold| -> anyhow::Result<_> {
            let (ckpt, report_path, curves) = member_paths(out, fold);
            if resume && ckpt.exists() && report_path.exists() {
                let report: FoldReport = serde_json::from_str(&fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?)
                .map_err(|e| Error::Format(format!("{}: {e}", report_path.display())))?;
                return Ok((load_checkpoint(&ckpt)?, report));
            }
            let (params, report) = train_member_with(&set, fold, &cfg.train, cfg.train.seeds[fold], &hook)?;
            save_checkpoint(&params, &ckpt)?;
            write_file(&curves, report.curves_csv())?;
            write_file(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
            Ok((params, report))
        })
        .collect::<anyhow::Result<_>>()?;
    let (params, reports): (Vec<_>, Vec<_>) = members.into_iter().unzip();
    save_ensemble(&Ensemble::new(params, cfg.train.seeds.to_vec())?, &out.join("ensemble.bin"))?;
    Ok(reports)
}

fn load_ensemble_named(path: &Path) -> anyhow::Result<Ensemble> {
    load_ensemble(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn cmd_score(cfg: &PipelineConfig, scene: Option<&Path>, cloud: Option<&Path>, checkpoint: &Path, out: &Path) -> anyhow::Result<()> {
    let ensemble = load_ensemble_named(checkpoint)?;
    let ranked = match (scene, cloud) {
        (Some(scene), _) => {
            let scene = load_scene(scene)?;
            let (_, cands) = scene_candidates(&scene, cfg, cfg.seed)?;
            rank_candidates(&cands, &ensemble)?
        }
        (_, Some(cloud)) => {
            let cloud = cloud_with_normals(cfg, cloud)?;
            if cloud.is_empty() {
                Vec::new()
            } else {
                score_cloud(&cloud, None, &ensemble, cfg, cfg.seed)?
            }
        }
        _ => bail!(Error::Config("score needs --scene or --cloud".into())),
    };
    Ok(write_candidates(out, &records(&ranked))?)
}

/// Writes `report.json` and `report.csv` under `out`.
pub fn cmd_eval(cfg: &PipelineConfig, scenes: &Path, checkpoint: Option<&Path>, scorer: ScorerKind, out: &Path) -> anyhow::Result<()> {
    let ensemble = match scorer {
        ScorerKind::Ensemble => Some(load_ensemble_named(
            checkpoint.ok_or_else(|| Error::Config("the ensemble scorer needs --checkpoint".into()))?,
        )?),
        _ => None,
    };
    let scenes = list_scenes(scenes)?;
    let boxed: Box<dyn Scorer> = match (&ensemble, scorer) {
        (Some(e), _) => Box::new(EnsembleScorer(e)),
        (None, ScorerKind::Oracle) => Box::new(OracleScorer),
        (None, _) => Box::new(RandomScorer { seed: cfg.seed }),
    };
    let report = run_benchmark(&scenes, boxed.as_ref(), cfg, cfg.seed)?;
    create_dir(out)?;
    write_file(&out.join("report.json"), report.to_json()?)?;
    write_file(&out.join("report.csv"), report.to_csv())?;
    eprintln!("mean AP {:.4} over {} scenes", report.mean_ap, report.scenes.len());
    Ok(())
}

const WIRE_STEP: f64 = 0.002;

/// Points along the edges of the hand's finger and base boxes, in world
/// coordinates.
pub fn gripper_wireframe(g: &gtg_core::gripper::GripperGeometry, pose: &GraspPose) -> Vec<Point> {
    let mut out = Vec::new();
    for b in g.body_boxes(pose.width) {
        let c = b.corners();
        for i in 0..8 {
            for j in i + 1..8 {
                // Box edges join corners that differ in exactly one coordinate.
                let d = c[j] - c[i];
                let axes = d.iter().filter(|v| v.abs() > 1e-12).count();
                if axes != 1 {
                    continue;
                }
                let steps = (d.norm() / WIRE_STEP).ceil().max(1.0) as usize;
                out.extend((0..=steps).map(|s| pose.to_world(&(c[i] + d * (s as f64 / steps as f64)))));
            }
        }
    }
    out
}

/// Cloud points in gray plus the `top` best grasps as wireframes, colored
/// from red (best) to blue by rank.
pub fn cmd_viz(cfg: &PipelineConfig, grasps: &Path, cloud: &Path, out: &Path, top: usize) -> anyhow::Result<()> {
    let cloud = load_cloud_any(cloud)?;
    let mut poses: Vec<GraspPose> = read_candidates(grasps)?.iter().map(|c| c.pose()).collect();
    if let Some(i) = poses.iter().position(|p| p.score.is_none()) {
        bail!(Error::Precondition(format!("{}: grasp {i} has no score", grasps.display())));
    }
    poses.sort_by(|a, b| b.score.unwrap_or(0.0).total_cmp(&a.score.unwrap_or(0.0)));
    poses.truncate(top);
    let mut points = cloud.points.clone();
    let mut colors = vec![[160u8, 160, 160]; points.len()];
    let n = poses.len();
    for (rank, p) in poses.iter().enumerate() {
        let t = if n == 1 { 1.0 } else { 1.0 - rank as f64 / (n - 1) as f64 };
        let wire = gripper_wireframe(&cfg.gripper, p);
        colors.extend(std::iter::repeat_n(score_color(t), wire.len()));
        points.extend(wire);
    }
    Ok(save_cloud(&PointCloud::new(points), out, CloudFormat::PlyBinaryLe, Some(&colors))?)
}
