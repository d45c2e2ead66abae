use std::fs;
use std::path::Path;
use std::process::Command;

use gtg_cli::{cloud_candidates, cmd_train, cmd_viz, gripper_wireframe};
use gtg_core::candidates::{read_candidates, CandidateRecord};
use gtg_core::cloud::{load_cloud, save_cloud, CloudFormat, Point, PointCloud, RigidTransform};
use gtg_core::config::PipelineConfig;
use gtg_core::gnn::{save_ensemble, Dims, Ensemble, NetworkParams};
use gtg_core::graph::{write_graph_dataset, GraspGraph};
use gtg_core::gripper::{GraspPose, GraspSource};
use gtg_core::pipeline::{rank_candidates, scene_candidates};
use gtg_core::scene::{load_scene, save_scene, scene_stem, Camera, Primitive, SceneModel, SceneObject, SyntheticScene};
use gtg_core::train::LabelEntry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gtg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gtg"))
        .args(args)
        .env_remove("GTG_CONFIG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A 4 x 4 x 6 cm box standing on the table, seen from above at an angle.
fn box_scene() -> SyntheticScene {
    SyntheticScene {
        id: 0,
        model: SceneModel {
            objects: vec![SceneObject {
                shape: Primitive::Box {
                    extents: [0.04, 0.04, 0.06],
                },
                pose: RigidTransform::from_translation(nalgebra::Vector3::new(0.0, 0.0, 0.03)),
            }],
            support_plane: 0.0,
        },
        camera: Camera::look_at(Point::new(0.3, 0.0, 0.5), Point::new(0.0, 0.0, 0.03), 128, 96, 160.0).unwrap(),
    }
}

fn random_ensemble() -> Ensemble {
    let members = (0..5).map(|s| NetworkParams::<f32>::init(Dims::default(), s)).collect();
    Ensemble::new(members, vec![0, 1, 2, 3, 4]).unwrap()
}

#[test]
fn scenes_zero_writes_only_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = gtg(&["scenes", "--n", "0", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(out.join("scenes")).unwrap().count(), 0);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], PipelineConfig::default().hash());
}

#[test]
fn scenes_are_reproducible_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = gtg(&["scenes", "--n", "3", "--seed", "5", "--workers", "1", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for id in 0..3 {
        let stem = scene_stem(id);
        for sub in [format!("scenes/{stem}.json"), format!("clouds/{stem}.ply")] {
            assert_eq!(fs::read(a.join(&sub)).unwrap(), fs::read(b.join(&sub)).unwrap(), "{sub}");
        }
        let scene = load_scene(&a.join(format!("scenes/{stem}.json"))).unwrap();
        assert_eq!(scene.id, id);
        assert!(!load_cloud(&a.join(format!("clouds/{stem}.ply")), CloudFormat::PlyBinaryLe).unwrap().is_empty());
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn config_errors_exit_2_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let o = gtg(&["scenes", "--n", "1", "--out", s(&out), "--set", "train.epochs=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = gtg(&["scenes", "--n", "1", "--out", s(&out), "--set", "no.such.key=1"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gtg"))
        .args(["scenes", "--n", "1", "--out", s(&out)])
        .env("GTG_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_checkpoint_is_a_named_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("c.xyz");
    fs::write(&cloud, "0 0 0\n0.01 0 0\n0 0.01 0\n").unwrap();
    let missing = dir.path().join("nowhere.bin");
    let o = gtg(&["score", "--cloud", s(&cloud), "--checkpoint", s(&missing), "--out", s(&dir.path().join("r.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.bin"));
}

#[test]
fn empty_cloud_gives_empty_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("empty.xyz");
    fs::write(&cloud, "").unwrap();
    let out = dir.path().join("c.jsonl");
    let o = gtg(&["generate", "--cloud", s(&cloud), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn box_scene_generates_and_heuristic_mode_is_top_down() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("box.json");
    save_scene(&box_scene(), &scene).unwrap();
    let out = dir.path().join("c.jsonl");
    let o = gtg(&["generate", "--scene", s(&scene), "--out", s(&out), "--mode", "gpg", "--set", "gpg.n_samples=60"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!read_candidates(&out).unwrap().is_empty());

    let o = gtg(&["generate", "--scene", s(&scene), "--out", s(&out), "--mode", "heuristic4dof"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cands = read_candidates(&out).unwrap();
    assert!(!cands.is_empty());
    for c in &cands {
        let a = c.pose().approach();
        assert!((a - nalgebra::Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12, "{a:?}");
        assert_eq!(c.source, GraspSource::Heuristic4Dof);
    }

    let labeled = dir.path().join("l.jsonl");
    let o = gtg(&["label", "--candidates", s(&out), "--scene", s(&scene), "--out", s(&labeled)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let labeled = read_candidates(&labeled).unwrap();
    assert_eq!(labeled.len(), cands.len());
    assert!(labeled.iter().all(|c| c.label.is_some() && c.collision.is_some()));
}

#[test]
fn score_is_sorted_and_equals_the_library_composition() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = dir.path().join("box.json");
    save_scene(&box_scene(), &scene_path).unwrap();
    let ckpt = dir.path().join("e.bin");
    let ensemble = random_ensemble();
    save_ensemble(&ensemble, &ckpt).unwrap();
    let out = dir.path().join("ranked.jsonl");
    let o = gtg(&[
        "score", "--scene", s(&scene_path), "--checkpoint", s(&ckpt), "--out", s(&out), "--set", "gpg.n_samples=60", "--seed", "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ranked = read_candidates(&out).unwrap();
    assert!(!ranked.is_empty());
    assert!(ranked.windows(2).all(|w| w[0].score.unwrap() >= w[1].score.unwrap()));

    let cfg = PipelineConfig::default().with_overrides(&["gpg.n_samples=60", "seed=3"]).unwrap();
    let (_, cands) = scene_candidates(&box_scene(), &cfg, cfg.seed).unwrap();
    let expect: Vec<CandidateRecord> = rank_candidates(&cands, &ensemble).unwrap().iter().map(CandidateRecord::from).collect();
    let lib_path = dir.path().join("lib.jsonl");
    gtg_core::candidates::write_candidates(&lib_path, &expect).unwrap();
    assert_eq!(fs::read(&out).unwrap(), fs::read(&lib_path).unwrap());
}

#[test]
fn cloud_input_without_normals_still_generates() {
    let dir = tempfile::tempdir().unwrap();
    let scene = box_scene();
    let (_, cloud) = scene.observe(&Default::default(), &PipelineConfig::default().preprocess, 1).unwrap();
    let path = dir.path().join("c.xyz");
    save_cloud(&PointCloud::new(cloud.points.clone()), &path, CloudFormat::XyzText, None).unwrap();
    let cfg = PipelineConfig::default().with_overrides(&["gpg.n_samples=60", "generator=gpg"]).unwrap();
    assert!(!cloud_candidates(&cfg, &cloud).unwrap().poses.is_empty());
    let out = dir.path().join("o.jsonl");
    let o = gtg(&["generate", "--cloud", s(&path), "--out", s(&out), "--set", "gpg.n_samples=60", "--mode", "gpg"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn pose_at(x: f64, score: f64) -> CandidateRecord {
    CandidateRecord::from(&GraspPose {
        position: Point::new(x, 0.0, 0.1),
        rotation: nalgebra::Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0),
        width: 0.08,
        source: GraspSource::GpgRaw,
        score: Some(score),
    })
}

#[test]
fn viz_colors_best_grasp_red_and_passes_cloud_through() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let cloud_path = dir.path().join("c.ply");
    let cloud = PointCloud::new(vec![Point::new(0.0, 0.0, 0.0), Point::new(0.01, 0.0, 0.0)]);
    save_cloud(&cloud, &cloud_path, CloudFormat::PlyBinaryLe, None).unwrap();

    let empty = dir.path().join("none.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("v0.ply");
    cmd_viz(&cfg, &empty, &cloud_path, &out, 50).unwrap();
    assert_eq!(load_cloud(&out, CloudFormat::PlyBinaryLe).unwrap().points, cloud.points);

    let grasps = dir.path().join("g.jsonl");
    gtg_core::candidates::write_candidates(&grasps, &[pose_at(0.0, 0.2), pose_at(0.5, 0.9)]).unwrap();
    let out = dir.path().join("v.ply");
    cmd_viz(&cfg, &grasps, &cloud_path, &out, 50).unwrap();
    let (loaded, colors) =
        gtg_core::cloud::io::load_cloud_with_colors(&out, CloudFormat::PlyBinaryLe).unwrap();
    let colors = colors.unwrap();
    let wire = gripper_wireframe(&cfg.gripper, &pose_at(0.5, 0.9).pose()).len();
    assert_eq!(loaded.len(), 2 + 2 * wire);
    // The best grasp is drawn first and in pure red, the other in blue.
    assert_eq!(colors[2], [255, 0, 0]);
    assert_eq!(colors[2 + wire], [0, 0, 255]);
    assert!((loaded.points[2].x - 0.5).abs() < 0.2);
}

/// Labeled dataset of small random graphs whose label is a function of
/// the lateral offset, split over ten scenes.
fn tiny_dataset(dir: &Path) {
    fs::create_dir_all(dir.join("graphs")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lines = String::new();
    for scene in 0..10u64 {
        let mut graphs = Vec::new();
        for index in 0..30 {
            let y: f32 = rng.random_range(-0.04..0.04);
            let feats: Vec<[f32; 5]> = (0..6)
                .map(|i| [rng.random_range(-0.02..0.0), y + 0.001 * i as f32, rng.random_range(-0.01..0.01), 1.0, 0.0])
                .collect();
            graphs.push(GraspGraph::from_features(feats, 6, 5));
            let label = match y {
                y if y < -0.02 => -1.0,
                y if y < 0.0 => -0.5,
                y => (y / 0.04) as f64,
            };
            let entry = LabelEntry { scene_id: scene, index, label };
            lines.push_str(&serde_json::to_string(&entry).unwrap());
            lines.push('\n');
        }
        write_graph_dataset(&dir.join("graphs").join(format!("{}.bin", scene_stem(scene))), &graphs).unwrap();
    }
    fs::write(dir.join("labels.jsonl"), lines).unwrap();
}

#[test]
fn train_converges_repeats_and_guards_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_dataset(&data);
    let cfg = PipelineConfig::default()
        .with_overrides(&["train.epochs=15", "train.batch_size=16", "train.n_collision_per_cycle=40", "train.n_lowq_per_cycle=40"])
        .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let reports = cmd_train(&cfg, &data, &a, false).unwrap();
    cmd_train(&cfg, &data, &b, false).unwrap();
    for r in &reports {
        assert!(r.train_mse.last().unwrap() < &r.train_mse[0], "{:?}", r.train_mse);
        assert!(r.best_val_mse < r.val_mse[0], "{:?}", r.val_mse);
    }
    for f in ["ensemble.bin", "fold_0.json", "curves_4.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    // Resuming with the same configuration reuses finished members.
    fs::remove_file(a.join("member_3.bin")).unwrap();
    cmd_train(&cfg, &data, &a, true).unwrap();
    assert_eq!(fs::read(a.join("ensemble.bin")).unwrap(), fs::read(b.join("ensemble.bin")).unwrap());

    let o = gtg(&["train", "--data", s(&data), "--out", s(&a), "--resume", "--set", "train.epochs=16"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot resume"));
}
