//! The `flowscene` binary: argument handling, file layouts and error reporting.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flowscene::json::{read_json, write_json};
use flowscene::scene::{self, RunConfig};
use flowscene::{flo, fsgr, kittiio, pgm};
use flowscene_core::synthsim::SceneConfig;
use flowscene_core::{FlowField, GridSpec};

fn flowscene(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowscene"))
        .args(args)
        .env_remove("FLOWSCENE_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = flowscene(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Fails with a single `error:` line on stderr.
fn fails(args: &[&str]) -> String {
    let out = flowscene(args);
    assert!(!out.status.success(), "{args:?} succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:"), "{err}");
    err
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config() -> SceneConfig {
    SceneConfig {
        grid: GridSpec::new([64, 64, 16], 0.8, [0.0, -25.6, -6.4]).unwrap(),
        ..SceneConfig::default()
    }
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let cfg_path = dir.join("cfg.json");
    write_json(&small_config(), &cfg_path).unwrap();
    let out = dir.join("scene");
    ok(&["synth", "--config", s(&cfg_path), "--seed", "7", "--out", s(&out)]);
    out
}

#[test]
fn synth_is_deterministic_and_checks_seed() {
    let d = tempfile::tempdir().unwrap();
    let a = synth(d.path());
    let b = d.path().join("again");
    ok(&["synth", "--config", s(&d.path().join("cfg.json")), "--seed", "7", "--out", s(&b)]);
    for name in ["frame_0.fsgr", "frame_2.fsgr", "flow_fwd_1.flo", "depth.fsgr", "gt.label"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let recorded: SceneConfig = read_json(&a.join(scene::SCENE_JSON)).unwrap();
    assert_eq!(recorded.seed, Some(7));

    let seeded = d.path().join("seeded.json");
    write_json(&SceneConfig { seed: Some(3), ..small_config() }, &seeded).unwrap();
    let err = fails(&["synth", "--config", s(&seeded), "--seed", "4", "--out", s(&d.path().join("x"))]);
    assert!(err.contains("conflicts"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    ok(&["synth", "--config", s(&seeded), "--seed", "3", "--out", s(&d.path().join("y"))]);
}

#[test]
fn occlusion_flags_pixels_shifted_out_of_view() {
    let d = tempfile::tempdir().unwrap();
    let (fwd, bwd, out) = (d.path().join("f.flo"), d.path().join("b.flo"), d.path().join("m.pgm"));
    flo::write_flo(&FlowField::constant(5, 8, 2.0, 0.0), &fwd).unwrap();
    flo::write_flo(&FlowField::constant(5, 8, -2.0, 0.0), &bwd).unwrap();
    ok(&["occlusion", "--fwd", s(&fwd), "--bwd", s(&bwd), "--tau", "1", "--out", s(&out)]);
    let mask = pgm::read_mask(&out).unwrap();
    for y in 0..5 {
        for x in 0..8 {
            assert_eq!(mask.is_occluded(y, x), x >= 6, "({y}, {x})");
        }
    }
    fails(&["occlusion", "--fwd", s(&fwd), "--bwd", s(&bwd), "--tau", "0", "--out", s(&out)]);
    fails(&["occlusion", "--fwd", s(&out), "--bwd", s(&bwd), "--out", s(&out)]);
}

#[test]
fn run_from_files_matches_run_from_scene() {
    let d = tempfile::tempdir().unwrap();
    let sc = synth(d.path());
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(&["run", "--scene", s(&sc), "--out", s(&a), "--dump-intermediates"]);
    let f = |n: &str| sc.join(n);
    ok(&[
        "run",
        "--current", s(&f("frame_0.fsgr")),
        "--history", s(&f("frame_1.fsgr")),
        "--history", s(&f("frame_2.fsgr")),
        "--fwd", s(&f("flow_fwd_1.flo")),
        "--fwd", s(&f("flow_fwd_2.flo")),
        "--bwd", s(&f("flow_bwd_1.flo")),
        "--bwd", s(&f("flow_bwd_2.flo")),
        "--depth", s(&f("depth.fsgr")),
        "--depth-edges", s(&f("depth_edges.fsgr")),
        "--calib", s(&f("calib.txt")),
        "--prototypes", s(&f("prototypes.fsgr")),
        "--config", s(&f("pipeline.json")),
        "--out", s(&b),
    ]);
    let va = fsgr::read(&a.join("v_fine.fsgr")).unwrap();
    let vb = fsgr::read(&b.join("v_fine.fsgr")).unwrap();
    assert_eq!(va.dims, vb.dims);
    let worst = va.data.iter().zip(&vb.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
    assert!(worst < 1e-4, "{worst}");
    for name in ["f_agg.fsgr", "f_refined.fsgr", "mask.pgm", "v_t.fsgr", "v_agg.fsgr", "v_mask.fsgr"] {
        assert!(a.join(name).exists(), "{name}");
    }
    assert!(!b.join("mask.pgm").exists());
}

#[test]
fn run_rejects_inconsistent_inputs() {
    let d = tempfile::tempdir().unwrap();
    let sc = synth(d.path());
    let out = d.path().join("out");

    let mut cfg: RunConfig = read_json(&sc.join(scene::PIPELINE_JSON)).unwrap();
    cfg.pipeline.grid = GridSpec::semantic_kitti();
    let other = d.path().join("other.json");
    write_json(&cfg, &other).unwrap();
    let err = fails(&["run", "--scene", s(&sc), "--config", s(&other), "--out", s(&out)]);
    assert!(err.contains("grid"), "{err}");

    let mut cfg: RunConfig = read_json(&sc.join(scene::PIPELINE_JSON)).unwrap();
    cfg.pipeline.prototypes = Some(vec![vec![0.0; 16], vec![1.0; 16]]);
    write_json(&cfg, &other).unwrap();
    let err = fails(&["run", "--scene", s(&sc), "--config", s(&other), "--out", s(&out)]);
    assert!(err.contains("prototypes"), "{err}");

    let f = |n: &str| sc.join(n);
    let err = fails(&[
        "run",
        "--current", s(&f("frame_0.fsgr")),
        "--history", s(&f("frame_1.fsgr")),
        "--fwd", s(&f("flow_fwd_1.flo")),
        "--bwd", s(&f("flow_bwd_1.flo")),
        "--depth", s(&f("depth.fsgr")),
        "--depth-edges", s(&f("depth_edges.fsgr")),
        "--calib", s(&f("calib.json")),
        "--out", s(&out),
    ]);
    assert!(err.contains("prototypes"), "{err}");

    let err = fails(&[
        "run",
        "--current", s(&f("frame_0.fsgr")),
        "--history", s(&f("frame_1.fsgr")),
        "--depth", s(&f("depth.fsgr")),
        "--depth-edges", s(&f("depth_edges.fsgr")),
        "--calib", s(&f("calib.json")),
        "--out", s(&out),
    ]);
    assert!(err.contains("counts must match"), "{err}");
}

#[test]
fn eval_applies_learning_map_and_ignores_unlabeled() {
    let d = tempfile::tempdir().unwrap();
    let p = |n: &str| d.path().join(n);
    let spec = GridSpec::new([2, 2, 2], 0.2, [0.0; 3]).unwrap();
    write_json(&spec, &p("grid.json")).unwrap();
    kittiio::write_labels(&[0, 10, 10, 40, 40, 255, 0, 10], &p("gt.label")).unwrap();
    kittiio::write_labels(&[0, 1, 1, 2, 1, 2, 0, 1], &p("pred.label")).unwrap();
    fs::write(p("map.yaml"), "learning_map:\n  0: 0\n  10: 1\n  40: 2\n").unwrap();
    ok(&[
        "eval",
        "--pred", s(&p("pred.label")),
        "--gt", s(&p("gt.label")),
        "--learning-map", s(&p("map.yaml")),
        "--grid", s(&p("grid.json")),
        "--ranges", "0.2,0.4",
        "--dynamic-classes", "1",
        "--out", s(&p("report.json")),
    ]);
    let r: serde_json::Value = read_json(&p("report.json")).unwrap();
    assert_eq!(r["num_classes"], 3);
    assert_eq!(r["evaluated_voxels"], 7);
    assert_eq!(r["iou"], 1.0);
    // class 1: tp 3, fp 1 (gt 2 → pred 1); class 2: tp 1, fn 1
    assert_eq!(r["per_class"][0]["iou"], 0.75);
    assert_eq!(r["per_class"][1]["iou"], 0.5);
    assert_eq!(r["ranges"][0]["evaluated_voxels"], 4);
    assert_eq!(r["ranges"][1]["evaluated_voxels"], 7);
    assert_eq!(r["splits"]["dynamic"], 0.75);
    assert_eq!(r["splits"]["static"], 0.5);

    let err = fails(&[
        "eval",
        "--pred", s(&p("pred.label")),
        "--gt", s(&p("pred.label")),
        "--grid", s(&p("grid.json")),
        "--num-classes", "2",
    ]);
    assert!(err.contains("prediction") || err.contains("label"), "{err}");
}

#[test]
fn export_writes_mesh_and_slices() {
    let d = tempfile::tempdir().unwrap();
    let p = |n: &str| d.path().join(n);
    let spec = GridSpec::new([3, 2, 2], 0.5, [0.0; 3]).unwrap();
    write_json(&spec, &p("grid.json")).unwrap();
    let labels: Vec<u16> = vec![0, 1, 0, 0, 2, 0, 0, 0, 0, 0, 0, 3];
    kittiio::write_labels(&labels, &p("l.label")).unwrap();
    ok(&["export", "--grid", s(&p("l.label")), "--spec", s(&p("grid.json")), "--format", "ply", "--out", s(&p("m.ply"))]);
    let mesh = flowscene::ply::read_ply(&p("m.ply")).unwrap();
    assert_eq!(mesh.voxel_count(), Some(3));
    ok(&["export", "--grid", s(&p("l.label")), "--spec", s(&p("grid.json")), "--format", "pgm-slices", "--out", s(&p("slices"))]);
    let z1 = pgm::read_pgm(&p("slices").join("slice_001.pgm")).unwrap();
    assert_eq!((z1.width, z1.height), (2, 3));
    // rows are X, columns Y
    assert_eq!(z1.data, vec![1, 0, 0, 0, 0, 3]);
}

#[test]
fn thread_variable_is_validated() {
    let d = tempfile::tempdir().unwrap();
    let (fwd, out) = (d.path().join("f.flo"), d.path().join("m.pgm"));
    flo::write_flo(&FlowField::zeros(2, 2), &fwd).unwrap();
    let args = ["occlusion", "--fwd", s(&fwd), "--bwd", s(&fwd), "--out", s(&out)];
    let run = |v: &str| Command::new(env!("CARGO_BIN_EXE_flowscene")).args(args).env("FLOWSCENE_THREADS", v).output().unwrap();
    assert!(run("2").status.success());
    for bad in ["0", "-1", "many"] {
        let o = run(bad);
        assert!(!o.status.success());
        assert!(String::from_utf8_lossy(&o.stderr).contains("FLOWSCENE_THREADS"));
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!flowscene(&[]).status.success());
    assert!(!flowscene(&["run", "--out", "x"]).status.success());
    assert!(flowscene(&["--help"]).status.success());
}
