use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use occunav::backbone::DensityBackbone;
use occunav::scene::DensityGrid;
use sha2::{Digest, Sha256};

const SMALL: &str = r#"
seed = 3

[scene]
preset = "sphere"

[backbone]
width = 32
depth = 3
frequencies = 4
steps = 300
batch_size = 128
supervision_resolution = 64

[oracle]
resolution = 32

[head]
epochs = 60
batch_size = 256

[eval]
resolution = 16
probes = 256

[planner]
start = [-0.7, 0.2, 0.0]
goal = [0.7, 0.2, 0.0]
max_steps = 1500
"#;

fn occunav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occunav"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn stage(cfg: &Path, out: &Path, name: &str, extra: &[&str]) -> Output {
    let mut args = vec![name, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    occunav(&args)
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(fs::read(path).unwrap()))
}

/// Backbone, oracle and head for the small config, built once and copied per test.
fn trained() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), SMALL);
        let out = dir.path().join("out");
        for s in ["pretrain", "build-oracle", "train-head"] {
            let o = stage(&cfg, &out, s, &[]);
            assert_eq!(code(&o), 0, "{s}: {}", text(&o));
        }
        dir
    })
    .path()
}

fn copy_of_trained() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    for e in fs::read_dir(trained().join("out")).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), out.join(e.file_name())).unwrap();
    }
    let cfg = write_config(dir.path(), SMALL);
    (dir, cfg, out)
}

#[test]
fn missing_scene_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n");
    let o = stage(&cfg, &dir.path().join("out"), "pretrain", &[]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("scene"), "{}", text(&o));
}

#[test]
fn unknown_key_exits_2_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}\n[extra]\nfoo = 1\n"));
    let o = stage(&cfg, &dir.path().join("out"), "pretrain", &[]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("extra"), "{}", text(&o));

    let cfg = write_config(dir.path(), SMALL);
    let o = stage(&cfg, &dir.path().join("out"), "pretrain", &["--backbone.widht", "4"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("widht"), "{}", text(&o));
}

#[test]
fn head_depth_outside_range_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for d in ["0", "9"] {
        let o = stage(&cfg, &dir.path().join("out"), "train-head", &["--head.depth", d]);
        assert_eq!(code(&o), 2, "{}", text(&o));
        assert!(text(&o).contains("head.depth"));
    }
}

#[test]
fn dry_run_reports_sample_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = stage(&cfg, &out, "build-oracle", &["--dry-run", "--oracle.resolution", "500"]);
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("samples=125000000"), "{}", text(&o));
    assert!(!out.exists());
}

#[test]
fn pretrain_checkpoint_round_trips_and_replays() {
    let out = trained().join("out");
    let bytes = fs::read(out.join("backbone.nwts")).unwrap();
    let back = DensityBackbone::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let loss = fs::read_to_string(out.join("pretrain_loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 301);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let again = dir.path().join("again");
    assert_eq!(code(&stage(&cfg, &again, "pretrain", &[])), 0);
    assert_eq!(sha(&again.join("backbone.nwts")), sha(&out.join("backbone.nwts")));

    let other = dir.path().join("other");
    assert_eq!(code(&stage(&cfg, &other, "pretrain", &["--seed", "4"])), 0);
    assert_ne!(sha(&other.join("backbone.nwts")), sha(&out.join("backbone.nwts")));
}

#[test]
fn manifests_record_output_digests() {
    let out = trained().join("out");
    for (stage, file) in [("pretrain", "backbone.nwts"), ("build-oracle", "density.dgrd"), ("train-head", "head.nwts")] {
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(out.join(format!("manifest-{stage}.json"))).unwrap()).unwrap();
        assert_eq!(m["stage"], stage);
        assert_eq!(m["seed"], 3);
        assert_eq!(m["outputs"][file], sha(&out.join(file)));
        assert_eq!(m["config"]["scene"]["preset"], "sphere");
    }
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest-train-head.json")).unwrap()).unwrap();
    assert_eq!(m["inputs"]["backbone.nwts"], sha(&out.join("backbone.nwts")));
    assert!(!out.join(".occunav.lock").exists());
}

#[test]
fn sphere_oracle_matches_volume_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = stage(&cfg, &out, "build-oracle", &["--oracle.source", "scene", "--oracle.resolution", "64"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(out.join("oracle_stats.json")).unwrap()).unwrap();
    let fraction = stats["occupied_fraction"].as_f64().unwrap();
    let expected = 4.0 / 3.0 * std::f64::consts::PI * 0.25f64.powi(3) / 8.0;
    assert!((fraction / expected - 1.0).abs() < 0.05, "{fraction} vs {expected}");
    assert_eq!(stats["samples"], 262144);
    assert_eq!(stats["empty_scene"], false);
}

#[test]
fn empty_scene_is_flagged_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = stage(
        &cfg,
        &out,
        "build-oracle",
        &["--oracle.source", "scene", "--oracle.threshold", "1e9", "--oracle.resolution", "8"],
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("warning"));
    let stats: serde_json::Value = serde_json::from_slice(&fs::read(out.join("oracle_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["empty_scene"], true);
    assert_eq!(stats["occupied"], 0);
}

#[test]
fn tampered_input_is_refused() {
    let (_d, cfg, out) = copy_of_trained();
    let mut bytes = fs::read(out.join("backbone.nwts")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(out.join("backbone.nwts"), &bytes).unwrap();
    let o = stage(&cfg, &out, "build-oracle", &[]);
    assert_eq!(code(&o), 4, "{}", text(&o));
    assert!(text(&o).contains("backbone.nwts"));
}

#[test]
fn missing_upstream_manifest_is_refused() {
    let (_d, cfg, out) = copy_of_trained();
    fs::remove_file(out.join("manifest-build-oracle.json")).unwrap();
    assert_eq!(code(&stage(&cfg, &out, "train-head", &[])), 4);
}

#[test]
fn corrupt_grid_magic_exits_4() {
    let (_d, cfg, out) = copy_of_trained();
    let mut bytes = fs::read(out.join("density.dgrd")).unwrap();
    bytes[..4].copy_from_slice(b"XGRD");
    fs::write(out.join("density.dgrd"), &bytes).unwrap();
    // Re-record the digest so the format check, not the chain check, rejects it.
    let path = out.join("manifest-build-oracle.json");
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    m["outputs"]["density.dgrd"] = sha(&out.join("density.dgrd")).into();
    fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();

    let o = stage(&cfg, &out, "train-head", &[]);
    assert_eq!(code(&o), 4, "{}", text(&o));
    assert!(text(&o).contains("magic") || text(&o).contains("DGRD"), "{}", text(&o));
}

#[test]
fn held_lock_blocks_a_second_run() {
    let (_d, cfg, out) = copy_of_trained();
    fs::write(out.join(".occunav.lock"), "1\n").unwrap();
    let o = stage(&cfg, &out, "train-head", &[]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains(".occunav.lock"));
}

#[test]
fn exploding_learning_rate_exits_3_with_epoch() {
    let (_d, cfg, out) = copy_of_trained();
    let o = stage(&cfg, &out, "train-head", &["--head.learning_rate", "1e308"]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    assert!(text(&o).contains("epoch"), "{}", text(&o));
}

#[test]
fn train_head_writes_checkpoint_and_report() {
    let out = trained().join("out");
    let report = fs::read_to_string(out.join("train_report.csv")).unwrap();
    assert!(report.starts_with("epoch,train_loss,val_loss,val_accuracy\n"));
    assert_eq!(report.lines().count(), 61);
    let extension_len = 16;
    let bytes = fs::read(out.join("head.nwts")).unwrap();
    assert_eq!(&bytes[..4], b"NWTS");
    assert!(bytes.len() > extension_len);
}

#[test]
fn sweep_writes_one_checkpoint_per_depth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let deep = ["--backbone.depth", "8", "--backbone.steps", "20", "--head.epochs", "5"];
    for s in ["pretrain", "build-oracle"] {
        let o = stage(&cfg, &out, s, &deep);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    let mut args = deep.to_vec();
    args.push("--sweep-depths");
    let o = stage(&cfg, &out, "train-head", &args);
    assert_eq!(code(&o), 0, "{}", text(&o));
    for k in 1..=8 {
        assert!(out.join(format!("head_depth{k}.nwts")).exists());
    }
    assert!(out.join("manifest-train-head-sweep.json").exists());
    assert!(!out.join("manifest-train-head.json").exists());
    let table = fs::read_to_string(out.join("depth_sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "depth,final_accuracy,last100_accuracy");
    assert_eq!(rows.len(), 9);
    assert!(rows[8].starts_with("8,"));
}

#[test]
fn eval_writes_metrics_and_slices() {
    let (_d, cfg, out) = copy_of_trained();
    let o = stage(&cfg, &out, "eval-esdf", &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("0.039") && text(&o).contains("0.175"));
    let metrics = fs::read_to_string(out.join("esdf_metrics.txt")).unwrap();
    for key in ["proposed_mae=", "naive_mae=", "ratio=", "reference_proposed_mae=0.039"] {
        assert!(metrics.contains(key), "{metrics}");
    }
    for img in ["slice_pred.pgm", "slice_truth.pgm", "slice_error.pgm"] {
        let bytes = fs::read(out.join(img)).unwrap();
        let header = b"P5\n16 16\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 256);
    }
    let probes = fs::read_to_string(out.join("probes.csv")).unwrap();
    assert!(probes.starts_with("x,y,z,r,label,lambda,logit\n"));
    assert_eq!(probes.lines().count(), 257);
}

#[test]
fn eval_without_ground_truth_still_emits_the_slice() {
    let dir = tempfile::tempdir().unwrap();
    let grid_cfg = SMALL.replace("preset = \"sphere\"", "grid = \"scene.dgrd\"");
    let cfg = write_config(dir.path(), &grid_cfg);
    let out = dir.path().join("out");

    let grid = occunav::scene::sample_density_grid(
        |p| if p.iter().map(|v| v * v).sum::<f64>() < 0.0625 { 10.0 } else { 0.0 },
        occunav::scene::GridSpec::cube(16).unwrap(),
    )
    .unwrap();
    fs::write(dir.path().join("scene.dgrd"), grid.to_bytes()).unwrap();
    let run = |s: &str, extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_occunav"))
            .current_dir(dir.path())
            .args([s, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .args(extra)
            .output()
            .unwrap()
    };
    for s in ["pretrain", "build-oracle", "train-head"] {
        let o = run(s, &["--oracle.source", "scene"]);
        assert_eq!(code(&o), 0, "{s}: {}", text(&o));
    }
    let o = run("eval-esdf", &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("notice"));
    assert!(out.join("slice_pred.pgm").exists());
    assert!(!out.join("esdf_metrics.txt").exists());
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest-pretrain.json")).unwrap()).unwrap();
    assert_eq!(m["inputs"]["scene.dgrd"], sha(&dir.path().join("scene.dgrd")));
    let loaded = DensityGrid::from_bytes(&fs::read(out.join("density.dgrd")).unwrap()).unwrap();
    assert_eq!(loaded, grid);
}

#[test]
fn plan_start_at_goal_is_a_single_record() {
    let (_d, cfg, out) = copy_of_trained();
    let o = stage(
        &cfg,
        &out,
        "plan",
        &["--planner.start", "[0.6, 0.6, 0.0]", "--planner.goal", "[0.6, 0.6, 0.0]"],
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,t,x,y,z,vx,vy,vz,ax,ay,az,dist");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "# reason=goal_reached");
    let audit = fs::read_to_string(out.join("audit.txt")).unwrap();
    assert!(audit.contains("success=true"), "{audit}");
    assert!(audit.contains("forward_passes=1\nbackward_passes=1\n"), "{audit}");
}

#[test]
fn diverged_plan_is_a_result() {
    let (_d, cfg, out) = copy_of_trained();
    let o = stage(&cfg, &out, "plan", &["--planner.dt", "50"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.ends_with("# reason=diverged\n"), "{csv}");
    assert!(fs::read_to_string(out.join("audit.txt")).unwrap().contains("reason=diverged"));
}

#[test]
fn analytic_field_flag_needs_no_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = stage(&cfg, &out, "plan", &["--field", "analytic"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let audit = fs::read_to_string(out.join("audit.txt")).unwrap();
    assert!(audit.contains("field=analytic"));
    assert!(audit.contains("reason=goal_reached"), "{audit}");
    assert!(audit.contains("success=true"), "{audit}");
    let overlay = fs::read(out.join("plan_overlay.pgm")).unwrap();
    assert!(overlay.starts_with(b"P5\n16 16\n255\n"));
    assert!(overlay[13..].contains(&0));
}

#[test]
fn head_field_plan_counts_one_query_per_record() {
    let (_d, cfg, out) = copy_of_trained();
    let o = stage(&cfg, &out, "plan", &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let records = csv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let audit = fs::read_to_string(out.join("audit.txt")).unwrap();
    assert!(audit.contains(&format!("forward_passes={records}\nbackward_passes={records}\n")), "{audit}");
    assert!(audit.contains("field=head"));
}
