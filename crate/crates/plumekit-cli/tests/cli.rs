//! End-to-end tests of the `plumekit` binary: exit codes, config precedence,
//! and byte-level determinism of the pipeline outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plumekit"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn plumekit");
    assert!(
        out.status.success(),
        "plumekit {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Small scene that still produces a confident detection at tau 0.6.
const TEST_CONFIG: &str = r#"
seed = 11

[synth]
width = 256
height = 256
noise_std_ppb = 25.0
n_plumes = 1
emission_rate_range_tph = [2.5, 4.0]
spread_a = 2.5
seed = 11

[window]
size = 128
overlap = 0.5

[oracle_k]
k = 2.0

[postproc]
tau = 0.6
"#;

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    config: PathBuf,
    scene: PathBuf,
    labels: PathBuf,
    detections: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, TEST_CONFIG).unwrap();
    let out_dir = dir.path().join("synth");
    run_ok(&[
        "--config",
        config.to_str().unwrap(),
        "synth",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let scene = out_dir.join("scene.sgrid");
    let labels = out_dir.join("labels.json");
    let detections = dir.path().join("detections.json");
    run_ok(&[
        "--config",
        config.to_str().unwrap(),
        "run",
        "--scene",
        scene.to_str().unwrap(),
        "--out",
        detections.to_str().unwrap(),
    ]);
    Fixture { dir, config, scene, labels, detections }
}

#[test]
fn version_prints_toolkit_and_schema_versions() {
    let out = run_ok(&["--version"]);
    let text = stdout_of(&out);
    assert!(text.contains(env!("CARGO_PKG_VERSION")), "{text}");
    assert!(text.contains("schema 1"), "{text}");
}

#[test]
fn missing_scene_file_exits_1_and_names_the_path() {
    let out = bin()
        .args(["run", "--scene", "/no/such/scene.sgrid", "--out", "/tmp/unused.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/no/such/scene.sgrid"), "stderr: {err}");
}

#[test]
fn conflicting_size_floor_and_qnd_model_is_usage_error() {
    let out = bin()
        .args([
            "postprocess",
            "--size-floor",
            "1500",
            "--qnd-model",
            "model.json",
            "--in",
            "d.json",
            "--scene",
            "s.sgrid",
            "--out",
            "o.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "expected usage error");
}

#[test]
fn unknown_mode_is_usage_error() {
    let out = bin()
        .args([
            "postprocess",
            "--mode",
            "extreme",
            "--in",
            "d.json",
            "--scene",
            "s.sgrid",
            "--out",
            "o.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn postprocess_stdout(f: &Fixture, config: Option<&Path>, extra: &[&str]) -> String {
    let out_path = f.dir.path().join("post_out.json");
    let mut args: Vec<String> = Vec::new();
    if let Some(c) = config {
        args.push("--config".into());
        args.push(c.to_str().unwrap().into());
    }
    args.extend(
        [
            "postprocess",
            "--in",
            f.detections.to_str().unwrap(),
            "--scene",
            f.scene.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]
        .map(String::from),
    );
    args.extend(extra.iter().map(|s| s.to_string()));
    let arg_refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    stdout_of(&run_ok(&arg_refs))
}

#[test]
fn config_precedence_flag_over_file_over_default() {
    let f = fixture();

    // tau: built-in default
    let text = postprocess_stdout(&f, None, &[]);
    assert!(text.contains("tau=0.8"), "{text}");
    // tau: config file overrides default
    let text = postprocess_stdout(&f, Some(&f.config), &[]);
    assert!(text.contains("tau=0.6"), "{text}");
    // tau: flag overrides config file
    let text = postprocess_stdout(&f, Some(&f.config), &["--tau", "0.9"]);
    assert!(text.contains("tau=0.9"), "{text}");

    // delta: default, then flag
    let text = postprocess_stdout(&f, Some(&f.config), &[]);
    assert!(text.contains("delta=0.2"), "{text}");
    let text = postprocess_stdout(&f, Some(&f.config), &["--delta", "0.35"]);
    assert!(text.contains("delta=0.35"), "{text}");

    // window size: config file, then flag
    let dets2 = f.dir.path().join("d2.json");
    let out = run_ok(&[
        "--config",
        f.config.to_str().unwrap(),
        "run",
        "--scene",
        f.scene.to_str().unwrap(),
        "--out",
        dets2.to_str().unwrap(),
    ]);
    assert!(stdout_of(&out).contains("window 128"), "{}", stdout_of(&out));
    let out = run_ok(&[
        "--config",
        f.config.to_str().unwrap(),
        "run",
        "--scene",
        f.scene.to_str().unwrap(),
        "--patch-size",
        "64",
        "--out",
        dets2.to_str().unwrap(),
    ]);
    assert!(stdout_of(&out).contains("window 64"), "{}", stdout_of(&out));

    // synth seed: config file, then flag
    let synth_dir = f.dir.path().join("synth2");
    let out = run_ok(&[
        "--config",
        f.config.to_str().unwrap(),
        "synth",
        "--out",
        synth_dir.to_str().unwrap(),
    ]);
    assert!(stdout_of(&out).contains("seed 11"), "{}", stdout_of(&out));
    let out = run_ok(&[
        "--config",
        f.config.to_str().unwrap(),
        "synth",
        "--seed",
        "99",
        "--out",
        synth_dir.to_str().unwrap(),
    ]);
    assert!(stdout_of(&out).contains("seed 99"), "{}", stdout_of(&out));

    // eval theta: default, then flag
    let report = f.dir.path().join("report.json");
    let out = run_ok(&[
        "eval",
        "--pred",
        f.detections.to_str().unwrap(),
        "--truth",
        f.labels.to_str().unwrap(),
        "--scene",
        f.scene.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(stdout_of(&out).contains("theta=0.1"), "{}", stdout_of(&out));
    let out = run_ok(&[
        "eval",
        "--pred",
        f.detections.to_str().unwrap(),
        "--truth",
        f.labels.to_str().unwrap(),
        "--scene",
        f.scene.to_str().unwrap(),
        "--theta",
        "0.3",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(stdout_of(&out).contains("theta=0.3"), "{}", stdout_of(&out));
}

#[test]
fn probmap_writes_pgrid_and_png() {
    let f = fixture();
    let pgrid = f.dir.path().join("p.pgrid");
    let png = f.dir.path().join("p.png");
    run_ok(&[
        "probmap",
        "--in",
        f.detections.to_str().unwrap(),
        "--scene",
        f.scene.to_str().unwrap(),
        "--out",
        pgrid.to_str().unwrap(),
        "--png",
        png.to_str().unwrap(),
    ]);
    assert!(pgrid.exists());
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");
}

#[test]
fn sweep_writes_csv_with_expected_header() {
    let f = fixture();
    let csv_path = f.dir.path().join("sweep.csv");
    run_ok(&[
        "--config",
        f.config.to_str().unwrap(),
        "sweep",
        "--param",
        "tau",
        "--grid",
        "0.5:0.9:0.1",
        "--in",
        f.detections.to_str().unwrap(),
        "--truth",
        f.labels.to_str().unwrap(),
        "--scene",
        f.scene.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("param,value,TP,FP,FN,precision,recall,f1,map\n"), "{text}");
    assert_eq!(text.lines().count(), 6, "{text}");
}

#[test]
fn acceptance_10_pipeline_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, TEST_CONFIG).unwrap();
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        run_ok(&[
            "--config",
            config.to_str().unwrap(),
            "pipeline",
            "--mode",
            "high-sensitivity",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("json") | Some("csv")
                )
            })
            .collect();
        files.sort();
        assert!(files.len() >= 4, "expected JSON/CSV outputs, got {files:?}");
        let digest: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(p).unwrap(),
                )
            })
            .collect();
        digests.push(digest);
    }
    assert_eq!(
        digests[0].iter().map(|(n, _)| n).collect::<Vec<_>>(),
        digests[1].iter().map(|(n, _)| n).collect::<Vec<_>>()
    );
    for ((name, a), (_, b)) in digests[0].iter().zip(&digests[1]) {
        assert_eq!(a, b, "{name} differs between runs");
    }
    println!("ACCEPTANCE 10 determinism: PASS");
}

#[test]
fn qnd_train_and_classify_round_trip() {
    let f = fixture();
    // separable synthetic features: first column carries the class
    let mut csv = String::from(
        "contrast,z_score,intensity,qnd_ch4_p50,qnd_alb_p50,qnd_alb_p90,\
         ch4_crit_min,ch4_crit_max,alb_crit_min,alb_crit_max,ch4_max_d,alb_max_d,label\n",
    );
    for i in 0..40 {
        let x = i as f64 * 0.01;
        csv.push_str(&format!("{},0,0,0,0,0,0,0,0,0,0,0,plume\n", 5.0 + x));
        csv.push_str(&format!("{},0,0,0,0,0,0,0,0,0,0,0,artifact\n", 1.0 + x));
    }
    let csv_path = f.dir.path().join("features.csv");
    std::fs::write(&csv_path, csv).unwrap();
    let model_path = f.dir.path().join("model.json");
    let out = run_ok(&[
        "qnd-train",
        "--features",
        csv_path.to_str().unwrap(),
        "--out",
        model_path.to_str().unwrap(),
        "--seed",
        "7",
        "--trees",
        "50",
    ]);
    assert!(stdout_of(&out).contains("OOB accuracy"), "{}", stdout_of(&out));

    let report = f.dir.path().join("classes.json");
    run_ok(&[
        "qnd-classify",
        "--model",
        model_path.to_str().unwrap(),
        "--in",
        f.detections.to_str().unwrap(),
        "--scene",
        f.scene.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(!rows.as_array().unwrap().is_empty());
    for row in rows.as_array().unwrap() {
        let class = row["class"].as_str().unwrap();
        assert!(matches!(class, "plume" | "artifact" | "no-core"), "{class}");
    }
}
