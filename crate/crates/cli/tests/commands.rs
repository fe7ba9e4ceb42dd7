use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use histopattern::synth::{expected_slide_label, SyntheticRegion, SyntheticSpec};
use histopattern::{AggregationConfig, HistologicPattern, SlideLabel, TilerConfig};
use image::{Rgb, RgbImage};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_histopattern");

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn blank_png(dir: &Path, name: &str, w: u32, h: u32) -> PathBuf {
    let path = dir.join(name);
    RgbImage::from_pixel(w, h, Rgb([120, 60, 140])).save(&path).unwrap();
    path
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn region(x: u32, y: u32, width: u32, height: u32, label: HistologicPattern) -> SyntheticRegion {
    SyntheticRegion {
        x,
        y,
        width,
        height,
        label,
    }
}

fn two_region_spec() -> SyntheticSpec {
    SyntheticSpec {
        width: 1000,
        height: 448,
        regions: vec![
            region(0, 0, 700, 448, HistologicPattern::Papillary),
            region(700, 0, 300, 448, HistologicPattern::Micropapillary),
        ],
        seed: 9,
    }
}

/// Synthesizes `name` from `spec` via the CLI and returns a manifest for it.
fn synth_slide(dir: &Path, name: &str, spec: &SyntheticSpec) -> PathBuf {
    let spec_path = write(dir, &format!("{name}.spec.json"), &serde_json::to_string(spec).unwrap());
    let out = run_in(
        dir,
        &[
            "synth",
            "--spec",
            spec_path.to_str().unwrap(),
            "--name",
            name,
            "--output",
            "slides",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    write(
        dir,
        "manifest.csv",
        &format!("slide_id,path\n{name},slides/{name}.png\n"),
    )
}

fn read_labels(path: &Path) -> std::collections::BTreeMap<String, SlideLabel> {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn tile_counts_rows() {
    let dir = TempDir::new().unwrap();
    blank_png(dir.path(), "a.png", 224, 224);
    blank_png(dir.path(), "b.png", 403, 224);
    write(dir.path(), "m.csv", "slide_id,path\na,a.png\nb,b.png\n");
    let out = run_in(dir.path(), &["tile", "--manifest", "m.csv", "--output", "out"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = |id: &str| {
        fs::read_to_string(dir.path().join(format!("out/{id}.patches.csv")))
            .unwrap()
            .lines()
            .count()
            - 1
    };
    assert_eq!(rows("a"), 1);
    assert_eq!(rows("b"), 2);
}

#[test]
fn tile_missing_slide_is_unreadable() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "m.csv", "slide_id,path\na,missing.png\n");
    let out = run_in(dir.path(), &["tile", "--manifest", "m.csv", "--output", "out"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("missing.png"));
    assert!(!dir.path().join("out/a.patches.csv").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run_in(dir.path(), &["frobnicate"])), 3);
    assert_eq!(code(&run_in(dir.path(), &["--help"])), 0);
}

#[test]
fn infer_recovers_synthetic_label() {
    let dir = TempDir::new().unwrap();
    let spec = two_region_spec();
    synth_slide(dir.path(), "syn", &spec);
    let out = run_in(dir.path(), &["infer", "--manifest", "manifest.csv", "--output", "inf"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let labels = read_labels(&dir.path().join("inf/slide_labels.json"));
    let expected = expected_slide_label(&spec, &TilerConfig::default(), &AggregationConfig::default()).unwrap();
    assert_eq!(labels["syn"], expected);
    assert_eq!(expected.predominant(), Some(HistologicPattern::Papillary));
    let written: SlideLabel =
        serde_json::from_slice(&fs::read(dir.path().join("slides/syn.expected_label.json")).unwrap()).unwrap();
    assert_eq!(written, expected);
    for f in ["syn.predictions.csv", "baseline_labels.json", "inference_summary.json"] {
        assert!(dir.path().join("inf").join(f).exists(), "{f}");
    }
}

#[test]
fn thresholds_missing_a_class_name_it() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    write(
        dir.path(),
        "tau.json",
        r#"{"lepidic":0.1,"acinar":0.1,"papillary":0.1,"micropapillary":0.1,"benign":0.1}"#,
    );
    let out = run_in(
        dir.path(),
        &["infer", "--manifest", "manifest.csv", "--thresholds", "tau.json"],
    );
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("solid"), "{}", stderr(&out));
}

#[test]
fn infer_is_deterministic_across_parallelism_and_batching() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    write(
        dir.path(),
        "noisy.json",
        r#"{"classifier":{"kind":"oracle","noise_rate":0.3,"seed":4,"batch_size":7}}"#,
    );
    write(
        dir.path(),
        "noisy_big.json",
        r#"{"classifier":{"kind":"oracle","noise_rate":0.3,"seed":4,"batch_size":500}}"#,
    );
    let runs = [
        ("noisy.json", "1", "r1"),
        ("noisy.json", "1", "r2"),
        ("noisy.json", "4", "r3"),
        ("noisy_big.json", "2", "r4"),
    ];
    for (config, threads, out_dir) in runs {
        let out = run_in(
            dir.path(),
            &[
                "--config",
                config,
                "--parallelism",
                threads,
                "infer",
                "--manifest",
                "manifest.csv",
                "--output",
                out_dir,
            ],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for file in ["syn.predictions.csv", "slide_labels.json", "inference_summary.json"] {
        let first = fs::read(dir.path().join("r1").join(file)).unwrap();
        for other in ["r2", "r3", "r4"] {
            assert_eq!(
                first,
                fs::read(dir.path().join(other).join(file)).unwrap(),
                "{other}/{file}"
            );
        }
    }
}

#[test]
fn calibrate_requires_reference_labels() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    write(
        dir.path(),
        "refs.json",
        r#"{"other":{"predominant":"solid","minors":[]}}"#,
    );
    let out = run_in(
        dir.path(),
        &["calibrate", "--manifest", "manifest.csv", "--labels", "refs.json"],
    );
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("syn"));
}

#[test]
fn calibrate_writes_thresholds_and_trace_deterministically() {
    let dir = TempDir::new().unwrap();
    let spec = two_region_spec();
    synth_slide(dir.path(), "syn", &spec);
    let expected = expected_slide_label(&spec, &TilerConfig::default(), &AggregationConfig::default()).unwrap();
    write(
        dir.path(),
        "refs.json",
        &serde_json::to_string(&std::collections::BTreeMap::from([("syn", expected)])).unwrap(),
    );
    for out_dir in ["c1", "c2"] {
        let out = run_in(
            dir.path(),
            &[
                "calibrate",
                "--manifest",
                "manifest.csv",
                "--labels",
                "refs.json",
                "--output",
                out_dir,
                "--seed",
                "5",
            ],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for file in ["thresholds.json", "calibration_trace.csv"] {
        assert_eq!(
            fs::read(dir.path().join("c1").join(file)).unwrap(),
            fs::read(dir.path().join("c2").join(file)).unwrap()
        );
    }
    let trace = fs::read_to_string(dir.path().join("c1/calibration_trace.csv")).unwrap();
    // 2 passes x 6 classes x 20 grid values
    assert_eq!(trace.lines().count(), 1 + 2 * 6 * 20);
    let out = run_in(
        dir.path(),
        &[
            "infer",
            "--manifest",
            "manifest.csv",
            "--thresholds",
            "c1/thresholds.json",
            "--output",
            "inf",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const P1: &str = r#"{"s1":{"predominant":"acinar","minors":["solid"]},"s2":{"predominant":"solid","minors":[]},"s3":{"predominant":"lepidic","minors":[]}}"#;
const P2: &str = r#"{"s1":{"predominant":"acinar","minors":[]},"s2":{"predominant":"solid","minors":[]},"s3":{"predominant":"acinar","minors":["lepidic"]}}"#;

#[test]
fn evaluate_writes_report_files() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "p1.json", P1);
    write(dir.path(), "p2.json", P2);
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--labels",
            "p1.json",
            "p2.json",
            "--names",
            "alice,bob",
            "--output",
            "ev",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ev/agreement_report.json")).unwrap()).unwrap();
    assert_eq!(report["n_slides"], 3);
    assert_eq!(report["annotators"], serde_json::json!(["alice", "bob"]));
    let csv = fs::read_to_string(dir.path().join("ev/per_class_kappa.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
    assert!(fs::read_to_string(dir.path().join("ev/agreement_table.txt"))
        .unwrap()
        .contains("alice"));
}

#[test]
fn evaluate_rejects_mismatched_slide_sets() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "p1.json", P1);
    write(dir.path(), "p2.json", r#"{"s1":{"predominant":"acinar","minors":[]}}"#);
    let out = run_in(dir.path(), &["evaluate", "--labels", "p1.json", "p2.json"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("s2"));
}

#[test]
fn evaluate_patch_metrics_from_ground_truth() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["infer", "--manifest", "manifest.csv", "--output", "inf"]
        )),
        0
    );
    write(dir.path(), "p1.json", P1);
    write(dir.path(), "p2.json", P2);
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--labels",
            "p1.json",
            "p2.json",
            "--predictions",
            "inf/syn.predictions.csv",
            "--ground-truth",
            "slides/syn.ground_truth.csv",
            "--output",
            "ev",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("ev/patch_metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["classes"]["papillary"]["f1"]["value"], 1.0);
    assert_eq!(metrics["classes"]["papillary"]["auc"], 1.0);
    assert!(metrics["classes"]["lepidic"]["recall"].is_null());
    assert!(dir.path().join("ev/roc_micropapillary.csv").exists());
}

#[test]
fn visualize_draws_dots_and_rejects_out_of_bounds() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["infer", "--manifest", "manifest.csv", "--output", "inf"]
        )),
        0
    );
    let out = run_in(
        dir.path(),
        &[
            "visualize",
            "--slide",
            "slides/syn.png",
            "--predictions",
            "inf/syn.predictions.csv",
            "--output",
            "viz",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dots: Vec<serde_json::Value> =
        serde_json::from_slice(&fs::read(dir.path().join("viz/syn.dots.json")).unwrap()).unwrap();
    let n_preds = fs::read_to_string(dir.path().join("inf/syn.predictions.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(dots.len(), n_preds);
    let overlay = image::open(dir.path().join("viz/syn.overlay.png")).unwrap();
    assert_eq!(overlay.width(), 250);

    let header = fs::read_to_string(dir.path().join("inf/syn.predictions.csv")).unwrap();
    let header = header.lines().next().unwrap();
    // a window starting at x=5000 lies far outside the 1000px slide
    let row = "syn,5000,0,0.5,0.1,0.1,0.1,0.1,0.1";
    write(dir.path(), "bad.csv", &format!("{header}\n{row}\n"));
    let out = run_in(
        dir.path(),
        &["visualize", "--slide", "slides/syn.png", "--predictions", "bad.csv"],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    write(dir.path(), "empty.csv", &format!("{header}\n"));
    let out = run_in(
        dir.path(),
        &[
            "visualize",
            "--slide",
            "slides/syn.png",
            "--predictions",
            "empty.csv",
            "--output",
            "viz2",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(dir.path().join("viz2/syn.dots.json"))
            .unwrap()
            .trim(),
        "[]"
    );
}

#[test]
fn synth_rejects_regions_outside_the_slide() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "bad.json",
        r#"{"width":100,"height":100,"regions":[{"x":50,"y":0,"width":60,"height":10,"label":"solid"}]}"#,
    );
    assert_eq!(code(&run_in(dir.path(), &["synth", "--spec", "bad.json"])), 3);
}

#[test]
fn stats_over_annotated_crops() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    write(
        dir.path(),
        "ann.csv",
        "slide_id,x,y,width,height,label\nsyn,0,0,700,448,papillary\nsyn,700,0,300,448,micropapillary\n",
    );
    let out = run_in(
        dir.path(),
        &[
            "stats",
            "--annotations",
            "ann.csv",
            "--manifest",
            "manifest.csv",
            "--per-class",
            "4",
            "--output",
            "st",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stats: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("st/channel_stats.json")).unwrap()).unwrap();
    assert_eq!(stats["mean"].as_array().unwrap().len(), 3);
    let manifest = fs::read_to_string(dir.path().join("st/training_manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 2 * 4);

    write(
        dir.path(),
        "outside.csv",
        "slide_id,x,y,width,height,label\nsyn,900,0,300,448,solid\n",
    );
    let out = run_in(
        dir.path(),
        &["stats", "--annotations", "outside.csv", "--manifest", "manifest.csv"],
    );
    assert_eq!(code(&out), 3);
}

fn python_worker(dir: &Path, name: &str, body: &str) -> String {
    let script = write(dir, name, body);
    let config = serde_json::json!({
        "classifier": {"kind": "worker", "command": ["python3", script], "batch_size": 4, "timeout_secs": 30}
    });
    write(dir, &format!("{name}.json"), &config.to_string());
    format!("{name}.json")
}

fn infer_with(dir: &Path, config: &str) -> Output {
    run_in(
        dir,
        &[
            "--config",
            config,
            "infer",
            "--manifest",
            "manifest.csv",
            "--output",
            "w",
        ],
    )
}

#[test]
fn worker_with_five_probabilities_is_a_protocol_error() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    let config = python_worker(
        dir.path(),
        "five.py",
        r#"import sys, json
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "probs": [0.2] * 5}), flush=True)
"#,
    );
    let out = infer_with(dir.path(), &config);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("expected 6"));
}

#[test]
fn worker_with_wrong_id_is_a_protocol_error() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    let config = python_worker(
        dir.path(),
        "badid.py",
        r#"import sys, json
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"] + 1, "probs": [0.5, 0.1, 0.1, 0.1, 0.1, 0.1]}), flush=True)
"#,
    );
    let out = infer_with(dir.path(), &config);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn worker_replies_may_arrive_out_of_order() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    // answers whatever has arrived in reverse, so each batch comes back reordered
    let config = python_worker(
        dir.path(),
        "reverse.py",
        r#"import sys, json, select
pending = []
while True:
    ready, _, _ = select.select([sys.stdin], [], [], 0.05)
    if ready:
        line = sys.stdin.readline()
        if not line:
            break
        pending.append(json.loads(line)["id"])
        continue
    for i in reversed(pending):
        probs = [0.05] * 6
        probs[i % 6] = 0.75
        print(json.dumps({"id": i, "probs": probs}))
    sys.stdout.flush()
    pending = []
"#,
    );
    let out = infer_with(dir.path(), &config);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let preds = fs::read_to_string(dir.path().join("w/syn.predictions.csv")).unwrap();
    let base = histopattern::inference::slide_draw_base("syn");
    for (k, line) in preds.lines().skip(1).enumerate() {
        let probs: Vec<f64> = line.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        let top = probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(top as u64, base.wrapping_add(k as u64) % 6, "row {k}");
    }
}

#[test]
fn builtin_worker_matches_in_process_oracle() {
    let dir = TempDir::new().unwrap();
    synth_slide(dir.path(), "syn", &two_region_spec());
    let config = serde_json::json!({
        "classifier": {"kind": "worker", "command": [BIN, "oracle-worker"], "batch_size": 5, "processes": 2}
    });
    write(dir.path(), "w.json", &config.to_string());
    let out = run_in(
        dir.path(),
        &[
            "--config",
            "w.json",
            "--parallelism",
            "3",
            "infer",
            "--manifest",
            "manifest.csv",
            "--output",
            "w",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        code(&run_in(
            dir.path(),
            &["infer", "--manifest", "manifest.csv", "--output", "o"]
        )),
        0
    );
    assert_eq!(
        fs::read(dir.path().join("w/syn.predictions.csv")).unwrap(),
        fs::read(dir.path().join("o/syn.predictions.csv")).unwrap()
    );
}
