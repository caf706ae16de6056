use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
seed = 3
deterministic = true
log_every = 10

[generate]
generator = "oscillator"
gaussians = 40
train_frames = 16
test_frames = 6
width = 32
height = 32

[stage1]
iterations = 60
warmup = 20
num_gaussians = 150
prune_every = 0

[stage2]
phase1 = 20
phase2 = 10
k_init = 8
n_max = 16
increase_every = 10

[stage3]
iterations = 40
steps = 12

[stage3.arch]
window = 3
width = 8
layers = 1
"#;

fn splatcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatcast"))
        .current_dir(dir)
        .args(["--config", "run.toml", "--data", "data", "--run", "run"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<Value> {
    let out = splatcast(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    records(&out)
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("each stdout line is a JSON record"))
        .collect()
}

fn of_kind<'a>(recs: &'a [Value], kind: &str) -> Vec<&'a Value> {
    recs.iter().filter(|r| r["kind"] == kind).collect()
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), SMALL).unwrap();

    ok(dir, &["generate"]);
    assert!(dir.join("data/transforms_train.json").exists());
    assert!(dir.join("data/ground_truth.json").exists());

    let r1 = ok(dir, &["train1", "--future-split"]);
    assert_eq!(of_kind(&r1, "step").len(), 6);
    assert_eq!(of_kind(&r1, "run")[0]["iterations"]["stage1"], 60);
    ok(dir, &["train2", "--future-split"]);
    ok(dir, &["train3", "--future-split"]);
    assert!(dir.join("run/stage3.tracks.txt").exists());

    let ev = ok(
        dir,
        &["eval", "--future-split", "--compare", "freeze,stage1"],
    );
    let frames = of_kind(&ev, "frame");
    let methods: Vec<&str> = of_kind(&ev, "summary")
        .iter()
        .map(|s| s["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["stage3", "freeze", "stage1-extrapolate"]);
    for m in &methods {
        let rows: Vec<_> = frames.iter().filter(|f| f["method"] == *m).collect();
        let ts: Vec<f64> = rows.iter().map(|f| f["t"].as_f64().unwrap()).collect();
        assert!(ts.iter().all(|&t| t >= 0.8));
        let first: Vec<f64> = frames
            .iter()
            .filter(|f| f["method"] == "stage3")
            .map(|f| f["t"].as_f64().unwrap())
            .collect();
        assert_eq!(ts, first, "baselines cover the identical frame set");
    }

    let pr = ok(dir, &["predict", "--horizon", "0.2", "--frames", "4"]);
    assert_eq!(of_kind(&pr, "output").len(), 6);
    let tracks = std::fs::read_to_string(dir.join("run/predict/tracks.txt")).unwrap();
    assert!(tracks.starts_with("step id x y z\n"));
}

#[test]
fn deterministic_runs_are_idempotent_and_horizon_zero_is_the_last_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), SMALL).unwrap();
    ok(dir, &["generate"]);
    ok(dir, &["train1", "--future-split"]);
    let a = std::fs::read(dir.join("run/stage1.ckp")).unwrap();
    ok(dir, &["train1", "--future-split"]);
    assert_eq!(a, std::fs::read(dir.join("run/stage1.ckp")).unwrap());

    ok(dir, &["train2", "--future-split"]);
    ok(dir, &["train3", "--future-split"]);
    let pr = ok(dir, &["predict", "--horizon", "0", "--camera", "1"]);
    let t_last = of_kind(&pr, "output")[0]["t"].as_f64().unwrap();
    ok(
        dir,
        &[
            "render",
            "--time",
            &format!("{t_last:?}"),
            "--out",
            "run/last",
        ],
    );
    let predicted = std::fs::read(dir.join("run/predict/predict_000.png")).unwrap();
    let rendered = std::fs::read(dir.join("run/last/frame_001.png")).unwrap();
    assert_eq!(predicted, rendered);
}

#[test]
fn errors_exit_nonzero_with_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), "[stage1]\niteratons = 3\n").unwrap();
    let out = splatcast(dir, &["generate"]);
    assert!(!out.status.success());
    let recs = records(&out);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["kind"], "error");
    assert!(recs[0]["message"].as_str().unwrap().contains("iteratons"));

    std::fs::write(dir.join("run.toml"), "").unwrap();
    let out = splatcast(dir, &["eval", "--checkpoint", "run/missing.ckp"]);
    assert!(!out.status.success());
    assert!(records(&out)[0]["message"]
        .as_str()
        .unwrap()
        .contains("run/missing.ckp"));
}
