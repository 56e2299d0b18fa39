use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[run]
out_dir = "out"

[data]
scenes = 10

[train]
steps = 4
batch_size = 2

[ablation]
seeds = [0]
steps = 2

[timing]
size = 64
warmup = 1
runs = 2
"#;

fn mpers(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpers"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.toml"))
        .output()
        .expect("run mpers")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mpers(dir, args);
    assert!(
        out.status.success(),
        "mpers {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn full_workflow_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();

    assert!(ok(dir, &["gen-data"]).contains("10 scenes (8 train, 2 eval)"));
    let manifest = read(dir, "data/manifest.jsonl");
    assert_eq!(manifest.lines().count(), 10);
    let entry: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    for k in ["seed", "split", "image", "labels", "class_counts", "class_proportions", "relations"] {
        assert!(entry.get(k).is_some(), "manifest lacks {k}");
    }

    assert!(ok(dir, &["caption"]).contains("acceptance rate 1.000"));
    assert_eq!(read(dir, "captions/transcript.jsonl").lines().count(), 30);

    ok(dir, &["train"]);
    let loss = read(dir, "train/loss.csv");
    assert_eq!(loss.lines().next(), Some("step,lr,loss"));
    assert_eq!(loss.lines().count(), 5);
    assert!(dir.join("out/train/checkpoint.mpck").is_file());

    let table = ok(dir, &["eval"]);
    assert!(table.contains("IoU(%)") && table.contains("OA"));
    let metrics: serde_json::Value = serde_json::from_str(&read(dir, "eval/metrics.json")).unwrap();
    assert_eq!(metrics["split"], "eval");
    assert_eq!(metrics["classes"].as_array().unwrap().len(), 5);
    let guidance = read(dir, "eval/guidance.jsonl");
    let first: serde_json::Value = serde_json::from_str(guidance.lines().next().unwrap()).unwrap();
    assert!(first["weights"].as_array().unwrap().iter().all(|w| {
        let w = w.as_f64().unwrap();
        w > 0.0 && w < 1.0
    }));
    assert_eq!(read(dir, "eval/gates.jsonl").lines().count(), 2);

    let ablation = ok(dir, &["ablate"]);
    for name in ["baseline", "+detail", "+guidance", "+experts"] {
        assert!(ablation.contains(name), "{ablation}");
    }
    let a: serde_json::Value = serde_json::from_str(&read(dir, "ablation/ablation.json")).unwrap();
    let counts: Vec<u64> = a["rows"].as_array().unwrap().iter().map(|r| r["parameters"].as_u64().unwrap()).collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");

    assert!(ok(dir, &["time"]).contains("64x64"));
    let timing: serde_json::Value = serde_json::from_str(&read(dir, "timing/timing.json")).unwrap();
    assert!(timing["median_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn existing_outputs_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(dir, &["gen-data"]);
    let before = read(dir, "data/manifest.jsonl");
    let refused = mpers(dir, &["gen-data"]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    ok(dir, &["gen-data", "--force"]);
    assert_eq!(read(dir, "data/manifest.jsonl"), before);
    ok(dir, &["gen-data", "--force", "--seed", "7"]);
    assert_ne!(read(dir, "data/manifest.jsonl"), before);
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for bad in [
        "[model]\nuse_lqga = false\nuse_dmte = true\n",
        "[data]\ntrain_fraction = 1.0\n",
        "[timing]\nruns = 0\n",
        "[bogus]\nx = 1\n",
    ] {
        std::fs::write(dir.join("run.toml"), bad).unwrap();
        let out = mpers(dir, &["gen-data"]);
        assert!(!out.status.success(), "accepted {bad:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn training_requires_a_transcript_when_text_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(dir, &["gen-data"]);
    let out = mpers(dir, &["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("transcript.jsonl"));
}
