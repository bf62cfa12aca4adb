use std::path::Path;
use std::process::{Command, Output};

use motion_vae::motion::read_sequence;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motion-vae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small dataset and a one-epoch checkpoint of a narrow model.
fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let synth_cfg = dir.join("synth.json");
    std::fs::write(&synth_cfg, r#"{"num_sequences": 6, "pose_dim": 6, "joints": 2}"#).unwrap();
    let out = cli(&["synth-data", "--config", p(&synth_cfg), "--seed", "3", "--out", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let train_cfg = dir.join("train.json");
    std::fs::write(
        &train_cfg,
        r#"{"model": {"skeleton": {"joints": 2, "pose_dim": 6, "fps": 30.0}, "latent_dim": 4, "action_embed_dim": 4,
            "encoder": {"model_dim": 8, "heads": 2, "ffn_dim": 8, "layers": 1},
            "decoder": {"model_dim": 8, "heads": 2, "ffn_dim": 8, "layers": 1}},
            "train": {"epochs": 1, "batch_size": 3}}"#,
    )
    .unwrap();
    let model = dir.join("model.json");
    let out = cli(&["train", "--data", p(&data), "--config", p(&train_cfg), "--seed", "1", "--out", p(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (data, model)
}

#[test]
fn generate_writes_the_requested_frames_and_script() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = fixture(dir.path());
    let s1 = dir.path().join("s.json");
    let out = cli(&["generate", "--model", p(&model), "--actions", "2,0,3", "--frames", "120", "--seed", "7", "--out", p(&s1)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let seq = read_sequence(&s1).unwrap();
    assert_eq!(seq.len(), 120);
    assert_eq!(seq.script.labels(), vec![2, 0, 3]);
    assert!(dir.path().join("s.json.manifest.json").exists());

    let s2 = dir.path().join("s2.json");
    cli(&["generate", "--model", p(&model), "--actions", "2,0,3", "--frames", "120", "--seed", "7", "--out", p(&s2)]);
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
}

#[test]
fn invalid_label_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = fixture(dir.path());
    let out = cli(&["generate", "--model", p(&model), "--actions", "99", "--frames", "10", "--out", p(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("99"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = cli(&["train", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn plot_data_reports_missing_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.json");
    std::fs::write(
        &results,
        r#"[{"frames": 60, "actions": 2, "report": {"metrics": [{"metric": "accuracy", "value": 0.5, "stderr": 0.1}]}}]"#,
    )
    .unwrap();
    let csv = dir.path().join("c.csv");
    let ok = cli(&["plot-data", "--results", p(&results), "--metrics", "accuracy", "--out", p(&csv)]);
    assert!(ok.status.success());
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "x,metric,value,stderr\n60,accuracy,0.5,0.1\n");
    let missing = cli(&["plot-data", "--results", p(&results), "--metrics", "fid", "--out", p(&csv)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("fid"));
}

#[test]
fn gradcheck_command_passes_on_a_small_model() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let cfg = dir.path().join("gc.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"skeleton": {"joints": 2, "pose_dim": 6, "fps": 30.0}, "latent_dim": 4, "action_embed_dim": 4,
            "encoder": {"model_dim": 8, "heads": 2, "ffn_dim": 8, "layers": 1},
            "decoder": {"model_dim": 8, "heads": 2, "ffn_dim": 8, "layers": 1}}, "coordinates": 20}"#,
    )
    .unwrap();
    let out = cli(&["gradcheck", "--data", p(&data), "--config", p(&cfg), "--variant", "no-lba", "--out", p(&dir.path().join("gc_report.json"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
