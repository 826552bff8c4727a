use std::path::Path;
use std::process::{Command, Output};

fn nvcim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvcim"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn gen_tune_store_query_flow() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = nvcim(out, &["gen", "--seed", "4", "--buffer-sizes", "20", "--sigma", "0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["workload.jsonl", "queries.jsonl", "pretrain.jsonl", "workload.json", "task.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let o = nvcim(out, &["tune"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("autoencoder.nvpt").exists());
    assert!(out.join("prompts/000.json").exists());
    assert!(out.join("prompts/000.i16").exists());
    assert!(out.join("tune_logs/000.csv").exists());

    let o = nvcim(out, &["store", "--write-verify", "on"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("store/manifest.json").exists());

    let o = nvcim(out, &["query", "--index", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "ssa");
    assert!(v["score"].as_f64().unwrap().is_finite());
    let again = nvcim(out, &["query", "--index", "3"]);
    assert_eq!(o.stdout, again.stdout);

    let o = nvcim(out, &["query", "--index", "100000"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    // Unknown flag and bad values are argument errors.
    assert_eq!(code(&nvcim(out, &["gen", "--bogus"])), 2);
    assert_eq!(code(&nvcim(out, &["gen", "--profile", "nvm-9"])), 2);
    assert_eq!(code(&nvcim(out, &["gen", "--sigma=-0.5"])), 2);
    // Steps run out of order are state errors.
    assert_eq!(code(&nvcim(out, &["tune"])), 3);
    assert_eq!(code(&nvcim(out, &["query"])), 3);
    // Missing or malformed files are I/O errors.
    assert_eq!(code(&nvcim(out, &["report", "--input", "does-not-exist.csv"])), 4);
    let bad = out.join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(code(&nvcim(out, &["gen", "--config", bad.to_str().unwrap()])), 4);
}

#[test]
fn sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("run.json");
    std::fs::write(
        &cfg,
        r#"{"workload": {"samples_per_domain": 8, "queries_per_domain": 4}, "settings": {"tune_steps": 20}}"#,
    )
    .unwrap();
    let args = [
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--buffer-sizes",
        "20",
        "--sigma",
        "0.05,0.1",
        "--seeds",
        "0,1",
        "--write-verify",
        "off",
        "--noise-aware",
        "both",
        "--method",
        "both",
    ];
    let o = nvcim(out, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    // Header plus 2 sigmas x 2 tunings x 2 methods x 2 seeds.
    assert_eq!(csv.lines().count(), 1 + 16);
    assert!(csv.starts_with("buffer_size,sigma,method,tuning,write_verify,seed,"));
    assert!(out.join("sweep.json").exists());

    let o = nvcim(out, &["report"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("rho_sigma"));
    assert!(text.contains("noise_aware"));
}
