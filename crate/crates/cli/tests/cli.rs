use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &[&str] = &[
    "--set=pretrain.iterations=4",
    "--set=translator_train.iterations=3",
    "--set=crop_size=16",
    "--set=denoiser.width=8",
    "--set=denoiser.layers=1",
    "--set=denoiser.unshuffle=2",
    "--set=synthetic.train_images=2",
    "--set=synthetic.test_images=2",
    "--set=synthetic.size=32",
];

fn ntnt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntnt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny(args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend_from_slice(TINY);
    ntnt(&all)
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(stderr.trim()).unwrap_or_else(|_| panic!("stderr not JSON: {stderr}"));
    assert!(v["error"]["message"].is_string(), "{v}");
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_apply_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let den = d.join("den");
    let tr = d.join("tr");

    let pre = ok_json(&tiny(&["pretrain", "--out", s(&den)]));
    assert_eq!(pre["iterations"], 4);
    let den_ck = den.join("denoiser.ntnt");
    assert!(den_ck.exists() && den.join("pretrain_losses.json").exists());

    let trn = ok_json(&tiny(&["train-translator", "--denoiser", s(&den_ck), "--out", s(&tr)]));
    assert_eq!(trn["iterations"], 3);
    let tr_ck = tr.join("translator.ntnt");
    let history: Value = serde_json::from_slice(&std::fs::read(tr.join("translator_history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 3);
    assert!(history[0]["l_total"].is_number());

    let synth = d.join("synth");
    let out = ok_json(&tiny(&["synth", "--family", "correlated", "--out", s(&synth)]));
    assert_eq!(out["images"], 2);
    assert!(synth.join("clean/0000.pgm").exists() && synth.join("noisy/0001.pgm").exists());

    let dn = d.join("denoised");
    let out = ok_json(&tiny(&[
        "denoise", "--denoiser", s(&den_ck), "--translator", s(&tr_ck), "--input", s(&synth.join("noisy")), "--out",
        s(&dn),
    ]));
    assert_eq!(out["images"].as_array().unwrap().len(), 2);
    assert!(dn.join("0000.denoised.pgm").exists() && dn.join("0000.translated.pgm").exists());

    let metrics = ok_json(&tiny(&[
        "eval", "--denoiser", s(&den_ck), "--translator", s(&tr_ck), "--out", s(&d.join("eval")),
    ]));
    assert_eq!(metrics["images"], 2);
    assert_eq!(metrics["ablation"]["rows"].as_array().unwrap().len(), 5);
    assert!(d.join("eval/metrics.json").exists());

    let table = ok_json(&tiny(&[
        "ablate-addition", "--denoiser", s(&den_ck), "--levels", "0,10", "--pairs", s(&synth),
    ]));
    let labels: Vec<&str> = table["rows"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["level-0", "level-10"]);

    let an = d.join("analysis");
    let report = ok_json(&tiny(&[
        "analyze",
        "--noisy",
        s(&synth.join("noisy/0000.pgm")),
        "--clean",
        s(&synth.join("clean/0000.pgm")),
        "--translator",
        s(&tr_ck),
        "--denoiser",
        s(&den_ck),
        "--out",
        s(&an),
    ]));
    assert!(report["input"]["sigma_hat"].as_f64().unwrap() > 0.0);
    assert!(report["translated"]["spatial_w1"].is_number());
    for f in ["input.json", "input.spatial_histogram.csv", "translated.freq_histogram.csv"] {
        assert!(an.join(f).exists(), "{f}");
    }
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 5, "crop_size": 16, "synthetic": {"train_images": 1, "test_images": 3, "size": 16}}"#).unwrap();
    let a = ok_json(&ntnt(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("a"))]));
    assert_eq!(a["images"], 3);
    assert_eq!(a["family"], "mixture");
    let b = ok_json(&ntnt(&[
        "synth", "--config", s(&cfg), "--set", "synthetic.test_images=1", "--seed", "6", "--out",
        s(&dir.path().join("b")),
    ]));
    assert_eq!(b["images"], 1);
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_ne!(read("a/clean/0000.pgm"), read("b/clean/0000.pgm"));
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ntnt");

    let e = err_json(&ntnt(&["denoise", "--denoiser", s(&missing), "--input", "x.pgm", "--out", s(dir.path())]));
    assert_eq!(e["error"]["kind"], "io");

    let e = err_json(&ntnt(&["synth", "--set", "synthetic.nosuch=1", "--out", s(dir.path())]));
    assert_eq!(e["error"]["kind"], "config");

    let e = err_json(&ntnt(&["synth", "--set", "augment_range=[10,0]", "--out", s(dir.path())]));
    assert_eq!(e["error"]["kind"], "invalid-argument");

    let e = err_json(&ntnt(&["synth", "--set", "seed", "--out", s(dir.path())]));
    assert_eq!(e["error"]["kind"], "invalid-argument");

    let out = ntnt(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(err_json(&out)["error"]["kind"], "usage");

    let bad = dir.path().join("bad.pgm");
    std::fs::write(&bad, b"P5\n2 2\n65535\n").unwrap();
    let e = err_json(&ntnt(&["analyze", "--noisy", s(&bad), "--clean", s(&bad)]));
    assert_eq!(e["error"]["kind"], "image");
    assert!(e["error"]["message"].as_str().unwrap().contains("bad.pgm"));

    let garbage = dir.path().join("garbage.ntnt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let e = err_json(&ntnt(&["ablate-addition", "--denoiser", s(&garbage)]));
    assert_eq!(e["error"]["kind"], "checkpoint");
}

#[test]
fn help_exits_zero() {
    let out = ntnt(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("train-translator"));
}
