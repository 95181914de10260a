use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vjcascade")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let last = text.lines().last().expect("stderr has a line");
    serde_json::from_str(last).expect("stderr ends with JSON")
}

#[test]
fn synth_train_detect_eval_convert() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["synth", "--out", "data", "--positives", "80", "--negatives", "60", "--heldout", "6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("data/spec.json").exists());

    let o = run(
        d,
        &["--threads", "1", "train", "--manifest", "data/positives.txt", "--negatives", "data/negatives.txt", "--out", "m/model", "--f-target", "0.05", "--max-weak", "5"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage=0 "));
    for ext in ["xml", "json", "report.json"] {
        assert!(d.join(format!("m/model.{ext}")).exists(), "missing {ext}");
    }

    let o = run(d, &["detect", "--model", "m/model.xml", "--list", "data/frames.txt", "--out", "dets.txt", "--annotate", "ann"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("ann/frame_0000.png").exists());

    let o = run(d, &["detect", "--model", "m/model.json", "--list", "data/frames.txt", "--format", "json"]);
    assert!(o.status.success());
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = std::fs::read_to_string(d.join("dets.txt")).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), text.lines().count(), "XML and JSON models detect alike");

    let o = run(d, &["eval", "--detections", "dets.txt", "--truth", "data/truth.txt", "--label", "synth", "--out", "rep"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep[0]["scene"]["label"], "synth");
    assert!(std::fs::read_to_string(d.join("rep.csv")).unwrap().starts_with("scene,"));

    let o = run(d, &["convert", "m/model.json", "m/back.xml"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(d, &["convert", "m/back.xml", "m/back.json"]);
    assert!(o.status.success());
    let a: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m/model.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("m/back.json")).unwrap()).unwrap();
    assert_eq!(a["stages"].as_array().unwrap().len(), b["stages"].as_array().unwrap().len());
}

#[test]
fn input_errors_exit_3_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["detect", "--model", "missing.xml", "x.pgm"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "MissingFile");

    std::fs::write(d.join("bad.xml"), "<opencv_storage><cascade>").unwrap();
    let o = run(d, &["convert", "bad.xml", "out.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "MalformedXml");
    assert!(!d.join("out.json").exists());

    std::fs::write(d.join("pos.txt"), "a.pgm 1 0 0 24\n").unwrap();
    std::fs::write(d.join("neg.txt"), "").unwrap();
    let o = run(d, &["train", "--manifest", "pos.txt", "--negatives", "neg.txt", "--out", "m"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "MalformedManifest");

    let o = run(d, &["train", "--manifest", "pos.txt", "--negatives", "neg.txt", "--out", "m", "--d-min", "1.5"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "InvalidConfig");
}

#[test]
fn eval_rejects_unknown_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut pgm = b"P5\n16 16\n255\n".to_vec();
    pgm.extend([128u8; 256]);
    std::fs::write(d.join("a.pgm"), pgm).unwrap();
    std::fs::write(d.join("truth.txt"), "a.pgm 1 0 0 10 10\n").unwrap();
    std::fs::write(d.join("dets.txt"), "b.pgm 0 0 10 10 1.0 3\n").unwrap();
    let o = run(d, &["eval", "--detections", "dets.txt", "--truth", "truth.txt"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"], "UnknownImage");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["train"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}
