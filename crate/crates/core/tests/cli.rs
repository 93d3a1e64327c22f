use std::path::Path;
use std::process::{Command, Output};

fn dirl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirl")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&dirl(&[])), 2);
    assert_eq!(code(&dirl(&["bogus"])), 2);
    assert_eq!(code(&dirl(&["gen-data", "--seed", "1", "--count", "2"])), 2);
    assert_eq!(code(&dirl(&["gen-data", "--seed", "x", "--count", "2", "--size", "32", "--out", "o"])), 2);
    assert_eq!(code(&dirl(&["eval", "--ckpt", "a", "--data", "b", "--frobnicate"])), 2);
    assert_eq!(code(&dirl(&["train", "--data", "d", "--out", "o", "--fusion", "SIDEWAYS"])), 2);
    assert_eq!(code(&dirl(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.safetensors");
    let o = dirl(&["eval", "--ckpt", s(&missing), "--data", s(dir.path())]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    // size not divisible by 16: caught before anything is written
    let out = dir.path().join("d");
    assert_eq!(code(&dirl(&["gen-data", "--seed", "1", "--count", "2", "--size", "30", "--out", s(&out)])), 1);
    assert!(!out.exists());
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = dirl(&["gen-data", "--seed", "7", "--count", "4", "--size", "32", "--out", s(d)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = tree(&a);
    assert_eq!(ta.len(), 1 + 3 * 4);
    assert_eq!(ta, tree(&b));
}

#[test]
fn train_eval_predict_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let ckpt = dir.path().join("m.safetensors");
    assert_eq!(code(&dirl(&["gen-data", "--seed", "2", "--count", "4", "--size", "32", "--out", s(&d)])), 0);
    let o = dirl(&["train", "--data", s(&d), "--out", s(&ckpt), "--epochs", "1", "--base-width", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(dir.path().join("m.safetensors.log.csv")).unwrap();
    assert!(log.starts_with("step,epoch,lr,bce,ssim,aux,total\n"));

    let csv = dir.path().join("metrics.csv");
    let o = dirl(&["eval", "--ckpt", s(&ckpt), "--data", s(&d.join("manifest")), "--out", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("image_id,ap,f1,iou"));
    assert_eq!(text.lines().count(), 1 + 4 + 1);

    let masks = dir.path().join("masks");
    let img = d.join("00001_image.png");
    let o = dirl(&["predict", "--ckpt", s(&ckpt), "--input", s(&img), s(&d.join("00002_image.png")), "--out", s(&masks)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = tree(&masks).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["00001_image_mask.png", "00002_image_mask.png"]);

    let attn = dir.path().join("attn");
    let o = dirl(&["export-attn", "--ckpt", s(&ckpt), "--input", s(&img), "--out", s(&attn)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&attn).len(), 5);
}

#[test]
fn ablate_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    assert_eq!(code(&dirl(&["gen-data", "--seed", "3", "--count", "4", "--size", "32", "--out", s(&d)])), 0);
    let out = dir.path().join("abl");
    let o = dirl(&[
        "ablate", "--rows", "1,3,10", "--data", s(&d), "--epochs", "1", "--base-width", "4", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2 + 3, "{table}");
    assert!(lines[0].contains("AP(%)") && lines[0].contains("IoU(%)"));
    assert!(lines[4].trim_start().starts_with("10"));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
