use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vargraph(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vargraph"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_class(o: &Output) -> String {
    let line = stderr(o).lines().last().unwrap_or_default().to_string();
    assert!(line.starts_with("error["), "stderr: {}", stderr(o));
    line["error[".len()..line.find(']').unwrap()].to_string()
}

fn synth_and_train(dir: &Path, mode: &str) {
    let o = vargraph(&["--seed", "11", "synth", "--genes", "30", "--modules", "3", "--out-dir", "data"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.join("cfg.json"), r#"{"epochs": 20}"#).unwrap();
    let o = vargraph(
        &[
            "--seed", "3", "train", "--variants", "data/variants.tsv", "--gene-edges", "data/gene_edges.tsv", "--genes",
            "data/genes.txt", "--mode", mode, "--config", "cfg.json", "--out", "model.ckpt", "--report", "report.jsonl",
        ],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d, "given");
    assert_eq!(fs::read_to_string(d.join("report.jsonl")).unwrap().lines().count(), 20);

    let o = vargraph(&["predict", "--model", "model.ckpt", "--variants", "data/variants.tsv", "--out", "pred.jsonl"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = vargraph(&["eval", "--predictions", "pred.jsonl"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let auc: f64 = stdout(&o).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let o = vargraph(&["eval", "--predictions", "pred.jsonl", "--labels", "data/variants.tsv"], d);
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), auc);

    let o = vargraph(&["attention", "--model", "model.ckpt", "--top-k", "3", "--out", "att.jsonl"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(d.join("att.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["neighbors"].as_array().unwrap().len() <= 3);
}

#[test]
fn identical_flags_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth_and_train(a.path(), "learnt");
    synth_and_train(b.path(), "learnt");
    for f in ["data/variants.tsv", "data/gene_edges.tsv", "model.ckpt", "report.jsonl"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mismatched_checkpoint_version_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_train(d, "given");
    let mut bytes = fs::read(d.join("model.ckpt")).unwrap();
    bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
    fs::write(d.join("model.ckpt"), bytes).unwrap();
    let o = vargraph(&["predict", "--model", "model.ckpt", "--variants", "data/variants.tsv", "--out", "p.jsonl"], d);
    assert!(!o.status.success());
    assert_eq!(error_class(&o), "incompatible-version");
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn single_class_eval_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("p.jsonl"),
        "{\"variant_id\":\"a\",\"score\":0.2,\"label\":1}\n{\"variant_id\":\"b\",\"score\":0.9,\"label\":1}\n",
    )
    .unwrap();
    let o = vargraph(&["eval", "--predictions", "p.jsonl"], d);
    assert!(!o.status.success());
    assert_eq!(error_class(&o), "degenerate-metric");
}

#[test]
fn input_errors_carry_class_and_location() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = vargraph(&["eval", "--nope"], d);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_class(&o), "usage");

    fs::write(
        d.join("v.tsv"),
        "variant_id\tchrom\tpos\tref\talt\tgene_id\tfeat_x\tlabel\nV1\tchr1\t5\tA\tG\tG1\t0.5\t7\n",
    )
    .unwrap();
    fs::write(d.join("e.tsv"), "G1\tG2\n").unwrap();
    let o = vargraph(&["--seed", "1", "train", "--variants", "v.tsv", "--gene-edges", "e.tsv", "--out", "m.ckpt"], d);
    assert_eq!(error_class(&o), "parse");
    assert!(stderr(&o).contains("v.tsv:2"));
}

#[test]
fn missing_seed_is_generated_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let o = vargraph(&["synth", "--genes", "8", "--modules", "2", "--out-dir", "s"], dir.path());
    assert!(o.status.success());
    let line = stderr(&o).lines().find(|l| l.starts_with("seed: ")).unwrap().to_string();
    line["seed: ".len()..].parse::<u64>().unwrap();
}

#[test]
fn grad_check_and_bench_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = vargraph(&["--seed", "0", "grad-check", "--mode", "given"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("max relative error"));
    let o = vargraph(
        &["--seed", "0", "bench-attention", "--genes", "50,100", "--dim", "4", "--features", "32", "--repeats", "1"],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 3);
}
