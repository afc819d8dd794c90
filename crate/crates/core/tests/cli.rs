use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn trfnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trfnet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .env("TRFNET_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = trfnet(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn tree_export_has_one_node_per_feature_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "corpus", "--n", "200", "--v", "120", "--seed", "1", "--out", "bow.txt", "--vocab-out", "vocab.txt"]);
    ok(d, &["tree", "--data", "bow.txt", "--vocab", "vocab.txt", "--out", "tree.dot"]);
    let first = fs::read_to_string(d.join("tree.dot")).unwrap();
    assert_eq!(first.matches("[label=\"w").count(), 120);
    assert_eq!(first.matches(" -- ").count(), 119);
    ok(d, &["tree", "--data", "bow.txt", "--vocab", "vocab.txt", "--out", "tree.dot"]);
    assert_eq!(fs::read_to_string(d.join("tree.dot")).unwrap(), first);
}

#[test]
fn missing_data_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = trfnet(dir.path(), &["tree", "--out", "tree.dot"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
}

#[test]
fn runtime_failures_exit_with_one_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "a,b\n1,x\n").unwrap();
    let out = trfnet(dir.path(), &["tree", "--data", "bad.csv", "--out", "t.dot"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("line 2"), "{err}");
}

#[test]
fn build_finetune_compare_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "blobs", "--n", "300", "--v", "12", "--seed", "7", "--out", "x.csv"]);
    ok(d, &[
        "build", "--data", "x.csv", "--labels", "--radius", "2", "--stride", "2", "--depth", "3", "--globals", "0.1",
        "--seed", "7", "--dae-epochs", "3", "--out", "m.trf",
    ]);
    let model = fs::read_to_string(d.join("m.trf")).unwrap();
    assert_eq!(model.lines().filter(|l| l.starts_with("layer ")).count(), 3);
    assert!(d.join("m.trf.manifest.json").exists());

    ok(d, &["finetune", "--model", "m.trf", "--data", "x.csv", "--labels", "--epochs", "10", "--out", "f.trf"]);
    ok(d, &["baseline", "dense", "--data", "x.csv", "--labels", "--hidden", "8", "--epochs", "10", "--out", "d.trf"]);
    let table = ok(d, &["compare", "f.trf.report", "d.trf.report"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].contains("accuracy") && lines[0].contains("parameters") && lines[0].contains("sparsity"));
    assert!(lines[1].starts_with("f.trf.report") && lines[2].starts_with("d.trf.report"));

    let report = fs::read_to_string(d.join("f.trf.report")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("accuracy\t")));
    ok(d, &["eval", "--model", "f.trf", "--data", "x.csv", "--labels", "--partition", "valid"]);
}

#[test]
fn inspect_scores_with_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "corpus", "--n", "300", "--v", "80", "--seed", "2", "--out", "bow.txt", "--vocab-out", "vocab.txt"]);
    ok(d, &[
        "build", "--data", "bow.txt", "--vocab", "vocab.txt", "--presence", "--depth", "1", "--dae-epochs", "2",
        "--out", "m.trf",
    ]);
    let vocab = fs::read_to_string(d.join("vocab.txt")).unwrap();
    let mut emb = format!("{} 2\n", vocab.lines().count());
    for (i, tok) in vocab.lines().enumerate() {
        emb.push_str(&format!("{tok} 1 {}\n", i % 3));
    }
    fs::write(d.join("emb.txt"), emb).unwrap();
    let out = ok(d, &[
        "inspect", "--model", "m.trf", "--data", "bow.txt", "--vocab", "vocab.txt", "--presence", "--top", "3",
        "--embeddings", "emb.txt",
    ]);
    assert!(out.starts_with("unit\tscore\tfeatures"));
    assert!(out.contains("interpretability score"));
}
