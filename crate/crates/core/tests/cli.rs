use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn domains() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../domains")
}

fn run(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embedplan"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn small(dir: &Path) -> Value {
    json!({
        "domains": [domains().join("blocksworld"), domains().join("ferry")],
        "train": { "max_epochs": 8, "warmup_epochs": 2 },
        "protocols": ["interpolation", "extrapolation", "cross_domain"],
        "out_dir": dir.join("out"),
    })
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_domain_dir_exits_2_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg["domains"] = json!([tmp.path().join("no-such-domain")]);
    let config = write_config(tmp.path(), cfg);
    let o = run(&["gen"], &config);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no-such-domain"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg["epochs"] = json!(3);
    let config = write_config(tmp.path(), cfg);
    assert_eq!(run(&["gen"], &config).status.code(), Some(2));
}

#[test]
fn empty_seed_list_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg["seeds"] = json!([]);
    let config = write_config(tmp.path(), cfg);
    assert_eq!(run(&["gen"], &config).status.code(), Some(2));
}

#[test]
fn eval_before_train_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), small(tmp.path()));
    assert_eq!(run(&["gen"], &config).status.code(), Some(0));
    assert_eq!(run(&["embed"], &config).status.code(), Some(0));
    let o = run(&["eval", "--seed", "42"], &config);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("train"));
}

#[test]
fn embed_before_gen_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), small(tmp.path()));
    assert_eq!(run(&["embed"], &config).status.code(), Some(3));
}

#[test]
fn gen_rerun_is_byte_identical_and_prints_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), small(tmp.path()));
    let o = run(&["gen"], &config);
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.lines().any(|l| l.starts_with("blocksworld") && l.contains("158")), "{table}");
    let read = |f: &str| std::fs::read(tmp.path().join("out/data").join(f)).unwrap();
    let first = read("transitions.jsonl");
    assert_eq!(run(&["gen"], &config).status.code(), Some(0));
    assert_eq!(read("transitions.jsonl"), first);
}

#[test]
fn changed_config_marks_artifacts_stale() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), small(tmp.path()));
    for stage in ["gen", "embed"] {
        assert_eq!(run(&[stage], &config).status.code(), Some(0));
    }
    let mut cfg = small(tmp.path());
    cfg["gen"] = json!({ "max_plans": 3 });
    let config = write_config(tmp.path(), cfg);
    let o = run(&["embed"], &config);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stale"));
}

#[test]
fn tampered_artifact_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), small(tmp.path()));
    assert_eq!(run(&["gen"], &config).status.code(), Some(0));
    let f = tmp.path().join("out/data/states.jsonl");
    let mut text = std::fs::read_to_string(&f).unwrap();
    text.push('\n');
    std::fs::write(&f, text).unwrap();
    assert_eq!(run(&["embed"], &config).status.code(), Some(3));
}

#[test]
fn full_pipeline_writes_reports_matrix_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), small(tmp.path()));
    for stage in ["gen", "embed", "train", "eval", "matrix", "report"] {
        let o = run(&[stage], &config);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    let out = tmp.path().join("out");
    let report: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let interp = report
        .iter()
        .find(|r| r["protocol"] == "interpolation" && r["domain"] == "ferry")
        .unwrap();
    assert_eq!(interp["seeds"], json!([42, 123, 456]));
    assert!(interp["stderr"]["hit5"].is_number());
    assert!(report.iter().any(|r| r["protocol"] == "untrained-interpolation"));

    let text = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("Gap"));
    assert!(text.contains("paired t(1)"));
    assert!(text.contains("Untrained"));

    let matrix = std::fs::read_to_string(out.join("matrix.csv")).unwrap();
    assert!(matrix.starts_with("train\\test,blocksworld,ferry,mean\n"));
    assert_eq!(matrix.lines().count(), 4);

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["gaps"].as_array().unwrap().len(), 2);
    assert!(out.join("lda.json").is_file());
    let pca = std::fs::read_to_string(out.join("pca.csv")).unwrap();
    assert!(pca.starts_with("id,kind,problem,pc1,pc2"));

    let split: Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("runs/extrapolation/ferry/seed-42/split.json")).unwrap(),
    )
    .unwrap();
    assert!(split["metadata"]["config_hash"].is_string());
}

#[test]
fn matrix_without_cross_domain_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg["protocols"] = json!(["interpolation"]);
    let config = write_config(tmp.path(), cfg);
    assert_eq!(run(&["gen"], &config).status.code(), Some(0));
    assert_eq!(run(&["matrix"], &config).status.code(), Some(2));
}

#[test]
fn external_tables_are_checked_for_coverage() {
    use embedplan::dataset::{Dataset, GenOptions};
    use embedplan::embed::{embed_corpus, BuiltinEncoder, BuiltinEncoderSpec, EmbeddingTable};

    let tmp = tempfile::tempdir().unwrap();
    let dirs = vec![domains().join("ferry")];
    let (ds, _) = Dataset::generate(&dirs, &GenOptions::default()).unwrap();
    let enc = BuiltinEncoder::new(BuiltinEncoderSpec { dim: 32, ..BuiltinEncoderSpec::default() });
    let full = embed_corpus(&ds, &enc).unwrap();
    full.save(&tmp.path().join("full.embt")).unwrap();
    let mut partial = EmbeddingTable::new(32);
    for (id, v) in full.iter().skip(1) {
        partial.insert(id, v.to_vec()).unwrap();
    }
    partial.save(&tmp.path().join("partial.embt")).unwrap();

    for (table, code) in [("full.embt", 0), ("partial.embt", 2)] {
        let mut cfg = small(tmp.path());
        cfg["domains"] = json!(dirs);
        cfg["encoder"] = json!({ "table": { "path": table, "goals": null } });
        let config = write_config(tmp.path(), cfg);
        assert_eq!(run(&["gen"], &config).status.code(), Some(0));
        let o = run(&["embed"], &config);
        assert_eq!(o.status.code(), Some(code), "{table}: {}", stderr(&o));
    }
}
