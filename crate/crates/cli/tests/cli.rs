use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn latentkg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentkg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let p = entry.unwrap().path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_tree(&p, &dest);
        } else {
            fs::copy(&p, &dest).unwrap();
        }
    }
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = latentkg(&["ingest"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("dataset"));
    let o = latentkg(&["ingest", "--no-such-flag"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"quantil": 0.3}"#).unwrap();
    let o = latentkg(&["--config", cfg.to_str().unwrap(), "ingest"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_upstream_names_the_producer() {
    let tmp = tempfile::tempdir().unwrap();
    let o = latentkg(&["graph"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("run `latentkg decode` first"), "{}", stderr(&o));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("claims.jsonl");
    fs::write(&data, "{\"id\": \"a\", \"claim\": \"Berlin is the capital of Germany in Europe\"}\n").unwrap();
    let o = latentkg(&["ingest", "--dataset", data.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn claims_without_content_words_are_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("claims.jsonl");
    fs::write(
        &data,
        "{\"id\": \"a\", \"claim\": \"it is not the one that was on it or of it\", \"label\": \"SUPPORTS\"}\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = latentkg(&["run-all", "--dataset", data.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = latentkg(&["run-all", "--dataset", data.to_str().unwrap(), "--fallback-uniform"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn standalone_decode_marks_validity() {
    let tmp = tempfile::tempdir().unwrap();
    let rows: Vec<serde_json::Value> = fs::read_to_string(fixture("appendix_d.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .filter(|r: &serde_json::Value| r["claim"] == 1)
        .collect();
    let jsonl: String = rows
        .iter()
        .map(|r| serde_json::json!({"layer": r["layer"], "text": r["text"], "valid": null}).to_string() + "\n")
        .collect();
    let input = tmp.path().join("c1.jsonl");
    fs::write(&input, jsonl).unwrap();
    let o = latentkg(&["decode", "--input", input.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(lines.len(), rows.len());
    for (line, row) in lines.iter().zip(&rows) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], row["layer"].to_string());
        assert_eq!(fields[2], row["structured"].to_string(), "{line}");
    }
}

#[test]
fn external_traces_reproduce_the_toy_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture("claims10.jsonl");
    let toy = tmp.path().join("toy");
    let o = latentkg(&["run-all", "--dataset", data.to_str().unwrap()], &toy);
    assert!(o.status.success(), "{}", stderr(&o));

    // Lay the toy run out the way an exporter would.
    let traces = tmp.path().join("traces");
    copy_tree(&toy.join("trace"), &traces);
    copy_tree(&toy.join("patch-sweep"), &traces.join("outputs"));

    let ext = tmp.path().join("ext");
    let o = latentkg(
        &["run-all", "--dataset", data.to_str().unwrap(), "--model", "external-trace", "--trace-dir", traces.to_str().unwrap()],
        &ext,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for file in ["decode/labels.csv", "similarity/series.csv", "metrics/predictions.csv", "report/table.csv"] {
        assert_eq!(fs::read(toy.join(file)).unwrap(), fs::read(ext.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn rerun_skips_up_to_date_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture("claims10.jsonl");
    let out = tmp.path().join("out");
    let args = ["run-all", "--dataset", data.to_str().unwrap(), "--sample", "3"];
    assert!(latentkg(&args, &out).status.success());
    let before = fs::metadata(out.join("trace")).unwrap().modified().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_latentkg"))
        .args(args)
        .arg("--out")
        .arg(&out)
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(stderr(&o).matches("up to date").count(), 11, "{}", stderr(&o));
    assert_eq!(fs::metadata(out.join("trace")).unwrap().modified().unwrap(), before);

    let o = latentkg(&["cluster", "--quantile", "0.5"], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifests/cluster.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["quantile"], 0.5);
}
