use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const COLOURS: [&str; 4] = ["Red", "Maroon", "White", "Blue"];
const STAMP: &str = "2024-05-01T00:00:00Z";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fleetlens"));
    cmd.env_remove("FLEETLENS_STORE").env_remove("FLEETLENS_URL");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// 30 plates with three views each; plate i gets colour COLOURS[i % 4].
fn write_fixture(root: &Path) -> PathBuf {
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("labels")).unwrap();
    fs::write(root.join("classes.txt"), COLOURS.join("\n")).unwrap();
    let mut csv = String::from("record_id,plate_id,image_path,label_path,captured_at,lat,lon\n");
    for p in 0..30 {
        for v in 0..3 {
            let id = format!("R{p:02}-{v}");
            let image = root.join("images").join(format!("{id}.jpg"));
            fs::write(&image, id.as_bytes()).unwrap();
            fs::write(root.join("labels").join(format!("{id}.txt")), format!("{} 0.5 0.5 0.6 0.4\n", p % 4)).unwrap();
            csv.push_str(&format!(
                "{id},AB{p:03},{},labels/{id}.txt,2024-04-{:02}T08:00:0{v}Z,{},151.0\n",
                image.display(),
                p % 28 + 1,
                -33.0 - p as f64 * 0.01
            ));
        }
    }
    let manifest = root.join("manifest.csv");
    fs::write(&manifest, csv).unwrap();
    fs::write(
        root.join("colour.json"),
        r#"{"task":"colour","labels":["Red","White","Blue"],"merge_map":{"Maroon":"Red"},"min_plate_frequency":1}"#,
    )
    .unwrap();
    manifest
}

fn prepare(root: &Path) -> PathBuf {
    let manifest = write_fixture(root);
    let store = root.join("store");
    let s = store.to_str().unwrap();
    ok(&["--store", s, "ingest", "--manifest", manifest.to_str().unwrap(), "--task", "colour", "--classes",
        root.join("classes.txt").to_str().unwrap()]);
    let out = ok(&["--store", s, "curate", "--taxonomy", root.join("colour.json").to_str().unwrap()]);
    assert!(out.contains("merged Maroon -> Red"), "{out}");
    ok(&["--store", s, "split", "--seed", "7"]);
    store
}

#[test]
fn full_pipeline_produces_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let store = prepare(root);
    let s = store.to_str().unwrap();

    let dataset = root.join("dataset");
    let out = ok(&["--store", s, "build-dataset", "--task", "colour", "--out", dataset.to_str().unwrap()]);
    assert!(out.contains("3 classes"), "{out}");
    assert!(dataset.join("images").join("train").exists() && dataset.join("classes.txt").exists());

    let preds = root.join("preds.jsonl");
    let tallies = root.join("tallies.jsonl");
    ok(&["--store", s, "infer", "--task", "colour", "--backend", "sim:p=0.8,q=0.1,seed=3", "--backend-id", "sim-a",
        "--split", "all", "--out", preds.to_str().unwrap(), "--timestamp", STAMP, "--parallel", "4"]);
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 90);
    let out = ok(&["--store", s, "aggregate", "--preds", preds.to_str().unwrap(), "--out",
        tallies.to_str().unwrap(), "--publish", "--activate"]);
    assert!(out.contains("30 plate tallies"), "{out}");
    assert!(out.contains("30 appended"), "{out}");
    // Publishing the same tallies again changes nothing.
    let out = ok(&["--store", s, "aggregate", "--preds", preds.to_str().unwrap(), "--out",
        tallies.to_str().unwrap(), "--publish"]);
    assert!(out.contains("0 appended, 30 unchanged"), "{out}");

    let reports = root.join("reports");
    let run = format!("Sim:Small:{}", preds.display());
    ok(&["--store", s, "evaluate", "--task", "colour", "--run", &run, "--out-dir", reports.to_str().unwrap(),
        "--comparison"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(reports.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["task"], "colour");
    let row = &report["rows"][0];
    assert_eq!(row["model"], "Sim");
    assert_eq!(row["size"], "Small");
    let (svi, mvi) = (row["svi"].as_f64().unwrap(), row["mvi"].as_f64().unwrap());
    assert!((0.0..=100.0).contains(&svi) && (0.0..=100.0).contains(&mvi), "{row}");
    assert_eq!(report["provenance"]["Sim:Small"]["split_seed"], 7);
    assert!(fs::read_to_string(reports.join("report.md")).unwrap().contains("Sim"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let store = prepare(dir.path());
    let s = store.to_str().unwrap();
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "6"].iter().enumerate() {
        let preds = dir.path().join(format!("p{i}.jsonl"));
        ok(&["--store", s, "infer", "--task", "colour", "--backend", "sim:p=0.7,q=0.2,seed=11", "--out",
            preds.to_str().unwrap(), "--timestamp", STAMP, "--parallel", workers]);
        outputs.push(fs::read(&preds).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert!(!outputs[0].is_empty());

    // A permuted prediction file yields the same report.
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.reverse();
    let permuted = dir.path().join("permuted.jsonl");
    fs::write(&permuted, lines.join("\n") + "\n").unwrap();
    let mut reports = Vec::new();
    for (i, file) in ["p0.jsonl", "permuted.jsonl"].iter().enumerate() {
        let out_dir = dir.path().join(format!("r{i}"));
        let run = format!("Sim:S:{}", dir.path().join(file).display());
        ok(&["--store", s, "evaluate", "--task", "colour", "--run", &run, "--out-dir", out_dir.to_str().unwrap()]);
        reports.push(fs::read(out_dir.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn store_from_env_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_fixture(dir.path());
    let store = dir.path().join("store");

    let out = bin()
        .env("FLEETLENS_STORE", &store)
        .args(["ingest", "--manifest", manifest.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(store.join("records.jsonl").exists());

    let config = dir.path().join("fleetlens.toml");
    fs::write(&config, format!("store = {:?}\n[split]\nseed = 5\ntest = 0.5\n", store.display())).unwrap();
    let out = ok(&["--config", config.to_str().unwrap(), "split"]);
    assert!(out.contains("seed 5"), "{out}");
    assert!(out.contains("test 15"), "{out}");
    // Flags on the command line win over the file.
    let out = ok(&["--config", config.to_str().unwrap(), "split", "--seed", "6"]);
    assert!(out.contains("seed 6"), "{out}");

    fs::write(&config, "[split]\nsead = 5\n").unwrap();
    assert_eq!(run(&["--config", config.to_str().unwrap(), "split"]).status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // clap rejections
    assert_eq!(run(&["split"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--p", "0.8"]).status.code(), Some(2));
    // missing store
    assert_eq!(run(&["split", "--seed", "1"]).status.code(), Some(2));
    // bad probability
    assert_eq!(run(&["simulate", "--p", "1.5", "--seed", "1"]).status.code(), Some(2));
    // runtime failures
    let missing = dir.path().join("nope.csv");
    let store = dir.path().join("s");
    let out = run(&["--store", store.to_str().unwrap(), "ingest", "--manifest", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(run(&["--store", store.to_str().unwrap(), "split", "--seed", "1"]).status.code(), Some(1));
}

#[test]
fn simulate_reports_gain() {
    let out = ok(&["simulate", "--p", "0.8", "--views", "5", "--plates", "20000", "--seed", "1", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let svi = v["svi_est"].as_f64().unwrap();
    let mvi = v["mvi_est"].as_f64().unwrap();
    assert!((svi - 0.8).abs() < 0.02, "{v}");
    assert!(mvi > svi + 0.1, "{v}");
    let again = ok(&["simulate", "--p", "0.8", "--views", "5", "--plates", "20000", "--seed", "1", "--json"]);
    assert_eq!(out, again);
    let text = ok(&["simulate", "--p", "0.8", "--plates", "1000", "--seed", "1"]);
    assert!(!text.trim().is_empty());
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_and_query() {
    use std::io::{BufRead, BufReader};
    use std::process::Stdio;

    let dir = tempfile::tempdir().unwrap();
    let store = prepare(dir.path());
    let s = store.to_str().unwrap();
    let preds = dir.path().join("preds.jsonl");
    let tallies = dir.path().join("tallies.jsonl");
    ok(&["--store", s, "infer", "--task", "colour", "--backend", "sim:p=1,q=0,seed=1", "--split", "all", "--out",
        preds.to_str().unwrap(), "--timestamp", STAMP]);
    ok(&["--store", s, "aggregate", "--preds", preds.to_str().unwrap(), "--out", tallies.to_str().unwrap(),
        "--publish"]);

    let mut child = bin()
        .args(["--store", s, "serve", "--addr", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let _server = Server(child);
    let url = line.trim().strip_prefix("listening on ").expect("listen line").to_string();

    let health: serde_json::Value = serde_json::from_str(&ok(&["query", "--url", &url, "--health"])).unwrap();
    assert_eq!(health["plates"], 30);
    let taxonomies: serde_json::Value = serde_json::from_str(&ok(&["query", "--url", &url, "--taxonomies"])).unwrap();
    assert_eq!(taxonomies["colour"]["labels"], serde_json::json!(["Red", "White", "Blue"]));

    // Plates 0, 1, 4, 5, ... are Red once Maroon is merged: 16 of 30.
    let page: serde_json::Value =
        serde_json::from_str(&ok(&["query", "--url", &url, "--colour", "Red", "--limit", "4"])).unwrap();
    assert_eq!(page["total"], 16);
    assert_eq!(page["items"].as_array().unwrap().len(), 4);
    let page: serde_json::Value =
        serde_json::from_str(&ok(&["query", "--url", &url, "--colour", "Maroon,Blue"])).unwrap();
    assert_eq!(page["total"], 23);

    let out = ok(&["query", "--url", &url, "--plate", "AB003", "--correct", "colour=White", "--author", "ops"]);
    let profile: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(profile["attributes"]["colour"]["effective"], "White");
    let bad = run(&["query", "--url", &url, "--plate", "AB003", "--correct", "colour=Plaid", "--author", "ops"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("422"), "{}", String::from_utf8_lossy(&bad.stderr));
    assert_eq!(run(&["query", "--url", &url, "--lat-min", "-34"]).status.code(), Some(2));
}
