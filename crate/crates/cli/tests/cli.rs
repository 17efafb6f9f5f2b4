use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lanesam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanesam")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = lanesam(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn pipeline(dir: &Path, n: &str) {
    ok(dir, &["synth", "--n", n, "--seed", "7", "--out", "sc.jsonl"]);
    ok(dir, &["fit", "--scenarios", "sc.jsonl", "--out", "fits.jsonl"]);
    ok(dir, &["corpus", "--scenarios", "sc.jsonl", "--fits", "fits.jsonl", "--out", "corpus.jsonl"]);
    ok(dir, &["predict-baseline", "--scenarios", "sc.jsonl", "--out", "preds.jsonl"]);
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), "100");
    pipeline(b.path(), "100");
    for f in ["sc.jsonl", "fits.jsonl", "corpus.jsonl", "preds.jsonl"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let corpus = fs::read_to_string(a.path().join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 100);
}

#[test]
fn manifest_records_provenance() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n", "5", "--seed", "11", "--out", "sc.jsonl"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("sc.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["n"], 5);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(!d.path().join("sc.jsonl.tmp").exists());
}

#[test]
fn missing_out_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = lanesam(d.path(), &["synth", "--n", "10", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--out"));
    let out = lanesam(d.path(), &["synth", "--n", "10", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2), "seed is mandatory");
}

#[test]
fn empty_sets_flow_through() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "0");
    for f in ["sc.jsonl", "fits.jsonl", "corpus.jsonl", "preds.jsonl"] {
        assert_eq!(fs::read(d.path().join(f)).unwrap(), b"", "{f}");
    }
}

#[test]
fn malformed_line_is_reported() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n", "30", "--seed", "3", "--out", "sc.jsonl"]);
    let text = fs::read_to_string(d.path().join("sc.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[16] = "{\"id\": \"broken\"";
    fs::write(d.path().join("bad.jsonl"), lines.join("\n")).unwrap();
    let out = lanesam(d.path(), &["fit", "--scenarios", "bad.jsonl", "--out", "fits.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 17"), "{}", stderr(&out));
    assert!(!d.path().join("fits.jsonl").exists());
}

#[test]
fn corpus_needs_every_lane_change_fit() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "40");
    let fits = fs::read_to_string(d.path().join("fits.jsonl")).unwrap();
    let kept: Vec<&str> = fits.lines().skip(1).collect();
    fs::write(d.path().join("partial.jsonl"), kept.join("\n")).unwrap();
    let out = lanesam(d.path(), &["corpus", "--scenarios", "sc.jsonl", "--fits", "partial.jsonl", "--out", "c.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("no fit"));
}

#[test]
fn shuffled_predictions_give_identical_report() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "60");
    let preds = fs::read_to_string(d.path().join("preds.jsonl")).unwrap();
    let mut lines: Vec<&str> = preds.lines().collect();
    lines.reverse();
    lines.rotate_left(7);
    fs::write(d.path().join("shuffled.jsonl"), lines.join("\n")).unwrap();
    for (p, dir) in [("preds.jsonl", "a"), ("shuffled.jsonl", "b")] {
        fs::create_dir(d.path().join(dir)).unwrap();
        ok(d.path(), &["report", "--scenarios", "sc.jsonl", "--predictions", p, "--out-dir", dir]);
    }
    for f in ["report.txt", "report.json", "distributions.csv", "overlays.csv"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ground_truth_scores_perfectly() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n", "50", "--seed", "5", "--out", "sc.jsonl"]);
    let out = lanesam(d.path(), &["score", "--scenarios", "sc.jsonl", "--ground-truth", "--out", "m.json"]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("100.00"));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(m["overall_accuracy"], 100.0);
    for c in m["per_class"].as_array().unwrap() {
        for h in c["horizons"].as_array().unwrap() {
            assert_eq!(h["lateral_rmse"], 0.0);
            assert_eq!(h["longitudinal_rmse"], 0.0);
        }
    }
}

#[test]
fn unknown_prediction_id_is_data_error() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "10");
    let mut preds = fs::read_to_string(d.path().join("preds.jsonl")).unwrap();
    preds.push_str("{\"id\":\"ghost\",\"output\":\"x\"}\n");
    fs::write(d.path().join("p.jsonl"), preds).unwrap();
    let out = lanesam(d.path(), &["score", "--scenarios", "sc.jsonl", "--predictions", "p.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("ghost"));
}

#[test]
fn missing_prediction_counts_as_failure() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "10");
    let preds = fs::read_to_string(d.path().join("preds.jsonl")).unwrap();
    fs::write(d.path().join("p.jsonl"), preds.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    ok(d.path(), &["score", "--scenarios", "sc.jsonl", "--predictions", "p.jsonl", "--out", "m.json"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(m["parse_failure_count"], 1);
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("cfg.json"), r#"{"synth": {"noise_lat": 0.5}}"#).unwrap();
    ok(d.path(), &["synth", "--n", "20", "--seed", "9", "--out", "plain.jsonl"]);
    ok(d.path(), &["--config", "cfg.json", "synth", "--n", "20", "--seed", "9", "--out", "noisy.jsonl"]);
    ok(d.path(), &["--config", "cfg.json", "synth", "--n", "20", "--seed", "9", "--noise-lat", "0", "--out", "over.jsonl"]);
    let read = |f: &str| fs::read(d.path().join(f)).unwrap();
    assert_ne!(read("plain.jsonl"), read("noisy.jsonl"));
    assert_eq!(read("plain.jsonl"), read("over.jsonl"));

    fs::write(d.path().join("typo.json"), r#"{"synht": {}}"#).unwrap();
    let out = lanesam(d.path(), &["--config", "typo.json", "synth", "--seed", "1", "--out", "t.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_io_error() {
    let d = tempfile::tempdir().unwrap();
    let out = lanesam(d.path(), &["synth", "--n", "3", "--seed", "1", "--out", "no/such/dir/sc.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_reads_exported_tracks() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--n", "30", "--seed", "2", "--out", "sc.jsonl", "--tracks-out", "tracks.csv"]);
    ok(d.path(), &["ingest", "--tracks", "tracks.csv", "--out", "ing.jsonl"]);
    let synth = fs::read_to_string(d.path().join("sc.jsonl")).unwrap();
    let ingested = fs::read_to_string(d.path().join("ing.jsonl")).unwrap();
    let changes = |t: &str| t.lines().filter(|l| !l.contains("\"label\":0")).count();
    assert_eq!(changes(&synth), changes(&ingested));

    fs::write(d.path().join("bad.csv"), "frame,id,x\n1,2,3\n").unwrap();
    let out = lanesam(d.path(), &["ingest", "--tracks", "bad.csv", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}
