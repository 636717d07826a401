mod common;

use std::fs;
use std::path::Path;

use common::*;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn sha256_hex(path: &Path) -> String {
    format!("{:x}", Sha256::digest(fs::read(path).unwrap()))
}

/// Manifest hash as used for chaining: everything except timings.
fn manifest_content_sha256(path: &Path) -> String {
    let mut v = json(path);
    v.as_object_mut().unwrap().remove("timing");
    format!("{:x}", Sha256::digest(v.to_string().as_bytes()))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn golden_matrix_matches_hand_computed_triplets() {
    let out = tempfile::tempdir().unwrap();
    let config = golden_dir().join("config.toml");
    for s in ["ingest", "geoparse", "matrix"] {
        run_ok(&config, out.path(), &[s]);
    }
    for f in ["user_outlet.csv", "state_outlet.csv"] {
        let got = fs::read_to_string(out.path().join("matrix").join(f)).unwrap();
        let want = fs::read_to_string(golden_dir().join(f)).unwrap();
        assert_eq!(got, want, "{f}");
    }
    let users = fs::read_to_string(out.path().join("geoparse/users.csv")).unwrap();
    assert!(users.contains("101,resolved,United States,Massachusetts\n"));
    assert!(users.contains("104,ambiguous,,\n"));

    let summary = json(&out.path().join("matrix/summary.json"));
    assert_eq!(summary["media_tweets"], 8);
    assert_eq!(summary["mass"], 8.0);
}

#[test]
fn occurrence_scheme_override_counts_every_mention() {
    let out = tempfile::tempdir().unwrap();
    let config = golden_dir().join("config.toml");
    for s in ["ingest", "geoparse"] {
        run_ok(&config, out.path(), &[s]);
    }
    run_ok(&config, out.path(), &["--scheme", "occurrence", "matrix"]);
    let got = fs::read_to_string(out.path().join("matrix/user_outlet.csv")).unwrap();
    assert!(got.contains("102,CNN,2\n"), "{got}");
    let manifest = json(&out.path().join("matrix/manifest.json"));
    assert_eq!(manifest["parameters"]["scheme"], "occurrence");
}

#[test]
fn report_without_analyses_is_empty() {
    let out = tempfile::tempdir().unwrap();
    let config = golden_dir().join("config.toml");
    let stdout = run_ok(&config, out.path(), &["report"]);
    assert!(stdout.contains("0 analyses"));
    let report = json(&out.path().join("report/report.json"));
    assert_eq!(report, serde_json::json!({ "analyses": {} }));
}

#[test]
fn missing_input_is_a_structured_error_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    fs::write(&config, "[paths]\ntweets = \"nope.ndjson\"\n").unwrap();
    let out = dir.path().join("run");
    let o = run(&config, &out, &["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "missing_input");
    assert_eq!(err["error"]["stage"], "ingest");
    assert!(!out.exists());
}

#[test]
fn stage_before_its_upstream_fails_cleanly() {
    let out = tempfile::tempdir().unwrap();
    let config = golden_dir().join("config.toml");
    let o = run(&config, out.path(), &["matrix"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "missing_input");
    let left: Vec<_> = fs::read_dir(out.path()).unwrap().collect();
    assert!(left.is_empty(), "leftovers: {left:?}");
}

#[test]
fn tampered_upstream_output_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let config = golden_dir().join("config.toml");
    run_ok(&config, out.path(), &["ingest"]);
    let records = out.path().join("ingest/records.ndjson");
    let mut text = fs::read_to_string(&records).unwrap();
    text.push('\n');
    fs::write(&records, text).unwrap();
    let o = run(&config, out.path(), &["geoparse"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "schema");
    assert!(!out.path().join("geoparse").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    fs::write(
        &config,
        "[paths]\ntweets = \"t\"\n[cutoffs]\npercentile = 0.1\nthreshold = 5.0\ncolour = 1\n",
    )
    .unwrap();
    let o = run(&config, &dir.path().join("run"), &["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn full_pipeline_manifests_chain_by_hash() {
    let dir = tempfile::tempdir().unwrap();
    let world = write_world(dir.path(), 150, 3);
    let out = dir.path().join("run");
    for s in STAGES {
        run_ok(&world.config, &out, &[s]);
    }
    for s in STAGES {
        let m = json(&out.join(s).join("manifest.json"));
        assert_eq!(m["stage"], *s);
        for o in m["outputs"].as_array().unwrap() {
            let path = out.join(o["path"].as_str().unwrap());
            assert_eq!(o["sha256"], sha256_hex(&path), "{path:?}");
        }
        for u in m["upstream"].as_array().unwrap() {
            let up = u["stage"].as_str().unwrap();
            assert_eq!(
                u["manifest_sha256"],
                manifest_content_sha256(&out.join(up).join("manifest.json")),
                "{s} -> {up}"
            );
        }
        let upstream: Vec<&str> = m["upstream"]
            .as_array()
            .unwrap()
            .iter()
            .map(|u| u["stage"].as_str().unwrap())
            .collect();
        let expected: &[&str] = match *s {
            "ingest" => &[],
            "geoparse" => &["ingest"],
            "matrix" => &["ingest", "geoparse"],
            "cluster" | "pair" => &["matrix", "geoparse"],
            "regress" => &["matrix"],
            _ => &["cluster", "pair", "regress"],
        };
        assert_eq!(upstream, expected, "{s}");
    }
    let report = json(&out.join("report/report.json"));
    for key in ["cluster", "pairs", "regression"] {
        assert!(report["analyses"].get(key).is_some(), "{key}");
    }
}

#[test]
fn rerun_and_worker_count_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let world = write_world(dir.path(), 120, 9);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for s in STAGES {
        run_ok(&world.config, &a, &[s]);
        run_ok(&world.config, &b, &["--workers", "4", s]);
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs");
    }
    // Rerunning a stage in place swaps in identical content.
    run_ok(&world.config, &a, &["matrix"]);
    assert_eq!(
        snapshot(&a)["matrix/user_outlet.csv"],
        sa["matrix/user_outlet.csv"]
    );
}
