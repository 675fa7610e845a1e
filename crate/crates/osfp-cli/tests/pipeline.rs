//! Pipeline-level checks on top of the library and the binary: the
//! single-session classifier against an independent recount, info-gain
//! report identities, and sweep output shape.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use osfp_core::single_session::{Fallback, SingleSessionModel};
use osfp_core::store::CountStore;
use osfp_core::synth::{default_spec, generate};
use osfp_core::{Corpus, Protocol};

fn default_corpus() -> Corpus {
    Corpus::from_records(generate(&default_spec()).unwrap().map(Ok)).unwrap()
}

#[test]
fn single_session_accuracy_matches_a_brute_force_recount() {
    let corpus = default_corpus();
    let boundary = osfp_core::experiment::split_boundary(&corpus, 3.0);
    let (train, test) = corpus.split_at(boundary);

    for (slot, &protocol) in Protocol::ALL.iter().enumerate() {
        // Model under test.
        let mut store = CountStore::new();
        for s in &train {
            if let (Some(fp), Some(label)) = (s.fps[slot], s.label) {
                store.observe_key(corpus.fp_key(fp), corpus.label(label), 1);
            }
        }
        let model = SingleSessionModel::from_store(protocol, store, Fallback::Abstain).unwrap();
        let eval = model.evaluate_keys(test.iter().filter_map(|s| {
            let fp = s.fps[slot]?;
            Some((
                corpus.fp_key(fp).to_string(),
                corpus.label(s.label?).clone(),
            ))
        }));

        // Independent recount: tally (fingerprint, label) pairs and argmax
        // with an explicit sort.
        let mut counts: HashMap<u32, HashMap<u32, u64>> = HashMap::new();
        for s in &train {
            if let (Some(fp), Some(label)) = (s.fps[slot], s.label) {
                *counts.entry(fp).or_default().entry(label).or_insert(0) += 1;
            }
        }
        let argmax = |fp: u32| -> Option<String> {
            let row = counts.get(&fp)?;
            let mut pairs: Vec<(&u32, &u64)> = row.iter().collect();
            pairs.sort_by(|a, b| {
                b.1.cmp(a.1)
                    .then_with(|| corpus.label(*a.0).cmp(corpus.label(*b.0)))
            });
            Some(corpus.label(*pairs[0].0).as_str().to_string())
        };
        let mut correct = 0u64;
        let mut evaluated = 0u64;
        for s in &test {
            let Some(fp) = s.fps[slot] else { continue };
            let Some(pred) = argmax(fp) else { continue };
            evaluated += 1;
            if pred == corpus.label(s.label.unwrap()).as_str() {
                correct += 1;
            }
        }
        let recount = correct as f64 / evaluated as f64;
        assert_eq!(eval.confusion.total(), evaluated, "{protocol}");
        assert!(
            (eval.confusion.accuracy() - recount).abs() < 1e-12,
            "{protocol}: {} vs recount {recount}",
            eval.confusion.accuracy()
        );
    }
}

fn toy_corpus_jsonl(dir: &Path) -> std::path::PathBuf {
    // Two profiles from different OS families: their fingerprint
    // distributions are disjoint, so every fingerprint determines its OS.
    let mut spec = default_spec();
    let win = spec.profiles[2].clone();
    let mac = spec.profiles[6].clone();
    spec.profiles = vec![win, mac];
    spec.profiles[0].hosts = 6;
    spec.profiles[1].hosts = 6;
    spec.days = 6;
    let path = dir.join("toy.jsonl");
    let mut out = String::new();
    for record in generate(&spec).unwrap() {
        out.push_str(&record.to_json_line());
        out.push('\n');
    }
    fs::write(&path, out).unwrap();
    path
}

#[test]
fn infogain_rows_satisfy_the_entropy_identity() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_corpus_jsonl(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_osfp"))
        .args([
            "infogain",
            "--sessions",
            corpus.to_str().unwrap(),
            "--unit",
            "both",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("infogain.json")).unwrap())
            .unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7, "4 windowed rows + 3 flow rows");
    for row in rows {
        let h = row["h_prior"].as_f64().unwrap();
        let hc = row["h_posterior"].as_f64().unwrap();
        let gain = row["gain"].as_f64().unwrap();
        assert!((gain - (h - hc)).abs() < 1e-9, "{row}");
        assert!(gain >= -1e-9 && gain <= h + 1e-9);
    }

    // The two bundled profiles share no fingerprints, so observing any
    // fingerprint pins the OS: every windowed row conditions to zero.
    for row in rows {
        let name = row["data_type"].as_str().unwrap();
        if name.ends_with("-multi") || name == "tls" || name == "http" || name == "tcp" {
            assert!(
                row["h_posterior"].as_f64().unwrap() < 1e-9,
                "{name} should separate perfectly: {row}"
            );
        }
    }

    let csv = fs::read_to_string(dir.path().join("gain_rows.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8, "header + 7 rows");
    for proto in ["tcp", "tls", "http"] {
        let top = fs::read_to_string(dir.path().join(format!("top_{proto}.csv"))).unwrap();
        assert!(top.lines().count() >= 2, "{proto} top table is empty");
    }
}

#[test]
fn sweep_csv_emits_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = toy_corpus_jsonl(dir.path());
    let config = serde_json::json!({
        "corpus": corpus.to_str().unwrap(),
        "seed": 7,
        "min_count": 2,
        "min_windows": 5,
        "single_session": [],
        "multi_runs": [{"protocols": ["tls"]}],
        "forest": {"n_trees": 9, "max_depth_grid": [8], "features_grid": ["sqrt"], "folds": 2},
        "sweep": {"window_minutes": [5, 15, 30, 45, 60], "protocols": [["tls"]]}
    });
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, config.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_osfp"))
        .args([
            "experiment",
            "-c",
            cfg_path.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6, "header + 5 sweep rows: {csv}");
    assert_eq!(lines[0], "window_minutes,protocols,accuracy");
    for (i, minutes) in [5, 15, 30, 45, 60].iter().enumerate() {
        assert!(
            lines[i + 1].starts_with(&format!("{minutes},tls,")),
            "{}",
            lines[i + 1]
        );
    }
}
