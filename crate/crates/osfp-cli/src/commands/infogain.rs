use std::path::Path;

use osfp_core::infogain::{
    gain_rows_csv, information_gain, top_fingerprints_by_gain, top_gain_csv,
};
use osfp_core::windows::build_windows;
use osfp_core::{CountStore, Protocol};
use serde_json::json;

use crate::commands::load_corpus;
use crate::report::write_file;
use crate::{CliError, InfogainArgs};

pub fn run(out_dir: &Path, args: &InfogainArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.sessions)?;
    if !corpus.is_fully_labeled() || corpus.sessions.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "information gain needs fully labeled sessions"
        )));
    }
    let (flow_unit, window_unit) = match args.unit.as_str() {
        "flow" => (true, false),
        "window" => (false, true),
        "both" => (true, true),
        other => return Err(crate::usage(format!("unknown unit {other:?}"))),
    };

    // Table rows in the windowed-first layout.
    let mut rows: Vec<(String, osfp_core::infogain::InfoGainReport)> = Vec::new();
    let mut flow_stores: Vec<(Protocol, CountStore)> = Vec::new();

    if window_unit {
        let sessions: Vec<_> = corpus.sessions.iter().collect();
        let windows = build_windows(&corpus, &sessions, args.window_minutes);
        let mut all_store = CountStore::new();
        let mut proto_stores = [CountStore::new(), CountStore::new(), CountStore::new()];
        for w in &windows {
            let label = w.label.as_ref().expect("labeled corpus");
            let mut all_keys: Vec<&str> = Vec::new();
            for (store, fps) in proto_stores.iter_mut().zip(&w.fps) {
                if fps.is_empty() {
                    continue;
                }
                let mut keys: Vec<&str> = fps.iter().map(|&fp| corpus.fp_key(fp)).collect();
                keys.sort_unstable();
                store.observe_key(&keys.join(";"), label, 1);
                all_keys.extend(keys);
            }
            all_keys.sort_unstable();
            all_store.observe_key(&all_keys.join(";"), label, 1);
        }
        rows.push(("all-multi".into(), information_gain(&all_store)?));
        for (slot, proto) in Protocol::ALL.iter().enumerate() {
            if !proto_stores[slot].is_empty() {
                rows.push((
                    format!("{proto}-multi"),
                    information_gain(&proto_stores[slot])?,
                ));
            }
        }
    }

    if flow_unit {
        for (slot, &proto) in Protocol::ALL.iter().enumerate() {
            let mut store = CountStore::new();
            for s in &corpus.sessions {
                if let (Some(fp), Some(label)) = (s.fps[slot], s.label) {
                    store.observe_key(corpus.fp_key(fp), corpus.label(label), 1);
                }
            }
            if store.is_empty() {
                continue;
            }
            let report = information_gain(&store)?;
            rows.push((proto.tag().into(), report));
            let top = top_fingerprints_by_gain(&store, args.top)?;
            write_file(out_dir, &format!("top_{proto}.csv"), &top_gain_csv(&top))?;
            flow_stores.push((proto, store));
        }
    }

    write_file(out_dir, "gain_rows.csv", &gain_rows_csv(&rows))?;
    let doc = json!({
        "unit": args.unit,
        "window_minutes": args.window_minutes,
        "rows": rows
            .iter()
            .map(|(name, r)| {
                json!({
                    "data_type": name,
                    "h_prior": r.h_prior,
                    "h_posterior": r.h_posterior,
                    "gain": r.gain,
                })
            })
            .collect::<Vec<_>>(),
    });
    write_file(out_dir, "infogain.json", &format!("{doc:#}"))?;
    for (name, report) in &rows {
        // Internal identity: the report stores the entropy-difference value.
        debug_assert!(
            (report.gain - (report.h_prior - report.h_posterior)).abs() < 1e-9,
            "{name} gain identity"
        );
    }
    Ok(())
}
