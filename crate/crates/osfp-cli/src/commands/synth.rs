use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use osfp_core::synth::{default_spec, generate, CorpusSpec};
use serde_json::json;

use crate::{usage, CliError, SynthArgs};

pub fn run(out_dir: &Path, args: &SynthArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(path) => {
            if !path.exists() {
                return Err(usage(format!("spec not found: {}", path.display())));
            }
            CorpusSpec::from_json(&fs::read_to_string(path)?)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => default_spec(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }

    let stream = generate(&spec).map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(&args.out);
    let mut out = BufWriter::new(File::create(&path)?);
    let mut sessions = 0u64;
    let mut hosts: BTreeMap<String, std::collections::BTreeSet<String>> = BTreeMap::new();
    let mut per_label: BTreeMap<String, u64> = BTreeMap::new();
    for record in stream {
        let label = record
            .label
            .as_ref()
            .expect("synthetic records are labeled");
        *per_label.entry(label.as_str().to_string()).or_insert(0) += 1;
        hosts
            .entry(label.as_str().to_string())
            .or_default()
            .insert(record.key.src.clone());
        out.write_all(record.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
        sessions += 1;
    }
    out.flush()?;

    let summary = json!({
        "out": path.display().to_string(),
        "seed": spec.seed,
        "days": spec.days,
        "sessions": sessions,
        "hosts": hosts.values().map(|h| h.len() as u64).sum::<u64>(),
        "labels": per_label
            .iter()
            .map(|(label, sessions)| {
                (
                    label.clone(),
                    json!({"hosts": hosts[label].len(), "sessions": sessions}),
                )
            })
            .collect::<serde_json::Map<String, serde_json::Value>>(),
    });
    eprintln!("{summary}");
    Ok(())
}
