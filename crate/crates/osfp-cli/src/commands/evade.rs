use std::fs;
use std::path::Path;

use osfp_core::obfuscate::{run_evasion_sweep, EvasionConfig};
use serde_json::json;

use crate::commands::load_corpus;
use crate::report::{provenance, write_file};
use crate::{usage, CliError, ConfigArgs};

pub fn run(out_dir: &Path, args: &ConfigArgs, seed: Option<u64>) -> Result<(), CliError> {
    if !args.config.exists() {
        return Err(usage(format!(
            "config not found: {}",
            args.config.display()
        )));
    }
    let mut cfg = EvasionConfig::from_json(&fs::read_to_string(&args.config)?)
        .map_err(|e| usage(format!("{}: {e}", args.config.display())))?;
    if let Some(corpus) = &args.corpus {
        cfg.corpus = corpus.display().to_string();
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if cfg.corpus.is_empty() {
        return Err(usage("config names no corpus and --corpus was not given"));
    }
    let corpus = load_corpus(Path::new(&cfg.corpus))?;
    let effective = serde_json::to_string(&cfg).expect("config serializes");
    let report = run_evasion_sweep(&corpus, &cfg)?;

    let doc = json!({
        "provenance": provenance(&effective, cfg.seed),
        "report": report,
    });
    write_file(out_dir, "evasion.json", &format!("{doc:#}"))?;

    let mut csv = String::from("scope,level,accuracy\n");
    for row in &report.rows {
        let scope: Vec<&str> = row.scope.iter().map(|p| p.tag()).collect();
        csv.push_str(&format!(
            "{},{},{:.6}\n",
            scope.join("+"),
            row.level,
            row.accuracy
        ));
    }
    write_file(out_dir, "evasion.csv", &csv)?;
    Ok(())
}
