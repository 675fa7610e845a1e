use std::fs;
use std::path::Path;

use osfp_core::experiment::{run_experiment, ExperimentConfig};
use serde_json::json;

use crate::commands::load_corpus;
use crate::report::{provenance, slug, write_file};
use crate::{usage, CliError, ConfigArgs};

pub fn run(out_dir: &Path, args: &ConfigArgs, seed: Option<u64>) -> Result<(), CliError> {
    if !args.config.exists() {
        return Err(usage(format!(
            "config not found: {}",
            args.config.display()
        )));
    }
    let mut cfg = ExperimentConfig::from_json(&fs::read_to_string(&args.config)?)
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
    let report = run_experiment(&corpus, &cfg)?;

    let doc = json!({
        "provenance": provenance(&effective, cfg.seed),
        "report": report,
    });
    write_file(out_dir, "report.json", &format!("{doc:#}"))?;

    for single in &report.single_session {
        write_file(
            out_dir,
            &format!("confusion_single_{}.csv", single.protocol),
            &single.confusion.to_csv(),
        )?;
    }
    for multi in &report.multi_session {
        let protos: Vec<&str> = multi.protocols.iter().map(|p| p.tag()).collect();
        let name = slug(&["multi", &protos.join("-"), &format!("{:?}", multi.taxonomy)]);
        write_file(
            out_dir,
            &format!("confusion_{name}.csv"),
            &multi.confusion.to_csv(),
        )?;
    }
    if !report.sweep.is_empty() {
        let mut csv = String::from("window_minutes,protocols,accuracy\n");
        for row in &report.sweep {
            let protos: Vec<&str> = row.protocols.iter().map(|p| p.tag()).collect();
            csv.push_str(&format!(
                "{},{},{:.6}\n",
                row.window_minutes,
                protos.join("+"),
                row.accuracy
            ));
        }
        write_file(out_dir, "sweep.csv", &csv)?;
    }
    Ok(())
}
