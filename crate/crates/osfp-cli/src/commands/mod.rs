pub mod evade;
pub mod experiment;
pub mod extract;
pub mod infogain;
pub mod synth;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use osfp_core::session::read_jsonl;
use osfp_core::Corpus;

use crate::{usage, CliError};

pub fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    if !path.exists() {
        return Err(usage(format!("corpus not found: {}", path.display())));
    }
    let reader = BufReader::new(File::open(path)?);
    let corpus = Corpus::from_records(read_jsonl(reader))
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    Ok(corpus)
}
