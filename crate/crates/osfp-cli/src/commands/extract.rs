use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use osfp_extract::pcapio::{read_capture_file, CaptureStats};
use osfp_extract::{Assembler, ExtractCounters, ExtractOptions};
use serde_json::json;

use crate::{usage, CliError, ExtractArgs};

pub fn run(out_dir: &Path, args: &ExtractArgs) -> Result<(), CliError> {
    let key = load_key(args)?;
    let options = ExtractOptions {
        normalize_ttl: !args.raw_ttl,
        normalize_grease: !args.raw_grease,
        ..Default::default()
    };
    for input in &args.inputs {
        if !input.exists() {
            return Err(usage(format!("capture not found: {}", input.display())));
        }
    }

    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(&args.out);
    let mut out = BufWriter::new(File::create(&path)?);
    let mut totals = ExtractCounters::default();
    let mut capture = CaptureStats::default();
    // One session table per input file; captures are independent.
    for input in &args.inputs {
        let mut asm = Assembler::new(&key, options.clone()).map_err(|e| usage(e.to_string()))?;
        let stats = read_capture_file(input, &mut |view| asm.push(&view))
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("{}: {e}", input.display())))?;
        if stats.truncated > 0 {
            eprintln!(
                "warning: {}: truncated capture, kept {} packets",
                input.display(),
                stats.packets
            );
        }
        let (records, counters) = asm.finish();
        for record in &records {
            out.write_all(record.to_json_line().as_bytes())?;
            out.write_all(b"\n")?;
        }
        add_counters(&mut totals, &counters);
        capture.packets += stats.packets;
        capture.truncated += stats.truncated;
        capture.unsupported_linktype += stats.unsupported_linktype;
        capture.short_frames += stats.short_frames;
    }
    out.flush()?;

    eprintln!(
        "{}",
        json!({"out": path.display().to_string(), "capture": capture, "extract": totals})
    );
    Ok(())
}

fn add_counters(total: &mut ExtractCounters, c: &ExtractCounters) {
    total.packets += c.packets;
    total.non_tcp += c.non_tcp;
    total.tcp_packets += c.tcp_packets;
    total.syns += c.syns;
    total.client_hellos += c.client_hellos;
    total.http_requests += c.http_requests;
    total.malformed_packets += c.malformed_packets;
    total.malformed_tls += c.malformed_tls;
    total.malformed_http += c.malformed_http;
    total.sessions += c.sessions;
}

/// Keys never travel on the command line: environment variable or file.
fn load_key(args: &ExtractArgs) -> Result<Vec<u8>, CliError> {
    if let Some(path) = &args.key_file {
        if !path.exists() {
            return Err(usage(format!("key file not found: {}", path.display())));
        }
        return Ok(fs::read(path)?);
    }
    match std::env::var(&args.key_env) {
        Ok(value) if value.len() >= 16 => Ok(value.into_bytes()),
        Ok(_) => Err(usage(format!(
            "key in ${} must be at least 16 bytes",
            args.key_env
        ))),
        Err(_) => Err(usage(format!(
            "no pseudonymization key: set ${} or pass --key-file",
            args.key_env
        ))),
    }
}
