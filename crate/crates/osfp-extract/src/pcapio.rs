//! Capture-file reading: classic pcap and pcapng, auto-detected.
//! Truncated files yield the packets read so far plus a truncation count.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use pcap_parser::{create_reader, Block, Linktype, PcapBlockOwned, PcapError};
use serde::Serialize;

use crate::packet::{LinkType, PacketView};
use crate::CaptureError;

#[derive(Debug, Default, Clone, Serialize)]
pub struct CaptureStats {
    pub packets: u64,
    /// Blocks cut off by the end of the file.
    pub truncated: u64,
    /// Packets on link types this extractor does not decode.
    pub unsupported_linktype: u64,
    /// Frames shorter than their link header.
    pub short_frames: u64,
}

fn map_linktype(linktype: Linktype) -> Option<LinkType> {
    match linktype {
        Linktype::ETHERNET => Some(LinkType::Ethernet),
        Linktype::RAW | Linktype(228) | Linktype(229) => Some(LinkType::RawIp),
        _ => None,
    }
}

/// Stream every packet of a capture file through `sink`.
pub fn read_capture_file(
    path: &Path,
    sink: &mut dyn FnMut(PacketView),
) -> Result<CaptureStats, CaptureError> {
    let file = File::open(path)?;
    read_capture(file, sink)
}

pub fn read_capture<R: Read>(
    input: R,
    sink: &mut dyn FnMut(PacketView),
) -> Result<CaptureStats, CaptureError> {
    let mut reader = match create_reader(1 << 16, input) {
        Ok(reader) => reader,
        Err(PcapError::Eof) => return Ok(CaptureStats::default()),
        Err(e) => return Err(CaptureError::BadFormat(e.to_string())),
    };
    let mut stats = CaptureStats::default();

    // Legacy state.
    let mut legacy_linktype: Option<LinkType> = None;
    let mut legacy_nanos = false;
    // Pcapng per-interface state: (linktype, seconds per tick).
    let mut interfaces: Vec<(Option<LinkType>, f64)> = Vec::new();

    let mut stalled_at = usize::MAX;
    loop {
        match reader.next() {
            Ok((offset, block)) => {
                stalled_at = usize::MAX;
                match block {
                    PcapBlockOwned::LegacyHeader(hdr) => {
                        legacy_linktype = map_linktype(hdr.network);
                        legacy_nanos = hdr.is_nanosecond_precision();
                    }
                    PcapBlockOwned::Legacy(b) => {
                        if b.data.len() < b.caplen as usize {
                            stats.truncated += 1;
                        }
                        let scale = if legacy_nanos { 1e-9 } else { 1e-6 };
                        let ts = b.ts_sec as f64 + b.ts_usec as f64 * scale;
                        match legacy_linktype {
                            Some(lt) => emit(&mut stats, sink, ts, lt, b.data),
                            None => stats.unsupported_linktype += 1,
                        }
                    }
                    PcapBlockOwned::NG(Block::SectionHeader(_)) => interfaces.clear(),
                    PcapBlockOwned::NG(Block::InterfaceDescription(idb)) => {
                        let per_tick = idb.ts_resolution().map_or(1e-6, |units| 1.0 / units as f64);
                        interfaces.push((map_linktype(idb.linktype), per_tick));
                    }
                    PcapBlockOwned::NG(Block::EnhancedPacket(epb)) => {
                        match interfaces.get(epb.if_id as usize) {
                            Some(&(Some(lt), per_tick)) => {
                                let ticks = ((epb.ts_high as u64) << 32 | epb.ts_low as u64) as f64;
                                emit(&mut stats, sink, ticks * per_tick, lt, epb.data);
                            }
                            Some(&(None, _)) => stats.unsupported_linktype += 1,
                            None => stats.truncated += 1,
                        }
                    }
                    PcapBlockOwned::NG(Block::SimplePacket(spb)) => match interfaces.first() {
                        Some(&(Some(lt), _)) => emit(&mut stats, sink, 0.0, lt, spb.data),
                        _ => stats.unsupported_linktype += 1,
                    },
                    PcapBlockOwned::NG(_) => {}
                }
                reader.consume(offset);
            }
            Err(PcapError::Eof) => break,
            Err(PcapError::Incomplete) => {
                if reader.consumed() == stalled_at {
                    // No progress since the last refill: trailing partial
                    // block.
                    stats.truncated += 1;
                    break;
                }
                stalled_at = reader.consumed();
                if reader.refill().is_err() {
                    stats.truncated += 1;
                    break;
                }
            }
            Err(e) => return Err(CaptureError::BadFormat(e.to_string())),
        }
    }
    Ok(stats)
}

fn emit(
    stats: &mut CaptureStats,
    sink: &mut dyn FnMut(PacketView),
    ts: f64,
    link_type: LinkType,
    data: &[u8],
) {
    match PacketView::new(ts, link_type, data.to_vec()) {
        Ok(view) => {
            stats.packets += 1;
            sink(view);
        }
        Err(_) => stats.short_frames += 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{ethernet_frame, ipv4_tcp, pcap_file, pcapng_file, TcpFlags};

    fn frames() -> Vec<Vec<u8>> {
        (0..3)
            .map(|i| {
                ethernet_frame(
                    0x0800,
                    &ipv4_tcp(
                        [10, 0, 0, i as u8 + 1],
                        [10, 0, 0, 99],
                        50000 + i,
                        443,
                        64,
                        TcpFlags::SYN,
                        &[],
                        &[],
                    ),
                )
            })
            .collect()
    }

    fn collect(bytes: &[u8]) -> (Vec<PacketView>, CaptureStats) {
        let mut views = Vec::new();
        let stats = read_capture(bytes, &mut |v| views.push(v)).unwrap();
        (views, stats)
    }

    #[test]
    fn classic_pcap_timestamps_and_data() {
        let frames = frames();
        let packets: Vec<(f64, &[u8])> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| (1.5 + i as f64, f.as_slice()))
            .collect();
        let (views, stats) = collect(&pcap_file(&packets));
        assert_eq!(stats.packets, 3);
        assert_eq!(stats.truncated, 0);
        assert_eq!(views[0].capture_timestamp, 1.5);
        assert_eq!(views[2].capture_timestamp, 3.5);
        assert_eq!(views[1].bytes(), packets[1].1);
    }

    #[test]
    fn pcapng_round() {
        let frames = frames();
        let packets: Vec<(f64, &[u8])> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| (10.25 + i as f64, f.as_slice()))
            .collect();
        let (views, stats) = collect(&pcapng_file(&packets));
        assert_eq!(stats.packets, 3);
        assert!((views[0].capture_timestamp - 10.25).abs() < 1e-6);
    }

    #[test]
    fn empty_input_is_empty_not_an_error() {
        let (views, stats) = collect(b"");
        assert!(views.is_empty());
        assert_eq!(stats.packets, 0);
    }

    #[test]
    fn garbage_is_rejected() {
        let mut sink = |_v: PacketView| {};
        assert!(read_capture(&b"this is not a capture"[..], &mut sink).is_err());
    }

    #[test]
    fn truncated_file_keeps_leading_packets() {
        let frames = frames();
        let packets: Vec<(f64, &[u8])> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| (1.0 + i as f64, f.as_slice()))
            .collect();
        let full = pcap_file(&packets);
        let cut = &full[..full.len() - 30];
        let (views, stats) = collect(cut);
        assert_eq!(views.len(), 2);
        assert_eq!(stats.truncated, 1);
    }
}
