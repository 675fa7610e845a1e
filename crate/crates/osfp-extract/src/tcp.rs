//! TCP SYN fingerprinting: normalized TTL plus the ordered option list,
//! with MSS and window-scale values kept as decimal strings.

use osfp_core::{Element, Fingerprint};

use crate::packet::{decode_tcp, PacketView};
use crate::{ExtractError, ExtractOptions};

/// Round a decayed TTL up to the nearest common initial value.
pub fn normalize_ttl(ttl: u8) -> u32 {
    match ttl {
        0..=32 => 32,
        33..=64 => 64,
        65..=128 => 128,
        _ => 255,
    }
}

/// Fingerprint a client SYN. Non-SYN packets (and SYN+ACK) and non-TCP
/// traffic return `None`.
pub fn parse_tcp_syn(
    packet: &PacketView,
    options: &ExtractOptions,
) -> Result<Option<Fingerprint>, ExtractError> {
    let Some(tcp) = decode_tcp(packet)? else {
        return Ok(None);
    };
    if !tcp.syn || tcp.ack {
        return Ok(None);
    }
    let elements = parse_options(tcp.options)?;
    let ttl = if options.normalize_ttl {
        normalize_ttl(tcp.ttl)
    } else {
        tcp.ttl as u32
    };
    let fp = Fingerprint::tcp(ttl, elements).expect("tcp option elements are valid");
    Ok(Some(fp))
}

/// Ordered option list; repeats preserved. EOL stops the scan (the rest of
/// the option block is padding).
fn parse_options(mut opts: &[u8]) -> Result<Vec<Element>, ExtractError> {
    let mut out = Vec::new();
    while let Some(&kind) = opts.first() {
        match kind {
            0 => {
                out.push(Element::bare(0));
                break;
            }
            1 => {
                out.push(Element::bare(1));
                opts = &opts[1..];
            }
            _ => {
                let len = *opts
                    .get(1)
                    .ok_or(ExtractError::MalformedPacket("option missing length"))?
                    as usize;
                if len < 2 || len > opts.len() {
                    return Err(ExtractError::MalformedPacket("option list overrun"));
                }
                let body = &opts[2..len];
                let element = match (kind, body.len()) {
                    (2, 2) => {
                        Element::with_data(2, u16::from_be_bytes([body[0], body[1]]).to_string())
                    }
                    (2, _) => return Err(ExtractError::MalformedPacket("bad mss length")),
                    (3, 1) => Element::with_data(3, body[0].to_string()),
                    (3, _) => return Err(ExtractError::MalformedPacket("bad window scale length")),
                    _ => Element::bare(kind as u32),
                };
                out.push(element);
                opts = &opts[len..];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::LinkType;
    use crate::testutil::{ethernet_frame, ipv4_tcp, ipv6_tcp, opts, TcpFlags};

    fn syn_options() -> Vec<u8> {
        let mut o = opts::mss(1460);
        o.push(opts::NOP);
        o.extend_from_slice(&opts::window_scale(7));
        o.push(opts::NOP);
        o.push(opts::NOP);
        o.extend_from_slice(&opts::SACK_PERMITTED);
        assert_eq!(o.len() % 4, 0);
        o
    }

    fn view(ip: Vec<u8>) -> PacketView {
        PacketView::new(0.0, LinkType::Ethernet, ethernet_frame(0x0800, &ip)).unwrap()
    }

    #[test]
    fn syn_option_list_in_wire_order() {
        let ip = ipv4_tcp(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            50000,
            443,
            64,
            TcpFlags::SYN,
            &syn_options(),
            &[],
        );
        let fp = parse_tcp_syn(&view(ip), &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tcp/64:(2=1460)(1)(3=7)(1)(1)(4)");
    }

    #[test]
    fn syn_ack_is_not_fingerprinted() {
        let ip = ipv4_tcp(
            [10, 0, 0, 2],
            [10, 0, 0, 1],
            443,
            50000,
            64,
            TcpFlags::SYN_ACK,
            &syn_options(),
            &[],
        );
        assert!(parse_tcp_syn(&view(ip), &ExtractOptions::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn decayed_ttl_rounds_up() {
        let ip = ipv4_tcp(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            50000,
            443,
            52,
            TcpFlags::SYN,
            &[],
            &[],
        );
        let normalized = parse_tcp_syn(&view(ip.clone()), &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(normalized.ttl(), Some(64));

        let raw_opts = ExtractOptions {
            normalize_ttl: false,
            ..Default::default()
        };
        let raw = parse_tcp_syn(&view(ip), &raw_opts).unwrap().unwrap();
        assert_eq!(raw.ttl(), Some(52));
    }

    #[test]
    fn normalization_table() {
        for (raw, expected) in [
            (0, 32),
            (32, 32),
            (33, 64),
            (64, 64),
            (65, 128),
            (128, 128),
            (129, 255),
            (255, 255),
        ] {
            assert_eq!(normalize_ttl(raw), expected, "ttl {raw}");
        }
    }

    #[test]
    fn repeated_options_are_preserved() {
        let mut o = opts::mss(1260);
        o.extend_from_slice(&opts::mss(1260));
        let ip = ipv4_tcp(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            50000,
            443,
            128,
            TcpFlags::SYN,
            &o,
            &[],
        );
        let fp = parse_tcp_syn(&view(ip), &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tcp/128:(2=1260)(2=1260)");
    }

    #[test]
    fn option_overrun_is_malformed() {
        // Kind 5 claiming 8 bytes with only 4 present.
        let o = vec![5, 8, 0, 0];
        let ip = ipv4_tcp(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            50000,
            443,
            64,
            TcpFlags::SYN,
            &o,
            &[],
        );
        assert_eq!(
            parse_tcp_syn(&view(ip), &ExtractOptions::default()),
            Err(ExtractError::MalformedPacket("option list overrun"))
        );
    }

    #[test]
    fn eol_stops_the_scan() {
        let o = vec![opts::NOP, 0, 9, 9]; // NOP, EOL, then padding garbage
        let ip = ipv4_tcp(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            50000,
            443,
            64,
            TcpFlags::SYN,
            &o,
            &[],
        );
        let fp = parse_tcp_syn(&view(ip), &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tcp/64:(1)(0)");
    }

    #[test]
    fn ipv6_syn_uses_hop_limit() {
        let ip = ipv6_tcp(255, TcpFlags::SYN, &opts::mss(1440), &[]);
        let view = PacketView::new(0.0, LinkType::RawIp, ip).unwrap();
        let fp = parse_tcp_syn(&view, &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tcp/255:(2=1440)");
    }
}
