//! Session assembly: one record per client-initiated TCP connection,
//! keyed by 5-tuple, carrying the first SYN / ClientHello / HTTP request
//! fingerprints seen on the flow.

use std::collections::HashMap;
use std::net::IpAddr;

use osfp_core::session::{SessionKey, SessionRecord, Transport};
use osfp_core::Fingerprint;
use serde::Serialize;

use crate::http::parse_http_request;
use crate::packet::{decode_tcp, PacketView};
use crate::pseudonym::pseudonymize_address;
use crate::tcp::parse_tcp_syn;
use crate::tls::parse_tls_client_hello;
use crate::{ExtractError, ExtractOptions};

#[derive(Debug, Default, Clone, Serialize)]
pub struct ExtractCounters {
    pub packets: u64,
    pub non_tcp: u64,
    pub tcp_packets: u64,
    pub syns: u64,
    pub client_hellos: u64,
    pub http_requests: u64,
    pub malformed_packets: u64,
    pub malformed_tls: u64,
    pub malformed_http: u64,
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct FlowKey {
    src: IpAddr,
    dst: IpAddr,
    src_port: u16,
    dst_port: u16,
}

struct PendingSession {
    start_time: f64,
    last_seen: f64,
    tcp_fp: Option<Fingerprint>,
    tls_fp: Option<Fingerprint>,
    http_fp: Option<Fingerprint>,
}

/// Streaming session table. Push packets in capture order; flushed records
/// come out of [`Assembler::drain`] and [`Assembler::finish`].
pub struct Assembler {
    options: ExtractOptions,
    key: Vec<u8>,
    table: HashMap<FlowKey, PendingSession>,
    ready: Vec<SessionRecord>,
    counters: ExtractCounters,
    last_sweep: f64,
}

impl Assembler {
    pub fn new(key: &[u8], options: ExtractOptions) -> Result<Assembler, ExtractError> {
        if key.len() < 16 {
            return Err(ExtractError::KeyTooShort);
        }
        Ok(Assembler {
            options,
            key: key.to_vec(),
            table: HashMap::new(),
            ready: Vec::new(),
            counters: ExtractCounters::default(),
            last_sweep: f64::NEG_INFINITY,
        })
    }

    pub fn counters(&self) -> &ExtractCounters {
        &self.counters
    }

    pub fn push(&mut self, packet: &PacketView) {
        self.counters.packets += 1;
        let ts = packet.capture_timestamp;
        if ts - self.last_sweep >= 1.0 {
            self.sweep(ts);
            self.last_sweep = ts;
        }

        let tcp = match decode_tcp(packet) {
            Ok(Some(tcp)) => tcp,
            Ok(None) => {
                self.counters.non_tcp += 1;
                return;
            }
            Err(_) => {
                self.counters.malformed_packets += 1;
                return;
            }
        };
        self.counters.tcp_packets += 1;
        // Sessions are tracked in the client direction only; the sender of
        // a SYN, ClientHello, or request is the client.
        let key = FlowKey {
            src: tcp.src,
            dst: tcp.dst,
            src_port: tcp.src_port,
            dst_port: tcp.dst_port,
        };

        let mut tcp_fp = None;
        if tcp.syn && !tcp.ack {
            match parse_tcp_syn(packet, &self.options) {
                Ok(fp) => {
                    self.counters.syns += 1;
                    tcp_fp = fp;
                }
                Err(_) => {
                    self.counters.malformed_packets += 1;
                    return;
                }
            }
        }

        let mut tls_fp = None;
        let mut http_fp = None;
        let payload = tcp.payload;
        if !payload.is_empty() {
            if payload[0] == 22 && payload.get(1) == Some(&3) {
                match parse_tls_client_hello(payload, &self.options) {
                    Ok(Some(fp)) => {
                        self.counters.client_hellos += 1;
                        tls_fp = Some(fp);
                    }
                    Ok(None) => {}
                    Err(_) => self.counters.malformed_tls += 1,
                }
            } else if looks_like_http_request(payload) {
                match parse_http_request(payload, &self.options) {
                    Ok(Some(fp)) => {
                        self.counters.http_requests += 1;
                        http_fp = Some(fp);
                    }
                    Ok(None) => self.counters.http_requests += 1,
                    Err(_) => self.counters.malformed_http += 1,
                }
            }
        }

        if tcp_fp.is_none() && tls_fp.is_none() && http_fp.is_none() {
            // Keep an existing session's idle clock fresh, but do not
            // create table entries for evidence-free flows.
            if let Some(session) = self.table.get_mut(&key) {
                session.last_seen = ts;
            }
            return;
        }

        let session = self.table.entry(key).or_insert_with(|| PendingSession {
            start_time: ts,
            last_seen: ts,
            tcp_fp: None,
            tls_fp: None,
            http_fp: None,
        });
        session.last_seen = ts;
        // First SYN / ClientHello / request per session; retransmissions
        // and later requests are ignored.
        if session.tcp_fp.is_none() {
            session.tcp_fp = tcp_fp;
        }
        if session.tls_fp.is_none() {
            session.tls_fp = tls_fp;
        }
        if session.http_fp.is_none() {
            session.http_fp = http_fp;
        }
    }

    fn sweep(&mut self, now: f64) {
        let deadline = self.options.idle_timeout + self.options.reorder_tolerance;
        let expired: Vec<FlowKey> = self
            .table
            .iter()
            .filter(|(_, s)| now - s.last_seen > deadline)
            .map(|(k, _)| k.clone())
            .collect();
        for key in expired {
            let session = self.table.remove(&key).expect("still present");
            self.emit(key, session);
        }
    }

    fn emit(&mut self, key: FlowKey, session: PendingSession) {
        let src = pseudonymize_address(&key.src, &self.key).expect("key length checked");
        let dst = pseudonymize_address(&key.dst, &self.key).expect("key length checked");
        self.counters.sessions += 1;
        self.ready.push(SessionRecord {
            key: SessionKey {
                src,
                dst,
                src_port: key.src_port,
                dst_port: key.dst_port,
                transport: Transport::Tcp,
            },
            start_time: session.start_time,
            tcp_fp: session.tcp_fp,
            tls_fp: session.tls_fp,
            http_fp: session.http_fp,
            label: None,
        });
    }

    /// Records flushed so far, in deterministic order.
    pub fn drain(&mut self) -> Vec<SessionRecord> {
        let mut out = std::mem::take(&mut self.ready);
        sort_records(&mut out);
        out
    }

    /// Flush everything still pending and return all remaining records.
    pub fn finish(mut self) -> (Vec<SessionRecord>, ExtractCounters) {
        let keys: Vec<FlowKey> = self.table.keys().cloned().collect();
        for key in keys {
            let session = self.table.remove(&key).expect("still present");
            self.emit(key, session);
        }
        let mut out = std::mem::take(&mut self.ready);
        sort_records(&mut out);
        (out, self.counters)
    }
}

/// Total order over the full pseudonymized 5-tuple so output never depends
/// on session-table iteration order.
fn sort_records(records: &mut [SessionRecord]) {
    records.sort_by(|a, b| {
        a.start_time
            .total_cmp(&b.start_time)
            .then_with(|| a.key.src.cmp(&b.key.src))
            .then_with(|| a.key.dst.cmp(&b.key.dst))
            .then_with(|| a.key.src_port.cmp(&b.key.src_port))
            .then_with(|| a.key.dst_port.cmp(&b.key.dst_port))
    });
}

fn looks_like_http_request(payload: &[u8]) -> bool {
    let Some(space) = payload.iter().take(17).position(|&b| b == b' ') else {
        return false;
    };
    space > 0
        && payload[..space]
            .iter()
            .all(|&b| b.is_ascii_uppercase() || b == b'-')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::LinkType;
    use crate::testutil::{client_hello, ethernet_frame, ipv4_tcp, opts, Ext, TcpFlags};

    const KEY: &[u8] = b"0123456789abcdef0123456789abcdef";

    fn view(ts: f64, ip: Vec<u8>) -> PacketView {
        PacketView::new(ts, LinkType::Ethernet, ethernet_frame(0x0800, &ip)).unwrap()
    }

    fn syn(ts: f64, src: [u8; 4], sport: u16) -> PacketView {
        view(
            ts,
            ipv4_tcp(
                src,
                [198, 51, 100, 9],
                sport,
                443,
                64,
                TcpFlags::SYN,
                &opts::mss(1460),
                &[],
            ),
        )
    }

    fn hello(ts: f64, src: [u8; 4], sport: u16) -> PacketView {
        let payload = client_hello(&[0x2f], &[Ext(0, vec![])]);
        view(
            ts,
            ipv4_tcp(
                src,
                [198, 51, 100, 9],
                sport,
                443,
                64,
                TcpFlags::PSH_ACK,
                &[],
                &payload,
            ),
        )
    }

    #[test]
    fn syn_plus_hello_is_one_record() {
        let mut asm = Assembler::new(KEY, ExtractOptions::default()).unwrap();
        asm.push(&syn(1.0, [10, 0, 0, 1], 50000));
        asm.push(&hello(1.1, [10, 0, 0, 1], 50000));
        let (records, counters) = asm.finish();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert!(r.tcp_fp.is_some());
        assert!(r.tls_fp.is_some());
        assert!(r.http_fp.is_none());
        assert_eq!(r.start_time, 1.0);
        assert_eq!(counters.sessions, 1);
        assert_eq!(counters.syns, 1);
        assert_eq!(counters.client_hellos, 1);
    }

    #[test]
    fn two_connections_share_the_source_pseudonym() {
        let mut asm = Assembler::new(KEY, ExtractOptions::default()).unwrap();
        asm.push(&syn(1.0, [10, 0, 0, 1], 50000));
        asm.push(&syn(30.0, [10, 0, 0, 1], 50001));
        let (records, _) = asm.finish();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].key.src, records[1].key.src);
        assert_ne!(records[0].key.src_port, records[1].key.src_port);
    }

    #[test]
    fn mid_capture_session_without_syn_still_emits() {
        let mut asm = Assembler::new(KEY, ExtractOptions::default()).unwrap();
        let req = b"GET / HTTP/1.1\r\nUser-Agent: NoSyn/1\r\n\r\n";
        asm.push(&view(
            5.0,
            ipv4_tcp(
                [10, 0, 0, 2],
                [198, 51, 100, 9],
                50500,
                80,
                64,
                TcpFlags::PSH_ACK,
                &[],
                req,
            ),
        ));
        let (records, _) = asm.finish();
        assert_eq!(records.len(), 1);
        assert!(records[0].tcp_fp.is_none());
        assert_eq!(
            records[0].http_fp.as_ref().unwrap().canonical(),
            "http/(0=NoSyn/1)"
        );
    }

    #[test]
    fn idle_timeout_flushes_and_new_syn_reopens() {
        let mut asm = Assembler::new(KEY, ExtractOptions::default()).unwrap();
        asm.push(&syn(1.0, [10, 0, 0, 1], 50000));
        // Past timeout + tolerance: same 5-tuple becomes a new session.
        asm.push(&syn(400.0, [10, 0, 0, 1], 50000));
        let (records, counters) = asm.finish();
        assert_eq!(records.len(), 2);
        assert_eq!(counters.sessions, 2);
    }

    #[test]
    fn retransmitted_syn_is_ignored() {
        let mut asm = Assembler::new(KEY, ExtractOptions::default()).unwrap();
        asm.push(&syn(1.0, [10, 0, 0, 1], 50000));
        asm.push(&syn(1.5, [10, 0, 0, 1], 50000));
        let (records, counters) = asm.finish();
        assert_eq!(records.len(), 1);
        assert_eq!(counters.syns, 2);
    }

    #[test]
    fn server_traffic_creates_no_session() {
        let mut asm = Assembler::new(KEY, ExtractOptions::default()).unwrap();
        // SYN+ACK and a response payload from the server side.
        asm.push(&view(
            1.0,
            ipv4_tcp(
                [198, 51, 100, 9],
                [10, 0, 0, 1],
                443,
                50000,
                64,
                TcpFlags::SYN_ACK,
                &opts::mss(1460),
                &[],
            ),
        ));
        asm.push(&view(
            1.1,
            ipv4_tcp(
                [198, 51, 100, 9],
                [10, 0, 0, 1],
                80,
                50001,
                64,
                TcpFlags::PSH_ACK,
                &[],
                b"HTTP/1.1 200 OK\r\nServer: x\r\n\r\n",
            ),
        ));
        let (records, counters) = asm.finish();
        assert!(records.is_empty());
        assert_eq!(counters.sessions, 0);
        // The response body is not a request line; it is not an error
        // either because response payloads are simply not requests.
        assert_eq!(counters.malformed_http, 0);
    }

    #[test]
    fn short_key_is_rejected() {
        assert!(matches!(
            Assembler::new(b"short", ExtractOptions::default()),
            Err(ExtractError::KeyTooShort)
        ));
    }

    #[test]
    fn malformed_packets_are_counted_not_fatal() {
        let mut asm = Assembler::new(KEY, ExtractOptions::default()).unwrap();
        let mut ip = ipv4_tcp(
            [10, 0, 0, 1],
            [10, 0, 0, 2],
            1,
            2,
            64,
            TcpFlags::SYN,
            &[],
            &[],
        );
        ip[20 + 12] = 0xf0; // impossible data offset
        asm.push(&view(1.0, ip));
        asm.push(&syn(2.0, [10, 0, 0, 3], 50000));
        let (records, counters) = asm.finish();
        assert_eq!(counters.malformed_packets, 1);
        assert_eq!(records.len(), 1);
    }
}
