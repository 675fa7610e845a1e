//! Hand-encoded packet, handshake, and capture-file builders for tests and
//! fixtures. Byte layouts follow the wire formats directly so fixtures stay
//! independent of the parsers under test.

pub struct TcpFlags;

impl TcpFlags {
    pub const SYN: u8 = 0x02;
    pub const SYN_ACK: u8 = 0x12;
    pub const ACK: u8 = 0x10;
    pub const PSH_ACK: u8 = 0x18;
}

/// IPv4 + TCP packet with the given options (already encoded) and payload.
#[allow(clippy::too_many_arguments)]
pub fn ipv4_tcp(
    src: [u8; 4],
    dst: [u8; 4],
    src_port: u16,
    dst_port: u16,
    ttl: u8,
    flags: u8,
    options: &[u8],
    payload: &[u8],
) -> Vec<u8> {
    assert!(
        options.len().is_multiple_of(4),
        "tcp options must be padded to 4 bytes"
    );
    let tcp_len = 20 + options.len() + payload.len();
    let total = 20 + tcp_len;
    let mut out = Vec::with_capacity(total);
    out.push(0x45); // version 4, ihl 5
    out.push(0);
    out.extend_from_slice(&(total as u16).to_be_bytes());
    out.extend_from_slice(&[0, 0, 0x40, 0]); // id, DF
    out.push(ttl);
    out.push(6); // TCP
    out.extend_from_slice(&[0, 0]); // checksum (unchecked)
    out.extend_from_slice(&src);
    out.extend_from_slice(&dst);
    push_tcp(&mut out, src_port, dst_port, flags, options, payload);
    out
}

/// IPv6 + TCP packet from fixed test addresses.
pub fn ipv6_tcp(hop_limit: u8, flags: u8, options: &[u8], payload: &[u8]) -> Vec<u8> {
    assert!(options.len().is_multiple_of(4));
    let tcp_len = 20 + options.len() + payload.len();
    let mut out = Vec::with_capacity(40 + tcp_len);
    out.extend_from_slice(&[0x60, 0, 0, 0]);
    out.extend_from_slice(&(tcp_len as u16).to_be_bytes());
    out.push(6); // next header TCP
    out.push(hop_limit);
    out.extend_from_slice(&[0x20, 0x01, 0x0d, 0xb8, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1]);
    out.extend_from_slice(&[0x20, 0x01, 0x0d, 0xb8, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2]);
    push_tcp(&mut out, 50001, 443, flags, options, payload);
    out
}

fn push_tcp(
    out: &mut Vec<u8>,
    src_port: u16,
    dst_port: u16,
    flags: u8,
    options: &[u8],
    payload: &[u8],
) {
    out.extend_from_slice(&src_port.to_be_bytes());
    out.extend_from_slice(&dst_port.to_be_bytes());
    out.extend_from_slice(&[0, 0, 0, 1]); // seq
    out.extend_from_slice(&[0, 0, 0, 0]); // ack
    let data_offset = (20 + options.len()) / 4;
    out.push((data_offset as u8) << 4);
    out.push(flags);
    out.extend_from_slice(&[0x72, 0x10]); // window
    out.extend_from_slice(&[0, 0, 0, 0]); // checksum, urgent
    out.extend_from_slice(options);
    out.extend_from_slice(payload);
}

pub fn ethernet_frame(ethertype: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(14 + payload.len());
    out.extend_from_slice(&[0x02, 0, 0, 0, 0, 1]);
    out.extend_from_slice(&[0x02, 0, 0, 0, 0, 2]);
    out.extend_from_slice(&ethertype.to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// TCP option byte helpers.
pub mod opts {
    pub fn mss(value: u16) -> Vec<u8> {
        let v = value.to_be_bytes();
        vec![2, 4, v[0], v[1]]
    }

    pub fn window_scale(shift: u8) -> Vec<u8> {
        vec![3, 3, shift]
    }

    pub const NOP: u8 = 1;
    pub const SACK_PERMITTED: [u8; 2] = [4, 2];

    pub fn timestamps(tsval: u32, tsecr: u32) -> Vec<u8> {
        let mut out = vec![8, 10];
        out.extend_from_slice(&tsval.to_be_bytes());
        out.extend_from_slice(&tsecr.to_be_bytes());
        out
    }
}

/// A TLS extension for [`client_hello`]: type code plus raw payload.
pub struct Ext(pub u16, pub Vec<u8>);

/// TLS record wrapping a ClientHello handshake.
pub fn client_hello(ciphers: &[u16], extensions: &[Ext]) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend_from_slice(&[0x03, 0x03]); // client_version TLS 1.2
    body.extend_from_slice(&[0x5a; 32]); // random
    body.push(0); // empty session id
    body.extend_from_slice(&((ciphers.len() * 2) as u16).to_be_bytes());
    for c in ciphers {
        body.extend_from_slice(&c.to_be_bytes());
    }
    body.extend_from_slice(&[1, 0]); // null compression
    let mut exts = Vec::new();
    for Ext(code, payload) in extensions {
        exts.extend_from_slice(&code.to_be_bytes());
        exts.extend_from_slice(&(payload.len() as u16).to_be_bytes());
        exts.extend_from_slice(payload);
    }
    body.extend_from_slice(&(exts.len() as u16).to_be_bytes());
    body.extend_from_slice(&exts);
    handshake_record(1, &body)
}

/// TLS record wrapping one handshake message of the given type.
pub fn handshake_record(handshake_type: u8, body: &[u8]) -> Vec<u8> {
    let mut hs = vec![handshake_type];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(body);
    let mut rec = vec![22, 0x03, 0x03];
    rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    rec.extend_from_slice(&hs);
    rec
}

/// Classic pcap file (microsecond resolution, ethernet link type).
pub fn pcap_file(packets: &[(f64, &[u8])]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&0xa1b2c3d4u32.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // major
    out.extend_from_slice(&4u16.to_le_bytes()); // minor
    out.extend_from_slice(&[0; 8]); // thiszone, sigfigs
    out.extend_from_slice(&65535u32.to_le_bytes()); // snaplen
    out.extend_from_slice(&1u32.to_le_bytes()); // LINKTYPE_ETHERNET
    for (ts, bytes) in packets {
        let sec = ts.floor() as u32;
        let usec = ((ts - ts.floor()) * 1e6).round() as u32;
        out.extend_from_slice(&sec.to_le_bytes());
        out.extend_from_slice(&usec.to_le_bytes());
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    out
}

/// Minimal pcapng file: SHB + IDB (ethernet) + one EPB per packet,
/// microsecond timestamps.
pub fn pcapng_file(packets: &[(f64, &[u8])]) -> Vec<u8> {
    let mut out = Vec::new();
    let block = |ty: u32, body: &[u8]| {
        let mut b = Vec::new();
        let pad = (4 - body.len() % 4) % 4;
        let total = (12 + body.len() + pad) as u32;
        b.extend_from_slice(&ty.to_le_bytes());
        b.extend_from_slice(&total.to_le_bytes());
        b.extend_from_slice(body);
        b.extend_from_slice(&vec![0; pad]);
        b.extend_from_slice(&total.to_le_bytes());
        b
    };
    // Section header.
    let mut shb = Vec::new();
    shb.extend_from_slice(&0x1a2b3c4du32.to_le_bytes());
    shb.extend_from_slice(&1u16.to_le_bytes());
    shb.extend_from_slice(&0u16.to_le_bytes());
    shb.extend_from_slice(&(-1i64).to_le_bytes());
    out.extend_from_slice(&block(0x0a0d0d0a, &shb));
    // Interface description: ethernet, default microsecond resolution.
    let mut idb = Vec::new();
    idb.extend_from_slice(&1u16.to_le_bytes()); // linktype
    idb.extend_from_slice(&0u16.to_le_bytes());
    idb.extend_from_slice(&65535u32.to_le_bytes()); // snaplen
    out.extend_from_slice(&block(0x00000001, &idb));
    for (ts, bytes) in packets {
        let stamp = (*ts * 1e6).round() as u64;
        let mut epb = Vec::new();
        epb.extend_from_slice(&0u32.to_le_bytes()); // interface id
        epb.extend_from_slice(&((stamp >> 32) as u32).to_le_bytes());
        epb.extend_from_slice(&(stamp as u32).to_le_bytes());
        epb.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        epb.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        epb.extend_from_slice(bytes);
        let pad = (4 - bytes.len() % 4) % 4;
        epb.extend_from_slice(&vec![0; pad]);
        out.extend_from_slice(&block(0x00000006, &epb));
    }
    out
}

/// Which parser a fixture feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    TcpSyn,
    Tls,
    Http,
}

/// A hand-encoded parser fixture. `expected` is the canonical fingerprint
/// derived by hand from the wire layout; `None` means the parser must
/// return absent.
pub struct ParserFixture {
    pub name: &'static str,
    pub kind: FixtureKind,
    pub input: Vec<u8>,
    pub expected: Option<&'static str>,
}

/// The golden fixture set: TCP SYN variants (repeated options, the VPN-capped
/// MSS 1260, TTL decay, IPv6), ClientHello variants (GREASE, ALPN), and HTTP
/// request variants (header-name case, missing User-Agent).
pub fn parser_fixtures() -> Vec<ParserFixture> {
    let syn4 = |ttl: u8, flags: u8, options: &[u8]| {
        ethernet_frame(
            0x0800,
            &ipv4_tcp(
                [10, 0, 0, 1],
                [198, 51, 100, 9],
                50000,
                443,
                ttl,
                flags,
                options,
                &[],
            ),
        )
    };
    let mut classic = opts::mss(1460);
    classic.push(opts::NOP);
    classic.extend_from_slice(&opts::window_scale(7));
    classic.push(opts::NOP);
    classic.push(opts::NOP);
    classic.extend_from_slice(&opts::SACK_PERMITTED);

    let mut vpn = opts::mss(1260);
    vpn.extend_from_slice(&opts::SACK_PERMITTED);
    vpn.extend_from_slice(&opts::timestamps(0x01020304, 0));

    let mut repeated = opts::mss(1260);
    repeated.extend_from_slice(&opts::mss(1260));

    vec![
        ParserFixture {
            name: "syn_classic_option_list",
            kind: FixtureKind::TcpSyn,
            input: syn4(64, TcpFlags::SYN, &classic),
            expected: Some("tcp/64:(2=1460)(1)(3=7)(1)(1)(4)"),
        },
        ParserFixture {
            name: "syn_vpn_capped_mss",
            kind: FixtureKind::TcpSyn,
            input: syn4(128, TcpFlags::SYN, &vpn),
            expected: Some("tcp/128:(2=1260)(4)(8)"),
        },
        ParserFixture {
            name: "syn_repeated_mss_option",
            kind: FixtureKind::TcpSyn,
            input: syn4(128, TcpFlags::SYN, &repeated),
            expected: Some("tcp/128:(2=1260)(2=1260)"),
        },
        ParserFixture {
            name: "syn_decayed_ttl_rounds_up",
            kind: FixtureKind::TcpSyn,
            input: syn4(52, TcpFlags::SYN, &opts::mss(1460)),
            expected: Some("tcp/64:(2=1460)"),
        },
        ParserFixture {
            name: "syn_without_options",
            kind: FixtureKind::TcpSyn,
            input: syn4(200, TcpFlags::SYN, &[]),
            expected: Some("tcp/255:"),
        },
        ParserFixture {
            name: "syn_ack_is_not_a_client_syn",
            kind: FixtureKind::TcpSyn,
            input: syn4(64, TcpFlags::SYN_ACK, &classic),
            expected: None,
        },
        ParserFixture {
            name: "syn_ipv6_hop_limit",
            kind: FixtureKind::TcpSyn,
            input: ipv6_tcp(64, TcpFlags::SYN, &opts::mss(1440), &[]),
            expected: Some("tcp/64:(2=1440)"),
        },
        ParserFixture {
            name: "hello_ciphers_and_group_payload",
            kind: FixtureKind::Tls,
            input: client_hello(
                &[0x002f, 0x0035],
                &[
                    Ext(0, vec![]),
                    Ext(10, vec![0x00, 0x04, 0x00, 0x17, 0x00, 0x18]),
                ],
            ),
            expected: Some("tls/(47)(53)|(0)(10=000400170018)"),
        },
        ParserFixture {
            name: "hello_grease_cipher_and_extension",
            kind: FixtureKind::Tls,
            input: client_hello(
                &[0x5a5a, 0xc02f],
                &[Ext(0xaaaa, vec![]), Ext(11, vec![0x01, 0x00])],
            ),
            expected: Some("tls/(2570)(49199)|(2570)(11=0100)"),
        },
        ParserFixture {
            name: "hello_alpn_payload_and_ticket",
            kind: FixtureKind::Tls,
            input: client_hello(
                &[0xc02b],
                &[
                    Ext(16, b"\x00\x0c\x02h2\x08http/1.1".to_vec()),
                    Ext(35, vec![]),
                ],
            ),
            expected: Some("tls/(49195)|(16=000c02683208687474702f312e31)(35)"),
        },
        ParserFixture {
            name: "application_data_is_not_a_hello",
            kind: FixtureKind::Tls,
            input: vec![23, 3, 3, 0, 4, 9, 9, 9, 9],
            expected: None,
        },
        ParserFixture {
            name: "server_hello_is_not_a_client_hello",
            kind: FixtureKind::Tls,
            input: handshake_record(2, &[0x03, 0x03, 0, 0, 0]),
            expected: None,
        },
        ParserFixture {
            name: "http_user_agent_verbatim",
            kind: FixtureKind::Http,
            input: b"GET / HTTP/1.1\r\nHost: a\r\nUser-Agent: Foo/1.0 (X11)\r\n\r\n".to_vec(),
            expected: Some("http/(0=Foo/1.0 (X11\\))"),
        },
        ParserFixture {
            name: "http_header_name_case_insensitive",
            kind: FixtureKind::Http,
            input: b"GET /path HTTP/1.1\r\nuser-agent: BaR/2\r\nHost: b\r\n\r\n".to_vec(),
            expected: Some("http/(0=BaR/2)"),
        },
        ParserFixture {
            name: "http_without_user_agent",
            kind: FixtureKind::Http,
            input: b"GET / HTTP/1.1\r\nHost: a\r\nAccept: */*\r\n\r\n".to_vec(),
            expected: None,
        },
    ]
}
