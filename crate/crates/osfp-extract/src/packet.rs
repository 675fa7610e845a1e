//! Link/IP/TCP header walking over raw capture bytes.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use crate::ExtractError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
    RawIp,
}

/// One captured packet: a timestamp plus the immutable link-layer bytes.
#[derive(Debug, Clone)]
pub struct PacketView {
    pub capture_timestamp: f64,
    pub link_type: LinkType,
    link_bytes: Vec<u8>,
}

impl PacketView {
    /// Rejects inputs shorter than the link type's minimum header.
    pub fn new(
        capture_timestamp: f64,
        link_type: LinkType,
        link_bytes: Vec<u8>,
    ) -> Result<PacketView, ExtractError> {
        let min = match link_type {
            LinkType::Ethernet => 14,
            LinkType::RawIp => 20,
        };
        if link_bytes.len() < min {
            return Err(ExtractError::MalformedPacket("short link frame"));
        }
        Ok(PacketView {
            capture_timestamp,
            link_type,
            link_bytes,
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.link_bytes
    }
}

/// Decoded TCP packet view into a [`PacketView`]'s buffer.
#[derive(Debug)]
pub struct TcpPacket<'a> {
    pub src: IpAddr,
    pub dst: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub ttl: u8,
    pub syn: bool,
    pub ack: bool,
    pub options: &'a [u8],
    pub payload: &'a [u8],
}

/// Walk the headers; `Ok(None)` for well-formed non-TCP traffic,
/// `MalformedPacket` where lengths contradict the byte count.
pub fn decode_tcp(view: &PacketView) -> Result<Option<TcpPacket<'_>>, ExtractError> {
    let bytes = view.bytes();
    let ip = match view.link_type {
        LinkType::RawIp => bytes,
        LinkType::Ethernet => {
            let mut offset = 12;
            let mut ethertype = read_u16(bytes, offset)?;
            offset += 2;
            // Single VLAN tag is common on SPAN ports.
            if ethertype == 0x8100 || ethertype == 0x88a8 {
                offset += 2;
                ethertype = read_u16(bytes, offset)?;
                offset += 2;
            }
            match ethertype {
                0x0800 | 0x86dd => {}
                _ => return Ok(None),
            }
            &bytes[offset..]
        }
    };
    decode_ip(ip)
}

fn decode_ip(ip: &[u8]) -> Result<Option<TcpPacket<'_>>, ExtractError> {
    if ip.is_empty() {
        return Err(ExtractError::MalformedPacket("empty ip buffer"));
    }
    match ip[0] >> 4 {
        4 => decode_ipv4(ip),
        6 => decode_ipv6(ip),
        _ => Ok(None),
    }
}

fn decode_ipv4(ip: &[u8]) -> Result<Option<TcpPacket<'_>>, ExtractError> {
    if ip.len() < 20 {
        return Err(ExtractError::MalformedPacket("short ipv4 header"));
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    if ihl < 20 || ip.len() < ihl {
        return Err(ExtractError::MalformedPacket("bad ihl"));
    }
    let total_len = read_u16(ip, 2)? as usize;
    if total_len < ihl {
        return Err(ExtractError::MalformedPacket("total length below header"));
    }
    // Captures may truncate below total_len; parse what is present.
    let end = total_len.min(ip.len());
    let flags_frag = read_u16(ip, 6)?;
    if flags_frag & 0x1fff != 0 {
        // Non-first fragment: no TCP header here.
        return Ok(None);
    }
    if ip[9] != 6 {
        return Ok(None);
    }
    let src = IpAddr::V4(Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]));
    decode_tcp_header(&ip[ihl..end], src, dst, ip[8])
}

fn decode_ipv6(ip: &[u8]) -> Result<Option<TcpPacket<'_>>, ExtractError> {
    if ip.len() < 40 {
        return Err(ExtractError::MalformedPacket("short ipv6 header"));
    }
    let payload_len = read_u16(ip, 4)? as usize;
    let src = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&ip[8..24]).unwrap()));
    let dst = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&ip[24..40]).unwrap()));
    let hop_limit = ip[7];
    let end = (40 + payload_len).min(ip.len());
    let mut next = ip[6];
    let mut offset = 40;
    // Walk the common extension-header chain.
    for _ in 0..8 {
        match next {
            6 => return decode_tcp_header(&ip[offset..end], src, dst, hop_limit),
            0 | 43 | 60 => {
                if offset + 8 > end {
                    return Err(ExtractError::MalformedPacket("short ipv6 extension"));
                }
                next = ip[offset];
                offset += 8 + ip[offset + 1] as usize * 8;
                if offset > end {
                    return Err(ExtractError::MalformedPacket("ipv6 extension overrun"));
                }
            }
            44 => {
                if offset + 8 > end {
                    return Err(ExtractError::MalformedPacket("short fragment header"));
                }
                if read_u16(ip, offset + 2)? & 0xfff8 != 0 {
                    return Ok(None); // non-first fragment
                }
                next = ip[offset];
                offset += 8;
            }
            _ => return Ok(None),
        }
    }
    Ok(None)
}

fn decode_tcp_header(
    tcp: &[u8],
    src: IpAddr,
    dst: IpAddr,
    ttl: u8,
) -> Result<Option<TcpPacket<'_>>, ExtractError> {
    if tcp.len() < 20 {
        return Err(ExtractError::MalformedPacket("short tcp header"));
    }
    let data_offset = (tcp[12] >> 4) as usize * 4;
    if data_offset < 20 || tcp.len() < data_offset {
        return Err(ExtractError::MalformedPacket("bad tcp data offset"));
    }
    let flags = tcp[13];
    Ok(Some(TcpPacket {
        src,
        dst,
        src_port: read_u16(tcp, 0)?,
        dst_port: read_u16(tcp, 2)?,
        ttl,
        syn: flags & 0x02 != 0,
        ack: flags & 0x10 != 0,
        options: &tcp[20..data_offset],
        payload: &tcp[data_offset..],
    }))
}

fn read_u16(bytes: &[u8], offset: usize) -> Result<u16, ExtractError> {
    bytes
        .get(offset..offset + 2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .ok_or(ExtractError::MalformedPacket("truncated field"))
}
