//! HTTP/1.x request fingerprinting: the User-Agent value, byte for byte.

use osfp_core::Fingerprint;

use crate::{ExtractError, ExtractOptions};

/// Fingerprint an HTTP/1.x request. Returns `None` when no User-Agent
/// header exists; malformed requests (no request line, or no header
/// terminator within the scan limit) are errors.
pub fn parse_http_request(
    bytes: &[u8],
    options: &ExtractOptions,
) -> Result<Option<Fingerprint>, ExtractError> {
    let window = &bytes[..bytes.len().min(options.http_scan_limit)];
    let head_end = find_header_end(window).ok_or(ExtractError::MalformedRequest(
        "no header terminator within scan limit",
    ))?;
    let head = &window[..head_end];

    let mut lines = head.split(|&b| b == b'\n').map(strip_cr);
    let request_line = lines.next().unwrap_or(b"");
    validate_request_line(request_line)?;

    for line in lines {
        let Some(colon) = line.iter().position(|&b| b == b':') else {
            continue;
        };
        let name = &line[..colon];
        if name.eq_ignore_ascii_case(b"user-agent") {
            let value = trim_ows(&line[colon + 1..]);
            let value = std::str::from_utf8(value)
                .map_err(|_| ExtractError::MalformedRequest("user-agent is not utf-8"))?;
            // Only the first User-Agent header counts.
            return Ok(Some(Fingerprint::http(value)));
        }
    }
    Ok(None)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    bytes
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .map(|i| i + 2)
        .or_else(|| bytes.windows(2).position(|w| w == b"\n\n").map(|i| i + 1))
}

fn strip_cr(line: &[u8]) -> &[u8] {
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn trim_ows(mut value: &[u8]) -> &[u8] {
    while let [b' ' | b'\t', rest @ ..] = value {
        value = rest;
    }
    while let [rest @ .., b' ' | b'\t'] = value {
        value = rest;
    }
    value
}

fn validate_request_line(line: &[u8]) -> Result<(), ExtractError> {
    let mut parts = line.split(|&b| b == b' ').filter(|p| !p.is_empty());
    let method = parts.next().unwrap_or(b"");
    let target = parts.next().unwrap_or(b"");
    let version = parts.next().unwrap_or(b"");
    let token = |b: &u8| b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(b);
    if method.is_empty()
        || method.len() > 16
        || !method.iter().all(token)
        || target.is_empty()
        || !version.starts_with(b"HTTP/1.")
    {
        return Err(ExtractError::MalformedRequest("bad request line"));
    }
    Ok(())
}
