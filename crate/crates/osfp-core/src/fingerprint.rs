//! Fingerprint data model and its canonical textual form.
//!
//! A fingerprint is an ordered list of elements extracted from one protocol
//! exchange: each element is a bare type code or a (type code, string) pair.
//! The canonical string is the stable key used for counting, feature
//! dictionaries, and persistence.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::FingerprintError;

/// Protocols a fingerprint can be extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Tls,
    Http,
}

impl Protocol {
    /// Fixed layout order: tcp, tls, http.
    pub const ALL: [Protocol; 3] = [Protocol::Tcp, Protocol::Tls, Protocol::Http];

    pub fn tag(self) -> &'static str {
        match self {
            Protocol::Tcp => "tcp",
            Protocol::Tls => "tls",
            Protocol::Http => "http",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Protocol> {
        match tag {
            "tcp" => Some(Protocol::Tcp),
            "tls" => Some(Protocol::Tls),
            "http" => Some(Protocol::Http),
            _ => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One entry of a fingerprint: a type code, optionally carrying a value string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element {
    pub code: u32,
    pub data: Option<String>,
}

impl Element {
    pub fn bare(code: u32) -> Element {
        Element { code, data: None }
    }

    pub fn with_data(code: u32, data: impl Into<String>) -> Element {
        Element {
            code,
            data: Some(data.into()),
        }
    }
}

/// TCP option kinds whose value string is kept (MSS, window scale).
pub const TCP_DATA_CODES: [u32; 2] = [2, 3];
/// TLS extension types whose payload is kept (supported_groups,
/// ec_point_formats, ALPN).
pub const TLS_DATA_CODES: [u32; 3] = [10, 11, 16];
/// Sentinel replacing GREASE code points in cipher and extension lists.
pub const GREASE_SENTINEL: u32 = 2570;

/// An ordered fingerprint for one protocol.
///
/// TCP fingerprints carry the (normalized) TTL next to the option elements.
/// TLS fingerprints keep the element list partitioned into the cipher-suite
/// segment followed by the extension segment; `cipher_len` is the boundary.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    protocol: Protocol,
    ttl: Option<u32>,
    cipher_len: usize,
    elements: Vec<Element>,
}

impl Fingerprint {
    pub fn tcp(ttl: u32, options: Vec<Element>) -> Result<Fingerprint, FingerprintError> {
        let fp = Fingerprint {
            protocol: Protocol::Tcp,
            ttl: Some(ttl),
            cipher_len: 0,
            elements: options,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn tls(
        ciphers: Vec<Element>,
        extensions: Vec<Element>,
    ) -> Result<Fingerprint, FingerprintError> {
        let cipher_len = ciphers.len();
        let mut elements = ciphers;
        elements.extend(extensions);
        let fp = Fingerprint {
            protocol: Protocol::Tls,
            ttl: None,
            cipher_len,
            elements,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn http(user_agent: impl Into<String>) -> Fingerprint {
        Fingerprint {
            protocol: Protocol::Http,
            ttl: None,
            cipher_len: 0,
            elements: vec![Element::with_data(0, user_agent)],
        }
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn ttl(&self) -> Option<u32> {
        self.ttl
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// TLS cipher-suite segment (empty for other protocols).
    pub fn ciphers(&self) -> &[Element] {
        &self.elements[..self.cipher_len]
    }

    /// TLS extension segment (the whole list for other protocols).
    pub fn extensions(&self) -> &[Element] {
        &self.elements[self.cipher_len..]
    }

    fn validate(&self) -> Result<(), FingerprintError> {
        match self.protocol {
            Protocol::Tcp => {
                if self.ttl.is_none() {
                    return Err(FingerprintError::MissingTtl);
                }
                for el in &self.elements {
                    if el.data.is_some() && !TCP_DATA_CODES.contains(&el.code) {
                        return Err(FingerprintError::UnexpectedData {
                            protocol: Protocol::Tcp,
                            code: el.code,
                        });
                    }
                }
            }
            Protocol::Tls => {
                if self.elements.is_empty() {
                    return Err(FingerprintError::Empty);
                }
                if self.cipher_len > self.elements.len() {
                    return Err(FingerprintError::BadCipherBoundary);
                }
                for el in self.ciphers() {
                    if el.data.is_some() {
                        return Err(FingerprintError::UnexpectedData {
                            protocol: Protocol::Tls,
                            code: el.code,
                        });
                    }
                }
                for el in self.extensions() {
                    if el.data.is_some() && !TLS_DATA_CODES.contains(&el.code) {
                        return Err(FingerprintError::UnexpectedData {
                            protocol: Protocol::Tls,
                            code: el.code,
                        });
                    }
                }
            }
            Protocol::Http => {
                if self.elements.len() != 1
                    || self.elements[0].code != 0
                    || self.elements[0].data.is_none()
                {
                    return Err(FingerprintError::BadHttpShape);
                }
            }
        }
        Ok(())
    }

    /// Deterministic canonical string. Injective over valid fingerprints;
    /// [`parse_canonical`] is its inverse.
    pub fn canonical(&self) -> String {
        let mut out = String::with_capacity(16 + self.elements.len() * 8);
        out.push_str(self.protocol.tag());
        out.push('/');
        match self.protocol {
            Protocol::Tcp => {
                out.push_str(&self.ttl.unwrap_or(0).to_string());
                out.push(':');
                for el in &self.elements {
                    write_element(&mut out, el);
                }
            }
            Protocol::Tls => {
                for el in self.ciphers() {
                    write_element(&mut out, el);
                }
                out.push('|');
                for el in self.extensions() {
                    write_element(&mut out, el);
                }
            }
            Protocol::Http => {
                for el in &self.elements {
                    write_element(&mut out, el);
                }
            }
        }
        out
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

fn write_element(out: &mut String, el: &Element) {
    out.push('(');
    out.push_str(&el.code.to_string());
    if let Some(data) = &el.data {
        out.push('=');
        // ')' terminates an element, so it and the escape char are escaped.
        for ch in data.chars() {
            if ch == ')' || ch == '\\' {
                out.push('\\');
            }
            out.push(ch);
        }
    }
    out.push(')');
}

/// Parse a canonical fingerprint string back into a [`Fingerprint`].
pub fn parse_canonical(s: &str) -> Result<Fingerprint, FingerprintError> {
    let slash = s
        .find('/')
        .ok_or(FingerprintError::Grammar { offset: s.len() })?;
    let protocol =
        Protocol::from_tag(&s[..slash]).ok_or(FingerprintError::Grammar { offset: 0 })?;
    let mut p = Parser {
        bytes: s.as_bytes(),
        pos: slash + 1,
    };
    let fp = match protocol {
        Protocol::Tcp => {
            let ttl = p.parse_u32()?;
            p.expect(b':')?;
            let elements = p.parse_elements(&[])?;
            Fingerprint {
                protocol,
                ttl: Some(ttl),
                cipher_len: 0,
                elements,
            }
        }
        Protocol::Tls => {
            let ciphers = p.parse_elements(b"|")?;
            p.expect(b'|')?;
            let cipher_len = ciphers.len();
            let mut elements = ciphers;
            elements.extend(p.parse_elements(&[])?);
            Fingerprint {
                protocol,
                ttl: None,
                cipher_len,
                elements,
            }
        }
        Protocol::Http => {
            let elements = p.parse_elements(&[])?;
            Fingerprint {
                protocol,
                ttl: None,
                cipher_len: 0,
                elements,
            }
        }
    };
    if p.pos != p.bytes.len() {
        return Err(FingerprintError::Grammar { offset: p.pos });
    }
    fp.validate()?;
    Ok(fp)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn expect(&mut self, b: u8) -> Result<(), FingerprintError> {
        if self.bytes.get(self.pos) == Some(&b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(FingerprintError::Grammar { offset: self.pos })
        }
    }

    fn parse_u32(&mut self) -> Result<u32, FingerprintError> {
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start || self.pos - start > 10 {
            return Err(FingerprintError::Grammar { offset: self.pos });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or(FingerprintError::Grammar { offset: start })
    }

    /// Elements until end of input or one of `stop` bytes.
    fn parse_elements(&mut self, stop: &[u8]) -> Result<Vec<Element>, FingerprintError> {
        let mut out = Vec::new();
        loop {
            match self.bytes.get(self.pos) {
                None => return Ok(out),
                Some(b) if stop.contains(b) => return Ok(out),
                Some(b'(') => {
                    self.pos += 1;
                    out.push(self.parse_element_body()?);
                }
                Some(_) => return Err(FingerprintError::Grammar { offset: self.pos }),
            }
        }
    }

    fn parse_element_body(&mut self) -> Result<Element, FingerprintError> {
        let code = self.parse_u32()?;
        match self.bytes.get(self.pos) {
            Some(b')') => {
                self.pos += 1;
                Ok(Element::bare(code))
            }
            Some(b'=') => {
                self.pos += 1;
                let mut data = Vec::new();
                loop {
                    match self.bytes.get(self.pos) {
                        None => return Err(FingerprintError::Grammar { offset: self.pos }),
                        Some(b'\\') => {
                            let esc = self
                                .bytes
                                .get(self.pos + 1)
                                .ok_or(FingerprintError::Grammar { offset: self.pos })?;
                            if *esc != b')' && *esc != b'\\' {
                                return Err(FingerprintError::Grammar { offset: self.pos });
                            }
                            data.push(*esc);
                            self.pos += 2;
                        }
                        Some(b')') => {
                            self.pos += 1;
                            let data = String::from_utf8(data)
                                .map_err(|_| FingerprintError::Grammar { offset: self.pos })?;
                            return Ok(Element::with_data(code, data));
                        }
                        Some(b) => {
                            data.push(*b);
                            self.pos += 1;
                        }
                    }
                }
            }
            _ => Err(FingerprintError::Grammar { offset: self.pos }),
        }
    }
}

/// True for the 16 reserved randomized TLS code points (0x?A?A pattern).
pub fn is_grease(code: u16) -> bool {
    code & 0x0f0f == 0x0a0a && (code >> 8) == (code & 0xff)
}
