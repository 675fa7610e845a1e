//! TLS ClientHello fingerprinting: the cipher suite offer vector followed
//! by the extension type vector, with supported_groups, ec_point_formats,
//! and ALPN payloads kept as hex strings.

use osfp_core::fingerprint::{is_grease, GREASE_SENTINEL, TLS_DATA_CODES};
use osfp_core::{Element, Fingerprint};

use crate::{ExtractError, ExtractOptions};

const RECORD_HANDSHAKE: u8 = 22;
const HANDSHAKE_CLIENT_HELLO: u8 = 1;

/// Fingerprint a ClientHello starting at a TLS record header. Other record
/// or handshake types return `None`; length contradictions are malformed.
pub fn parse_tls_client_hello(
    bytes: &[u8],
    options: &ExtractOptions,
) -> Result<Option<Fingerprint>, ExtractError> {
    let mut r = Reader::new(bytes);
    let record_type = r.u8()?;
    let _version = r.take(2)?;
    let record_len = r.u16()? as usize;
    if record_type != RECORD_HANDSHAKE {
        return Ok(None);
    }
    let mut rec = Reader::new(r.take(record_len)?);

    let handshake_type = rec.u8()?;
    let handshake_len = rec.u24()? as usize;
    if handshake_type != HANDSHAKE_CLIENT_HELLO {
        return Ok(None);
    }
    let mut hs = Reader::new(rec.take(handshake_len)?);

    let _client_version = hs.take(2)?;
    let _random = hs.take(32)?;
    let session_id_len = hs.u8()? as usize;
    let _session_id = hs.take(session_id_len)?;

    let cipher_bytes = hs.u16()? as usize;
    if !cipher_bytes.is_multiple_of(2) || cipher_bytes == 0 {
        return Err(ExtractError::MalformedHello("bad cipher vector length"));
    }
    let mut ciphers = Vec::with_capacity(cipher_bytes / 2);
    {
        let mut cv = Reader::new(hs.take(cipher_bytes)?);
        while !cv.is_empty() {
            ciphers.push(Element::bare(normalize_code(cv.u16()?, options)));
        }
    }

    let compression_len = hs.u8()? as usize;
    let _compression = hs.take(compression_len)?;

    let mut extensions = Vec::new();
    if !hs.is_empty() {
        let ext_bytes = hs.u16()? as usize;
        let mut ev = Reader::new(hs.take(ext_bytes)?);
        while !ev.is_empty() {
            let code = ev.u16()?;
            let len = ev.u16()? as usize;
            let payload = ev.take(len)?;
            let code = normalize_code(code, options);
            if TLS_DATA_CODES.contains(&code) {
                extensions.push(Element::with_data(code, hex(payload)));
            } else {
                extensions.push(Element::bare(code));
            }
        }
    }

    let fp = Fingerprint::tls(ciphers, extensions)
        .map_err(|_| ExtractError::MalformedHello("empty hello"))?;
    Ok(Some(fp))
}

fn normalize_code(code: u16, options: &ExtractOptions) -> u32 {
    if options.normalize_grease && is_grease(code) {
        GREASE_SENTINEL
    } else {
        code as u32
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes }
    }

    fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ExtractError> {
        if n > self.bytes.len() {
            return Err(ExtractError::MalformedHello("length exceeds buffer"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ExtractError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ExtractError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u24(&mut self) -> Result<u32, ExtractError> {
        let b = self.take(3)?;
        Ok(u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{client_hello, handshake_record, Ext};

    #[test]
    fn ciphers_then_extensions_with_group_payload() {
        let bytes = client_hello(
            &[0x002f, 0x0035],
            &[
                Ext(0, b"\x00\x0a\x00\x08\x00\x05hello".to_vec()),
                Ext(10, vec![0x00, 0x04, 0x00, 0x17, 0x00, 0x18]),
            ],
        );
        let fp = parse_tls_client_hello(&bytes, &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tls/(47)(53)|(0)(10=000400170018)");
    }

    #[test]
    fn grease_collapses_to_the_sentinel() {
        let bytes = client_hello(&[0x5a5a, 0x002f], &[Ext(0x7a7a, vec![]), Ext(35, vec![])]);
        let fp = parse_tls_client_hello(&bytes, &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tls/(2570)(47)|(2570)(35)");

        let raw = ExtractOptions {
            normalize_grease: false,
            ..Default::default()
        };
        let fp = parse_tls_client_hello(&bytes, &raw).unwrap().unwrap();
        assert_eq!(fp.canonical(), "tls/(23130)(47)|(31354)(35)");
    }

    #[test]
    fn application_data_record_is_not_a_hello() {
        let bytes = [23u8, 3, 3, 0, 5, 1, 2, 3, 4, 5];
        assert!(parse_tls_client_hello(&bytes, &ExtractOptions::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn server_hello_is_not_a_client_hello() {
        let bytes = handshake_record(2, &[0x03, 0x03]);
        assert!(parse_tls_client_hello(&bytes, &ExtractOptions::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn repeated_extensions_are_preserved() {
        let bytes = client_hello(&[0x1301], &[Ext(35, vec![]), Ext(35, vec![])]);
        let fp = parse_tls_client_hello(&bytes, &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tls/(4865)|(35)(35)");
    }

    #[test]
    fn length_contradictions_are_malformed() {
        // Record length larger than the buffer.
        let mut bytes = client_hello(&[0x002f], &[]);
        bytes[4] = bytes[4].wrapping_add(40);
        assert!(parse_tls_client_hello(&bytes, &ExtractOptions::default()).is_err());

        // Extension length pointing past the extension block.
        let mut bytes = client_hello(&[0x002f], &[Ext(0, vec![1, 2, 3, 4])]);
        let n = bytes.len();
        bytes[n - 5] = 0xff;
        assert!(parse_tls_client_hello(&bytes, &ExtractOptions::default()).is_err());
    }

    #[test]
    fn hello_without_extensions_parses() {
        let mut body = Vec::new();
        body.extend_from_slice(&[0x03, 0x01]);
        body.extend_from_slice(&[0; 32]);
        body.push(0);
        body.extend_from_slice(&[0, 2, 0, 0x2f]);
        body.extend_from_slice(&[1, 0]);
        let bytes = handshake_record(1, &body);
        let fp = parse_tls_client_hello(&bytes, &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(fp.canonical(), "tls/(47)|");
    }

    #[test]
    fn alpn_and_point_formats_keep_payload_hex() {
        let bytes = client_hello(
            &[0xc02f],
            &[
                Ext(11, vec![0x01, 0x00]),
                Ext(16, b"\x00\x0c\x02h2\x08http/1.1".to_vec()),
            ],
        );
        let fp = parse_tls_client_hello(&bytes, &ExtractOptions::default())
            .unwrap()
            .unwrap();
        assert_eq!(
            fp.canonical(),
            "tls/(49199)|(11=0100)(16=000c02683208687474702f312e31)"
        );
    }
}
