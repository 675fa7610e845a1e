//! Deterministic keyed pseudonymization of network addresses.

use std::net::IpAddr;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use crate::ExtractError;

/// Keyed PRF over the address bytes: same (address, key) always maps to
/// the same printable pseudonym, distinct addresses to distinct ones, and
/// nothing about the address is recoverable without the key.
pub fn pseudonymize_address(addr: &IpAddr, key: &[u8]) -> Result<String, ExtractError> {
    if key.len() < 16 {
        return Err(ExtractError::KeyTooShort);
    }
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(b"addr-v1");
    match addr {
        IpAddr::V4(a) => {
            mac.update(&[4]);
            mac.update(&a.octets());
        }
        IpAddr::V6(a) => {
            mac.update(&[6]);
            mac.update(&a.octets());
        }
    }
    let digest = mac.finalize().into_bytes();
    let mut out = String::with_capacity(32);
    for b in &digest[..16] {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    const KEY: &[u8] = b"0123456789abcdef0123456789abcdef";

    #[test]
    fn deterministic_per_key() {
        let addr: IpAddr = "192.0.2.7".parse().unwrap();
        assert_eq!(
            pseudonymize_address(&addr, KEY).unwrap(),
            pseudonymize_address(&addr, KEY).unwrap()
        );
    }

    #[test]
    fn distinct_addresses_distinct_pseudonyms() {
        let a: IpAddr = "192.0.2.7".parse().unwrap();
        let b: IpAddr = "192.0.2.8".parse().unwrap();
        assert_ne!(
            pseudonymize_address(&a, KEY).unwrap(),
            pseudonymize_address(&b, KEY).unwrap()
        );
    }

    #[test]
    fn short_key_is_rejected() {
        let addr: IpAddr = "192.0.2.7".parse().unwrap();
        assert_eq!(
            pseudonymize_address(&addr, b"short"),
            Err(ExtractError::KeyTooShort)
        );
        assert!(pseudonymize_address(&addr, &[0u8; 16]).is_ok());
    }

    #[test]
    fn no_collisions_and_key_separation_over_random_addresses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xadd4);
        let mut seen = HashSet::new();
        let key2 = b"ffffffffffffffff0000000000000000";
        for _ in 0..1000 {
            let addr = if rng.gen::<bool>() {
                IpAddr::from(rng.gen::<[u8; 4]>())
            } else {
                IpAddr::from(rng.gen::<[u8; 16]>())
            };
            let p1 = pseudonymize_address(&addr, KEY).unwrap();
            let p2 = pseudonymize_address(&addr, key2).unwrap();
            assert_ne!(p1, p2, "{addr} collided across keys");
            assert!(p1.chars().all(|c| c.is_ascii_hexdigit()));
            seen.insert((addr, p1.clone()));
            // Injectivity within a key: pseudonym repeats only for the
            // same address.
            for (other_addr, other_p) in &seen {
                if *other_p == p1 {
                    assert_eq!(*other_addr, addr);
                }
            }
        }
    }

    #[test]
    fn v4_and_v6_with_same_leading_bytes_differ() {
        let v4: IpAddr = "1.2.3.4".parse().unwrap();
        let v6: IpAddr = "102:304::".parse().unwrap();
        assert_ne!(
            pseudonymize_address(&v4, KEY).unwrap(),
            pseudonymize_address(&v6, KEY).unwrap()
        );
    }
}
