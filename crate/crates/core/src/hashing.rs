use sha2::{Digest, Sha256};

/// Hex SHA-256 over a sequence of byte chunks, each length-prefixed so that
/// chunk boundaries are part of the digest.
pub fn digest_chunks<'a, I>(chunks: I) -> String
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut h = Sha256::new();
    for c in chunks {
        h.update((c.len() as u64).to_le_bytes());
        h.update(c);
    }
    hex(&h.finalize())
}

pub fn digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Derives an independent seed for a named substream of `seed`.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_boundaries_matter() {
        assert_ne!(
            digest_chunks([b"ab".as_slice(), b"c"]),
            digest_chunks([b"a".as_slice(), b"bc"])
        );
    }

    #[test]
    fn substreams_differ_by_name() {
        assert_ne!(substream(7, "split"), substream(7, "support"));
        assert_eq!(substream(7, "split"), substream(7, "split"));
    }
}
