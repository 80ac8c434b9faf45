//! The one 256-bit hash used across the project (BLAKE2b-256).
//!
//! Block ids, content ids, credential digests and reputation digests are all
//! produced here, so an anchored hash is directly comparable with the id the
//! off-chain store assigns to the same bytes.

use std::fmt;
use std::str::FromStr;

use blake2::{Blake2b256, Digest};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Length of every digest in bytes.
pub const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest256([u8; DIGEST_LEN]);

impl Digest256 {
    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

/// Hashes `data` in one shot.
pub fn hash_bytes(data: &[u8]) -> Digest256 {
    let out = Blake2b256::digest(data);
    let mut bytes = [0u8; DIGEST_LEN];
    bytes.copy_from_slice(&out);
    Digest256(bytes)
}

/// Incremental hasher for callers that build the preimage piecewise.
#[derive(Default, Clone)]
pub struct Hasher(Blake2b256);

impl Hasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, data: &[u8]) -> &mut Self {
        Digest::update(&mut self.0, data);
        self
    }

    pub fn finish(self) -> Digest256 {
        let out = self.0.finalize();
        let mut bytes = [0u8; DIGEST_LEN];
        bytes.copy_from_slice(&out);
        Digest256(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid digest hex: {0}")]
pub struct ParseDigestError(String);

impl FromStr for Digest256 {
    type Err = ParseDigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = hex::decode(s).map_err(|_| ParseDigestError(s.to_owned()))?;
        let bytes: [u8; DIGEST_LEN] = raw.try_into().map_err(|_| ParseDigestError(s.to_owned()))?;
        Ok(Self(bytes))
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..", &self.to_hex()[..12])
    }
}

impl Serialize for Digest256 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest256 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_answer() {
        // BLAKE2b-256 of the empty string.
        assert_eq!(
            hash_bytes(b"").to_hex(),
            "0e5751c026e543b2e8ab2eb06099daa1d1e5df47778f7787faab45cdf12fe3a8"
        );
    }

    #[test]
    fn incremental_matches_one_shot() {
        let mut h = Hasher::new();
        h.update(b"hello ").update(b"tangle");
        assert_eq!(h.finish(), hash_bytes(b"hello tangle"));
    }

    #[test]
    fn hex_round_trip() {
        let d = hash_bytes(b"x");
        assert_eq!(d.to_hex().parse::<Digest256>().unwrap(), d);
        assert!("abc".parse::<Digest256>().is_err());
    }
}
