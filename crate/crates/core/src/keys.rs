//! Key material. Signatures are never produced here; witnesses carry correctly
//! sized placeholders, so keys only need to exist as public points.

use std::fmt;
use std::str::FromStr;

use k256::elliptic_curve::sec1::ToEncodedPoint;
use k256::{NonZeroScalar, PublicKey};

use crate::hash::sha256;

/// A 32-byte BIP340 x-only public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct XOnlyPublicKey(pub [u8; 32]);

impl XOnlyPublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for XOnlyPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "XOnlyPublicKey({})", hex::encode(self.0))
    }
}

impl fmt::Display for XOnlyPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid x-only public key: {0}")]
pub struct KeyParseError(String);

impl FromStr for XOnlyPublicKey {
    type Err = KeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim_start_matches("0x")).map_err(|e| KeyParseError(e.to_string()))?;
        let arr: [u8; 32] =
            bytes.try_into().map_err(|b: Vec<u8>| KeyParseError(format!("expected 32 bytes, got {}", b.len())))?;
        Ok(XOnlyPublicKey(arr))
    }
}

/// Deterministic key pair derived from a seed string. Used for simulated
/// wallets and validators.
#[derive(Clone)]
pub struct Keypair {
    public: PublicKey,
}

impl Keypair {
    pub fn from_seed(seed: &[u8]) -> Self {
        let mut counter = 0u32;
        loop {
            let mut material = seed.to_vec();
            material.extend_from_slice(&counter.to_le_bytes());
            let digest = sha256(&material);
            if let Some(secret) = Option::<NonZeroScalar>::from(NonZeroScalar::from_repr(digest.into())) {
                let public = PublicKey::from_secret_scalar(&secret);
                return Keypair { public };
            }
            counter += 1;
        }
    }

    pub fn from_name(name: &str) -> Self {
        Self::from_seed(name.as_bytes())
    }

    /// BIP340 x-only key (the point's x coordinate; parity is dropped).
    pub fn x_only(&self) -> XOnlyPublicKey {
        let encoded = self.public.to_encoded_point(true);
        let mut out = [0u8; 32];
        out.copy_from_slice(&encoded.as_bytes()[1..33]);
        XOnlyPublicKey(out)
    }

    /// 33-byte SEC1 compressed key, used by pay-to-witness-key-hash spends.
    pub fn compressed(&self) -> [u8; 33] {
        let encoded = self.public.to_encoded_point(true);
        let mut out = [0u8; 33];
        out.copy_from_slice(encoded.as_bytes());
        out
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Keypair({})", self.x_only())
    }
}
