//! Hash helpers shared by transaction ids, taproot commitments and address checksums.

use blake2::digest::{Update, VariableOutput};
use blake2::Blake2bVar;
use ripemd::Ripemd160;
use sha2::{Digest, Sha256};

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn sha256d(data: &[u8]) -> [u8; 32] {
    sha256(&sha256(data))
}

pub fn hash160(data: &[u8]) -> [u8; 20] {
    Ripemd160::digest(sha256(data)).into()
}

/// BIP340 tagged hash: `sha256(sha256(tag) || sha256(tag) || msg)`.
pub fn tagged_hash(tag: &str, chunks: &[&[u8]]) -> [u8; 32] {
    let tag_hash = sha256(tag.as_bytes());
    let mut engine = Sha256::new();
    Digest::update(&mut engine, tag_hash);
    Digest::update(&mut engine, tag_hash);
    for chunk in chunks {
        Digest::update(&mut engine, chunk);
    }
    engine.finalize().into()
}

/// BLAKE2b with a 4-byte digest, as used by delegated-address checksums.
pub fn blake2b_checksum(data: &[u8]) -> [u8; 4] {
    let mut hasher = Blake2bVar::new(4).expect("4 is a valid blake2b output size");
    hasher.update(data);
    let mut out = [0u8; 4];
    hasher.finalize_variable(&mut out).expect("buffer matches output size");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_empty_vector() {
        assert_eq!(hex::encode(sha256(b"")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn hash160_of_generator_pubkey() {
        // compressed secp256k1 generator point
        let g = hex::decode("0279be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798").unwrap();
        assert_eq!(hex::encode(hash160(&g)), "751e76e8199196d454941c45d1b3a323f1433bd6");
    }
}
