//! Single-leaf taproot commitments (BIP341).
//!
//! Every script-locked output here commits to exactly one tapscript leaf under
//! an unspendable internal key, so the key path is disabled and the control
//! block is always 33 bytes.

use k256::elliptic_curve::ops::Reduce;
use k256::elliptic_curve::point::DecompressPoint;
use k256::elliptic_curve::sec1::ToEncodedPoint;
use k256::elliptic_curve::Group;
use k256::{AffinePoint, ProjectivePoint, Scalar, U256};
use thiserror::Error;

use crate::hash::tagged_hash;
use crate::keys::XOnlyPublicKey;
use crate::script::Script;

pub const TAPSCRIPT_LEAF_VERSION: u8 = 0xc0;
pub const CONTROL_BLOCK_LEN: usize = 33;

/// The BIP341 "nothing up my sleeve" point H; no one knows its discrete log.
pub const UNSPENDABLE_INTERNAL_KEY: XOnlyPublicKey = XOnlyPublicKey([
    0x50, 0x92, 0x9b, 0x74, 0xc1, 0xa0, 0x49, 0x54, 0xb7, 0x8b, 0x4b, 0x60, 0x35, 0xe9, 0x7a, 0x5e, 0x07, 0x8a, 0x5a,
    0x0f, 0x28, 0xec, 0x96, 0xd5, 0x47, 0xbf, 0xee, 0x9a, 0xce, 0x80, 0x3a, 0xc0,
]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaprootError {
    #[error("key {0} is not a valid curve point")]
    InvalidKey(XOnlyPublicKey),
    #[error("tweak produced the point at infinity")]
    InfinityTweak,
}

pub fn compact_size(n: usize) -> Vec<u8> {
    match n {
        0..=0xfc => vec![n as u8],
        0xfd..=0xffff => {
            let mut v = vec![0xfd];
            v.extend_from_slice(&(n as u16).to_le_bytes());
            v
        }
        0x1_0000..=0xffff_ffff => {
            let mut v = vec![0xfe];
            v.extend_from_slice(&(n as u32).to_le_bytes());
            v
        }
        _ => {
            let mut v = vec![0xff];
            v.extend_from_slice(&(n as u64).to_le_bytes());
            v
        }
    }
}

pub fn leaf_hash(script: &[u8]) -> [u8; 32] {
    let size = compact_size(script.len());
    tagged_hash("TapLeaf", &[&[TAPSCRIPT_LEAF_VERSION], &size, script])
}

fn lift_x(key: &XOnlyPublicKey) -> Result<AffinePoint, TaprootError> {
    Option::from(AffinePoint::decompress(&key.0.into(), 0u8.into())).ok_or(TaprootError::InvalidKey(*key))
}

/// Output key `Q = P + H_TapTweak(P || merkle_root) * G` and its y parity.
pub fn tweak_key(
    internal: &XOnlyPublicKey,
    merkle_root: Option<&[u8; 32]>,
) -> Result<(XOnlyPublicKey, bool), TaprootError> {
    let p = lift_x(internal)?;
    let tweak = match merkle_root {
        Some(root) => tagged_hash("TapTweak", &[&internal.0, root]),
        None => tagged_hash("TapTweak", &[&internal.0]),
    };
    let t = <Scalar as Reduce<U256>>::reduce_bytes(&tweak.into());
    let q = ProjectivePoint::from(p) + ProjectivePoint::GENERATOR * t;
    if bool::from(q.is_identity()) {
        return Err(TaprootError::InfinityTweak);
    }
    let encoded = q.to_affine().to_encoded_point(true);
    let bytes = encoded.as_bytes();
    let mut x = [0u8; 32];
    x.copy_from_slice(&bytes[1..33]);
    Ok((XOnlyPublicKey(x), bytes[0] == 0x03))
}

/// Commitment data for an output locked to one tapscript leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafCommitment {
    pub leaf_script: Script,
    pub output_key: XOnlyPublicKey,
    pub control_block: [u8; CONTROL_BLOCK_LEN],
}

impl LeafCommitment {
    pub fn new(leaf_script: Script) -> Result<Self, TaprootError> {
        let root = leaf_hash(&leaf_script.to_bytes());
        let (output_key, odd) = tweak_key(&UNSPENDABLE_INTERNAL_KEY, Some(&root))?;
        let mut control_block = [0u8; CONTROL_BLOCK_LEN];
        control_block[0] = TAPSCRIPT_LEAF_VERSION | u8::from(odd);
        control_block[1..].copy_from_slice(&UNSPENDABLE_INTERNAL_KEY.0);
        Ok(LeafCommitment { leaf_script, output_key, control_block })
    }

    pub fn script_pubkey(&self) -> Vec<u8> {
        p2tr_script_pubkey(&self.output_key)
    }
}

/// `OP_1 <32-byte output key>`.
pub fn p2tr_script_pubkey(output_key: &XOnlyPublicKey) -> Vec<u8> {
    let mut spk = Vec::with_capacity(34);
    spk.push(0x51);
    spk.push(0x20);
    spk.extend_from_slice(&output_key.0);
    spk
}

/// Check that `leaf` and `control_block` open the taproot output `output_key`.
/// Only single-leaf control blocks are accepted.
pub fn verify_leaf_commitment(output_key: &XOnlyPublicKey, leaf: &[u8], control_block: &[u8]) -> bool {
    if control_block.len() != CONTROL_BLOCK_LEN || control_block[0] & 0xfe != TAPSCRIPT_LEAF_VERSION {
        return false;
    }
    let mut internal = [0u8; 32];
    internal.copy_from_slice(&control_block[1..]);
    let root = leaf_hash(leaf);
    match tweak_key(&XOnlyPublicKey(internal), Some(&root)) {
        Ok((q, odd)) => q == *output_key && odd == (control_block[0] & 1 == 1),
        Err(_) => false,
    }
}
