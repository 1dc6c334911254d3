use std::fmt;
use std::str::FromStr;

use bech32::{hrp, Fe32, Hrp};
use thiserror::Error;

use crate::hash::hash160;
use crate::keys::XOnlyPublicKey;
use crate::taproot::{p2tr_script_pubkey, tweak_key};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("invalid address: {0}")]
    Invalid(String),
    #[error("address belongs to a different network")]
    WrongNetwork,
    #[error("script pubkey is not a segwit output")]
    NotSegwit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AddressNetwork {
    Bitcoin,
    Test,
    Regtest,
}

impl AddressNetwork {
    fn hrp(self) -> Hrp {
        match self {
            AddressNetwork::Bitcoin => hrp::BC,
            AddressNetwork::Test => hrp::TB,
            AddressNetwork::Regtest => hrp::BCRT,
        }
    }

    fn from_hrp(h: &Hrp) -> Option<Self> {
        [AddressNetwork::Bitcoin, AddressNetwork::Test, AddressNetwork::Regtest].into_iter().find(|n| n.hrp() == *h)
    }
}

/// A segwit Bitcoin address (v0 or v1).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BtcAddress {
    pub network: AddressNetwork,
    pub version: u8,
    pub program: Vec<u8>,
}

impl BtcAddress {
    pub fn p2wpkh(compressed_key: &[u8; 33], network: AddressNetwork) -> Self {
        BtcAddress { network, version: 0, program: hash160(compressed_key).to_vec() }
    }

    /// Taproot address for an already tweaked output key.
    pub fn p2tr(output_key: &XOnlyPublicKey, network: AddressNetwork) -> Self {
        BtcAddress { network, version: 1, program: output_key.0.to_vec() }
    }

    /// Key-path-only taproot address (BIP86 tweak) for an internal key.
    pub fn p2tr_key_path(internal: &XOnlyPublicKey, network: AddressNetwork) -> Self {
        let (q, _) = tweak_key(internal, None).expect("internal key is a valid point");
        Self::p2tr(&q, network)
    }

    pub fn script_pubkey(&self) -> Vec<u8> {
        if self.version == 1 && self.program.len() == 32 {
            let mut k = [0u8; 32];
            k.copy_from_slice(&self.program);
            return p2tr_script_pubkey(&XOnlyPublicKey(k));
        }
        let mut spk = Vec::with_capacity(2 + self.program.len());
        spk.push(if self.version == 0 { 0 } else { 0x50 + self.version });
        spk.push(self.program.len() as u8);
        spk.extend_from_slice(&self.program);
        spk
    }

    pub fn from_script_pubkey(spk: &[u8], network: AddressNetwork) -> Result<Self, AddressError> {
        if spk.len() < 4 || spk.len() > 42 || spk[1] as usize != spk.len() - 2 {
            return Err(AddressError::NotSegwit);
        }
        let version = match spk[0] {
            0 => 0,
            v @ 0x51..=0x60 => v - 0x50,
            _ => return Err(AddressError::NotSegwit),
        };
        Ok(BtcAddress { network, version, program: spk[2..].to_vec() })
    }

    pub fn parse_for(s: &str, network: AddressNetwork) -> Result<Self, AddressError> {
        let a: BtcAddress = s.parse()?;
        if a.network != network {
            return Err(AddressError::WrongNetwork);
        }
        Ok(a)
    }
}

impl fmt::Display for BtcAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let version = Fe32::try_from(self.version).map_err(|_| fmt::Error)?;
        let s = bech32::segwit::encode(self.network.hrp(), version, &self.program).map_err(|_| fmt::Error)?;
        f.write_str(&s)
    }
}

impl fmt::Debug for BtcAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BtcAddress({self})")
    }
}

impl FromStr for BtcAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, version, program) = bech32::segwit::decode(s).map_err(|e| AddressError::Invalid(e.to_string()))?;
        let network = AddressNetwork::from_hrp(&h).ok_or_else(|| AddressError::Invalid(format!("unknown hrp {h}")))?;
        Ok(BtcAddress { network, version: version.to_u8(), program })
    }
}
