//! Subnet identifiers, delegated subnet addresses and Bitcoin addresses.

mod btc;
mod config;

pub use btc::{AddressError, AddressNetwork, BtcAddress};
pub use config::{derive_multisig_address, ConfigError, Configuration, MultisigDescriptor, ValidatorEntry};

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use data_encoding::{Encoding, Specification};
use thiserror::Error;

use crate::hash::blake2b_checksum;

/// Filecoin-style namespace used for IPC subnet actors.
pub const SUBNET_NAMESPACE: u8 = 10;
/// Delegated-address protocol byte.
const DELEGATED_PROTOCOL: u8 = 4;

static BASE32_LOWER: LazyLock<Encoding> = LazyLock::new(|| {
    let mut spec = Specification::new();
    spec.symbols.push_str("abcdefghijklmnopqrstuvwxyz234567");
    spec.encoding().expect("valid base32 specification")
});

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubnetIdError {
    #[error("unknown root network '{0}'")]
    UnknownRoot(String),
    #[error("bad delegated address encoding: {0}")]
    BadAddressEncoding(String),
    #[error("subnet id must contain at least one subnet address")]
    EmptyPath,
}

/// Bitcoin network a subnet hierarchy is rooted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Root {
    Mainnet,
    Testnet,
    Testnet4,
    Signet,
    Regtest,
}

impl Root {
    pub const ALL: [Root; 5] = [Root::Mainnet, Root::Testnet, Root::Testnet4, Root::Signet, Root::Regtest];

    pub fn as_str(self) -> &'static str {
        match self {
            Root::Mainnet => "b1",
            Root::Testnet => "b2",
            Root::Testnet4 => "b22",
            Root::Signet => "b3",
            Root::Regtest => "b4",
        }
    }

    /// Numeric code used by the binary codec.
    pub fn code(self) -> u8 {
        match self {
            Root::Mainnet => 1,
            Root::Testnet => 2,
            Root::Testnet4 => 22,
            Root::Signet => 3,
            Root::Regtest => 4,
        }
    }

    pub fn from_code(code: u64) -> Option<Root> {
        Root::ALL.into_iter().find(|r| u64::from(r.code()) == code)
    }

    pub fn address_network(self) -> AddressNetwork {
        match self {
            Root::Mainnet => AddressNetwork::Bitcoin,
            Root::Testnet | Root::Testnet4 | Root::Signet => AddressNetwork::Test,
            Root::Regtest => AddressNetwork::Regtest,
        }
    }

    /// Network letter of delegated-address strings under this root.
    pub fn delegated_prefix(self) -> char {
        match self {
            Root::Mainnet => 'f',
            _ => 't',
        }
    }
}

impl FromStr for Root {
    type Err = SubnetIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Root::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| SubnetIdError::UnknownRoot(s.to_string()))
    }
}

impl fmt::Display for Root {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The 20-byte address of an L2 subnet: the first 20 bytes of the subnet's
/// creating transaction id.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubnetAddress(pub [u8; 20]);

impl SubnetAddress {
    pub fn payload(&self) -> &[u8; 20] {
        &self.0
    }

    fn checksum(&self) -> [u8; 4] {
        let mut data = Vec::with_capacity(22);
        data.push(DELEGATED_PROTOCOL);
        data.push(SUBNET_NAMESPACE);
        data.extend_from_slice(&self.0);
        blake2b_checksum(&data)
    }

    /// Delegated-address string, e.g. `f410f<base32(payload || checksum)>`.
    pub fn to_delegated_string(&self, network_prefix: char) -> String {
        let mut body = self.0.to_vec();
        body.extend_from_slice(&self.checksum());
        format!("{network_prefix}{DELEGATED_PROTOCOL}{SUBNET_NAMESPACE}f{}", BASE32_LOWER.encode(&body))
    }

    /// Parse a delegated-address string under either network letter.
    pub fn from_delegated_str(s: &str) -> Result<(SubnetAddress, char), SubnetIdError> {
        let bad = |msg: &str| SubnetIdError::BadAddressEncoding(format!("{s}: {msg}"));
        let mut chars = s.chars();
        let net = chars.next().ok_or_else(|| bad("empty"))?;
        if net != 'f' && net != 't' {
            return Err(bad("network letter must be 'f' or 't'"));
        }
        let rest = chars.as_str();
        let body = rest.strip_prefix("410f").ok_or_else(|| bad("expected namespace 10 delegated prefix"))?;
        let decoded = BASE32_LOWER.decode(body.as_bytes()).map_err(|e| bad(&e.to_string()))?;
        if decoded.len() != 24 {
            return Err(bad("expected 20 payload bytes and a 4-byte checksum"));
        }
        let mut payload = [0u8; 20];
        payload.copy_from_slice(&decoded[..20]);
        let address = SubnetAddress(payload);
        if address.checksum()[..] != decoded[20..] {
            return Err(bad("checksum mismatch"));
        }
        Ok((address, net))
    }
}

impl fmt::Debug for SubnetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SubnetAddress({})", hex::encode(self.0))
    }
}

impl fmt::Display for SubnetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// First 20 bytes of the creating transaction id.
pub fn derive_subnet_address(create_txid: &[u8; 32]) -> SubnetAddress {
    let mut payload = [0u8; 20];
    payload.copy_from_slice(&create_txid[..20]);
    SubnetAddress(payload)
}

/// A subnet identifier: the root network followed by the subnet addresses
/// from the root down to the subnet. L2 subnets have a path of length one.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubnetId {
    pub root: Root,
    pub path: Vec<SubnetAddress>,
}

impl SubnetId {
    pub fn l2(root: Root, address: SubnetAddress) -> Self {
        SubnetId { root, path: vec![address] }
    }

    /// Address of the innermost subnet.
    pub fn address(&self) -> SubnetAddress {
        *self.path.last().expect("subnet ids always have a path")
    }
}

impl fmt::Display for SubnetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}", self.root)?;
        for a in &self.path {
            write!(f, "/{}", a.to_delegated_string(self.root.delegated_prefix()))?;
        }
        Ok(())
    }
}

impl fmt::Debug for SubnetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SubnetId({self})")
    }
}

/// Render a subnet id as `/<root>/<address>...`.
pub fn format_subnet_id(id: &SubnetId) -> String {
    id.to_string()
}

/// Parse `/<root>/<address>...`. The leading slash is optional and
/// delegated addresses are accepted under either network letter.
pub fn parse_subnet_id(s: &str) -> Result<SubnetId, SubnetIdError> {
    let trimmed = s.strip_prefix('/').unwrap_or(s);
    let mut parts = trimmed.split('/');
    let root: Root = parts.next().unwrap_or_default().parse()?;
    let path = parts.map(|p| SubnetAddress::from_delegated_str(p).map(|(a, _)| a)).collect::<Result<Vec<_>, _>>()?;
    if path.is_empty() {
        return Err(SubnetIdError::EmptyPath);
    }
    Ok(SubnetId { root, path })
}

impl FromStr for SubnetId {
    type Err = SubnetIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_subnet_id(s)
    }
}

/// A user account inside a subnet (EVM-style 20-byte address).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserAddress(pub [u8; 20]);

impl fmt::Display for UserAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for UserAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "UserAddress({self})")
    }
}

impl FromStr for UserAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.strip_prefix("0x").unwrap_or(s)).map_err(|e| AddressError::Invalid(e.to_string()))?;
        let arr: [u8; 20] =
            bytes.try_into().map_err(|_| AddressError::Invalid(format!("user address {s} must be 20 bytes")))?;
        Ok(UserAddress(arr))
    }
}
