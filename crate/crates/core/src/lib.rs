//! On-chain layer of a Bitcoin-anchored subnet protocol: payload codec,
//! data scripts, addresses, transaction construction, fees and a
//! deterministic chain simulator with the subnet monitor.

pub mod address;
pub mod chain;
pub mod codec;
pub mod events;
pub mod fees;
pub mod forge;
pub mod hash;
pub mod keys;
pub mod monitor;
pub mod node;
pub mod script;
pub mod taproot;
pub mod tx;
