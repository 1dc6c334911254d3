use thiserror::Error;

use super::{AddressNetwork, BtcAddress};
use crate::keys::XOnlyPublicKey;
use crate::script::{build_multisig_leaf_script, Script, ScriptError};
use crate::taproot::{LeafCommitment, TaprootError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("configuration has no stake")]
    ZeroWeight,
    #[error("validator {0} appears twice")]
    DuplicateValidator(XOnlyPublicKey),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Taproot(#[from] TaprootError),
}

/// A k-of-n tapscript multisig over a canonically sorted key set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultisigDescriptor {
    pub keys: Vec<XOnlyPublicKey>,
    pub threshold: usize,
    pub commitment: LeafCommitment,
}

impl MultisigDescriptor {
    pub fn new(keys: &[XOnlyPublicKey], threshold: usize) -> Result<Self, ConfigError> {
        let mut keys = keys.to_vec();
        keys.sort();
        let leaf = build_multisig_leaf_script(&keys, threshold)?;
        let commitment = LeafCommitment::new(leaf)?;
        Ok(MultisigDescriptor { keys, threshold, commitment })
    }

    pub fn leaf_script(&self) -> &Script {
        &self.commitment.leaf_script
    }

    pub fn script_pubkey(&self) -> Vec<u8> {
        self.commitment.script_pubkey()
    }

    pub fn address(&self, network: AddressNetwork) -> BtcAddress {
        BtcAddress::p2tr(&self.commitment.output_key, network)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorEntry {
    pub pk: XOnlyPublicKey,
    pub weight: u64,
    pub backup_address: BtcAddress,
}

/// One numbered validator set of a subnet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub number: u64,
    pub validators: Vec<ValidatorEntry>,
    pub threshold_stake: u64,
    pub multisig: MultisigDescriptor,
}

/// Smallest stake that is at least two thirds of `total`.
pub fn two_thirds_ceil(total: u64) -> u64 {
    (u128::from(total) * 2).div_ceil(3) as u64
}

impl Configuration {
    /// Validators are stored sorted by key. The script threshold is the
    /// smallest signer count such that every coalition of that size holds
    /// at least `threshold_stake`.
    pub fn new(number: u64, mut validators: Vec<ValidatorEntry>) -> Result<Self, ConfigError> {
        validators.sort_by_key(|v| v.pk);
        for w in validators.windows(2) {
            if w[0].pk == w[1].pk {
                return Err(ConfigError::DuplicateValidator(w[0].pk));
            }
        }
        let total: u64 = validators.iter().map(|v| v.weight).sum();
        if total == 0 {
            return Err(ConfigError::ZeroWeight);
        }
        let threshold_stake = two_thirds_ceil(total);
        let mut weights: Vec<u64> = validators.iter().map(|v| v.weight).collect();
        weights.sort_unstable();
        let mut acc = 0u64;
        let mut signers = weights.len();
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if acc >= threshold_stake {
                signers = i + 1;
                break;
            }
        }
        let keys: Vec<XOnlyPublicKey> = validators.iter().map(|v| v.pk).collect();
        let multisig = MultisigDescriptor::new(&keys, signers)?;
        Ok(Configuration { number, validators, threshold_stake, multisig })
    }

    pub fn total_weight(&self) -> u64 {
        self.validators.iter().map(|v| v.weight).sum()
    }

    pub fn signer_count(&self) -> usize {
        self.multisig.threshold
    }

    pub fn contains(&self, pk: &XOnlyPublicKey) -> bool {
        self.validators.iter().any(|v| v.pk == *pk)
    }

    pub fn weight_of(&self, pk: &XOnlyPublicKey) -> u64 {
        self.validators.iter().find(|v| v.pk == *pk).map_or(0, |v| v.weight)
    }
}

pub fn derive_multisig_address(config: &Configuration, network: AddressNetwork) -> (BtcAddress, Script) {
    (config.multisig.address(network), config.multisig.leaf_script().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keys::Keypair;

    fn entry(name: &str, weight: u64) -> ValidatorEntry {
        let kp = Keypair::from_name(name);
        ValidatorEntry {
            pk: kp.x_only(),
            weight,
            backup_address: BtcAddress::p2wpkh(&kp.compressed(), AddressNetwork::Regtest),
        }
    }

    #[test]
    fn order_independent_address() {
        let a = Configuration::new(1, vec![entry("a", 5), entry("b", 5), entry("c", 5)]).unwrap();
        let b = Configuration::new(1, vec![entry("c", 5), entry("a", 5), entry("b", 5)]).unwrap();
        assert_eq!(
            derive_multisig_address(&a, AddressNetwork::Regtest),
            derive_multisig_address(&b, AddressNetwork::Regtest)
        );
    }

    #[test]
    fn equal_weights_threshold() {
        let names = ["a", "b", "c", "d"];
        let c = Configuration::new(0, names.iter().map(|n| entry(n, 100)).collect()).unwrap();
        assert_eq!(c.threshold_stake, 267);
        assert_eq!(c.signer_count(), 3);
    }

    #[test]
    fn single_validator_is_single_key_leaf() {
        let c = Configuration::new(0, vec![entry("solo", 7)]).unwrap();
        assert_eq!(c.signer_count(), 1);
        assert_eq!(c.multisig.leaf_script().len(), 34);
    }

    #[test]
    fn weighted_threshold_is_safe_for_any_coalition() {
        let c = Configuration::new(0, vec![entry("a", 1), entry("b", 1), entry("c", 10)]).unwrap();
        // smallest two hold 2 < 8, so all three must sign
        assert_eq!(c.threshold_stake, 8);
        assert_eq!(c.signer_count(), 3);
    }

    #[test]
    fn rejects_duplicates_and_zero() {
        assert!(matches!(
            Configuration::new(0, vec![entry("a", 1), entry("a", 2)]),
            Err(ConfigError::DuplicateValidator(_))
        ));
        assert_eq!(Configuration::new(0, vec![entry("a", 0)]), Err(ConfigError::ZeroWeight));
    }

    #[test]
    fn two_thirds_bounds() {
        for total in 1..500u64 {
            let t = two_thirds_ceil(total);
            assert!(3 * t >= 2 * total && 3 * (t - 1) < 2 * total);
        }
    }
}
