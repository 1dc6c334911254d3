//! Deterministic transaction fixtures for the sweeps.

use std::sync::Arc;

use btc_ipc::address::{
    AddressNetwork, BtcAddress, Configuration, MultisigDescriptor, Root, SubnetAddress, SubnetId, UserAddress,
    ValidatorEntry,
};
use btc_ipc::codec::{CheckpointPayload, TransferBatch};
use btc_ipc::fees::{FeeRate, Utxo};
use btc_ipc::forge::{
    build_checkpoint_bundle, build_payment, CheckpointBundle, CheckpointRequest, ForgeError, SpendInput, SpendPath,
    MAX_WITHDRAWALS_PER_CHECKPOINT,
};
use btc_ipc::keys::Keypair;
use btc_ipc::tx::{OutPoint, Transaction, TxOut, Txid};

use crate::SignerMode;

const NETWORK: AddressNetwork = AddressNetwork::Regtest;
/// Value of each benchmarked transfer or withdrawal.
pub const ITEM_AMOUNT: u64 = 30_000;
const SUBNET_FUNDS: u64 = 2_000_000_000_000;

/// The signing configuration of a source subnet.
#[derive(Debug, Clone)]
pub struct Signers {
    pub mode: SignerMode,
    pub config: Configuration,
    descriptor: Arc<MultisigDescriptor>,
}

impl Signers {
    /// Threshold mode is a single 1-of-1 key, the witness a threshold
    /// signature scheme would leave on chain.
    pub fn new(mode: SignerMode, n_validators: usize) -> Self {
        let n = match mode {
            SignerMode::Threshold => 1,
            SignerMode::Multisig => n_validators.max(1),
        };
        let validators = (0..n)
            .map(|i| {
                let kp = Keypair::from_name(&format!("bench-validator-{i}"));
                ValidatorEntry {
                    pk: kp.x_only(),
                    weight: 1_000_000,
                    backup_address: BtcAddress::p2tr_key_path(&kp.x_only(), NETWORK),
                }
            })
            .collect();
        let config = Configuration::new(1, validators).expect("distinct bench keys");
        let descriptor = Arc::new(config.multisig.clone());
        Signers { mode, config, descriptor }
    }

    pub fn n_validators(&self) -> usize {
        self.config.validators.len()
    }

    fn funds(&self) -> SpendInput {
        SpendInput {
            utxo: Utxo {
                outpoint: OutPoint::new(Txid([0x5a; 32]), 0),
                value: SUBNET_FUNDS,
                script_pubkey: self.descriptor.script_pubkey(),
                height: 0,
            },
            path: SpendPath::multisig(self.descriptor.clone()),
        }
    }
}

fn target(i: usize) -> SubnetId {
    SubnetId::l2(Root::Regtest, SubnetAddress([i as u8 + 1; 20]))
}

fn target_script(i: usize) -> Vec<u8> {
    BtcAddress::p2tr_key_path(&Keypair::from_name(&format!("bench-target-{i}")).x_only(), NETWORK).script_pubkey()
}

fn user(i: usize) -> UserAddress {
    let mut a = [0u8; 20];
    a[..8].copy_from_slice(&(i as u64).to_be_bytes());
    a[19] = 0xee;
    UserAddress(a)
}

fn withdraw_address() -> BtcAddress {
    BtcAddress::p2tr_key_path(&Keypair::from_name("bench-withdrawer").x_only(), NETWORK)
}

/// A checkpoint carrying `n_transfers` spread round-robin over
/// `n_targets` subnets and `n_withdrawals` payouts to L1.
pub fn request(
    signers: &Signers,
    n_transfers: usize,
    n_targets: usize,
    n_withdrawals: usize,
    fee_rate: FeeRate,
    max_tx_vbytes: usize,
) -> CheckpointRequest {
    let n_targets = n_targets.max(1);
    let batch = TransferBatch::from_transfers((0..n_transfers).map(|i| (target(i % n_targets), user(i), ITEM_AMOUNT)));
    let target_scripts = (0..batch.entries.len()).map(target_script).collect();
    let withdraw = withdraw_address();
    CheckpointRequest {
        subnet_utxos: vec![signers.funds()],
        payload: CheckpointPayload {
            subnet: SubnetAddress([0xc0; 20]),
            subnet_block_height: 1_000,
            state_commitment: [0x11; 32],
        },
        batch,
        target_scripts,
        withdrawals: (0..n_withdrawals).map(|_| (withdraw.clone(), ITEM_AMOUNT)).collect(),
        stake_returns: vec![],
        change_spk: signers.descriptor.script_pubkey(),
        fee_rate,
        max_tx_vbytes,
    }
}

pub fn transfer_bundle(
    signers: &Signers,
    n: usize,
    n_targets: usize,
    fee_rate: FeeRate,
    max_tx_vbytes: usize,
) -> Result<CheckpointBundle, ForgeError> {
    build_checkpoint_bundle(&request(signers, n, n_targets, 0, fee_rate, max_tx_vbytes))
}

pub fn withdraw_bundle(
    signers: &Signers,
    n: usize,
    fee_rate: FeeRate,
    max_tx_vbytes: usize,
) -> Result<CheckpointBundle, ForgeError> {
    build_checkpoint_bundle(&request(signers, 0, 1, n, fee_rate, max_tx_vbytes))
}

/// Largest number of transfers whose bundle keeps every transaction
/// within `max_tx_vbytes`, or 0 if not even one fits.
pub fn max_batch(signers: &Signers, n_targets: usize, fee_rate: FeeRate, max_tx_vbytes: usize) -> usize {
    let fits = |n: usize| transfer_bundle(signers, n, n_targets, fee_rate, max_tx_vbytes).is_ok();
    // every transfer costs more than 20 witness bytes, so this bound never fits
    let (mut lo, mut hi) = (0usize, max_tx_vbytes / 5 + 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Largest withdrawal count one checkpoint accepts under the size cap.
pub fn max_withdrawals(signers: &Signers, fee_rate: FeeRate, max_tx_vbytes: usize) -> usize {
    (0..=MAX_WITHDRAWALS_PER_CHECKPOINT)
        .rev()
        .find(|&n| withdraw_bundle(signers, n, fee_rate, max_tx_vbytes).is_ok())
        .unwrap_or(0)
}

/// A single-key wallet paying one recipient with change.
pub fn native_transfer(fee_rate: FeeRate) -> Transaction {
    let kp = Keypair::from_name("bench-native");
    let spk = BtcAddress::p2wpkh(&kp.compressed(), NETWORK).script_pubkey();
    let input = SpendInput {
        utxo: Utxo {
            outpoint: OutPoint::new(Txid([0x3c; 32]), 1),
            value: 100_000_000,
            script_pubkey: spk.clone(),
            height: 0,
        },
        path: SpendPath::P2wpkh { pubkey: kp.compressed() },
    };
    let to = BtcAddress::p2wpkh(&Keypair::from_name("bench-recipient").compressed(), NETWORK).script_pubkey();
    build_payment(&[input], &[TxOut::new(ITEM_AMOUNT, to)], &spk, fee_rate).expect("funded native payment")
}

/// Size the checkpoint's OP_RETURN output adds to an otherwise empty
/// checkpointTx.
pub fn checkpoint_marginal_vbytes(signers: &Signers, fee_rate: FeeRate, max_tx_vbytes: usize) -> (usize, usize) {
    let bundle = transfer_bundle(signers, 0, 1, fee_rate, max_tx_vbytes).expect("empty checkpoint fits");
    let mut stripped = bundle.checkpoint_tx.clone();
    stripped.outputs.remove(bundle.op_return_vout as usize);
    let full = bundle.checkpoint_tx.vbytes();
    (full, full - stripped.vbytes())
}
