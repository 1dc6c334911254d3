//! Builders for every transaction family of the protocol.
//!
//! Witnesses carry fixed-size placeholders (zeroed signatures) so every size
//! and fee is exact before signing.

use std::sync::Arc;

use thiserror::Error;

use crate::address::{BtcAddress, ConfigError, Configuration, MultisigDescriptor};
use crate::codec::{
    encode_checkpoint, encode_subnet_params, encode_transfer_batch, encode_validator_data, CheckpointPayload,
    CodecError, SubnetParams, TransferBatch, ValidatorData,
};
use crate::fees::{FeeError, FeeRate, Utxo, DUST_LIMIT};
use crate::script::{build_data_script, build_op_return_script, Script, ScriptError};
use crate::taproot::{LeafCommitment, TaprootError};
use crate::tx::{OutPoint, Transaction, TxIn, TxOut};

/// Standard-policy cap on a single transaction.
pub const MAX_STANDARD_TX_VBYTES: usize = 100_000;
/// Withdrawals carried by one checkpoint.
pub const MAX_WITHDRAWALS_PER_CHECKPOINT: usize = 255;
/// DER signature with sighash byte, upper bound used for key-hash spends.
pub const ECDSA_SIG_PLACEHOLDER_LEN: usize = 73;
pub const SCHNORR_SIG_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForgeError {
    #[error("insufficient funds: need {needed} sat, have {available} sat")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("subnet funds cannot cover the checkpoint: need {needed} sat, have {available} sat")]
    InsufficientSubnetFunds { needed: u64, available: u64 },
    #[error("amount must be positive")]
    InsufficientAmount,
    #[error("collateral {collateral} sat is below the subnet minimum {min} sat")]
    CollateralTooLow { collateral: u64, min: u64 },
    #[error("transaction of {vbytes} vB exceeds the {max} vB policy limit")]
    BatchTooLarge { vbytes: usize, max: usize },
    #[error("{0} withdrawals exceed the per-checkpoint limit")]
    TooManyWithdrawals(usize),
    #[error("output of {0} sat is below dust")]
    DustOutput(u64),
    #[error("{targets} target subnets but {scripts} target scripts")]
    TargetMismatch { targets: usize, scripts: usize },
    #[error("no inputs to spend")]
    NoInputs,
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Taproot(#[from] TaprootError),
    #[error(transparent)]
    Fee(#[from] FeeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// How an input is unlocked; determines its witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpendPath {
    P2wpkh {
        pubkey: [u8; 33],
    },
    TaprootKey,
    /// Script-path spend of a k-of-n leaf; the first `signers` keys in
    /// canonical order provide signatures.
    Multisig {
        descriptor: Arc<MultisigDescriptor>,
        signers: usize,
    },
    /// Script-path spend of a key-less data leaf.
    RevealData {
        commitment: Arc<LeafCommitment>,
    },
}

impl SpendPath {
    pub fn multisig(descriptor: Arc<MultisigDescriptor>) -> Self {
        let signers = descriptor.threshold;
        SpendPath::Multisig { descriptor, signers }
    }

    pub fn witness(&self) -> Vec<Vec<u8>> {
        match self {
            SpendPath::P2wpkh { pubkey } => vec![vec![0u8; ECDSA_SIG_PLACEHOLDER_LEN], pubkey.to_vec()],
            SpendPath::TaprootKey => vec![vec![0u8; SCHNORR_SIG_LEN]],
            SpendPath::Multisig { descriptor, signers } => {
                let n = descriptor.keys.len();
                // stack items are consumed last-key-first
                let mut w: Vec<Vec<u8>> =
                    (0..n).rev().map(|i| if i < *signers { vec![0u8; SCHNORR_SIG_LEN] } else { Vec::new() }).collect();
                w.push(descriptor.commitment.leaf_script.to_bytes());
                w.push(descriptor.commitment.control_block.to_vec());
                w
            }
            SpendPath::RevealData { commitment } => {
                vec![commitment.leaf_script.to_bytes(), commitment.control_block.to_vec()]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpendInput {
    pub utxo: Utxo,
    pub path: SpendPath,
}

fn total_in(inputs: &[SpendInput]) -> u64 {
    inputs.iter().map(|i| i.utxo.value).sum()
}

fn tx_inputs(inputs: &[SpendInput]) -> Vec<TxIn> {
    inputs.iter().map(|i| TxIn::new(i.utxo.outpoint, i.path.witness())).collect()
}

fn check_policy(tx: &Transaction, max: usize) -> Result<(), ForgeError> {
    let vbytes = tx.vbytes();
    if vbytes > max {
        return Err(ForgeError::BatchTooLarge { vbytes, max });
    }
    Ok(())
}

fn empty_op_return() -> TxOut {
    TxOut::new(0, vec![crate::script::opcodes::OP_RETURN])
}

/// Spend `inputs` into `outputs` plus change when the change clears dust;
/// a sub-dust remainder is left to the fee.
fn fund_with_change(
    inputs: &[SpendInput],
    mut outputs: Vec<TxOut>,
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<Transaction, ForgeError> {
    if inputs.is_empty() {
        return Err(ForgeError::NoInputs);
    }
    let available = total_in(inputs);
    let spent: u64 = outputs.iter().map(|o| o.value).sum();
    let mut with_change = outputs.clone();
    with_change.push(TxOut::new(0, change_spk.to_vec()));
    let mut tx = Transaction::new(tx_inputs(inputs), with_change);
    let fee = fee_rate.fee(tx.vbytes());
    if available >= spent + fee + DUST_LIMIT {
        tx.outputs.last_mut().expect("change output").value = available - spent - fee;
        return Ok(tx);
    }
    if outputs.is_empty() {
        outputs.push(empty_op_return());
    }
    let tx = Transaction::new(tx_inputs(inputs), outputs);
    let fee = fee_rate.fee(tx.vbytes());
    if available < spent + fee {
        return Err(ForgeError::InsufficientFunds { needed: spent + fee, available });
    }
    Ok(tx)
}

/// A commit transaction and the reveal that spends its data output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReveal {
    pub commit: Transaction,
    pub reveal: Transaction,
    pub commitment: Arc<LeafCommitment>,
    /// Index of the data-committing output in `commit`.
    pub temp_vout: u32,
}

/// Fees of a write: commit fee, reveal fee with a change output, and reveal
/// fee when the remainder is too small for change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteDataFees {
    pub commit: u64,
    pub reveal_with_change: u64,
    pub reveal_without_change: u64,
}

fn write_data_drafts(
    inputs: &[SpendInput],
    extra_outputs: &[TxOut],
    commitment: &Arc<LeafCommitment>,
    change_spk: &[u8],
) -> (Transaction, Transaction, Transaction) {
    let mut outs = extra_outputs.to_vec();
    outs.push(TxOut::new(0, commitment.script_pubkey()));
    let commit = Transaction::new(tx_inputs(inputs), outs);
    let reveal_in = || {
        vec![TxIn::new(
            OutPoint::new(commit.txid(), extra_outputs.len() as u32),
            SpendPath::RevealData { commitment: commitment.clone() }.witness(),
        )]
    };
    let with_change = Transaction::new(reveal_in(), vec![TxOut::new(0, change_spk.to_vec())]);
    let without_change = Transaction::new(reveal_in(), vec![empty_op_return()]);
    (commit, with_change, without_change)
}

pub fn write_data_fees(
    inputs: &[SpendInput],
    extra_outputs: &[TxOut],
    data: &[u8],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<WriteDataFees, ForgeError> {
    let commitment = Arc::new(LeafCommitment::new(build_data_script(data)?)?);
    let (c, r1, r2) = write_data_drafts(inputs, extra_outputs, &commitment, change_spk);
    Ok(WriteDataFees {
        commit: fee_rate.fee(c.vbytes()),
        reveal_with_change: fee_rate.fee(r1.vbytes()),
        reveal_without_change: fee_rate.fee(r2.vbytes()),
    })
}

/// Commit-reveal write of `data`. The commit pays `extra_outputs` and a
/// taproot output committing to the data script; the reveal spends it,
/// exposing the script in its witness, and returns the rest to `change_spk`.
pub fn write_data(
    inputs: &[SpendInput],
    extra_outputs: &[TxOut],
    data: &[u8],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<CommitReveal, ForgeError> {
    if inputs.is_empty() {
        return Err(ForgeError::NoInputs);
    }
    let script = build_data_script(data)?;
    let commitment = Arc::new(LeafCommitment::new(script)?);
    let (mut commit, r1, r2) = write_data_drafts(inputs, extra_outputs, &commitment, change_spk);
    let commit_fee = fee_rate.fee(commit.vbytes());
    let reveal_change_fee = fee_rate.fee(r1.vbytes());
    let reveal_bare_fee = fee_rate.fee(r2.vbytes());
    let available = total_in(inputs);
    let extras: u64 = extra_outputs.iter().map(|o| o.value).sum();
    let floor = extras + commit_fee + reveal_bare_fee.max(DUST_LIMIT);
    if available < floor {
        return Err(ForgeError::InsufficientFunds { needed: floor, available });
    }
    let temp_value = available - extras - commit_fee;
    let temp_vout = extra_outputs.len() as u32;
    commit.outputs[temp_vout as usize].value = temp_value;
    let reveal_input = TxIn::new(
        OutPoint::new(commit.txid(), temp_vout),
        SpendPath::RevealData { commitment: commitment.clone() }.witness(),
    );
    let reveal = if temp_value >= reveal_change_fee + DUST_LIMIT {
        Transaction::new(vec![reveal_input], vec![TxOut::new(temp_value - reveal_change_fee, change_spk.to_vec())])
    } else {
        Transaction::new(vec![reveal_input], vec![empty_op_return()])
    };
    Ok(CommitReveal { commit, reveal, commitment, temp_vout })
}

/// The whitelist multisig of a subnet: min_validators of the whitelist keys.
pub fn whitelist_multisig(params: &SubnetParams) -> Result<MultisigDescriptor, ForgeError> {
    Ok(MultisigDescriptor::new(&params.whitelist, params.min_validators as usize)?)
}

/// Create a subnet: writes the encoded parameters and locks a dust output
/// to the whitelist multisig.
pub fn build_create_subnet(
    params: &SubnetParams,
    funding: &[SpendInput],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<CommitReveal, ForgeError> {
    let data = encode_subnet_params(params)?;
    let whitelist = whitelist_multisig(params)?;
    let extras = [TxOut::new(DUST_LIMIT, whitelist.script_pubkey())];
    write_data(funding, &extras, &data, change_spk, fee_rate)
}

/// Join a subnet: writes the validator data and locks the collateral to
/// `target_multisig_spk` (the whitelist multisig before activation, the
/// current configuration afterwards).
pub fn build_join_subnet(
    v: &ValidatorData,
    min_collateral: u64,
    target_multisig_spk: &[u8],
    funding: &[SpendInput],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<CommitReveal, ForgeError> {
    if v.collateral < min_collateral {
        return Err(ForgeError::CollateralTooLow { collateral: v.collateral, min: min_collateral });
    }
    let data = encode_validator_data(v)?;
    let extras = [TxOut::new(v.collateral, target_multisig_spk.to_vec())];
    write_data(funding, &extras, &data, change_spk, fee_rate)
}

/// One transaction: `extra_outputs`, an OP_RETURN carrying `payload`, and
/// change.
pub fn build_op_return_tx(
    funding: &[SpendInput],
    extra_outputs: &[TxOut],
    payload: &[u8],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<Transaction, ForgeError> {
    let op_return = build_op_return_script(payload)?;
    let mut outputs = extra_outputs.to_vec();
    outputs.push(TxOut::new(0, op_return.to_bytes()));
    fund_with_change(funding, outputs, change_spk, fee_rate)
}

/// Deposit `amount` to a subnet for `deposit_payload`'s user.
pub fn build_deposit(
    amount: u64,
    deposit_payload: &[u8],
    subnet_spk: &[u8],
    funding: &[SpendInput],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<Transaction, ForgeError> {
    if amount == 0 {
        return Err(ForgeError::InsufficientAmount);
    }
    if amount < DUST_LIMIT {
        return Err(ForgeError::DustOutput(amount));
    }
    build_op_return_tx(funding, &[TxOut::new(amount, subnet_spk.to_vec())], deposit_payload, change_spk, fee_rate)
}

/// Spend a single commit-reveal-free output to `outputs`, used by plain
/// wallet transfers. Change goes back to `change_spk`.
pub fn build_payment(
    funding: &[SpendInput],
    outputs: &[TxOut],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<Transaction, ForgeError> {
    fund_with_change(funding, outputs.to_vec(), change_spk, fee_rate)
}

/// The checkpointTx and, when transfers exist, the batchTransferTx.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointBundle {
    pub checkpoint_tx: Transaction,
    pub batch_transfer_tx: Option<Transaction>,
    /// Index of the OP_RETURN output in the checkpointTx.
    pub op_return_vout: u32,
    /// Index of the change output back to the subnet, if any.
    pub change_vout: Option<u32>,
    /// Subnet inputs spent, in order.
    pub spent: Vec<Utxo>,
}

impl CheckpointBundle {
    pub fn checkpoint_fee(&self) -> u64 {
        let input: u64 = self.spent.iter().map(|u| u.value).sum();
        input - self.checkpoint_tx.output_value()
    }

    pub fn batch_fee(&self) -> u64 {
        match &self.batch_transfer_tx {
            Some(b) => self.checkpoint_tx.outputs[self.op_return_vout as usize + 1].value - b.output_value(),
            None => 0,
        }
    }

    pub fn total_fee(&self) -> u64 {
        self.checkpoint_fee() + self.batch_fee()
    }

    pub fn total_vbytes(&self) -> usize {
        self.checkpoint_tx.vbytes() + self.batch_transfer_tx.as_ref().map_or(0, |b| b.vbytes())
    }

    pub fn transactions(&self) -> Vec<&Transaction> {
        std::iter::once(&self.checkpoint_tx).chain(self.batch_transfer_tx.as_ref()).collect()
    }
}

/// Everything a checkpoint needs.
#[derive(Debug, Clone)]
pub struct CheckpointRequest {
    /// Candidate subnet UTXOs with their spend paths; the builder selects
    /// largest first.
    pub subnet_utxos: Vec<SpendInput>,
    pub payload: CheckpointPayload,
    pub batch: TransferBatch,
    /// Locking script for each entry of `batch`, in the same order.
    pub target_scripts: Vec<Vec<u8>>,
    pub withdrawals: Vec<(BtcAddress, u64)>,
    pub stake_returns: Vec<(BtcAddress, u64)>,
    /// Where the remaining subnet funds go (the next configuration).
    pub change_spk: Vec<u8>,
    pub fee_rate: FeeRate,
    pub max_tx_vbytes: usize,
}

fn batch_transfer_draft(outpoint: OutPoint, commitment: &Arc<LeafCommitment>) -> Transaction {
    let witness = SpendPath::RevealData { commitment: commitment.clone() }.witness();
    Transaction::new(vec![TxIn::new(outpoint, witness)], vec![empty_op_return()])
}

/// Build the checkpointTx/batchTransferTx pair. Output order of the
/// checkpointTx: target subnets, withdrawals, stake returns, OP_RETURN,
/// batch script output (only with transfers), change.
pub fn build_checkpoint_bundle(req: &CheckpointRequest) -> Result<CheckpointBundle, ForgeError> {
    if req.withdrawals.len() > MAX_WITHDRAWALS_PER_CHECKPOINT {
        return Err(ForgeError::TooManyWithdrawals(req.withdrawals.len()));
    }
    if req.batch.entries.len() != req.target_scripts.len() {
        return Err(ForgeError::TargetMismatch { targets: req.batch.entries.len(), scripts: req.target_scripts.len() });
    }
    let mut outputs: Vec<TxOut> =
        req.batch.entries.iter().zip(&req.target_scripts).map(|(e, spk)| TxOut::new(e.total(), spk.clone())).collect();
    for (addr, amount) in req.withdrawals.iter().chain(&req.stake_returns) {
        outputs.push(TxOut::new(*amount, addr.script_pubkey()));
    }
    if let Some(o) = outputs.iter().find(|o| o.value < DUST_LIMIT) {
        return Err(ForgeError::DustOutput(o.value));
    }
    let op_return_vout = outputs.len() as u32;
    outputs.push(TxOut::new(0, build_op_return_script(&encode_checkpoint(&req.payload))?.to_bytes()));

    let mut batch_parts = None;
    if !req.batch.is_empty() {
        let data = encode_transfer_batch(&req.batch)?;
        let commitment = Arc::new(LeafCommitment::new(build_data_script(&data)?)?);
        let draft = batch_transfer_draft(OutPoint::default(), &commitment);
        check_policy(&draft, req.max_tx_vbytes)?;
        let value = req.fee_rate.fee(draft.vbytes()).max(DUST_LIMIT);
        outputs.push(TxOut::new(value, commitment.script_pubkey()));
        batch_parts = Some((commitment, outputs.len() as u32 - 1));
    }
    let spent_out: u64 = outputs.iter().map(|o| o.value).sum();

    let mut candidates = req.subnet_utxos.clone();
    sort_spend_inputs(&mut candidates);
    let available = total_in(&candidates);
    let mut acc = 0u64;
    let mut chosen = None;
    for k in 1..=candidates.len() {
        acc += candidates[k - 1].utxo.value;
        let inputs = tx_inputs(&candidates[..k]);
        let mut with_change = outputs.clone();
        with_change.push(TxOut::new(0, req.change_spk.clone()));
        let mut tx = Transaction::new(inputs.clone(), with_change);
        let fee = req.fee_rate.fee(tx.vbytes());
        if acc >= spent_out + fee + DUST_LIMIT {
            let change_vout = tx.outputs.len() as u32 - 1;
            tx.outputs[change_vout as usize].value = acc - spent_out - fee;
            chosen = Some((k, tx, Some(change_vout)));
            break;
        }
        let tx = Transaction::new(inputs, outputs.clone());
        if acc >= spent_out + req.fee_rate.fee(tx.vbytes()) {
            chosen = Some((k, tx, None));
            break;
        }
    }
    let (k, checkpoint_tx, change_vout) = chosen.ok_or_else(|| {
        let probe = Transaction::new(tx_inputs(&candidates), outputs.clone());
        ForgeError::InsufficientSubnetFunds { needed: spent_out + req.fee_rate.fee(probe.vbytes()), available }
    })?;
    check_policy(&checkpoint_tx, req.max_tx_vbytes)?;

    let batch_transfer_tx = batch_parts
        .map(|(commitment, vout)| batch_transfer_draft(OutPoint::new(checkpoint_tx.txid(), vout), &commitment));
    Ok(CheckpointBundle {
        checkpoint_tx,
        batch_transfer_tx,
        op_return_vout,
        change_vout,
        spent: candidates[..k].iter().map(|c| c.utxo.clone()).collect(),
    })
}

/// Largest value first, ties by outpoint.
pub fn sort_spend_inputs(inputs: &mut [SpendInput]) {
    inputs.sort_by(|a, b| b.utxo.value.cmp(&a.utxo.value).then_with(|| a.utxo.outpoint.cmp(&b.utxo.outpoint)));
}

/// Return every validator's collateral to its backup address. Fees are
/// shared in proportion to collateral; subnet funds beyond the collateral
/// stay under `change_spk`.
pub fn build_kill_settlement(
    config: &Configuration,
    subnet_utxos: &[SpendInput],
    change_spk: &[u8],
    fee_rate: FeeRate,
) -> Result<CheckpointBundle, ForgeError> {
    let total = config.total_weight();
    let mut candidates = subnet_utxos.to_vec();
    sort_spend_inputs(&mut candidates);
    let available = total_in(&candidates);
    if available < total {
        return Err(ForgeError::InsufficientSubnetFunds { needed: total, available });
    }
    let mut acc = 0;
    let mut k = 0;
    while acc < total {
        acc += candidates[k].utxo.value;
        k += 1;
    }
    let inputs = tx_inputs(&candidates[..k]);
    let mut outputs: Vec<TxOut> =
        config.validators.iter().map(|v| TxOut::new(v.weight, v.backup_address.script_pubkey())).collect();
    let leftover = acc - total;
    let change_vout = (leftover >= DUST_LIMIT).then(|| {
        outputs.push(TxOut::new(leftover, change_spk.to_vec()));
        outputs.len() as u32 - 1
    });
    let mut tx = Transaction::new(inputs, outputs);
    let fee = fee_rate.fee(tx.vbytes()).saturating_sub(if change_vout.is_none() { leftover } else { 0 });
    let shares = proportional_shares(fee, &config.validators.iter().map(|v| v.weight).collect::<Vec<_>>());
    for (out, share) in tx.outputs.iter_mut().zip(&shares) {
        if out.value < share + DUST_LIMIT {
            return Err(ForgeError::DustOutput(out.value.saturating_sub(*share)));
        }
        out.value -= share;
    }
    let op_return_vout = tx.outputs.len() as u32;
    let spent = candidates[..k].iter().map(|c| c.utxo.clone()).collect();
    Ok(CheckpointBundle { checkpoint_tx: tx, batch_transfer_tx: None, op_return_vout, change_vout, spent })
}

/// Split `fee` by weight, rounding down, handing the remainder out one
/// satoshi at a time from the first weight on.
pub fn proportional_shares(fee: u64, weights: &[u64]) -> Vec<u64> {
    let total: u128 = weights.iter().map(|w| u128::from(*w)).sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let mut shares: Vec<u64> = weights.iter().map(|w| (u128::from(fee) * u128::from(*w) / total) as u64).collect();
    let mut rest = fee - shares.iter().sum::<u64>();
    for s in shares.iter_mut() {
        if rest == 0 {
            break;
        }
        *s += 1;
        rest -= 1;
    }
    shares
}

/// Data script that a reveal or batchTransferTx exposes, if the input has
/// the two-item script-path shape.
pub fn revealed_script(input: &TxIn) -> Option<&[u8]> {
    match input.witness.as_slice() {
        [.., script, control] if control.len() == crate::taproot::CONTROL_BLOCK_LEN => Some(script),
        _ => None,
    }
}

/// Parse a revealed leaf into a data script, rejecting foreign opcodes.
pub fn revealed_data(input: &TxIn) -> Option<Result<Vec<u8>, ScriptError>> {
    revealed_script(input).map(crate::script::parse_data_script_bytes)
}

/// Leaf script for a data payload, for callers that need sizes only.
pub fn data_leaf(data: &[u8]) -> Result<Script, ForgeError> {
    Ok(build_data_script(data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::{AddressNetwork, ValidatorEntry};
    use crate::address::{Root, SubnetAddress, SubnetId, UserAddress};
    use crate::codec::{Transfer, TransferEntry};
    use crate::keys::Keypair;
    use crate::tx::Txid;

    fn p2wpkh_input(tag: u8, value: u64) -> SpendInput {
        let kp = Keypair::from_name("funder");
        SpendInput {
            utxo: Utxo {
                outpoint: OutPoint::new(Txid([tag; 32]), 0),
                value,
                script_pubkey: BtcAddress::p2wpkh(&kp.compressed(), AddressNetwork::Regtest).script_pubkey(),
                height: 0,
            },
            path: SpendPath::P2wpkh { pubkey: kp.compressed() },
        }
    }

    fn wallet_spk() -> Vec<u8> {
        BtcAddress::p2wpkh(&Keypair::from_name("funder").compressed(), AddressNetwork::Regtest).script_pubkey()
    }

    fn config(n: usize) -> Configuration {
        let validators = (0..n)
            .map(|i| {
                let kp = Keypair::from_name(&format!("v{i}"));
                ValidatorEntry {
                    pk: kp.x_only(),
                    weight: 1_000_000,
                    backup_address: BtcAddress::p2wpkh(&kp.compressed(), AddressNetwork::Regtest),
                }
            })
            .collect();
        Configuration::new(1, validators).unwrap()
    }

    #[test]
    fn native_baseline_is_141_vb() {
        let tx = build_payment(
            &[p2wpkh_input(1, 1_000_000)],
            &[TxOut::new(50_000, wallet_spk())],
            &wallet_spk(),
            FeeRate::from_sat_per_vb(200),
        )
        .unwrap();
        assert_eq!(tx.outputs.len(), 2);
        assert_eq!(tx.vbytes(), 141);
    }

    #[test]
    fn write_data_conserves_and_recovers() {
        let rate = FeeRate::from_sat_per_vb(10);
        let cr = write_data(&[p2wpkh_input(2, 100_000)], &[], b"x", &wallet_spk(), rate).unwrap();
        let commit_fee = 100_000 - cr.commit.output_value();
        assert_eq!(commit_fee, rate.fee(cr.commit.vbytes()));
        let reveal_fee = cr.commit.output_value() - cr.reveal.output_value();
        assert_eq!(reveal_fee, rate.fee(cr.reveal.vbytes()));
        assert_eq!(cr.reveal.inputs[0].witness[0].len(), 4);
        assert_eq!(revealed_data(&cr.reveal.inputs[0]).unwrap().unwrap(), b"x");
    }

    #[test]
    fn exact_join_funding_has_no_change() {
        let rate = FeeRate::from_sat_per_vb(5);
        let kp = Keypair::from_name("joiner");
        let v = ValidatorData {
            subnet_id: SubnetId::l2(Root::Regtest, SubnetAddress([1; 20])),
            validator_pk: kp.x_only(),
            backup_address: BtcAddress::p2wpkh(&kp.compressed(), AddressNetwork::Regtest),
            collateral: 50_000,
            network_hints: vec![],
        };
        let spk = config(4).multisig.script_pubkey();
        let probe = p2wpkh_input(3, 1);
        let data = encode_validator_data(&v).unwrap();
        let extras = [TxOut::new(50_000, spk.clone())];
        let fees = write_data_fees(&[probe], &extras, &data, &wallet_spk(), rate).unwrap();
        let exact = 50_000 + fees.commit + fees.reveal_without_change.max(DUST_LIMIT);
        let cr = build_join_subnet(&v, 50_000, &spk, &[p2wpkh_input(3, exact)], &wallet_spk(), rate).unwrap();
        assert_eq!(cr.reveal.output_value(), 0);
        assert!(cr.reveal.outputs[0].is_op_return());
        assert_eq!(
            build_join_subnet(&v, 60_000, &spk, &[p2wpkh_input(3, exact)], &wallet_spk(), rate),
            Err(ForgeError::CollateralTooLow { collateral: 50_000, min: 60_000 })
        );
    }

    #[test]
    fn deposit_rejects_zero() {
        assert_eq!(
            build_deposit(0, b"IPCDEP", &[0x51], &[p2wpkh_input(1, 10_000)], &wallet_spk(), FeeRate::ONE_SAT_PER_VB),
            Err(ForgeError::InsufficientAmount)
        );
    }

    fn checkpoint_request(cfg: &Configuration, transfers: usize, withdrawals: usize) -> CheckpointRequest {
        let d = Arc::new(cfg.multisig.clone());
        let spk = d.script_pubkey();
        let target = SubnetId::l2(Root::Regtest, SubnetAddress([0xbb; 20]));
        let batch = if transfers == 0 {
            TransferBatch::default()
        } else {
            TransferBatch {
                entries: vec![TransferEntry {
                    target,
                    transfers: (0..transfers)
                        .map(|i| Transfer { destination: UserAddress([i as u8; 20]), amount: 1000 })
                        .collect(),
                }],
            }
        };
        let target_scripts = batch.entries.iter().map(|_| spk.clone()).collect();
        let utxo = Utxo {
            outpoint: OutPoint::new(Txid([5; 32]), 0),
            value: 1_000_000_000,
            script_pubkey: spk.clone(),
            height: 0,
        };
        CheckpointRequest {
            subnet_utxos: vec![SpendInput { utxo, path: SpendPath::multisig(d) }],
            payload: CheckpointPayload {
                subnet: SubnetAddress([0xaa; 20]),
                subnet_block_height: 100,
                state_commitment: [0; 32],
            },
            batch,
            target_scripts,
            withdrawals: (0..withdrawals)
                .map(|_| (BtcAddress::p2tr(&Keypair::from_name("w").x_only(), AddressNetwork::Regtest), 10_000))
                .collect(),
            stake_returns: vec![],
            change_spk: spk,
            fee_rate: FeeRate::from_sat_per_vb(200),
            max_tx_vbytes: MAX_STANDARD_TX_VBYTES,
        }
    }

    #[test]
    fn bundle_conserves_value() {
        let cfg = config(4);
        let b = build_checkpoint_bundle(&checkpoint_request(&cfg, 4, 2)).unwrap();
        let input: u64 = b.spent.iter().map(|u| u.value).sum();
        let batch = b.batch_transfer_tx.as_ref().unwrap();
        assert_eq!(input, b.checkpoint_tx.output_value() + b.checkpoint_fee());
        assert_eq!(b.batch_fee(), FeeRate::from_sat_per_vb(200).fee(batch.vbytes()));
        assert_eq!(batch.inputs[0].witness.len(), 2);
        assert_eq!(batch.inputs[0].previous_output.txid, b.checkpoint_tx.txid());
    }

    #[test]
    fn empty_checkpoint_has_no_batch() {
        let b = build_checkpoint_bundle(&checkpoint_request(&config(4), 0, 0)).unwrap();
        assert!(b.batch_transfer_tx.is_none());
        assert_eq!(b.checkpoint_tx.outputs.len(), 2);
        assert_eq!(b.checkpoint_tx.outputs[0].serialized_len(), 90);
    }

    #[test]
    fn too_many_withdrawals() {
        let r = build_checkpoint_bundle(&checkpoint_request(&config(4), 0, 256));
        assert_eq!(r, Err(ForgeError::TooManyWithdrawals(256)));
    }

    #[test]
    fn kill_settlement_returns_collateral() {
        let cfg = config(4);
        let d = Arc::new(cfg.multisig.clone());
        let utxo = Utxo {
            outpoint: OutPoint::new(Txid([8; 32]), 0),
            value: 4_000_000,
            script_pubkey: d.script_pubkey(),
            height: 0,
        };
        let input = SpendInput { utxo, path: SpendPath::multisig(d.clone()) };
        let b = build_kill_settlement(&cfg, &[input], &d.script_pubkey(), FeeRate::from_sat_per_vb(2)).unwrap();
        let tx = &b.checkpoint_tx;
        assert_eq!(tx.outputs.len(), 4);
        assert_eq!(tx.output_value() + b.checkpoint_fee(), 4_000_000);
        for (o, v) in tx.outputs.iter().zip(&cfg.validators) {
            assert_eq!(o.script_pubkey, v.backup_address.script_pubkey());
        }
    }

    #[test]
    fn shares_sum_to_fee() {
        assert_eq!(proportional_shares(10, &[1, 1, 1]), vec![4, 3, 3]);
        assert_eq!(proportional_shares(7, &[3, 1]).iter().sum::<u64>(), 7);
    }
}
