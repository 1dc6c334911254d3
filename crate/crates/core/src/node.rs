//! Drives the protocol against a [`SimChain`]: wallets, user operations,
//! the checkpoint cycle, relaying and kill settlement.

use std::sync::Arc;

use thiserror::Error;

use crate::address::{AddressNetwork, BtcAddress, SubnetAddress, SubnetId, UserAddress};
use crate::chain::{ChainError, SimChain};
use crate::codec::{
    encode_deposit, encode_stake, encode_transfer_batch, encode_validator_action, CheckpointPayload, CodecError,
    DepositPayload, IpcTag, StakePayload, SubnetParams, TransferBatch, ValidatorAction, ValidatorData,
};
use crate::events::CheckpointEvents;
use crate::fees::{
    consolidate, estimate_fee_rate, ConstantFeeOracle, EstimateMode, FeeError, FeeOracle, FeeRate,
    DEFAULT_TARGET_BLOCKS, DUST_LIMIT,
};
use crate::forge::{
    build_checkpoint_bundle, build_create_subnet, build_deposit, build_join_subnet, build_kill_settlement,
    build_op_return_tx, build_payment, CheckpointBundle, CheckpointRequest, CommitReveal, ForgeError, SpendInput,
    SpendPath, MAX_STANDARD_TX_VBYTES,
};
use crate::hash::sha256;
use crate::keys::{Keypair, XOnlyPublicKey};
use crate::monitor::{MonitorError, MonitorEvent, Phase, Registry, TopDownBatch};
use crate::tx::{Transaction, TxOut, Txid};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Fee(#[from] FeeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("unknown subnet {0}")]
    UnknownSubnet(String),
    #[error("target subnet {0} is not registered")]
    UnknownTarget(SubnetId),
    #[error("wallet {0} has no spendable outputs")]
    NoFunds(String),
}

/// A single-key P2WPKH wallet.
#[derive(Debug, Clone)]
pub struct Wallet {
    pub name: String,
    pub keypair: Keypair,
    pub network: AddressNetwork,
}

impl Wallet {
    pub fn new(name: &str, network: AddressNetwork) -> Self {
        Wallet { name: name.to_string(), keypair: Keypair::from_name(name), network }
    }

    pub fn pk(&self) -> XOnlyPublicKey {
        self.keypair.x_only()
    }

    pub fn address(&self) -> BtcAddress {
        BtcAddress::p2wpkh(&self.keypair.compressed(), self.network)
    }

    pub fn script_pubkey(&self) -> Vec<u8> {
        self.address().script_pubkey()
    }

    pub fn balance(&self, chain: &SimChain) -> u64 {
        chain.balance(&self.script_pubkey())
    }

    /// Every spendable output of the wallet.
    pub fn funding(&self, chain: &SimChain) -> Result<Vec<SpendInput>, NodeError> {
        let path = SpendPath::P2wpkh { pubkey: self.keypair.compressed() };
        let inputs: Vec<SpendInput> = chain
            .utxos_for_script(&self.script_pubkey())
            .into_iter()
            .map(|utxo| SpendInput { utxo, path: path.clone() })
            .collect();
        if inputs.is_empty() {
            return Err(NodeError::NoFunds(self.name.clone()));
        }
        Ok(inputs)
    }
}

/// Result of one checkpoint cycle.
#[derive(Debug, Clone)]
pub struct CycleReport {
    pub top_down: TopDownBatch,
    pub bundle: CheckpointBundle,
    /// One result per relayer; exactly one succeeds.
    pub relay_results: Vec<Result<Txid, ChainError>>,
    pub consolidation: Option<Transaction>,
    /// Value left under old configurations because sweeping it would cost
    /// more than it is worth.
    pub stranded: u64,
    pub settlement: Option<CheckpointBundle>,
    pub events: Vec<MonitorEvent>,
}

pub struct Node {
    pub chain: SimChain,
    pub registry: Registry,
    pub fee_oracle: Box<dyn FeeOracle + Send + Sync>,
    pub fee_floor: FeeRate,
    pub max_tx_vbytes: usize,
    /// Relayers submitting every checkpoint; all but the first lose the race.
    pub relayers: usize,
}

impl Node {
    pub fn new(chain: SimChain, registry: Registry) -> Self {
        Node {
            chain,
            registry,
            fee_oracle: Box::new(ConstantFeeOracle { sat_per_vb: 1 }),
            fee_floor: FeeRate::ONE_SAT_PER_VB,
            max_tx_vbytes: MAX_STANDARD_TX_VBYTES,
            relayers: 1,
        }
    }

    pub fn with_fee_rate(mut self, sat_per_vb: u64) -> Self {
        self.fee_oracle = Box::new(ConstantFeeOracle { sat_per_vb });
        self
    }

    pub fn network(&self) -> AddressNetwork {
        self.registry.network()
    }

    pub fn fee_rate(&self) -> FeeRate {
        estimate_fee_rate(
            self.fee_oracle.as_ref(),
            self.chain.height(),
            DEFAULT_TARGET_BLOCKS,
            EstimateMode::Economical,
            self.fee_floor,
        )
        .fee_rate
    }

    pub fn wallet(&self, name: &str) -> Wallet {
        Wallet::new(name, self.network())
    }

    /// Mine `n` blocks and feed finalized ones to the registry.
    pub fn mine(&mut self, n: u64) -> Result<Vec<MonitorEvent>, NodeError> {
        self.chain.mine_blocks(n);
        Ok(self.registry.sync(&self.chain)?)
    }

    fn submit_all<'a>(&mut self, txs: impl IntoIterator<Item = &'a Transaction>) -> Result<Vec<Txid>, NodeError> {
        txs.into_iter().map(|tx| Ok(self.chain.submit(tx.clone())?)).collect()
    }

    fn resolve(&self, subnet: &SubnetId) -> Result<SubnetAddress, NodeError> {
        let addr = subnet.address();
        self.registry.subnet(&addr).map(|_| addr).ok_or_else(|| NodeError::UnknownSubnet(subnet.to_string()))
    }

    /// Submit a commit-reveal creating a subnet; returns the id it will have.
    pub fn create_subnet(
        &mut self,
        creator: &Wallet,
        params: &SubnetParams,
    ) -> Result<(SubnetId, CommitReveal), NodeError> {
        let cr =
            build_create_subnet(params, &creator.funding(&self.chain)?, &creator.script_pubkey(), self.fee_rate())?;
        self.submit_all([&cr.commit, &cr.reveal])?;
        let id = SubnetId::l2(
            self.registry.root(),
            crate::address::derive_subnet_address(&cr.reveal.txid().display_bytes()),
        );
        Ok((id, cr))
    }

    pub fn join(
        &mut self,
        validator: &Wallet,
        subnet: &SubnetId,
        collateral: u64,
        backup: Option<BtcAddress>,
    ) -> Result<CommitReveal, NodeError> {
        let rec = self.registry.subnet(&self.resolve(subnet)?).expect("resolved");
        let target = match rec.phase {
            Phase::Initialized => rec.whitelist.script_pubkey(),
            _ => rec.current_spk(),
        };
        let v = ValidatorData {
            subnet_id: subnet.clone(),
            validator_pk: validator.pk(),
            backup_address: backup.unwrap_or_else(|| validator.address()),
            collateral,
            network_hints: Vec::new(),
        };
        let min = rec.params.min_collateral;
        let cr = build_join_subnet(
            &v,
            min,
            &target,
            &validator.funding(&self.chain)?,
            &validator.script_pubkey(),
            self.fee_rate(),
        )?;
        self.submit_all([&cr.commit, &cr.reveal])?;
        Ok(cr)
    }

    fn op_return(&mut self, wallet: &Wallet, extras: &[TxOut], payload: &[u8]) -> Result<Transaction, NodeError> {
        let tx = build_op_return_tx(
            &wallet.funding(&self.chain)?,
            extras,
            payload,
            &wallet.script_pubkey(),
            self.fee_rate(),
        )?;
        self.chain.submit(tx.clone())?;
        Ok(tx)
    }

    fn action(&mut self, wallet: &Wallet, subnet: &SubnetId, tag: IpcTag) -> Result<Transaction, NodeError> {
        let a = ValidatorAction { subnet: self.resolve(subnet)?, validator_pk: wallet.pk() };
        self.op_return(wallet, &[], &encode_validator_action(tag, &a))
    }

    pub fn leave(&mut self, validator: &Wallet, subnet: &SubnetId) -> Result<Transaction, NodeError> {
        self.action(validator, subnet, IpcTag::Leave)
    }

    pub fn kill_propose(&mut self, validator: &Wallet, subnet: &SubnetId) -> Result<Transaction, NodeError> {
        self.action(validator, subnet, IpcTag::KillPropose)
    }

    pub fn kill_vote(&mut self, validator: &Wallet, subnet: &SubnetId) -> Result<Transaction, NodeError> {
        self.action(validator, subnet, IpcTag::KillVote)
    }

    /// Add `amount` of collateral, paid to the current multisig.
    pub fn stake(&mut self, validator: &Wallet, subnet: &SubnetId, amount: u64) -> Result<Transaction, NodeError> {
        let addr = self.resolve(subnet)?;
        let p = StakePayload { subnet: addr, validator_pk: validator.pk(), amount };
        let payload = encode_stake(&p, false)?;
        let spk = self.registry.subnet(&addr).expect("resolved").current_spk();
        self.op_return(validator, &[TxOut::new(amount, spk)], &payload)
    }

    pub fn unstake(&mut self, validator: &Wallet, subnet: &SubnetId, amount: u64) -> Result<Transaction, NodeError> {
        let p = StakePayload { subnet: self.resolve(subnet)?, validator_pk: validator.pk(), amount };
        let payload = encode_stake(&p, true)?;
        self.op_return(validator, &[], &payload)
    }

    pub fn deposit(
        &mut self,
        user: &Wallet,
        subnet: &SubnetId,
        to: UserAddress,
        amount: u64,
    ) -> Result<Transaction, NodeError> {
        let addr = self.resolve(subnet)?;
        let spk = self.registry.subnet(&addr).expect("resolved").current_spk();
        let payload = encode_deposit(&DepositPayload { user_address: to });
        let tx =
            build_deposit(amount, &payload, &spk, &user.funding(&self.chain)?, &user.script_pubkey(), self.fee_rate())?;
        self.chain.submit(tx.clone())?;
        Ok(tx)
    }

    /// Plain payment from a wallet.
    pub fn pay(&mut self, from: &Wallet, to: &BtcAddress, amount: u64) -> Result<Transaction, NodeError> {
        let out = TxOut::new(amount, to.script_pubkey());
        let tx = build_payment(&from.funding(&self.chain)?, &[out], &from.script_pubkey(), self.fee_rate())?;
        self.chain.submit(tx.clone())?;
        Ok(tx)
    }

    fn subnet_inputs(&self, addr: &SubnetAddress) -> Vec<SpendInput> {
        let rec = self.registry.subnet(addr).expect("known subnet");
        rec.owned
            .values()
            .filter_map(|u| {
                let d = rec.descriptor_for(&u.script_pubkey)?;
                Some(SpendInput { utxo: u.clone(), path: SpendPath::multisig(d) })
            })
            .collect()
    }

    /// Build the checkpoint of `subnet` from pending registry state and the
    /// subnet's own `events`, without submitting anything.
    pub fn prepare_checkpoint(
        &self,
        subnet: &SubnetId,
        events: &CheckpointEvents,
    ) -> Result<(TopDownBatch, CheckpointBundle), NodeError> {
        let addr = self.resolve(subnet)?;
        let top_down = self.registry.peek_top_down_messages(&addr)?;
        let rec = self.registry.subnet(&addr).expect("resolved");
        let change_spk = match &top_down.new_configuration {
            Some(c) => c.multisig.script_pubkey(),
            None => rec.current_spk(),
        };
        let batch = TransferBatch::from_transfers(events.transfers.iter().cloned());
        let target_scripts = batch
            .entries
            .iter()
            .map(|e| {
                self.registry
                    .subnet(&e.target.address())
                    .map(|r| r.current_spk())
                    .ok_or_else(|| NodeError::UnknownTarget(e.target.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let subnet_block_height = rec.next_checkpoint_height();
        let payload = CheckpointPayload {
            subnet: addr,
            subnet_block_height,
            state_commitment: state_commitment(&addr, subnet_block_height, &batch, &events.withdrawals)?,
        };
        let req = CheckpointRequest {
            subnet_utxos: self.subnet_inputs(&addr),
            payload,
            batch,
            target_scripts,
            withdrawals: events.withdrawals.clone(),
            stake_returns: top_down.stake_returns.clone(),
            change_spk,
            fee_rate: self.fee_rate(),
            max_tx_vbytes: self.max_tx_vbytes,
        };
        Ok((top_down, build_checkpoint_bundle(&req)?))
    }

    /// Submit `bundle` once per relayer. The first submission wins; later
    /// ones conflict and cost the subnet nothing.
    pub fn relay(
        &mut self,
        bundle: &CheckpointBundle,
        relayers: usize,
    ) -> Result<Vec<Result<Txid, ChainError>>, NodeError> {
        let winner = self.chain.submit(bundle.checkpoint_tx.clone())?;
        let mut results = vec![Ok(winner)];
        for _ in 1..relayers {
            results.push(self.chain.submit(bundle.checkpoint_tx.clone()));
        }
        if let Some(batch) = &bundle.batch_transfer_tx {
            self.chain.submit(batch.clone())?;
        }
        Ok(results)
    }

    /// One full cycle: collect top-down messages, build and relay the
    /// checkpoint, consolidate after a validator-set change, mine, and
    /// settle the subnet if this checkpoint completed its kill.
    pub fn run_checkpoint_cycle(
        &mut self,
        subnet: &SubnetId,
        events: &CheckpointEvents,
    ) -> Result<CycleReport, NodeError> {
        let addr = self.resolve(subnet)?;
        let (top_down, bundle) = self.prepare_checkpoint(subnet, events)?;
        let relay_results = self.relay(&bundle, self.relayers)?;
        self.registry.commit_top_down_messages(&top_down)?;
        let (consolidation, stranded) = match &top_down.new_configuration {
            Some(cfg) => self.consolidate_old(&addr, &bundle, &cfg.multisig.script_pubkey())?,
            None => (None, 0),
        };
        let mut events = self.mine(1)?;
        let settlement = if self.registry.subnet(&addr).is_some_and(|r| r.phase == Phase::Killed) {
            let s = self.settle_killed(&addr)?;
            events.extend(self.mine(1)?);
            Some(s)
        } else {
            None
        };
        Ok(CycleReport { top_down, bundle, relay_results, consolidation, stranded, settlement, events })
    }

    /// Sweep outputs still locked by old configurations into `new_spk`.
    fn consolidate_old(
        &mut self,
        addr: &SubnetAddress,
        bundle: &CheckpointBundle,
        new_spk: &[u8],
    ) -> Result<(Option<Transaction>, u64), NodeError> {
        let leftovers: Vec<SpendInput> = self
            .subnet_inputs(addr)
            .into_iter()
            .filter(|i| i.utxo.script_pubkey != new_spk && !bundle.spent.contains(&i.utxo))
            .collect();
        if leftovers.is_empty() {
            return Ok((None, 0));
        }
        let value: u64 = leftovers.iter().map(|i| i.utxo.value).sum();
        match consolidate(&leftovers, new_spk, self.fee_rate()) {
            Ok(tx) if tx.outputs[0].value >= DUST_LIMIT => {
                self.chain.submit(tx.clone())?;
                Ok((Some(tx), 0))
            }
            Ok(_) | Err(FeeError::FeeExceedsValue { .. }) => Ok((None, value)),
            Err(e) => Err(e.into()),
        }
    }

    fn settle_killed(&mut self, addr: &SubnetAddress) -> Result<CheckpointBundle, NodeError> {
        let rec = self.registry.subnet(addr).expect("known subnet");
        let config = rec.current_configuration().cloned().ok_or(MonitorError::NotActive)?;
        let change = rec.current_spk();
        let inputs = self.subnet_inputs(addr);
        let settlement = build_kill_settlement(&config, &inputs, &change, self.fee_rate())?;
        self.chain.submit(settlement.checkpoint_tx.clone())?;
        Ok(settlement)
    }

    /// Funds under a subnet's current multisig, straight from the chain.
    pub fn subnet_balance(&self, subnet: &SubnetId) -> Result<u64, NodeError> {
        let addr = self.resolve(subnet)?;
        let rec = self.registry.subnet(&addr).expect("resolved");
        Ok(rec.scripts().iter().map(|s| self.chain.balance(s)).sum())
    }

    pub fn multisig_for(&self, subnet: &SubnetId) -> Result<Arc<crate::address::MultisigDescriptor>, NodeError> {
        let addr = self.resolve(subnet)?;
        Ok(self.registry.subnet(&addr).expect("resolved").current_multisig())
    }
}

/// Commitment to the subnet state a checkpoint attests to. The simulation
/// commits to the checkpoint's own contents.
pub fn state_commitment(
    subnet: &SubnetAddress,
    height: u64,
    batch: &TransferBatch,
    withdrawals: &[(BtcAddress, u64)],
) -> Result<[u8; 32], CodecError> {
    let mut buf = subnet.0.to_vec();
    buf.extend_from_slice(&height.to_be_bytes());
    if !batch.is_empty() {
        buf.extend_from_slice(&encode_transfer_batch(batch)?);
    }
    for (a, v) in withdrawals {
        buf.extend_from_slice(&a.script_pubkey());
        buf.extend_from_slice(&v.to_be_bytes());
    }
    Ok(sha256(&buf))
}
