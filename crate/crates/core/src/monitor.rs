//! Subnet registry. Scans finalized blocks, keeps every subnet's phase,
//! configurations, owned outputs and pending top-down messages, and keeps a
//! per-subnet value ledger.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::address::{
    derive_subnet_address, AddressNetwork, BtcAddress, ConfigError, Configuration, MultisigDescriptor, Root,
    SubnetAddress, SubnetId, UserAddress, ValidatorEntry,
};
use crate::chain::{Block, SimChain};
use crate::codec::{
    decode_checkpoint, decode_payload, decode_subnet_params, decode_transfer_batch, decode_validator_data,
    encode_checkpoint, encode_subnet_params, CheckpointPayload, CodecError, Decoder, Encoder, IpcTag, Payload,
    StakePayload, SubnetParams, ValidatorAction,
};
use crate::fees::Utxo;
use crate::forge::revealed_script;
use crate::keys::XOnlyPublicKey;
use crate::script::{parse_data_script_bytes, Op, Script, ScriptError};
use crate::tx::{OutPoint, Transaction, TxIn, Txid};

/// Blocks after the proposal during which kill votes are accepted.
pub const KILL_VOTE_WINDOW: u64 = 36;
/// Checkpoints a subnet marked for killing still submits.
pub const KILL_CHECKPOINT_DELAY: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("unknown subnet {0:?}")]
    UnknownSubnet(SubnetAddress),
    #[error("subnet is not active yet")]
    NotActive,
    #[error("subnet has been killed")]
    SubnetKilled,
    #[error("subnet is already marked for killing")]
    AlreadyToBeKilled,
    #[error("{0} is not a validator of the current configuration")]
    NotAValidator(XOnlyPublicKey),
    #[error("no kill proposal is open")]
    NoProposal,
    #[error("kill proposal from height {start} expired at height {height}")]
    ProposalExpired { start: u64, height: u64 },
    #[error("expected block {expected}, got {found}")]
    OutOfOrder { expected: u64, found: u64 },
    #[error("registry snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Source of confirmed transactions, used to look at the commit side of a
/// reveal.
pub trait TxLookup {
    fn transaction(&self, txid: &Txid) -> Option<Transaction>;
}

impl TxLookup for SimChain {
    fn transaction(&self, txid: &Txid) -> Option<Transaction> {
        self.get_tx(txid).map(|(tx, _)| tx.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Initialized,
    Active,
    ToBeKilled,
    Killed,
}

impl Phase {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Phase> {
        [Phase::Initialized, Phase::Active, Phase::ToBeKilled, Phase::Killed].get(usize::from(c)).copied()
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Initialized => "initialized",
            Phase::Active => "active",
            Phase::ToBeKilled => "toBeKilled",
            Phase::Killed => "killed",
        })
    }
}

/// A validator-set change waiting for the next checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MembershipChange {
    Join(ValidatorEntry),
    Leave(XOnlyPublicKey),
    Stake { pk: XOnlyPublicKey, amount: u64 },
    Unstake { pk: XOnlyPublicKey, amount: u64 },
}

impl MembershipChange {
    pub fn pk(&self) -> XOnlyPublicKey {
        match self {
            MembershipChange::Join(v) => v.pk,
            MembershipChange::Leave(pk) | MembershipChange::Stake { pk, .. } | MembershipChange::Unstake { pk, .. } => {
                *pk
            }
        }
    }
}

/// Apply `change` to a validator list; returns the collateral to pay back,
/// if any.
fn apply_change(validators: &mut Vec<ValidatorEntry>, change: &MembershipChange) -> Option<(BtcAddress, u64)> {
    let find = |vs: &mut Vec<ValidatorEntry>, pk: &XOnlyPublicKey| vs.iter().position(|v| v.pk == *pk);
    match change {
        MembershipChange::Join(v) => {
            validators.push(v.clone());
            None
        }
        MembershipChange::Leave(pk) => {
            let i = find(validators, pk)?;
            let v = validators.remove(i);
            Some((v.backup_address, v.weight))
        }
        MembershipChange::Stake { pk, amount } => {
            let i = find(validators, pk)?;
            validators[i].weight += amount;
            None
        }
        MembershipChange::Unstake { pk, amount } => {
            let i = find(validators, pk)?;
            validators[i].weight -= amount;
            Some((validators[i].backup_address.clone(), *amount))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KillProposal {
    pub proposer: XOnlyPublicKey,
    pub start_height: u64,
    pub votes: BTreeMap<XOnlyPublicKey, u64>,
}

impl KillProposal {
    pub fn voted_weight(&self) -> u64 {
        self.votes.values().sum()
    }

    pub fn expired_at(&self, height: u64) -> bool {
        height.saturating_sub(self.start_height) > KILL_VOTE_WINDOW
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KillStatus {
    Pending { voted: u64, needed: u64 },
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingDeposit {
    pub user_address: UserAddress,
    pub amount: u64,
}

/// Value that entered and left a subnet, in satoshis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SubnetLedger {
    pub collateral_in: u64,
    pub deposits_in: u64,
    pub transfers_in: u64,
    /// Outputs paid to a subnet script without a recognised purpose,
    /// including the creation dust.
    pub other_in: u64,
    pub transfers_out: u64,
    pub withdrawals_out: u64,
    pub collateral_returned: u64,
    pub fees_paid: u64,
}

impl SubnetLedger {
    pub fn inflow(&self) -> u64 {
        self.collateral_in + self.deposits_in + self.transfers_in + self.other_in
    }

    pub fn outflow(&self) -> u64 {
        self.transfers_out + self.withdrawals_out + self.collateral_returned + self.fees_paid
    }

    fn fields(&self) -> [u64; 8] {
        [
            self.collateral_in,
            self.deposits_in,
            self.transfers_in,
            self.other_in,
            self.transfers_out,
            self.withdrawals_out,
            self.collateral_returned,
            self.fees_paid,
        ]
    }

    fn from_fields(f: [u64; 8]) -> Self {
        SubnetLedger {
            collateral_in: f[0],
            deposits_in: f[1],
            transfers_in: f[2],
            other_in: f[3],
            transfers_out: f[4],
            withdrawals_out: f[5],
            collateral_returned: f[6],
            fees_paid: f[7],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubnetRecord {
    pub id: SubnetId,
    pub params: SubnetParams,
    pub create_txid: Txid,
    pub created_height: u64,
    pub phase: Phase,
    /// Configuration 0.
    pub whitelist: Arc<MultisigDescriptor>,
    /// Configurations 1, 2, ... in order.
    pub configurations: Vec<Configuration>,
    pub owned: BTreeMap<OutPoint, Utxo>,
    pub pending_changes: Vec<MembershipChange>,
    pub pending_deposits: Vec<PendingDeposit>,
    pub pending_mints: Vec<(UserAddress, u64)>,
    /// Collateral payouts the subnet still owes: `(script, amount)`.
    pub pending_returns: Vec<(Vec<u8>, u64)>,
    /// Fee output of the last checkpointTx, awaiting its batchTransferTx.
    pub batch_outpoint: Option<OutPoint>,
    pub kill_proposal: Option<KillProposal>,
    pub last_checkpoint: Option<CheckpointPayload>,
    pub checkpoint_count: u64,
    pub checkpoints_since_kill: u32,
    pub ledger: SubnetLedger,
}

impl SubnetRecord {
    pub fn address(&self) -> SubnetAddress {
        self.id.address()
    }

    pub fn configuration_number(&self) -> u64 {
        self.configurations.last().map_or(0, |c| c.number)
    }

    pub fn current_configuration(&self) -> Option<&Configuration> {
        self.configurations.last()
    }

    pub fn current_multisig(&self) -> Arc<MultisigDescriptor> {
        match self.configurations.last() {
            Some(c) => Arc::new(c.multisig.clone()),
            None => self.whitelist.clone(),
        }
    }

    pub fn current_spk(&self) -> Vec<u8> {
        self.current_multisig().script_pubkey()
    }

    /// Every script this subnet has ever locked funds under.
    /// Every distinct script the subnet has locked funds under, oldest
    /// first. Configurations with the same keys and threshold share one.
    pub fn scripts(&self) -> Vec<Vec<u8>> {
        let mut out: Vec<Vec<u8>> = Vec::new();
        for spk in std::iter::once(self.whitelist.script_pubkey())
            .chain(self.configurations.iter().map(|c| c.multisig.script_pubkey()))
        {
            if !out.contains(&spk) {
                out.push(spk);
            }
        }
        out
    }

    pub fn descriptor_for(&self, spk: &[u8]) -> Option<Arc<MultisigDescriptor>> {
        if self.whitelist.script_pubkey() == spk {
            return Some(self.whitelist.clone());
        }
        self.configurations.iter().find(|c| c.multisig.script_pubkey() == spk).map(|c| Arc::new(c.multisig.clone()))
    }

    pub fn owned_value(&self) -> u64 {
        self.owned.values().map(|u| u.value).sum()
    }

    /// Inflows equal outflows plus what the subnet still holds.
    pub fn is_conserved(&self) -> bool {
        self.ledger.inflow() == self.ledger.outflow() + self.owned_value()
    }

    /// The current validator set with every pending change applied.
    pub fn projected_validators(&self) -> Vec<ValidatorEntry> {
        let mut vs = self.current_configuration().map(|c| c.validators.clone()).unwrap_or_default();
        for c in &self.pending_changes {
            apply_change(&mut vs, c);
        }
        vs
    }

    /// Subnet block height at which the next checkpoint is due.
    pub fn next_checkpoint_height(&self) -> u64 {
        self.last_checkpoint.as_ref().map_or(0, |c| c.subnet_block_height + self.params.checkpoint_period)
    }

    fn own(&mut self, outpoint: OutPoint, value: u64, spk: &[u8], height: u64) {
        self.owned.insert(outpoint, Utxo { outpoint, value, script_pubkey: spk.to_vec(), height });
    }
}

/// What the next checkpoint of a subnet must carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopDownBatch {
    pub subnet: SubnetAddress,
    pub deposits: Vec<PendingDeposit>,
    pub mints: Vec<(UserAddress, u64)>,
    pub changes: Vec<MembershipChange>,
    pub stake_returns: Vec<(BtcAddress, u64)>,
    /// The configuration that takes effect with this checkpoint, if the
    /// validator set changed.
    pub new_configuration: Option<Configuration>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonitorEvent {
    SubnetCreated { subnet: SubnetId, txid: Txid },
    ValidatorJoined { subnet: SubnetAddress, pk: XOnlyPublicKey, collateral: u64 },
    SubnetActivated { subnet: SubnetAddress },
    MembershipQueued { subnet: SubnetAddress, change: MembershipChange },
    DepositDetected { subnet: SubnetAddress, user: UserAddress, amount: u64 },
    CheckpointRecorded { subnet: SubnetAddress, number: u64, subnet_height: u64, txid: Txid },
    TransfersVerified { source: SubnetAddress, target: SubnetAddress, count: usize, amount: u64 },
    TransfersRejected { source: SubnetAddress, reason: String },
    CollateralReturned { subnet: SubnetAddress, amount: u64 },
    KillProposed { subnet: SubnetAddress, proposer: XOnlyPublicKey },
    KillVoted { subnet: SubnetAddress, voter: XOnlyPublicKey, voted: u64, needed: u64 },
    KillAccepted { subnet: SubnetAddress },
    KillExpired { subnet: SubnetAddress },
    SubnetKilled { subnet: SubnetAddress },
    Ignored { txid: Txid, reason: String },
}

impl fmt::Display for MonitorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use MonitorEvent::*;
        match self {
            SubnetCreated { subnet, txid } => write!(f, "created {subnet} in {txid}"),
            ValidatorJoined { subnet, pk, collateral } => write!(f, "join {pk} -> {subnet} ({collateral} sat)"),
            SubnetActivated { subnet } => write!(f, "activated {subnet}"),
            MembershipQueued { subnet, change } => write!(f, "queued {change:?} for {subnet}"),
            DepositDetected { subnet, user, amount } => write!(f, "deposit {amount} sat for {user} into {subnet}"),
            CheckpointRecorded { subnet, number, subnet_height, txid } => {
                write!(f, "checkpoint #{number} of {subnet} at subnet height {subnet_height} ({txid})")
            }
            TransfersVerified { source, target, count, amount } => {
                write!(f, "{count} transfers ({amount} sat) {source} -> {target}")
            }
            TransfersRejected { source, reason } => write!(f, "rejected batch from {source}: {reason}"),
            CollateralReturned { subnet, amount } => write!(f, "{subnet} returned {amount} sat of collateral"),
            KillProposed { subnet, proposer } => write!(f, "kill of {subnet} proposed by {proposer}"),
            KillVoted { subnet, voter, voted, needed } => {
                write!(f, "kill vote by {voter} on {subnet}: {voted}/{needed}")
            }
            KillAccepted { subnet } => write!(f, "{subnet} marked toBeKilled"),
            KillExpired { subnet } => write!(f, "kill proposal on {subnet} expired"),
            SubnetKilled { subnet } => write!(f, "{subnet} killed"),
            Ignored { txid, reason } => write!(f, "ignored {txid}: {reason}"),
        }
    }
}

/// True when one input of `tx` is a key-hash spend by `pk`.
fn signed_by(tx: &Transaction, pk: &XOnlyPublicKey) -> bool {
    tx.inputs.iter().any(|i| matches!(i.witness.as_slice(), [_, key] if key.len() == 33 && key[1..] == pk.0))
}

fn op_return_payload(spk: &[u8]) -> Option<Vec<u8>> {
    match Script::from_bytes(spk).ok()?.ops() {
        [Op::OpReturn(p)] if IpcTag::from_prefix(p).is_some() => Some(p.clone()),
        _ => None,
    }
}

fn contains_tag_marker(bytes: &[u8]) -> bool {
    bytes.windows(3).any(|w| w == b"IPC")
}

#[derive(Debug, Clone)]
pub struct Registry {
    root: Root,
    subnets: BTreeMap<SubnetAddress, SubnetRecord>,
    script_index: HashMap<Vec<u8>, SubnetAddress>,
    owned_index: HashMap<OutPoint, SubnetAddress>,
    processed_height: u64,
}

impl Registry {
    pub fn new(root: Root) -> Self {
        Registry {
            root,
            subnets: BTreeMap::new(),
            script_index: HashMap::new(),
            owned_index: HashMap::new(),
            processed_height: 0,
        }
    }

    pub fn root(&self) -> Root {
        self.root
    }

    pub fn network(&self) -> AddressNetwork {
        self.root.address_network()
    }

    pub fn processed_height(&self) -> u64 {
        self.processed_height
    }

    pub fn subnets(&self) -> impl Iterator<Item = &SubnetRecord> {
        self.subnets.values()
    }

    pub fn subnet(&self, addr: &SubnetAddress) -> Option<&SubnetRecord> {
        self.subnets.get(addr)
    }

    fn record_mut(&mut self, addr: &SubnetAddress) -> Result<&mut SubnetRecord, MonitorError> {
        self.subnets.get_mut(addr).ok_or(MonitorError::UnknownSubnet(*addr))
    }

    /// Subnet that locks funds under `spk`, if any.
    pub fn owner_of_script(&self, spk: &[u8]) -> Option<SubnetAddress> {
        self.script_index.get(spk).copied()
    }

    fn register_scripts(&mut self, addr: SubnetAddress) {
        if let Some(rec) = self.subnets.get(&addr) {
            for spk in rec.scripts() {
                self.script_index.insert(spk, addr);
            }
        }
    }

    fn own(&mut self, addr: SubnetAddress, outpoint: OutPoint, value: u64, spk: &[u8], height: u64) {
        if let Some(rec) = self.subnets.get_mut(&addr) {
            rec.own(outpoint, value, spk, height);
            self.owned_index.insert(outpoint, addr);
        }
    }

    /// Process every finalized block not yet seen.
    pub fn sync(&mut self, chain: &SimChain) -> Result<Vec<MonitorEvent>, MonitorError> {
        let mut events = Vec::new();
        while self.processed_height < chain.finalized_height() {
            let block = chain.block(self.processed_height + 1).expect("finalized block exists");
            events.extend(self.process_block(block, chain)?);
        }
        Ok(events)
    }

    /// Consume the next finalized block.
    pub fn process_block(&mut self, block: &Block, lookup: &dyn TxLookup) -> Result<Vec<MonitorEvent>, MonitorError> {
        let expected = self.processed_height + 1;
        if block.height != expected {
            return Err(MonitorError::OutOfOrder { expected, found: block.height });
        }
        let mut events = Vec::new();
        for rec in self.subnets.values_mut() {
            if rec.kill_proposal.as_ref().is_some_and(|p| p.expired_at(block.height)) {
                rec.kill_proposal = None;
                events.push(MonitorEvent::KillExpired { subnet: rec.address() });
            }
        }
        for tx in &block.txs {
            self.process_tx(block.height, tx, lookup, &mut events);
        }
        self.processed_height = block.height;
        Ok(events)
    }

    fn process_tx(&mut self, height: u64, tx: &Transaction, lookup: &dyn TxLookup, ev: &mut Vec<MonitorEvent>) {
        let txid = tx.txid();
        let payloads: Vec<(usize, Vec<u8>)> = tx
            .outputs
            .iter()
            .enumerate()
            .filter_map(|(i, o)| op_return_payload(&o.script_pubkey).map(|p| (i, p)))
            .collect();
        let mut claimed: Vec<bool> = tx.outputs.iter().map(|o| o.is_op_return()).collect();
        let spender = self.spend_owned(height, tx, txid, &payloads, &mut claimed, ev);
        for (_, bytes) in &payloads {
            if spender.is_none() {
                self.handle_payload(height, tx, txid, bytes, &mut claimed, ev);
            }
        }
        for (vout, o) in tx.outputs.iter().enumerate() {
            if claimed[vout] {
                continue;
            }
            let Some(addr) = self.owner_of_script(&o.script_pubkey) else { continue };
            let outpoint = OutPoint::new(txid, vout as u32);
            self.own(addr, outpoint, o.value, &o.script_pubkey, height);
            let rec = self.subnets.get_mut(&addr).expect("indexed subnet");
            if spender.is_some() {
                rec.ledger.transfers_in += o.value;
            } else {
                rec.ledger.other_in += o.value;
            }
        }
        for input in &tx.inputs {
            self.handle_reveal(height, txid, input, lookup, ev);
        }
    }

    /// Handle a transaction that spends subnet outputs, which only the
    /// subnet's validators can sign. Returns the spending subnet.
    fn spend_owned(
        &mut self,
        height: u64,
        tx: &Transaction,
        txid: Txid,
        payloads: &[(usize, Vec<u8>)],
        claimed: &mut [bool],
        ev: &mut Vec<MonitorEvent>,
    ) -> Option<SubnetAddress> {
        let mut src = None;
        let mut spent_value = 0u64;
        for input in &tx.inputs {
            let Some(addr) = self.owned_index.remove(&input.previous_output) else { continue };
            let rec = self.subnets.get_mut(&addr).expect("owned by a known subnet");
            let utxo = rec.owned.remove(&input.previous_output).expect("index matches record");
            if src.is_none() {
                src = Some(addr);
            }
            if src == Some(addr) {
                spent_value += utxo.value;
            } else {
                // spent alongside another subnet's outputs; charge it as fee
                rec.ledger.fees_paid += utxo.value;
            }
        }
        let src = src?;
        let checkpoint = payloads
            .iter()
            .find_map(|(vout, p)| decode_checkpoint(p).ok().filter(|c| c.subnet == src).map(|c| (*vout, c)));
        let reserve_vout = checkpoint.as_ref().map(|(v, _)| v + 1);
        let mut returned = Vec::new();
        for (vout, o) in tx.outputs.iter().enumerate() {
            if o.is_op_return() {
                continue;
            }
            let outpoint = OutPoint::new(txid, vout as u32);
            let owner = self.owner_of_script(&o.script_pubkey);
            if owner == Some(src) {
                self.own(src, outpoint, o.value, &o.script_pubkey, height);
                claimed[vout] = true;
                continue;
            }
            let rec = self.subnets.get_mut(&src).expect("source subnet");
            if owner.is_some() {
                rec.ledger.transfers_out += o.value;
            } else if let Some(i) = rec.pending_returns.iter().position(|(spk, _)| *spk == o.script_pubkey) {
                rec.pending_returns.remove(i);
                rec.ledger.collateral_returned += o.value;
                returned.push(o.value);
                claimed[vout] = true;
            } else if Some(vout) == reserve_vout {
                rec.ledger.fees_paid += o.value;
                rec.batch_outpoint = Some(outpoint);
                claimed[vout] = true;
            } else {
                rec.ledger.withdrawals_out += o.value;
                claimed[vout] = true;
            }
        }
        let rec = self.subnets.get_mut(&src).expect("source subnet");
        rec.ledger.fees_paid += spent_value.saturating_sub(tx.output_value());
        for amount in returned {
            ev.push(MonitorEvent::CollateralReturned { subnet: src, amount });
        }
        if let Some((_, payload)) = checkpoint {
            let number = rec.checkpoint_count;
            ev.push(MonitorEvent::CheckpointRecorded {
                subnet: src,
                number,
                subnet_height: payload.subnet_block_height,
                txid,
            });
            rec.last_checkpoint = Some(payload);
            rec.checkpoint_count += 1;
            if rec.phase == Phase::ToBeKilled {
                rec.checkpoints_since_kill += 1;
                if rec.checkpoints_since_kill >= KILL_CHECKPOINT_DELAY {
                    rec.phase = Phase::Killed;
                    let validators = rec.current_configuration().map(|c| c.validators.clone()).unwrap_or_default();
                    rec.pending_returns.extend(validators.iter().map(|v| (v.backup_address.script_pubkey(), v.weight)));
                    ev.push(MonitorEvent::SubnetKilled { subnet: src });
                }
            }
        }
        Some(src)
    }

    fn handle_payload(
        &mut self,
        height: u64,
        tx: &Transaction,
        txid: Txid,
        bytes: &[u8],
        claimed: &mut [bool],
        ev: &mut Vec<MonitorEvent>,
    ) {
        let ignore = |ev: &mut Vec<MonitorEvent>, reason: String| ev.push(MonitorEvent::Ignored { txid, reason });
        let payload = match decode_payload(bytes, self.root) {
            Ok(p) => p,
            Err(e) => return ignore(ev, format!("undecodable payload: {e}")),
        };
        let result = match payload {
            Payload::Deposit(p) => self.handle_deposit(height, tx, txid, p.user_address, claimed, ev),
            Payload::Stake(p) => self.handle_stake(height, tx, txid, &p, claimed, ev),
            Payload::Unstake(p) => self.handle_unstake(tx, &p, ev),
            Payload::Leave(a) => self.handle_leave(tx, &a, ev),
            Payload::KillPropose(a) => self.handle_kill(height, tx, &a, true, ev),
            Payload::KillVote(a) => self.handle_kill(height, tx, &a, false, ev),
            Payload::Checkpoint(_) => Err("checkpoint not spending subnet funds".to_string()),
            Payload::Create(_) | Payload::Join(_) | Payload::Transfer(_) => {
                Err("payload is only valid in a data script".to_string())
            }
        };
        if let Err(reason) = result {
            ignore(ev, reason);
        }
    }

    fn handle_deposit(
        &mut self,
        height: u64,
        tx: &Transaction,
        txid: Txid,
        user: UserAddress,
        claimed: &mut [bool],
        ev: &mut Vec<MonitorEvent>,
    ) -> Result<(), String> {
        let (vout, addr) = tx
            .outputs
            .iter()
            .enumerate()
            .find_map(|(i, o)| (!claimed[i]).then(|| self.owner_of_script(&o.script_pubkey)).flatten().map(|a| (i, a)))
            .ok_or("deposit pays no subnet")?;
        let rec = &self.subnets[&addr];
        if !matches!(rec.phase, Phase::Active | Phase::ToBeKilled) {
            return Err(format!("deposit into {} subnet", rec.phase));
        }
        let o = &tx.outputs[vout];
        self.own(addr, OutPoint::new(txid, vout as u32), o.value, &o.script_pubkey, height);
        let rec = self.subnets.get_mut(&addr).expect("indexed subnet");
        rec.ledger.deposits_in += o.value;
        rec.pending_deposits.push(PendingDeposit { user_address: user, amount: o.value });
        claimed[vout] = true;
        ev.push(MonitorEvent::DepositDetected { subnet: addr, user, amount: o.value });
        Ok(())
    }

    fn membership_record(
        &self,
        subnet: &SubnetAddress,
        tx: &Transaction,
        pk: &XOnlyPublicKey,
    ) -> Result<&SubnetRecord, String> {
        let rec = self.subnets.get(subnet).ok_or("unknown subnet")?;
        if rec.phase != Phase::Active {
            return Err(format!("stake change in {} subnet", rec.phase));
        }
        if !signed_by(tx, pk) {
            return Err(format!("not signed by {pk}"));
        }
        Ok(rec)
    }

    fn queue(&mut self, subnet: SubnetAddress, change: MembershipChange, ev: &mut Vec<MonitorEvent>) {
        let rec = self.subnets.get_mut(&subnet).expect("checked subnet");
        rec.pending_changes.push(change.clone());
        ev.push(MonitorEvent::MembershipQueued { subnet, change });
    }

    fn handle_stake(
        &mut self,
        height: u64,
        tx: &Transaction,
        txid: Txid,
        p: &StakePayload,
        claimed: &mut [bool],
        ev: &mut Vec<MonitorEvent>,
    ) -> Result<(), String> {
        let rec = self.membership_record(&p.subnet, tx, &p.validator_pk)?;
        if !rec.projected_validators().iter().any(|v| v.pk == p.validator_pk) {
            return Err(format!("{} is not a validator", p.validator_pk));
        }
        let spk = rec.current_spk();
        let vout = (0..tx.outputs.len())
            .find(|&i| !claimed[i] && tx.outputs[i].script_pubkey == spk && tx.outputs[i].value == p.amount)
            .ok_or("stake output missing")?;
        self.own(p.subnet, OutPoint::new(txid, vout as u32), p.amount, &spk, height);
        self.subnets.get_mut(&p.subnet).expect("checked").ledger.collateral_in += p.amount;
        claimed[vout] = true;
        self.queue(p.subnet, MembershipChange::Stake { pk: p.validator_pk, amount: p.amount }, ev);
        Ok(())
    }

    fn handle_unstake(&mut self, tx: &Transaction, p: &StakePayload, ev: &mut Vec<MonitorEvent>) -> Result<(), String> {
        let rec = self.membership_record(&p.subnet, tx, &p.validator_pk)?;
        let weight = rec
            .projected_validators()
            .iter()
            .find(|v| v.pk == p.validator_pk)
            .map(|v| v.weight)
            .ok_or(format!("{} is not a validator", p.validator_pk))?;
        if p.amount >= weight || weight - p.amount < rec.params.min_collateral {
            return Err(format!("unstake of {} would leave less than the minimum collateral", p.amount));
        }
        self.queue(p.subnet, MembershipChange::Unstake { pk: p.validator_pk, amount: p.amount }, ev);
        Ok(())
    }

    fn handle_leave(
        &mut self,
        tx: &Transaction,
        a: &ValidatorAction,
        ev: &mut Vec<MonitorEvent>,
    ) -> Result<(), String> {
        let rec = self.membership_record(&a.subnet, tx, &a.validator_pk)?;
        let vs = rec.projected_validators();
        if !vs.iter().any(|v| v.pk == a.validator_pk) {
            return Err(format!("{} is not a validator", a.validator_pk));
        }
        if vs.len() == 1 {
            return Err("the last validator cannot leave".into());
        }
        self.queue(a.subnet, MembershipChange::Leave(a.validator_pk), ev);
        Ok(())
    }

    fn handle_kill(
        &mut self,
        height: u64,
        tx: &Transaction,
        a: &ValidatorAction,
        propose: bool,
        ev: &mut Vec<MonitorEvent>,
    ) -> Result<(), String> {
        if !signed_by(tx, &a.validator_pk) {
            return Err(format!("not signed by {}", a.validator_pk));
        }
        let status = if propose {
            self.propose_kill(&a.subnet, a.validator_pk, height)
        } else {
            self.vote_kill(&a.subnet, a.validator_pk, height)
        }
        .map_err(|e| e.to_string())?;
        if propose {
            ev.push(MonitorEvent::KillProposed { subnet: a.subnet, proposer: a.validator_pk });
        }
        match status {
            KillStatus::Pending { voted, needed } => {
                ev.push(MonitorEvent::KillVoted { subnet: a.subnet, voter: a.validator_pk, voted, needed })
            }
            KillStatus::Accepted => ev.push(MonitorEvent::KillAccepted { subnet: a.subnet }),
        }
        Ok(())
    }

    fn kill_config(
        &mut self,
        subnet: &SubnetAddress,
        pk: &XOnlyPublicKey,
    ) -> Result<(&mut SubnetRecord, u64), MonitorError> {
        let rec = self.record_mut(subnet)?;
        match rec.phase {
            Phase::Initialized => return Err(MonitorError::NotActive),
            Phase::ToBeKilled => return Err(MonitorError::AlreadyToBeKilled),
            Phase::Killed => return Err(MonitorError::SubnetKilled),
            Phase::Active => {}
        }
        let weight = rec.current_configuration().map_or(0, |c| c.weight_of(pk));
        if weight == 0 {
            return Err(MonitorError::NotAValidator(*pk));
        }
        Ok((rec, weight))
    }

    fn tally(rec: &mut SubnetRecord) -> KillStatus {
        let needed = rec.current_configuration().map_or(u64::MAX, |c| c.threshold_stake);
        let voted = rec.kill_proposal.as_ref().map_or(0, |p| p.voted_weight());
        if voted >= needed {
            rec.kill_proposal = None;
            rec.phase = Phase::ToBeKilled;
            rec.checkpoints_since_kill = 0;
            KillStatus::Accepted
        } else {
            KillStatus::Pending { voted, needed }
        }
    }

    /// Open a kill proposal; the proposer's stake counts as a vote. An open
    /// proposal absorbs the call as a vote.
    pub fn propose_kill(
        &mut self,
        subnet: &SubnetAddress,
        proposer: XOnlyPublicKey,
        height: u64,
    ) -> Result<KillStatus, MonitorError> {
        let (rec, weight) = self.kill_config(subnet, &proposer)?;
        match &mut rec.kill_proposal {
            Some(p) if !p.expired_at(height) => {
                p.votes.insert(proposer, weight);
            }
            slot => {
                *slot =
                    Some(KillProposal { proposer, start_height: height, votes: BTreeMap::from([(proposer, weight)]) });
            }
        }
        Ok(Self::tally(rec))
    }

    pub fn vote_kill(
        &mut self,
        subnet: &SubnetAddress,
        voter: XOnlyPublicKey,
        height: u64,
    ) -> Result<KillStatus, MonitorError> {
        let (rec, weight) = self.kill_config(subnet, &voter)?;
        let p = rec.kill_proposal.as_mut().ok_or(MonitorError::NoProposal)?;
        if p.expired_at(height) {
            let start = p.start_height;
            rec.kill_proposal = None;
            return Err(MonitorError::ProposalExpired { start, height });
        }
        p.votes.insert(voter, weight);
        Ok(Self::tally(rec))
    }

    fn handle_reveal(
        &mut self,
        height: u64,
        txid: Txid,
        input: &TxIn,
        lookup: &dyn TxLookup,
        ev: &mut Vec<MonitorEvent>,
    ) {
        let Some(script) = revealed_script(input) else { return };
        let data = match parse_data_script_bytes(script) {
            Ok(d) => d,
            Err(ScriptError::ForeignOpcode(op)) => {
                if contains_tag_marker(script) {
                    ev.push(MonitorEvent::Ignored {
                        txid,
                        reason: format!("foreign opcode 0x{op:02x} in data script"),
                    });
                }
                return;
            }
            Err(_) => return,
        };
        let result = match IpcTag::from_prefix(&data) {
            Some(IpcTag::Create) => self.handle_create(height, txid, input, &data, lookup, ev),
            Some(IpcTag::Join) => self.handle_join(input, &data, lookup, ev),
            Some(IpcTag::Transfer) => self.handle_transfer(input, &data, lookup, ev),
            Some(t) => Err(format!("{t} payload is not valid in a data script")),
            None => return,
        };
        if let Err(reason) = result {
            ev.push(MonitorEvent::Ignored { txid, reason });
        }
    }

    fn handle_create(
        &mut self,
        height: u64,
        txid: Txid,
        input: &TxIn,
        data: &[u8],
        lookup: &dyn TxLookup,
        ev: &mut Vec<MonitorEvent>,
    ) -> Result<(), String> {
        let params = decode_subnet_params(data).map_err(|e| e.to_string())?;
        let whitelist = crate::forge::whitelist_multisig(&params).map_err(|e| e.to_string())?;
        let spk = whitelist.script_pubkey();
        let commit = lookup.transaction(&input.previous_output.txid).ok_or("commit transaction not found")?;
        let vout = commit.outputs.iter().position(|o| o.script_pubkey == spk).ok_or("no whitelist output")?;
        let addr = derive_subnet_address(&txid.display_bytes());
        if self.subnets.contains_key(&addr) {
            return Err("subnet already exists".into());
        }
        let id = SubnetId::l2(self.root, addr);
        let rec = SubnetRecord {
            id: id.clone(),
            params,
            create_txid: txid,
            created_height: height,
            phase: Phase::Initialized,
            whitelist: Arc::new(whitelist),
            configurations: Vec::new(),
            owned: BTreeMap::new(),
            pending_changes: Vec::new(),
            pending_deposits: Vec::new(),
            pending_mints: Vec::new(),
            pending_returns: Vec::new(),
            batch_outpoint: None,
            kill_proposal: None,
            last_checkpoint: None,
            checkpoint_count: 0,
            checkpoints_since_kill: 0,
            ledger: SubnetLedger::default(),
        };
        self.subnets.insert(addr, rec);
        self.register_scripts(addr);
        let value = commit.outputs[vout].value;
        self.own(addr, OutPoint::new(commit.txid(), vout as u32), value, &spk, height);
        self.subnets.get_mut(&addr).expect("inserted").ledger.other_in += value;
        ev.push(MonitorEvent::SubnetCreated { subnet: id, txid });
        Ok(())
    }

    fn handle_join(
        &mut self,
        input: &TxIn,
        data: &[u8],
        lookup: &dyn TxLookup,
        ev: &mut Vec<MonitorEvent>,
    ) -> Result<(), String> {
        let v = decode_validator_data(data).map_err(|e| e.to_string())?;
        if v.subnet_id.root != self.root {
            return Err(format!("join for foreign root {}", v.subnet_id.root));
        }
        let addr = v.subnet_id.address();
        let rec = self.subnets.get(&addr).ok_or("join for unknown subnet")?;
        let target = match rec.phase {
            Phase::Initialized if rec.params.whitelist.contains(&v.validator_pk) => rec.whitelist.script_pubkey(),
            Phase::Initialized => return Err(format!("{} is not whitelisted", v.validator_pk)),
            Phase::Active => rec.current_spk(),
            p => return Err(format!("join into {p} subnet")),
        };
        if v.collateral < rec.params.min_collateral {
            return Err(format!("collateral {} below minimum {}", v.collateral, rec.params.min_collateral));
        }
        let projected = rec.projected_validators();
        if projected.iter().any(|e| e.pk == v.validator_pk) {
            return Err(format!("{} already joined", v.validator_pk));
        }
        if projected.len() as u64 >= rec.params.active_validators_limit {
            return Err("validator limit reached".into());
        }
        let commit = lookup.transaction(&input.previous_output.txid).ok_or("commit transaction not found")?;
        if !signed_by(&commit, &v.validator_pk) {
            return Err(format!("join not funded by {}", v.validator_pk));
        }
        let vout = commit
            .outputs
            .iter()
            .position(|o| o.script_pubkey == target && o.value == v.collateral)
            .ok_or("collateral output missing")?;
        let outpoint = OutPoint::new(commit.txid(), vout as u32);
        let rec = self.subnets.get_mut(&addr).expect("checked");
        if !rec.owned.contains_key(&outpoint) {
            return Err("collateral output already spent".into());
        }
        rec.ledger.other_in -= v.collateral;
        rec.ledger.collateral_in += v.collateral;
        rec.pending_changes.push(MembershipChange::Join(ValidatorEntry {
            pk: v.validator_pk,
            weight: v.collateral,
            backup_address: v.backup_address,
        }));
        ev.push(MonitorEvent::ValidatorJoined { subnet: addr, pk: v.validator_pk, collateral: v.collateral });
        if rec.phase == Phase::Initialized && rec.pending_changes.len() as u64 >= rec.params.min_validators {
            rec.phase = Phase::Active;
            ev.push(MonitorEvent::SubnetActivated { subnet: addr });
        }
        Ok(())
    }

    fn handle_transfer(
        &mut self,
        input: &TxIn,
        data: &[u8],
        lookup: &dyn TxLookup,
        ev: &mut Vec<MonitorEvent>,
    ) -> Result<(), String> {
        let prev = input.previous_output;
        let source = self
            .subnets
            .values()
            .find(|r| r.batch_outpoint == Some(prev))
            .map(|r| r.address())
            .ok_or("transfer batch not spending a checkpoint output")?;
        self.subnets.get_mut(&source).expect("found").batch_outpoint = None;
        let reject = |ev: &mut Vec<MonitorEvent>, reason: String| {
            ev.push(MonitorEvent::TransfersRejected { source, reason });
            Ok(())
        };
        let batch = match decode_transfer_batch(data, self.root) {
            Ok(b) => b,
            Err(e) => return reject(ev, e.to_string()),
        };
        let Some(checkpoint) = lookup.transaction(&prev.txid) else {
            return reject(ev, "checkpoint transaction not found".into());
        };
        for (i, entry) in batch.entries.iter().enumerate() {
            let target = entry.target.address();
            let Some(out) = checkpoint.outputs.get(i) else {
                return reject(ev, format!("no output for target {i}"));
            };
            if self.owner_of_script(&out.script_pubkey) != Some(target) {
                return reject(ev, format!("output {i} does not pay {target:?}"));
            }
            if out.value != entry.total() {
                return reject(ev, format!("output {i} carries {} sat, batch says {}", out.value, entry.total()));
            }
        }
        for entry in &batch.entries {
            let target = entry.target.address();
            let rec = self.subnets.get_mut(&target).expect("verified target");
            rec.pending_mints.extend(entry.transfers.iter().map(|t| (t.destination, t.amount)));
            ev.push(MonitorEvent::TransfersVerified {
                source,
                target,
                count: entry.transfers.len(),
                amount: entry.total(),
            });
        }
        Ok(())
    }

    /// Messages the next checkpoint of `subnet` must carry, without
    /// consuming them.
    pub fn peek_top_down_messages(&self, subnet: &SubnetAddress) -> Result<TopDownBatch, MonitorError> {
        let rec = self.subnets.get(subnet).ok_or(MonitorError::UnknownSubnet(*subnet))?;
        match rec.phase {
            Phase::Initialized => return Err(MonitorError::NotActive),
            Phase::Killed => return Err(MonitorError::SubnetKilled),
            _ => {}
        }
        let mut validators = rec.current_configuration().map(|c| c.validators.clone()).unwrap_or_default();
        let stake_returns = rec.pending_changes.iter().filter_map(|c| apply_change(&mut validators, c)).collect();
        let new_configuration = if rec.pending_changes.is_empty() {
            None
        } else {
            Some(Configuration::new(rec.configuration_number() + 1, validators)?)
        };
        Ok(TopDownBatch {
            subnet: *subnet,
            deposits: rec.pending_deposits.clone(),
            mints: rec.pending_mints.clone(),
            changes: rec.pending_changes.clone(),
            stake_returns,
            new_configuration,
        })
    }

    /// Mark a previewed batch as carried by a checkpoint: drains it and
    /// switches to the new configuration.
    pub fn commit_top_down_messages(&mut self, batch: &TopDownBatch) -> Result<(), MonitorError> {
        let rec = self.record_mut(&batch.subnet)?;
        rec.pending_deposits.drain(..batch.deposits.len().min(rec.pending_deposits.len()));
        rec.pending_mints.drain(..batch.mints.len().min(rec.pending_mints.len()));
        rec.pending_changes.drain(..batch.changes.len().min(rec.pending_changes.len()));
        rec.pending_returns.extend(batch.stake_returns.iter().map(|(a, v)| (a.script_pubkey(), *v)));
        if let Some(cfg) = &batch.new_configuration {
            rec.configurations.push(cfg.clone());
            self.register_scripts(batch.subnet);
        }
        Ok(())
    }

    /// Drain the pending messages of `subnet` for its next checkpoint.
    pub fn get_top_down_messages(&mut self, subnet: &SubnetAddress) -> Result<TopDownBatch, MonitorError> {
        let batch = self.peek_top_down_messages(subnet)?;
        self.commit_top_down_messages(&batch)?;
        Ok(batch)
    }

    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(SNAPSHOT_MAGIC).varint(SNAPSHOT_VERSION);
        e.varint(u64::from(self.root.code())).varint(self.processed_height);
        e.varint(self.subnets.len() as u64);
        for rec in self.subnets.values() {
            write_record(&mut e, rec);
        }
        e.finish()
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Registry, MonitorError> {
        let mut d = Decoder::new(bytes);
        let err = |e: CodecError| MonitorError::Snapshot(e.to_string());
        if d.raw(SNAPSHOT_MAGIC.len()).map_err(err)? != SNAPSHOT_MAGIC {
            return Err(MonitorError::Snapshot("not a registry snapshot".into()));
        }
        let version = d.varint().map_err(err)?;
        if version != SNAPSHOT_VERSION {
            return Err(MonitorError::Snapshot(format!("unsupported version {version}")));
        }
        let code = d.varint().map_err(err)?;
        let root = Root::from_code(code).ok_or_else(|| MonitorError::Snapshot(format!("unknown root {code}")))?;
        let mut reg = Registry::new(root);
        reg.processed_height = d.varint().map_err(err)?;
        let n = d.length().map_err(err)?;
        for _ in 0..n {
            let rec = read_record(&mut d, root.address_network())?;
            let addr = rec.address();
            for op in rec.owned.keys() {
                reg.owned_index.insert(*op, addr);
            }
            reg.subnets.insert(addr, rec);
            reg.register_scripts(addr);
        }
        d.finish().map_err(err)?;
        Ok(reg)
    }
}

const SNAPSHOT_MAGIC: &[u8] = b"IPCREG";
const SNAPSHOT_VERSION: u64 = 1;

fn write_outpoint(e: &mut Encoder, op: &OutPoint) {
    e.raw(&op.txid.0).varint(u64::from(op.vout));
}

fn write_validator(e: &mut Encoder, v: &ValidatorEntry) {
    e.raw(&v.pk.0).varint(v.weight).btc_address(&v.backup_address);
}

fn write_record(e: &mut Encoder, rec: &SubnetRecord) {
    e.subnet_id(&rec.id);
    e.bytes(&encode_subnet_params(&rec.params).expect("stored params are valid"));
    e.raw(&rec.create_txid.0).varint(rec.created_height).u8(rec.phase.code());
    e.varint(rec.configurations.len() as u64);
    for c in &rec.configurations {
        e.varint(c.number).varint(c.validators.len() as u64);
        for v in &c.validators {
            write_validator(e, v);
        }
    }
    e.varint(rec.owned.len() as u64);
    for u in rec.owned.values() {
        write_outpoint(e, &u.outpoint);
        e.varint(u.value).bytes(&u.script_pubkey).varint(u.height);
    }
    e.varint(rec.pending_changes.len() as u64);
    for c in &rec.pending_changes {
        match c {
            MembershipChange::Join(v) => {
                e.u8(0);
                write_validator(e, v);
            }
            MembershipChange::Leave(pk) => {
                e.u8(1).raw(&pk.0);
            }
            MembershipChange::Stake { pk, amount } => {
                e.u8(2).raw(&pk.0).varint(*amount);
            }
            MembershipChange::Unstake { pk, amount } => {
                e.u8(3).raw(&pk.0).varint(*amount);
            }
        }
    }
    e.varint(rec.pending_deposits.len() as u64);
    for p in &rec.pending_deposits {
        e.raw(&p.user_address.0).varint(p.amount);
    }
    e.varint(rec.pending_mints.len() as u64);
    for (u, v) in &rec.pending_mints {
        e.raw(&u.0).varint(*v);
    }
    e.varint(rec.pending_returns.len() as u64);
    for (spk, v) in &rec.pending_returns {
        e.bytes(spk).varint(*v);
    }
    match &rec.batch_outpoint {
        Some(op) => {
            e.u8(1);
            write_outpoint(e, op);
        }
        None => {
            e.u8(0);
        }
    }
    match &rec.kill_proposal {
        Some(p) => {
            e.u8(1).raw(&p.proposer.0).varint(p.start_height).varint(p.votes.len() as u64);
            for (pk, w) in &p.votes {
                e.raw(&pk.0).varint(*w);
            }
        }
        None => {
            e.u8(0);
        }
    }
    match &rec.last_checkpoint {
        Some(c) => {
            e.u8(1).raw(&encode_checkpoint(c));
        }
        None => {
            e.u8(0);
        }
    }
    e.varint(rec.checkpoint_count).varint(u64::from(rec.checkpoints_since_kill));
    for f in rec.ledger.fields() {
        e.varint(f);
    }
}

fn read_outpoint(d: &mut Decoder) -> Result<OutPoint, CodecError> {
    let txid = Txid(d.array()?);
    let vout = u32::try_from(d.varint()?).map_err(|_| CodecError::Malformed("vout overflow".into()))?;
    Ok(OutPoint::new(txid, vout))
}

fn read_validator(d: &mut Decoder, net: AddressNetwork) -> Result<ValidatorEntry, CodecError> {
    Ok(ValidatorEntry { pk: XOnlyPublicKey(d.array()?), weight: d.varint()?, backup_address: d.btc_address(net)? })
}

fn read_flag(d: &mut Decoder) -> Result<bool, CodecError> {
    match d.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(CodecError::Malformed(format!("bad flag {b}"))),
    }
}

fn read_record(d: &mut Decoder, net: AddressNetwork) -> Result<SubnetRecord, MonitorError> {
    let err = |e: CodecError| MonitorError::Snapshot(e.to_string());
    let id = d.subnet_id().map_err(err)?;
    let params = decode_subnet_params(d.bytes().map_err(err)?).map_err(err)?;
    let whitelist =
        Arc::new(crate::forge::whitelist_multisig(&params).map_err(|e| MonitorError::Snapshot(e.to_string()))?);
    let create_txid = Txid(d.array().map_err(err)?);
    let created_height = d.varint().map_err(err)?;
    let phase = Phase::from_code(d.u8().map_err(err)?).ok_or_else(|| MonitorError::Snapshot("bad phase".into()))?;
    let mut configurations = Vec::new();
    for _ in 0..d.length().map_err(err)? {
        let number = d.varint().map_err(err)?;
        let n = d.length().map_err(err)?;
        let vs = (0..n).map(|_| read_validator(d, net)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        configurations.push(Configuration::new(number, vs)?);
    }
    let mut owned = BTreeMap::new();
    for _ in 0..d.length().map_err(err)? {
        let outpoint = read_outpoint(d).map_err(err)?;
        let value = d.varint().map_err(err)?;
        let script_pubkey = d.bytes().map_err(err)?.to_vec();
        let height = d.varint().map_err(err)?;
        owned.insert(outpoint, Utxo { outpoint, value, script_pubkey, height });
    }
    let mut pending_changes = Vec::new();
    for _ in 0..d.length().map_err(err)? {
        let kind = d.u8().map_err(err)?;
        let change = match kind {
            0 => MembershipChange::Join(read_validator(d, net).map_err(err)?),
            1 => MembershipChange::Leave(XOnlyPublicKey(d.array().map_err(err)?)),
            2 | 3 => {
                let pk = XOnlyPublicKey(d.array().map_err(err)?);
                let amount = d.varint().map_err(err)?;
                if kind == 2 {
                    MembershipChange::Stake { pk, amount }
                } else {
                    MembershipChange::Unstake { pk, amount }
                }
            }
            k => return Err(MonitorError::Snapshot(format!("bad change kind {k}"))),
        };
        pending_changes.push(change);
    }
    let mut pending_deposits = Vec::new();
    for _ in 0..d.length().map_err(err)? {
        let user_address = UserAddress(d.array().map_err(err)?);
        pending_deposits.push(PendingDeposit { user_address, amount: d.varint().map_err(err)? });
    }
    let mut pending_mints = Vec::new();
    for _ in 0..d.length().map_err(err)? {
        let u = UserAddress(d.array().map_err(err)?);
        pending_mints.push((u, d.varint().map_err(err)?));
    }
    let mut pending_returns = Vec::new();
    for _ in 0..d.length().map_err(err)? {
        let spk = d.bytes().map_err(err)?.to_vec();
        pending_returns.push((spk, d.varint().map_err(err)?));
    }
    let batch_outpoint = if read_flag(d).map_err(err)? { Some(read_outpoint(d).map_err(err)?) } else { None };
    let kill_proposal = if read_flag(d).map_err(err)? {
        let proposer = XOnlyPublicKey(d.array().map_err(err)?);
        let start_height = d.varint().map_err(err)?;
        let mut votes = BTreeMap::new();
        for _ in 0..d.length().map_err(err)? {
            let pk = XOnlyPublicKey(d.array().map_err(err)?);
            votes.insert(pk, d.varint().map_err(err)?);
        }
        Some(KillProposal { proposer, start_height, votes })
    } else {
        None
    };
    let last_checkpoint = if read_flag(d).map_err(err)? {
        Some(decode_checkpoint(d.raw(crate::codec::CHECKPOINT_PAYLOAD_LEN).map_err(err)?).map_err(err)?)
    } else {
        None
    };
    let checkpoint_count = d.varint().map_err(err)?;
    let checkpoints_since_kill =
        u32::try_from(d.varint().map_err(err)?).map_err(|_| MonitorError::Snapshot("kill counter overflow".into()))?;
    let mut fields = [0u64; 8];
    for f in &mut fields {
        *f = d.varint().map_err(err)?;
    }
    Ok(SubnetRecord {
        id,
        params,
        create_txid,
        created_height,
        phase,
        whitelist,
        configurations,
        owned,
        pending_changes,
        pending_deposits,
        pending_mints,
        pending_returns,
        batch_outpoint,
        kill_proposal,
        last_checkpoint,
        checkpoint_count,
        checkpoints_since_kill,
        ledger: SubnetLedger::from_fields(fields),
    })
}
