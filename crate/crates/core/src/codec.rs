//! Binary payload codec.
//!
//! Layout rules: a 6-byte ASCII tag, then fields in declaration order.
//! Counts and amounts are unsigned LEB128 varints, lists and opaque byte
//! strings carry a varint length prefix, keys and addresses are raw bytes.
//! Decoding is strict: non-minimal varints and trailing bytes are errors.

use std::fmt;

use thiserror::Error;

use crate::address::{AddressNetwork, BtcAddress, Root, SubnetAddress, SubnetId, UserAddress};
use crate::keys::XOnlyPublicKey;

pub const TAG_LEN: usize = 6;
pub const CHECKPOINT_PAYLOAD_LEN: usize = 78;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("expected tag {expected}, found {found:?}")]
    BadTag { expected: IpcTag, found: Vec<u8> },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid transfer batch: {0}")]
    InvalidBatch(String),
}

fn malformed(msg: impl Into<String>) -> CodecError {
    CodecError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IpcTag {
    Create,
    Checkpoint,
    Transfer,
    Deposit,
    Join,
    Leave,
    Stake,
    Unstake,
    KillPropose,
    KillVote,
}

impl IpcTag {
    pub const ALL: [IpcTag; 10] = [
        IpcTag::Create,
        IpcTag::Checkpoint,
        IpcTag::Transfer,
        IpcTag::Deposit,
        IpcTag::Join,
        IpcTag::Leave,
        IpcTag::Stake,
        IpcTag::Unstake,
        IpcTag::KillPropose,
        IpcTag::KillVote,
    ];

    pub fn bytes(self) -> &'static [u8; TAG_LEN] {
        match self {
            IpcTag::Create => b"IPCCRT",
            IpcTag::Checkpoint => b"IPCCPT",
            IpcTag::Transfer => b"IPCTFR",
            // the tags below have no published spelling
            IpcTag::Deposit => b"IPCDEP",
            IpcTag::Join => b"IPCJON",
            IpcTag::Leave => b"IPCLVE",
            IpcTag::Stake => b"IPCSTK",
            IpcTag::Unstake => b"IPCUSK",
            IpcTag::KillPropose => b"IPCKPR",
            IpcTag::KillVote => b"IPCKVT",
        }
    }

    pub fn from_prefix(data: &[u8]) -> Option<IpcTag> {
        let head = data.get(..TAG_LEN)?;
        IpcTag::ALL.into_iter().find(|t| t.bytes() == head)
    }
}

impl fmt::Display for IpcTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(std::str::from_utf8(self.bytes()).expect("tags are ascii"))
    }
}

/// Append-only writer for the payload layout.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(tag: IpcTag) -> Self {
        let mut e = Self::new();
        e.raw(tag.bytes());
        e
    }

    pub fn varint(&mut self, mut v: u64) -> &mut Self {
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                self.buf.push(byte);
                return self;
            }
            self.buf.push(byte | 0x80);
        }
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.varint(bytes.len() as u64).raw(bytes)
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn subnet_id(&mut self, id: &SubnetId) -> &mut Self {
        self.varint(u64::from(id.root.code())).varint(id.path.len() as u64);
        for a in &id.path {
            self.raw(&a.0);
        }
        self
    }

    pub fn btc_address(&mut self, a: &BtcAddress) -> &mut Self {
        self.u8(a.version).bytes(&a.program)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Strict reader matching [`Encoder`].
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Decoder { data, pos: 0 }
    }

    pub fn with_tag(data: &'a [u8], tag: IpcTag) -> Result<Self, CodecError> {
        let head = data.get(..TAG_LEN).unwrap_or(data);
        if head != tag.bytes() {
            return Err(CodecError::BadTag { expected: tag, found: head.to_vec() });
        }
        Ok(Decoder { data, pos: TAG_LEN })
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(malformed(format!("need {n} bytes at offset {}, have {}", self.pos, self.remaining())));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.raw(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.raw(1)?[0])
    }

    pub fn varint(&mut self) -> Result<u64, CodecError> {
        let start = self.pos;
        let mut value = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = self.u8()?;
            let low = u64::from(byte & 0x7f);
            if shift == 63 && low > 1 {
                return Err(malformed(format!("varint overflow at offset {start}")));
            }
            value |= low << shift;
            if byte & 0x80 == 0 {
                if byte == 0 && shift > 0 {
                    return Err(malformed(format!("non-minimal varint at offset {start}")));
                }
                return Ok(value);
            }
        }
        Err(malformed(format!("varint overflow at offset {start}")))
    }

    /// A varint used as a length or count; bounded by the bytes left so a
    /// hostile count cannot trigger a huge allocation.
    pub fn length(&mut self) -> Result<usize, CodecError> {
        let n = self.varint()?;
        if n > self.remaining() as u64 {
            return Err(malformed(format!("length {n} exceeds remaining {} bytes", self.remaining())));
        }
        Ok(n as usize)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.length()?;
        self.raw(n)
    }

    pub fn subnet_id(&mut self) -> Result<SubnetId, CodecError> {
        let code = self.varint()?;
        let root = Root::from_code(code).ok_or_else(|| malformed(format!("unknown root code {code}")))?;
        let n = self.length()?;
        if n == 0 {
            return Err(malformed("empty subnet path"));
        }
        let mut path = Vec::with_capacity(n);
        for _ in 0..n {
            path.push(SubnetAddress(self.array()?));
        }
        Ok(SubnetId { root, path })
    }

    pub fn btc_address(&mut self, network: AddressNetwork) -> Result<BtcAddress, CodecError> {
        let version = self.u8()?;
        let program = self.bytes()?.to_vec();
        if version > 16 || !(2..=40).contains(&program.len()) {
            return Err(malformed("invalid witness program"));
        }
        Ok(BtcAddress { network, version, program })
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.remaining() != 0 {
            return Err(malformed(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Create-time parameters of a subnet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubnetParams {
    pub min_collateral: u64,
    pub min_validators: u64,
    pub whitelist: Vec<XOnlyPublicKey>,
    pub checkpoint_period: u64,
    pub active_validators_limit: u64,
    pub min_cross_msg_fee: u64,
}

impl SubnetParams {
    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: &str| Err(CodecError::InvalidParams(m.to_string()));
        if self.min_validators == 0 || self.min_validators > self.whitelist.len() as u64 {
            return bad("min_validators must be between 1 and the whitelist size");
        }
        let mut keys = self.whitelist.clone();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return bad("whitelist keys must be distinct");
        }
        if self.checkpoint_period == 0 {
            return bad("checkpoint_period must be at least 1");
        }
        Ok(())
    }
}

pub fn encode_subnet_params(p: &SubnetParams) -> Result<Vec<u8>, CodecError> {
    p.validate()?;
    let mut e = Encoder::with_tag(IpcTag::Create);
    e.varint(p.min_collateral).varint(p.min_validators).varint(p.whitelist.len() as u64);
    for k in &p.whitelist {
        e.raw(&k.0);
    }
    e.varint(p.checkpoint_period).varint(p.active_validators_limit).varint(p.min_cross_msg_fee);
    Ok(e.finish())
}

pub fn decode_subnet_params(bytes: &[u8]) -> Result<SubnetParams, CodecError> {
    let mut d = Decoder::with_tag(bytes, IpcTag::Create)?;
    let min_collateral = d.varint()?;
    let min_validators = d.varint()?;
    let n = d.length()?;
    let whitelist = (0..n).map(|_| d.array().map(XOnlyPublicKey)).collect::<Result<Vec<_>, _>>()?;
    let p = SubnetParams {
        min_collateral,
        min_validators,
        whitelist,
        checkpoint_period: d.varint()?,
        active_validators_limit: d.varint()?,
        min_cross_msg_fee: d.varint()?,
    };
    d.finish()?;
    p.validate()?;
    Ok(p)
}

/// The join payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatorData {
    pub subnet_id: SubnetId,
    pub validator_pk: XOnlyPublicKey,
    pub backup_address: BtcAddress,
    pub collateral: u64,
    pub network_hints: Vec<u8>,
}

pub fn encode_validator_data(v: &ValidatorData) -> Result<Vec<u8>, CodecError> {
    if v.collateral == 0 {
        return Err(CodecError::InvalidParams("collateral must be positive".into()));
    }
    let mut e = Encoder::with_tag(IpcTag::Join);
    e.subnet_id(&v.subnet_id)
        .raw(&v.validator_pk.0)
        .btc_address(&v.backup_address)
        .varint(v.collateral)
        .bytes(&v.network_hints);
    Ok(e.finish())
}

pub fn decode_validator_data(bytes: &[u8]) -> Result<ValidatorData, CodecError> {
    let mut d = Decoder::with_tag(bytes, IpcTag::Join)?;
    let subnet_id = d.subnet_id()?;
    let validator_pk = XOnlyPublicKey(d.array()?);
    let backup_address = d.btc_address(subnet_id.root.address_network())?;
    let collateral = d.varint()?;
    let network_hints = d.bytes()?.to_vec();
    d.finish()?;
    if collateral == 0 {
        return Err(CodecError::InvalidParams("collateral must be positive".into()));
    }
    Ok(ValidatorData { subnet_id, validator_pk, backup_address, collateral, network_hints })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub destination: UserAddress,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferEntry {
    pub target: SubnetId,
    pub transfers: Vec<Transfer>,
}

impl TransferEntry {
    pub fn total(&self) -> u64 {
        self.transfers.iter().map(|t| t.amount).sum()
    }
}

/// Outgoing transfers of one checkpoint, grouped by target subnet.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransferBatch {
    pub entries: Vec<TransferEntry>,
}

impl TransferBatch {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn transfer_count(&self) -> usize {
        self.entries.iter().map(|e| e.transfers.len()).sum()
    }

    /// Group flat (target, destination, amount) records, keeping first-seen
    /// order of targets and of transfers within a target.
    pub fn from_transfers(items: impl IntoIterator<Item = (SubnetId, UserAddress, u64)>) -> Self {
        let mut entries: Vec<TransferEntry> = Vec::new();
        for (target, destination, amount) in items {
            let t = Transfer { destination, amount };
            match entries.iter_mut().find(|e| e.target == target) {
                Some(e) => e.transfers.push(t),
                None => entries.push(TransferEntry { target, transfers: vec![t] }),
            }
        }
        TransferBatch { entries }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: String| Err(CodecError::InvalidBatch(m));
        for (i, e) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|o| o.target == e.target) {
                return bad(format!("target {} appears twice", e.target));
            }
            if e.target.path.len() != 1 {
                return bad(format!("target {} is not an L2 subnet", e.target));
            }
            if e.transfers.is_empty() {
                return bad(format!("target {} has no transfers", e.target));
            }
            if e.transfers.iter().any(|t| t.amount == 0) {
                return bad(format!("zero amount transfer to {}", e.target));
            }
        }
        Ok(())
    }
}

/// Per target: raw 20-byte subnet address and a transfer count, then per
/// transfer a length-prefixed destination and the amount. Targets share the
/// source subnet's root, which is therefore not encoded.
pub fn encode_transfer_batch(batch: &TransferBatch) -> Result<Vec<u8>, CodecError> {
    batch.validate()?;
    let mut e = Encoder::with_tag(IpcTag::Transfer);
    e.varint(batch.entries.len() as u64);
    for entry in &batch.entries {
        e.raw(&entry.target.address().0).varint(entry.transfers.len() as u64);
        for t in &entry.transfers {
            e.bytes(&t.destination.0).varint(t.amount);
        }
    }
    Ok(e.finish())
}

pub fn decode_transfer_batch(bytes: &[u8], root: Root) -> Result<TransferBatch, CodecError> {
    let mut d = Decoder::with_tag(bytes, IpcTag::Transfer)?;
    let n = d.length()?;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let target = SubnetId::l2(root, SubnetAddress(d.array()?));
        let m = d.length()?;
        let mut transfers = Vec::with_capacity(m);
        for _ in 0..m {
            let dest = d.bytes()?;
            let destination = UserAddress(dest.try_into().map_err(|_| malformed("destination must be 20 bytes"))?);
            transfers.push(Transfer { destination, amount: d.varint()? });
        }
        entries.push(TransferEntry { target, transfers });
    }
    d.finish()?;
    let batch = TransferBatch { entries };
    batch.validate()?;
    Ok(batch)
}

/// Fixed 78-byte checkpoint record: tag, big-endian height, commitment and
/// the subnet address left-padded to 32 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointPayload {
    pub subnet: SubnetAddress,
    pub subnet_block_height: u64,
    pub state_commitment: [u8; 32],
}

pub fn encode_checkpoint(p: &CheckpointPayload) -> Vec<u8> {
    let mut e = Encoder::with_tag(IpcTag::Checkpoint);
    e.raw(&p.subnet_block_height.to_be_bytes()).raw(&p.state_commitment).raw(&[0u8; 12]).raw(&p.subnet.0);
    e.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointPayload, CodecError> {
    let mut d = Decoder::with_tag(bytes, IpcTag::Checkpoint)?;
    let subnet_block_height = u64::from_be_bytes(d.array()?);
    let state_commitment = d.array()?;
    if d.raw(12)?.iter().any(|b| *b != 0) {
        return Err(malformed("non-zero padding in subnet field"));
    }
    let subnet = SubnetAddress(d.array()?);
    d.finish()?;
    Ok(CheckpointPayload { subnet, subnet_block_height, state_commitment })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepositPayload {
    pub user_address: UserAddress,
}

pub fn encode_deposit(p: &DepositPayload) -> Vec<u8> {
    let mut e = Encoder::with_tag(IpcTag::Deposit);
    e.raw(&p.user_address.0);
    e.finish()
}

pub fn decode_deposit(bytes: &[u8]) -> Result<DepositPayload, CodecError> {
    let mut d = Decoder::with_tag(bytes, IpcTag::Deposit)?;
    let user_address = UserAddress(d.array()?);
    d.finish()?;
    Ok(DepositPayload { user_address })
}

/// Stake and unstake requests: subnet, validator key and a positive amount.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StakePayload {
    pub subnet: SubnetAddress,
    pub validator_pk: XOnlyPublicKey,
    pub amount: u64,
}

fn check_amount(amount: u64) -> Result<(), CodecError> {
    if amount == 0 {
        return Err(CodecError::InvalidParams("amount must be positive".into()));
    }
    Ok(())
}

fn stake_tag(unstake: bool) -> IpcTag {
    if unstake {
        IpcTag::Unstake
    } else {
        IpcTag::Stake
    }
}

pub fn encode_stake(p: &StakePayload, unstake: bool) -> Result<Vec<u8>, CodecError> {
    check_amount(p.amount)?;
    let mut e = Encoder::with_tag(stake_tag(unstake));
    e.raw(&p.subnet.0).raw(&p.validator_pk.0).varint(p.amount);
    Ok(e.finish())
}

pub fn decode_stake(bytes: &[u8], unstake: bool) -> Result<StakePayload, CodecError> {
    let mut d = Decoder::with_tag(bytes, stake_tag(unstake))?;
    let p = StakePayload {
        subnet: SubnetAddress(d.array()?),
        validator_pk: XOnlyPublicKey(d.array()?),
        amount: d.varint()?,
    };
    d.finish()?;
    check_amount(p.amount)?;
    Ok(p)
}

/// Leave requests and kill proposals/votes all carry (subnet, validator).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidatorAction {
    pub subnet: SubnetAddress,
    pub validator_pk: XOnlyPublicKey,
}

pub fn encode_validator_action(tag: IpcTag, p: &ValidatorAction) -> Vec<u8> {
    let mut e = Encoder::with_tag(tag);
    e.raw(&p.subnet.0).raw(&p.validator_pk.0);
    e.finish()
}

pub fn decode_validator_action(bytes: &[u8], tag: IpcTag) -> Result<ValidatorAction, CodecError> {
    let mut d = Decoder::with_tag(bytes, tag)?;
    let p = ValidatorAction { subnet: SubnetAddress(d.array()?), validator_pk: XOnlyPublicKey(d.array()?) };
    d.finish()?;
    Ok(p)
}

/// Any decoded payload, keyed by its tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Create(SubnetParams),
    Join(ValidatorData),
    Checkpoint(CheckpointPayload),
    Transfer(TransferBatch),
    Deposit(DepositPayload),
    Stake(StakePayload),
    Unstake(StakePayload),
    Leave(ValidatorAction),
    KillPropose(ValidatorAction),
    KillVote(ValidatorAction),
}

/// Decode by tag. `root` resolves the targets of transfer batches.
pub fn decode_payload(bytes: &[u8], root: Root) -> Result<Payload, CodecError> {
    let tag = IpcTag::from_prefix(bytes).ok_or_else(|| CodecError::BadTag {
        expected: IpcTag::Create,
        found: bytes.iter().take(TAG_LEN).copied().collect(),
    })?;
    Ok(match tag {
        IpcTag::Create => Payload::Create(decode_subnet_params(bytes)?),
        IpcTag::Join => Payload::Join(decode_validator_data(bytes)?),
        IpcTag::Checkpoint => Payload::Checkpoint(decode_checkpoint(bytes)?),
        IpcTag::Transfer => Payload::Transfer(decode_transfer_batch(bytes, root)?),
        IpcTag::Deposit => Payload::Deposit(decode_deposit(bytes)?),
        IpcTag::Stake => Payload::Stake(decode_stake(bytes, false)?),
        IpcTag::Unstake => Payload::Unstake(decode_stake(bytes, true)?),
        IpcTag::Leave => Payload::Leave(decode_validator_action(bytes, tag)?),
        IpcTag::KillPropose => Payload::KillPropose(decode_validator_action(bytes, tag)?),
        IpcTag::KillVote => Payload::KillVote(decode_validator_action(bytes, tag)?),
    })
}
