//! Deterministic stand-in for a Bitcoin node: a mempool, blocks mined on
//! demand, UTXO bookkeeping and the standardness checks the protocol
//! depends on.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::codec::{Decoder, Encoder};
use crate::fees::{Utxo, DUST_LIMIT};
use crate::hash::{hash160, sha256d};
use crate::keys::XOnlyPublicKey;
use crate::script::{opcodes, Op, Script};
use crate::taproot::{verify_leaf_commitment, CONTROL_BLOCK_LEN};
use crate::tx::{OutPoint, Transaction, TxIn, TxOut, Txid};

pub const DEFAULT_MAX_TX_VBYTES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("input {0} is already spent")]
    DoubleSpend(OutPoint),
    #[error("input {0} does not exist")]
    MissingInput(OutPoint),
    #[error("transaction of {vbytes} vB exceeds the {max} vB policy limit")]
    OversizedTx { vbytes: usize, max: usize },
    #[error("outputs ({outputs} sat) exceed inputs ({inputs} sat)")]
    ValueOverflow { inputs: u64, outputs: u64 },
    #[error("output {0} is below dust")]
    DustOutput(usize),
    #[error("input {index} does not satisfy its locking script: {reason}")]
    InvalidWitness { index: usize, reason: &'static str },
    #[error("transaction has no inputs or no outputs")]
    Empty,
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainPolicy {
    pub max_tx_vbytes: usize,
    /// Confirmations needed before a block counts as final.
    pub finalization_depth: u64,
}

impl Default for ChainPolicy {
    fn default() -> Self {
        ChainPolicy { max_tx_vbytes: DEFAULT_MAX_TX_VBYTES, finalization_depth: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub hash: [u8; 32],
    pub prev_hash: [u8; 32],
    pub txs: Vec<Transaction>,
}

/// The simulated chain. Height 0 is an empty genesis block.
#[derive(Debug, Clone)]
pub struct SimChain {
    policy: ChainPolicy,
    blocks: Vec<Block>,
    utxos: HashMap<OutPoint, Utxo>,
    spent: HashSet<OutPoint>,
    mempool: Vec<Transaction>,
    mempool_spent: HashSet<OutPoint>,
    mempool_utxos: HashMap<OutPoint, Utxo>,
    tx_index: HashMap<Txid, (u64, usize)>,
    faucet_nonce: u32,
}

impl Default for SimChain {
    fn default() -> Self {
        Self::new(ChainPolicy::default())
    }
}

fn is_coinbase_like(tx: &Transaction) -> bool {
    tx.inputs.len() == 1 && tx.inputs[0].previous_output.txid == Txid::default()
}

/// Parse a `<k> CHECKSIG (<k> CHECKSIGADD)* <t> NUMEQUAL` leaf into
/// `(keys, threshold)`.
pub fn parse_multisig_leaf(leaf: &[u8]) -> Option<(Vec<XOnlyPublicKey>, usize)> {
    let script = Script::from_bytes(leaf).ok()?;
    let ops = script.ops();
    let key = |op: &Op| match op {
        Op::PushBytes(b) if b.len() == 32 => {
            let mut k = [0u8; 32];
            k.copy_from_slice(b);
            Some(XOnlyPublicKey(k))
        }
        _ => None,
    };
    if ops.len() == 2 && ops[1] == Op::Other(opcodes::OP_CHECKSIG) {
        return Some((vec![key(&ops[0])?], 1));
    }
    if ops.len() < 4 || ops[1] != Op::Other(opcodes::OP_CHECKSIG) || *ops.last()? != Op::Other(opcodes::OP_NUMEQUAL) {
        return None;
    }
    let mut keys = vec![key(&ops[0])?];
    let body = &ops[2..ops.len() - 2];
    if body.len() % 2 != 0 {
        return None;
    }
    for pair in body.chunks(2) {
        if pair[1] != Op::Other(opcodes::OP_CHECKSIGADD) {
            return None;
        }
        keys.push(key(&pair[0])?);
    }
    let threshold = match &ops[ops.len() - 2] {
        Op::PushNum1 => 1,
        Op::Other(b) if (opcodes::OP_PUSHNUM_1 + 1..=opcodes::OP_PUSHNUM_16).contains(b) => {
            usize::from(b - opcodes::OP_PUSHNUM_1 + 1)
        }
        Op::PushBytes(b) if !b.is_empty() && b.len() <= 2 => {
            b.iter().rev().fold(0usize, |acc, x| (acc << 8) | usize::from(*x))
        }
        _ => return None,
    };
    Some((keys, threshold))
}

fn check_witness(index: usize, input: &TxIn, prev: &TxOut) -> Result<(), ChainError> {
    let bad = |reason| Err(ChainError::InvalidWitness { index, reason });
    let spk = &prev.script_pubkey;
    let w = &input.witness;
    match spk.as_slice() {
        [0x00, 0x14, program @ ..] if program.len() == 20 => {
            if w.len() != 2 || w[1].len() != 33 || hash160(&w[1]) != program {
                return bad("key-hash witness does not match");
            }
            if w[0].is_empty() || w[0].len() > 73 {
                return bad("bad signature size");
            }
            Ok(())
        }
        [0x51, 0x20, key @ ..] if key.len() == 32 => {
            let mut k = [0u8; 32];
            k.copy_from_slice(key);
            match w.len() {
                0 => bad("empty witness"),
                1 if w[0].len() == 64 || w[0].len() == 65 => Ok(()),
                1 => bad("bad key-path signature size"),
                _ => {
                    let control = &w[w.len() - 1];
                    let leaf = &w[w.len() - 2];
                    if control.len() != CONTROL_BLOCK_LEN || !verify_leaf_commitment(&XOnlyPublicKey(k), leaf, control)
                    {
                        return bad("leaf script is not committed by the output key");
                    }
                    if let Some((keys, threshold)) = parse_multisig_leaf(leaf) {
                        let sigs = &w[..w.len() - 2];
                        if sigs.len() != keys.len() {
                            return bad("multisig witness has the wrong number of items");
                        }
                        let signed = sigs.iter().filter(|s| !s.is_empty()).count();
                        if sigs.iter().any(|s| !s.is_empty() && s.len() != 64 && s.len() != 65) {
                            return bad("bad schnorr signature size");
                        }
                        if signed < threshold {
                            return bad("not enough signatures");
                        }
                    } else if w.len() != 2 {
                        return bad("unexpected stack items for a data leaf");
                    }
                    Ok(())
                }
            }
        }
        _ => Ok(()),
    }
}

impl SimChain {
    pub fn new(policy: ChainPolicy) -> Self {
        let genesis = Block { height: 0, hash: sha256d(b"genesis"), prev_hash: [0; 32], txs: vec![] };
        SimChain {
            policy,
            blocks: vec![genesis],
            utxos: HashMap::new(),
            spent: HashSet::new(),
            mempool: Vec::new(),
            mempool_spent: HashSet::new(),
            mempool_utxos: HashMap::new(),
            tx_index: HashMap::new(),
            faucet_nonce: 0,
        }
    }

    pub fn policy(&self) -> ChainPolicy {
        self.policy
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn finalized_height(&self) -> u64 {
        (self.height() + 1).saturating_sub(self.policy.finalization_depth)
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn mempool(&self) -> &[Transaction] {
        &self.mempool
    }

    /// A confirmed transaction and its height.
    pub fn get_tx(&self, txid: &Txid) -> Option<(&Transaction, u64)> {
        let (h, i) = self.tx_index.get(txid)?;
        Some((&self.blocks[*h as usize].txs[*i], *h))
    }

    /// A confirmed or mempool output that is not yet spent.
    pub fn get_utxo(&self, outpoint: &OutPoint) -> Option<&Utxo> {
        if self.mempool_spent.contains(outpoint) {
            return None;
        }
        self.utxos.get(outpoint).or_else(|| self.mempool_utxos.get(outpoint))
    }

    /// Spendable outputs locked by `spk`, including unconfirmed ones, sorted
    /// by outpoint.
    pub fn utxos_for_script(&self, spk: &[u8]) -> Vec<Utxo> {
        let mut out: Vec<Utxo> = self
            .utxos
            .values()
            .chain(self.mempool_utxos.values())
            .filter(|u| u.script_pubkey == spk && !self.mempool_spent.contains(&u.outpoint))
            .cloned()
            .collect();
        out.sort_by_key(|u| u.outpoint);
        out
    }

    pub fn balance(&self, spk: &[u8]) -> u64 {
        self.utxos_for_script(spk).iter().map(|u| u.value).sum()
    }

    /// Validate without submitting.
    pub fn check(&self, tx: &Transaction) -> Result<(), ChainError> {
        if tx.inputs.is_empty() || tx.outputs.is_empty() {
            return Err(ChainError::Empty);
        }
        let mut seen = HashSet::new();
        let mut prevs = Vec::with_capacity(tx.inputs.len());
        for input in &tx.inputs {
            let op = input.previous_output;
            if !seen.insert(op) || self.spent.contains(&op) || self.mempool_spent.contains(&op) {
                return Err(ChainError::DoubleSpend(op));
            }
            let prev = self.get_utxo(&op).ok_or(ChainError::MissingInput(op))?;
            prevs.push(prev.txout());
        }
        let vbytes = tx.vbytes();
        if vbytes > self.policy.max_tx_vbytes {
            return Err(ChainError::OversizedTx { vbytes, max: self.policy.max_tx_vbytes });
        }
        let inputs: u64 = prevs.iter().map(|p| p.value).sum();
        let outputs = tx.output_value();
        if outputs > inputs {
            return Err(ChainError::ValueOverflow { inputs, outputs });
        }
        if let Some(i) = tx.outputs.iter().position(|o| !o.is_op_return() && o.value < DUST_LIMIT) {
            return Err(ChainError::DustOutput(i));
        }
        for (i, (input, prev)) in tx.inputs.iter().zip(&prevs).enumerate() {
            check_witness(i, input, prev)?;
        }
        Ok(())
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<Txid, ChainError> {
        self.check(&tx)?;
        let txid = tx.txid();
        for input in &tx.inputs {
            self.mempool_spent.insert(input.previous_output);
        }
        self.add_mempool_outputs(&tx, txid);
        self.mempool.push(tx);
        Ok(txid)
    }

    fn add_mempool_outputs(&mut self, tx: &Transaction, txid: Txid) {
        let height = self.height() + 1;
        for (vout, o) in tx.outputs.iter().enumerate() {
            if o.is_op_return() {
                continue;
            }
            let outpoint = OutPoint::new(txid, vout as u32);
            self.mempool_utxos
                .insert(outpoint, Utxo { outpoint, value: o.value, script_pubkey: o.script_pubkey.clone(), height });
        }
    }

    /// Pay `value` to `spk` out of thin air, like a coinbase. Enters the
    /// mempool and is spendable immediately.
    pub fn faucet(&mut self, spk: &[u8], value: u64) -> Utxo {
        let nonce = self.faucet_nonce;
        self.faucet_nonce += 1;
        let mut script_sig = b"faucet".to_vec();
        script_sig.extend_from_slice(&nonce.to_le_bytes());
        let tx = Transaction::new(
            vec![TxIn {
                previous_output: OutPoint::new(Txid::default(), nonce),
                script_sig,
                sequence: u32::MAX,
                witness: vec![],
            }],
            vec![TxOut::new(value, spk.to_vec())],
        );
        let txid = tx.txid();
        self.add_mempool_outputs(&tx, txid);
        self.mempool.push(tx);
        self.mempool_utxos[&OutPoint::new(txid, 0)].clone()
    }

    /// Confirm every mempool transaction, in submission order.
    pub fn mine_block(&mut self) -> &Block {
        let txs = std::mem::take(&mut self.mempool);
        self.mempool_spent.clear();
        self.mempool_utxos.clear();
        self.append_block(txs);
        self.blocks.last().expect("chain has genesis")
    }

    pub fn mine_blocks(&mut self, n: u64) {
        for _ in 0..n {
            self.mine_block();
        }
    }

    fn append_block(&mut self, txs: Vec<Transaction>) {
        let height = self.height() + 1;
        let prev_hash = self.blocks.last().expect("genesis").hash;
        let mut header = prev_hash.to_vec();
        header.extend_from_slice(&height.to_le_bytes());
        for (i, tx) in txs.iter().enumerate() {
            let txid = tx.txid();
            header.extend_from_slice(&txid.0);
            self.tx_index.insert(txid, (height, i));
            if !is_coinbase_like(tx) {
                for input in &tx.inputs {
                    self.utxos.remove(&input.previous_output);
                    self.spent.insert(input.previous_output);
                }
            } else {
                self.faucet_nonce = self.faucet_nonce.max(tx.inputs[0].previous_output.vout + 1);
            }
            for (vout, o) in tx.outputs.iter().enumerate() {
                if o.is_op_return() {
                    continue;
                }
                let outpoint = OutPoint::new(txid, vout as u32);
                self.utxos.insert(
                    outpoint,
                    Utxo { outpoint, value: o.value, script_pubkey: o.script_pubkey.clone(), height },
                );
            }
        }
        let hash = sha256d(&header);
        self.blocks.push(Block { height, hash, prev_hash, txs });
    }

    /// Serialize every block and the mempool.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(b"SIMCHN");
        e.varint(self.policy.max_tx_vbytes as u64).varint(self.policy.finalization_depth);
        e.varint(self.blocks.len() as u64 - 1);
        for b in &self.blocks[1..] {
            e.varint(b.txs.len() as u64);
            for tx in &b.txs {
                e.bytes(&tx.serialize());
            }
        }
        e.varint(self.mempool.len() as u64);
        for tx in &self.mempool {
            e.bytes(&tx.serialize());
        }
        e.finish()
    }

    /// Rebuild a chain by replaying a snapshot.
    pub fn from_snapshot(bytes: &[u8]) -> Result<SimChain, ChainError> {
        let err = |e: crate::codec::CodecError| ChainError::Snapshot(e.to_string());
        let mut d = Decoder::new(bytes);
        if d.raw(6).map_err(err)? != b"SIMCHN" {
            return Err(ChainError::Snapshot("not a chain snapshot".into()));
        }
        let policy = ChainPolicy {
            max_tx_vbytes: d.varint().map_err(err)? as usize,
            finalization_depth: d.varint().map_err(err)?,
        };
        let mut chain = SimChain::new(policy);
        let read_tx = |d: &mut Decoder| -> Result<Transaction, ChainError> {
            let raw = d.bytes().map_err(err)?;
            Transaction::deserialize(raw).map_err(|e| ChainError::Snapshot(e.to_string()))
        };
        let n_blocks = d.varint().map_err(err)?;
        for _ in 0..n_blocks {
            let n = d.length().map_err(err)?;
            let txs = (0..n).map(|_| read_tx(&mut d)).collect::<Result<Vec<_>, _>>()?;
            chain.append_block(txs);
        }
        let n = d.length().map_err(err)?;
        for _ in 0..n {
            let tx = read_tx(&mut d)?;
            if is_coinbase_like(&tx) {
                chain.faucet_nonce = chain.faucet_nonce.max(tx.inputs[0].previous_output.vout + 1);
                let txid = tx.txid();
                chain.add_mempool_outputs(&tx, txid);
                chain.mempool.push(tx);
            } else {
                chain.submit(tx)?;
            }
        }
        d.finish().map_err(err)?;
        Ok(chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::{AddressNetwork, BtcAddress};
    use crate::fees::FeeRate;
    use crate::forge::{build_payment, SpendInput, SpendPath};
    use crate::keys::Keypair;

    fn wallet() -> (Vec<u8>, SpendPath) {
        let kp = Keypair::from_name("sim");
        (
            BtcAddress::p2wpkh(&kp.compressed(), AddressNetwork::Regtest).script_pubkey(),
            SpendPath::P2wpkh { pubkey: kp.compressed() },
        )
    }

    fn pay(chain: &SimChain, from: &Utxo, value: u64) -> Transaction {
        let (spk, path) = wallet();
        build_payment(
            &[SpendInput { utxo: from.clone(), path }],
            &[TxOut::new(value, spk.clone())],
            &spk,
            FeeRate::ONE_SAT_PER_VB,
        )
        .inspect(|tx| assert!(chain.check(tx).is_ok()))
        .unwrap()
    }

    #[test]
    fn submit_mine_spend() {
        let mut chain = SimChain::default();
        let (spk, _) = wallet();
        let coin = chain.faucet(&spk, 100_000);
        chain.mine_block();
        let tx = pay(&chain, &coin, 50_000);
        let txid = chain.submit(tx).unwrap();
        chain.mine_block();
        assert!(chain.get_utxo(&OutPoint::new(txid, 0)).is_some());
        assert_eq!(chain.finalized_height(), 2);
        assert_eq!(chain.get_tx(&txid).unwrap().1, 2);
    }

    #[test]
    fn double_spend_rejected_in_mempool_and_after_mining() {
        let mut chain = SimChain::default();
        let (spk, _) = wallet();
        let coin = chain.faucet(&spk, 100_000);
        let a = pay(&chain, &coin, 50_000);
        let b = pay(&chain, &coin, 40_000);
        chain.submit(a.clone()).unwrap();
        assert_eq!(chain.submit(b.clone()), Err(ChainError::DoubleSpend(coin.outpoint)));
        chain.mine_block();
        assert_eq!(chain.submit(b), Err(ChainError::DoubleSpend(coin.outpoint)));
        assert_eq!(chain.submit(a), Err(ChainError::DoubleSpend(coin.outpoint)));
    }

    #[test]
    fn oversized_rejected() {
        let mut chain = SimChain::new(ChainPolicy { max_tx_vbytes: 100, finalization_depth: 1 });
        let (spk, path) = wallet();
        let coin = chain.faucet(&spk, 100_000);
        let tx = build_payment(
            &[SpendInput { utxo: coin, path }],
            &[TxOut::new(1000, spk.clone())],
            &spk,
            FeeRate::ONE_SAT_PER_VB,
        )
        .unwrap();
        assert_eq!(chain.submit(tx), Err(ChainError::OversizedTx { vbytes: 141, max: 100 }));
    }

    #[test]
    fn wrong_key_rejected() {
        let mut chain = SimChain::default();
        let (spk, _) = wallet();
        let coin = chain.faucet(&spk, 100_000);
        let other = Keypair::from_name("mallory");
        let tx = build_payment(
            &[SpendInput { utxo: coin, path: SpendPath::P2wpkh { pubkey: other.compressed() } }],
            &[TxOut::new(1000, spk.clone())],
            &spk,
            FeeRate::ONE_SAT_PER_VB,
        )
        .unwrap();
        assert!(matches!(chain.submit(tx), Err(ChainError::InvalidWitness { .. })));
    }

    #[test]
    fn snapshot_replay_is_identical() {
        let mut chain = SimChain::default();
        let (spk, _) = wallet();
        let coin = chain.faucet(&spk, 100_000);
        chain.mine_block();
        chain.submit(pay(&chain, &coin, 50_000)).unwrap();
        chain.mine_block();
        chain.faucet(&spk, 7_000);
        let snap = chain.to_snapshot();
        let again = SimChain::from_snapshot(&snap).unwrap();
        assert_eq!(again.blocks(), chain.blocks());
        assert_eq!(again.mempool(), chain.mempool());
        assert_eq!(again.balance(&spk), chain.balance(&spk));
        assert_eq!(again.to_snapshot(), snap);
    }

    #[test]
    fn multisig_leaf_parsing() {
        let keys: Vec<XOnlyPublicKey> = (0..5).map(|i| Keypair::from_name(&format!("k{i}")).x_only()).collect();
        let leaf = crate::script::build_multisig_leaf_script(&keys, 4).unwrap().to_bytes();
        let (parsed, t) = parse_multisig_leaf(&leaf).unwrap();
        assert_eq!((parsed.len(), t), (5, 4));
        let leaf = crate::script::build_multisig_leaf_script(&keys[..1], 1).unwrap().to_bytes();
        assert_eq!(parse_multisig_leaf(&leaf).unwrap().1, 1);
        assert!(parse_multisig_leaf(&crate::script::build_data_script(b"hi").unwrap().to_bytes()).is_none());
    }
}
