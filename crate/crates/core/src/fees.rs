//! Fee rates, fee oracles, coin selection and consolidation.

use std::collections::BTreeMap;
use std::io::Read;

use thiserror::Error;

use crate::forge::SpendInput;
use crate::tx::{OutPoint, Transaction, TxIn, TxOut};

/// Relay dust threshold used for every non-OP_RETURN output.
pub const DUST_LIMIT: u64 = 330;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeeError {
    #[error("insufficient funds: need {needed} sat, have {available} sat")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("fee {fee} sat is not below the consolidated value {value} sat")]
    FeeExceedsValue { fee: u64, value: u64 },
    #[error("nothing to consolidate")]
    NoInputs,
    #[error("fee oracle unavailable")]
    OracleUnavailable,
    #[error("fee schedule: {0}")]
    Schedule(String),
}

/// A fee rate stored in sat per 1000 vbytes so sub-sat/vB oracle values
/// survive without floats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeeRate(u64);

impl FeeRate {
    pub const ONE_SAT_PER_VB: FeeRate = FeeRate(1000);

    pub fn from_sat_per_vb(rate: u64) -> Self {
        FeeRate(rate * 1000)
    }

    pub fn from_sat_per_kvb(rate: u64) -> Self {
        FeeRate(rate)
    }

    pub fn sat_per_kvb(self) -> u64 {
        self.0
    }

    pub fn sat_per_vb(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// `ceil(vbytes * rate)` in satoshis.
    pub fn fee(self, vbytes: usize) -> u64 {
        (vbytes as u64 * self.0).div_ceil(1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimateMode {
    #[default]
    Economical,
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeeQuote {
    pub fee_rate: FeeRate,
    pub target_blocks: u32,
    pub mode: EstimateMode,
    /// Set when the oracle failed and the floor rate was used.
    pub degraded: bool,
}

pub const DEFAULT_TARGET_BLOCKS: u32 = 6;

/// Source of fee estimates, answering in sat/kvB like `estimatesmartfee`.
pub trait FeeOracle {
    fn estimate_sat_per_kvb(&self, height: u64, target_blocks: u32, mode: EstimateMode) -> Result<u64, FeeError>;
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantFeeOracle {
    pub sat_per_vb: u64,
}

impl Default for ConstantFeeOracle {
    fn default() -> Self {
        ConstantFeeOracle { sat_per_vb: 200 }
    }
}

impl FeeOracle for ConstantFeeOracle {
    fn estimate_sat_per_kvb(&self, _height: u64, _target: u32, _mode: EstimateMode) -> Result<u64, FeeError> {
        Ok(self.sat_per_vb * 1000)
    }
}

/// Piecewise-constant rates keyed by block height. A height before the
/// first entry has no estimate.
#[derive(Debug, Clone, Default)]
pub struct ScheduledFeeOracle {
    table: BTreeMap<u64, u64>,
}

impl ScheduledFeeOracle {
    pub fn new(entries: impl IntoIterator<Item = (u64, u64)>) -> Self {
        ScheduledFeeOracle { table: entries.into_iter().collect() }
    }

    /// Parse a `block_height,sat_per_vb` CSV with a header row.
    pub fn from_csv(reader: impl Read) -> Result<Self, FeeError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| FeeError::Schedule(e.to_string()))?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| FeeError::Schedule(format!("missing column {name}")))
        };
        let (h_col, r_col) = (col("block_height")?, col("sat_per_vb")?);
        let mut table = BTreeMap::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| FeeError::Schedule(e.to_string()))?;
            let parse = |i: usize| {
                record
                    .get(i)
                    .and_then(|v| v.parse::<u64>().ok())
                    .ok_or_else(|| FeeError::Schedule(format!("bad value on data row {}", line + 1)))
            };
            table.insert(parse(h_col)?, parse(r_col)?);
        }
        Ok(ScheduledFeeOracle { table })
    }
}

impl FeeOracle for ScheduledFeeOracle {
    fn estimate_sat_per_kvb(&self, height: u64, _target: u32, _mode: EstimateMode) -> Result<u64, FeeError> {
        self.table.range(..=height).next_back().map(|(_, r)| r * 1000).ok_or(FeeError::OracleUnavailable)
    }
}

/// Query the oracle, clamping to `floor`; falls back to `floor` with the
/// degraded flag when the oracle has no answer.
pub fn estimate_fee_rate(
    oracle: &dyn FeeOracle,
    height: u64,
    target_blocks: u32,
    mode: EstimateMode,
    floor: FeeRate,
) -> FeeQuote {
    let floor = floor.max(FeeRate::ONE_SAT_PER_VB);
    match oracle.estimate_sat_per_kvb(height, target_blocks, mode) {
        Ok(kvb) => FeeQuote { fee_rate: FeeRate(kvb).max(floor), target_blocks, mode, degraded: false },
        Err(_) => FeeQuote { fee_rate: floor, target_blocks, mode, degraded: true },
    }
}

/// An unspent output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utxo {
    pub outpoint: OutPoint,
    pub value: u64,
    pub script_pubkey: Vec<u8>,
    pub height: u64,
}

impl Utxo {
    pub fn txout(&self) -> TxOut {
        TxOut::new(self.value, self.script_pubkey.clone())
    }
}

/// Order used by greedy selection: value descending, then outpoint.
pub fn selection_order(utxos: &mut [Utxo]) {
    utxos.sort_by(|a, b| b.value.cmp(&a.value).then_with(|| a.outpoint.cmp(&b.outpoint)));
}

/// Largest-first greedy selection; stops as soon as the target is covered.
pub fn select_coins(utxos: &[Utxo], target: u64) -> Result<Vec<Utxo>, FeeError> {
    let mut sorted = utxos.to_vec();
    selection_order(&mut sorted);
    let mut acc = 0u64;
    let mut picked = Vec::new();
    for u in sorted {
        if acc >= target && !picked.is_empty() {
            break;
        }
        acc += u.value;
        picked.push(u);
    }
    if acc < target || picked.is_empty() {
        return Err(FeeError::InsufficientFunds { needed: target, available: acc });
    }
    Ok(picked)
}

fn consolidation_draft(inputs: &[SpendInput], owner: &[u8]) -> Transaction {
    let ins = inputs.iter().map(|i| TxIn::new(i.utxo.outpoint, i.path.witness())).collect();
    Transaction::new(ins, vec![TxOut::new(0, owner.to_vec())])
}

/// Merge `inputs` into one output locked by `new_owner`, paying `fee`.
pub fn consolidate_with_fee(inputs: &[SpendInput], new_owner: &[u8], fee: u64) -> Result<Transaction, FeeError> {
    if inputs.is_empty() {
        return Err(FeeError::NoInputs);
    }
    let value: u64 = inputs.iter().map(|i| i.utxo.value).sum();
    if fee >= value {
        return Err(FeeError::FeeExceedsValue { fee, value });
    }
    let mut tx = consolidation_draft(inputs, new_owner);
    tx.outputs[0].value = value - fee;
    Ok(tx)
}

/// Merge `inputs` into one output locked by `new_owner` at `fee_rate`.
pub fn consolidate(inputs: &[SpendInput], new_owner: &[u8], fee_rate: FeeRate) -> Result<Transaction, FeeError> {
    if inputs.is_empty() {
        return Err(FeeError::NoInputs);
    }
    let fee = fee_rate.fee(consolidation_draft(inputs, new_owner).vbytes());
    consolidate_with_fee(inputs, new_owner, fee)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::SpendPath;
    use crate::tx::Txid;

    fn utxo(tag: u8, value: u64) -> Utxo {
        Utxo { outpoint: OutPoint::new(Txid([tag; 32]), 0), value, script_pubkey: vec![0x51], height: 1 }
    }

    #[test]
    fn fee_rounds_up() {
        let r = FeeRate::from_sat_per_kvb(1500);
        assert_eq!(r.fee(3), 5);
        assert_eq!(FeeRate::from_sat_per_vb(200).fee(141), 28_200);
    }

    #[test]
    fn greedy_largest_first() {
        let us = [utxo(1, 2), utxo(2, 5), utxo(3, 3)];
        let picked: Vec<u64> = select_coins(&us, 6).unwrap().iter().map(|u| u.value).collect();
        assert_eq!(picked, vec![5, 3]);
        assert_eq!(select_coins(&[utxo(1, 6)], 6).unwrap().len(), 1);
        assert_eq!(
            select_coins(&[utxo(1, 4), utxo(2, 4)], 9),
            Err(FeeError::InsufficientFunds { needed: 9, available: 8 })
        );
    }

    #[test]
    fn ties_break_by_outpoint() {
        let picked = select_coins(&[utxo(9, 4), utxo(3, 4)], 4).unwrap();
        assert_eq!(picked[0].outpoint.txid, Txid([3; 32]));
    }

    #[test]
    fn oracle_units_and_fallback() {
        let q =
            estimate_fee_rate(&ConstantFeeOracle::default(), 0, 6, EstimateMode::Economical, FeeRate::ONE_SAT_PER_VB);
        assert_eq!(q.fee_rate, FeeRate::from_sat_per_vb(200));
        let sched = ScheduledFeeOracle::new([(10, 1)]);
        let q = estimate_fee_rate(&sched, 12, 6, EstimateMode::Economical, FeeRate::ONE_SAT_PER_VB);
        assert_eq!(q.fee_rate.sat_per_vb(), 1.0);
        assert!(!q.degraded);
        let q = estimate_fee_rate(&sched, 5, 6, EstimateMode::Economical, FeeRate::ONE_SAT_PER_VB);
        assert!(q.degraded);
        assert_eq!(q.fee_rate, FeeRate::ONE_SAT_PER_VB);
    }

    #[test]
    fn schedule_csv() {
        let csv = "block_height,sat_per_vb\n0,5\n100,20\n";
        let o = ScheduledFeeOracle::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(o.estimate_sat_per_kvb(99, 6, EstimateMode::Economical).unwrap(), 5000);
        assert_eq!(o.estimate_sat_per_kvb(100, 6, EstimateMode::Economical).unwrap(), 20_000);
        assert!(ScheduledFeeOracle::from_csv("height,rate\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn consolidation_arithmetic() {
        let inputs: Vec<SpendInput> =
            (0..10).map(|i| SpendInput { utxo: utxo(i, 1000), path: SpendPath::TaprootKey }).collect();
        let tx = consolidate_with_fee(&inputs, &[0x51], 500).unwrap();
        assert_eq!(tx.outputs.len(), 1);
        assert_eq!(tx.outputs[0].value, 9500);
        assert_eq!(
            consolidate_with_fee(&inputs, &[0x51], 10_000),
            Err(FeeError::FeeExceedsValue { fee: 10_000, value: 10_000 })
        );
    }
}
