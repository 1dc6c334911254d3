//! Benchmark sweeps over checkpoint bundles.
//!
//! Every figure comes from serializing the constructed transactions; nothing
//! is estimated in closed form. Parameter combinations are independent and
//! run through [`Exec`], which uses rayon when the `parallel` feature is on.

pub mod exec;
pub mod fixtures;
pub mod sweeps;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

pub use exec::Exec;
pub use sweeps::run_sweep;

/// Block space Bitcoin finalizes per second on average.
pub const L1_VBYTES_PER_SECOND: f64 = 1667.0;
/// USD per BTC used for the fee columns.
pub const USD_PER_BTC: f64 = 100_000.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid sweep spec: {0}")]
    Spec(String),
    #[error("unknown sweep {0:?}")]
    UnknownSweep(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SignerMode {
    Multisig,
    Threshold,
}

impl fmt::Display for SignerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignerMode::Multisig => "multisig",
            SignerMode::Threshold => "threshold",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sweep {
    Transfer,
    Validator,
    Throughput,
    Withdraw,
    Checkpoint,
    Threshold,
}

impl Sweep {
    pub const ALL: [Sweep; 6] =
        [Sweep::Transfer, Sweep::Validator, Sweep::Throughput, Sweep::Withdraw, Sweep::Checkpoint, Sweep::Threshold];

    pub fn name(self) -> &'static str {
        match self {
            Sweep::Transfer => "transfer",
            Sweep::Validator => "validator",
            Sweep::Throughput => "throughput",
            Sweep::Withdraw => "withdraw",
            Sweep::Checkpoint => "checkpoint",
            Sweep::Threshold => "threshold",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Sweep::Transfer => "bench-transfer-sizes.csv",
            Sweep::Validator => "bench-validator-sizes.csv",
            Sweep::Throughput => "bench-throughput.csv",
            Sweep::Withdraw => "bench-withdraw-sizes.csv",
            Sweep::Checkpoint => "bench-checkpoint-overhead.csv",
            Sweep::Threshold => "bench-threshold-sizes.csv",
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sweep {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Sweep::ALL.into_iter().find(|w| w.name() == s).ok_or_else(|| BenchError::UnknownSweep(s.to_string()))
    }
}

/// Parameters of one sweep. Sweeps read only the lists that apply to them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    /// Requested batch sizes; transfers or withdrawals depending on the sweep.
    pub n_items: Vec<usize>,
    pub n_target_subnets: Vec<usize>,
    pub n_validators: Vec<usize>,
    pub signer_mode: SignerMode,
    pub fee_rate_sat_vb: u64,
    /// Hours between checkpoints; each must divide a day.
    pub checkpoint_periods: Vec<u64>,
    pub max_tx_vbytes: usize,
}

/// 1, 2, 5, 10, 20, 50, ... up to `limit`.
pub fn one_two_five(limit: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let v = m * decade;
            if v > limit {
                break 'outer;
            }
            out.push(v);
        }
        decade *= 10;
    }
    out
}

impl SweepSpec {
    /// Defaults for each sweep.
    pub fn default_for(sweep: Sweep) -> Self {
        let base = SweepSpec {
            n_items: vec![],
            n_target_subnets: vec![1, 2, 5, 10],
            n_validators: vec![4, 10, 36, 100],
            signer_mode: SignerMode::Threshold,
            fee_rate_sat_vb: 200,
            checkpoint_periods: vec![1, 2, 3, 4, 6, 8, 12, 24],
            max_tx_vbytes: btc_ipc::forge::MAX_STANDARD_TX_VBYTES,
        };
        let mut small: Vec<usize> = (1..=10).collect();
        match sweep {
            Sweep::Transfer | Sweep::Throughput => {
                small.extend(one_two_five(20_000).into_iter().filter(|&n| n > 10));
                SweepSpec { n_items: small, ..base }
            }
            Sweep::Validator => {
                small.extend(one_two_five(1_000).into_iter().filter(|&n| n > 10));
                SweepSpec { n_items: small, n_target_subnets: vec![1], signer_mode: SignerMode::Multisig, ..base }
            }
            Sweep::Threshold => {
                SweepSpec { n_items: vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000], n_target_subnets: vec![1], ..base }
            }
            Sweep::Withdraw => SweepSpec { n_items: vec![1, 2, 5, 10, 20, 50, 100, 150, 200, 250, 255, 256], ..base },
            Sweep::Checkpoint => SweepSpec { n_items: vec![1], ..base },
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let lists: [(&str, &[usize]); 3] = [
            ("n_items", &self.n_items),
            ("n_target_subnets", &self.n_target_subnets),
            ("n_validators", &self.n_validators),
        ];
        for (name, list) in lists {
            if list.is_empty() || list.contains(&0) {
                return Err(BenchError::Spec(format!("{name} must be a non-empty list of counts >= 1")));
            }
        }
        if self.n_target_subnets.iter().any(|&t| t > 255) {
            return Err(BenchError::Spec("at most 255 target subnets".into()));
        }
        if self.fee_rate_sat_vb == 0 {
            return Err(BenchError::Spec("fee rate must be positive".into()));
        }
        if self.checkpoint_periods.is_empty() || self.checkpoint_periods.iter().any(|&p| p == 0 || 24 % p != 0) {
            return Err(BenchError::Spec("checkpoint periods must be hours dividing 24".into()));
        }
        if self.max_tx_vbytes == 0 {
            return Err(BenchError::Spec("max_tx_vbytes must be positive".into()));
        }
        Ok(())
    }
}

/// What a row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// A single-key L1 payment.
    Native,
    /// One checkpoint bundle.
    Bundle,
    /// Smallest batch beating the native size.
    BreakEven,
    /// Checkpoint overhead accumulated over a day.
    Daily,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub sweep: String,
    pub kind: RowKind,
    pub signer_mode: SignerMode,
    pub n_validators: usize,
    pub n_target_subnets: usize,
    pub n_requested: usize,
    pub n_items: usize,
    /// The request exceeded what one bundle admits.
    pub capped: bool,
    pub checkpoint_period_hours: Option<u64>,
    pub fee_rate_sat_vb: u64,
    pub checkpoint_tx_vbytes: usize,
    pub batch_tx_vbytes: usize,
    pub total_vbytes: usize,
    pub amortized_vbytes_per_item: f64,
    /// Fee per item.
    pub fee_sat: u64,
    pub total_fee_sat: u64,
    /// Fee per item.
    pub fee_usd: f64,
    pub effective_tps: Option<f64>,
}

pub fn fee_for(vbytes: f64, rate_sat_vb: u64) -> u64 {
    (vbytes * rate_sat_vb as f64 - 1e-9).ceil().max(0.0) as u64
}

pub fn sat_to_usd(sat: u64) -> f64 {
    sat as f64 * USD_PER_BTC / 1e8
}

pub fn tps(amortized_vbytes: f64) -> f64 {
    L1_VBYTES_PER_SECOND / amortized_vbytes
}

/// Serialize rows with a header naming every column.
pub fn to_csv(rows: &[BenchRow]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))
}

pub const COLUMNS: [&str; 18] = [
    "sweep",
    "kind",
    "signer_mode",
    "n_validators",
    "n_target_subnets",
    "n_requested",
    "n_items",
    "capped",
    "checkpoint_period_hours",
    "fee_rate_sat_vb",
    "checkpoint_tx_vbytes",
    "batch_tx_vbytes",
    "total_vbytes",
    "amortized_vbytes_per_item",
    "fee_sat",
    "total_fee_sat",
    "fee_usd",
    "effective_tps",
];

/// Write one sweep's CSV under `out_dir`, returning its path.
pub fn write_csv(out_dir: &Path, sweep: Sweep, rows: &[BenchRow]) -> Result<PathBuf, BenchError> {
    std::fs::create_dir_all(out_dir).map_err(|source| BenchError::Io { path: out_dir.to_path_buf(), source })?;
    let path = out_dir.join(sweep.file_name());
    let bytes = to_csv(rows)?;
    std::fs::write(&path, bytes).map_err(|source| BenchError::Io { path: path.clone(), source })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_spacing() {
        assert_eq!(one_two_five(60), vec![1, 2, 5, 10, 20, 50]);
        assert_eq!(one_two_five(0), Vec::<usize>::new());
    }

    #[test]
    fn sweep_names_parse() {
        for s in Sweep::ALL {
            assert_eq!(s.name().parse::<Sweep>().unwrap(), s);
        }
        assert!("nope".parse::<Sweep>().is_err());
    }

    #[test]
    fn specs_validate() {
        for s in Sweep::ALL {
            SweepSpec::default_for(s).validate().unwrap();
        }
        let mut bad = SweepSpec::default_for(Sweep::Checkpoint);
        bad.checkpoint_periods = vec![5];
        assert!(bad.validate().is_err());
        bad = SweepSpec::default_for(Sweep::Transfer);
        bad.n_validators.push(0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unit_identities() {
        assert_eq!(tps(1667.0), 1.0);
        assert_eq!(fee_for(141.0, 200), 28_200);
        assert_eq!(fee_for(6.0691, 200), 1214);
        assert_eq!(sat_to_usd(28_200), 28.2);
    }

    #[test]
    fn empty_csv_still_has_a_header() {
        let bytes = to_csv(&[]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap().trim_end(), COLUMNS.join(","));
    }
}
