//! Segwit transaction model, wire serialization and BIP141 weight.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::hash::sha256d;
use crate::taproot::compact_size;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxDecodeError {
    #[error("unexpected end of transaction data at offset {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after transaction")]
    Trailing(usize),
    #[error("non-canonical compact size at offset {0}")]
    NonCanonicalSize(usize),
    #[error("segwit flag set but every witness is empty")]
    EmptyWitness,
}

/// Transaction id in internal (hash) byte order. Displayed reversed, as
/// Bitcoin software does.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Txid(pub [u8; 32]);

impl Txid {
    /// Bytes in the order they appear in the displayed hex string.
    pub fn display_bytes(&self) -> [u8; 32] {
        let mut b = self.0;
        b.reverse();
        b
    }
}

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.display_bytes()))
    }
}

impl fmt::Debug for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Txid({self})")
    }
}

impl FromStr for Txid {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut b = [0u8; 32];
        hex::decode_to_slice(s, &mut b)?;
        b.reverse();
        Ok(Txid(b))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OutPoint {
    pub txid: Txid,
    pub vout: u32,
}

impl OutPoint {
    pub fn new(txid: Txid, vout: u32) -> Self {
        OutPoint { txid, vout }
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxIn {
    pub previous_output: OutPoint,
    pub script_sig: Vec<u8>,
    pub sequence: u32,
    pub witness: Vec<Vec<u8>>,
}

impl TxIn {
    pub fn new(previous_output: OutPoint, witness: Vec<Vec<u8>>) -> Self {
        TxIn { previous_output, script_sig: Vec::new(), sequence: 0xffff_fffd, witness }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxOut {
    pub value: u64,
    pub script_pubkey: Vec<u8>,
}

impl TxOut {
    pub fn new(value: u64, script_pubkey: Vec<u8>) -> Self {
        TxOut { value, script_pubkey }
    }

    pub fn is_op_return(&self) -> bool {
        self.script_pubkey.first() == Some(&crate::script::opcodes::OP_RETURN)
    }

    pub fn serialized_len(&self) -> usize {
        8 + compact_size(self.script_pubkey.len()).len() + self.script_pubkey.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub version: i32,
    pub inputs: Vec<TxIn>,
    pub outputs: Vec<TxOut>,
    pub lock_time: u32,
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&compact_size(b.len()));
    out.extend_from_slice(b);
}

impl Transaction {
    pub fn new(inputs: Vec<TxIn>, outputs: Vec<TxOut>) -> Self {
        Transaction { version: 2, inputs, outputs, lock_time: 0 }
    }

    pub fn has_witness(&self) -> bool {
        self.inputs.iter().any(|i| !i.witness.is_empty())
    }

    fn write(&self, out: &mut Vec<u8>, with_witness: bool) {
        let segwit = with_witness && self.has_witness();
        out.extend_from_slice(&self.version.to_le_bytes());
        if segwit {
            out.extend_from_slice(&[0x00, 0x01]);
        }
        out.extend_from_slice(&compact_size(self.inputs.len()));
        for i in &self.inputs {
            out.extend_from_slice(&i.previous_output.txid.0);
            out.extend_from_slice(&i.previous_output.vout.to_le_bytes());
            put_bytes(out, &i.script_sig);
            out.extend_from_slice(&i.sequence.to_le_bytes());
        }
        out.extend_from_slice(&compact_size(self.outputs.len()));
        for o in &self.outputs {
            out.extend_from_slice(&o.value.to_le_bytes());
            put_bytes(out, &o.script_pubkey);
        }
        if segwit {
            for i in &self.inputs {
                out.extend_from_slice(&compact_size(i.witness.len()));
                for item in &i.witness {
                    put_bytes(out, item);
                }
            }
        }
        out.extend_from_slice(&self.lock_time.to_le_bytes());
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out, true);
        out
    }

    pub fn serialize_no_witness(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out, false);
        out
    }

    pub fn base_size(&self) -> usize {
        self.serialize_no_witness().len()
    }

    pub fn total_size(&self) -> usize {
        self.serialize().len()
    }

    pub fn weight(&self) -> usize {
        self.base_size() * 3 + self.total_size()
    }

    pub fn vbytes(&self) -> usize {
        self.weight().div_ceil(4)
    }

    pub fn txid(&self) -> Txid {
        Txid(sha256d(&self.serialize_no_witness()))
    }

    pub fn output_value(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Transaction, TxDecodeError> {
        let mut r = Reader { data: bytes, pos: 0 };
        let version = i32::from_le_bytes(r.array()?);
        let mut segwit = false;
        if r.peek() == Some(0x00) {
            r.take(1)?;
            if r.take(1)? != [0x01] {
                return Err(TxDecodeError::Truncated(r.pos));
            }
            segwit = true;
        }
        let n_in = r.size()?;
        let mut inputs = Vec::with_capacity(n_in.min(bytes.len()));
        for _ in 0..n_in {
            let txid = Txid(r.array()?);
            let vout = u32::from_le_bytes(r.array()?);
            let script_sig = r.var_bytes()?;
            let sequence = u32::from_le_bytes(r.array()?);
            inputs.push(TxIn { previous_output: OutPoint { txid, vout }, script_sig, sequence, witness: Vec::new() });
        }
        let n_out = r.size()?;
        let mut outputs = Vec::with_capacity(n_out.min(bytes.len()));
        for _ in 0..n_out {
            let value = u64::from_le_bytes(r.array()?);
            outputs.push(TxOut { value, script_pubkey: r.var_bytes()? });
        }
        if segwit {
            for input in &mut inputs {
                let n = r.size()?;
                for _ in 0..n {
                    input.witness.push(r.var_bytes()?);
                }
            }
            if inputs.iter().all(|i| i.witness.is_empty()) {
                return Err(TxDecodeError::EmptyWitness);
            }
        }
        let lock_time = u32::from_le_bytes(r.array()?);
        if r.pos != bytes.len() {
            return Err(TxDecodeError::Trailing(bytes.len() - r.pos));
        }
        Ok(Transaction { version, inputs, outputs, lock_time })
    }
}

/// `(weight, vbytes)` with `weight = 3 * base_size + total_size`.
pub fn compute_weight(tx: &Transaction) -> (usize, usize) {
    let w = tx.weight();
    (w, w.div_ceil(4))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TxDecodeError> {
        if self.data.len() - self.pos < n {
            return Err(TxDecodeError::Truncated(self.pos));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], TxDecodeError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn size(&mut self) -> Result<usize, TxDecodeError> {
        let start = self.pos;
        let first = self.take(1)?[0];
        let (v, min) = match first {
            0xfd => (u64::from(u16::from_le_bytes(self.array()?)), 0xfd),
            0xfe => (u64::from(u32::from_le_bytes(self.array()?)), 0x1_0000),
            0xff => (u64::from_le_bytes(self.array()?), 0x1_0000_0000),
            b => return Ok(usize::from(b)),
        };
        if v < min {
            return Err(TxDecodeError::NonCanonicalSize(start));
        }
        if v > (self.data.len() - self.pos) as u64 {
            return Err(TxDecodeError::Truncated(self.pos));
        }
        Ok(v as usize)
    }

    fn var_bytes(&mut self) -> Result<Vec<u8>, TxDecodeError> {
        let n = self.size()?;
        Ok(self.take(n)?.to_vec())
    }
}
