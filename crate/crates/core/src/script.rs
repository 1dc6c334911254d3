//! Script construction and parsing.
//!
//! Long payloads are carried as a sequence of `<push> OP_DROP` pairs closed by
//! `OP_1`, so the script leaves a single truthy element on the stack. Each push
//! holds at most 520 bytes (the consensus stack element limit) and uses the
//! smallest push opcode for its length. The parser side is deliberately
//! strict: anything other than pushes and `OP_DROP` means the script is not a
//! data script.

use std::fmt;

use thiserror::Error;

use crate::keys::XOnlyPublicKey;

pub mod opcodes {
    pub const OP_0: u8 = 0x00;
    pub const OP_PUSHBYTES_75: u8 = 0x4b;
    pub const OP_PUSHDATA1: u8 = 0x4c;
    pub const OP_PUSHDATA2: u8 = 0x4d;
    pub const OP_PUSHDATA4: u8 = 0x4e;
    pub const OP_1NEGATE: u8 = 0x4f;
    pub const OP_PUSHNUM_1: u8 = 0x51;
    pub const OP_PUSHNUM_16: u8 = 0x60;
    pub const OP_RETURN: u8 = 0x6a;
    pub const OP_DROP: u8 = 0x75;
    pub const OP_NUMEQUAL: u8 = 0x9c;
    pub const OP_CHECKSIG: u8 = 0xac;
    pub const OP_CHECKSIGADD: u8 = 0xba;
}

use opcodes::*;

/// Maximum size of a single stack push.
pub const MAX_PUSH_LEN: usize = 520;
/// Maximum payload of an OP_RETURN output under standard relay policy.
pub const MAX_OP_RETURN_PAYLOAD: usize = 80;
/// Default cap on data carried by a single data script.
pub const DEFAULT_MAX_DATA_LEN: usize = 400_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("data script payload is empty")]
    EmptyData,
    #[error("data of {len} bytes exceeds the {max} byte limit")]
    DataTooLarge { len: usize, max: usize },
    #[error("foreign opcode 0x{0:02x} in data script")]
    ForeignOpcode(u8),
    #[error("malformed data script: {0}")]
    MalformedStructure(&'static str),
    #[error("OP_RETURN payload of {0} bytes exceeds 80 bytes")]
    PayloadTooLarge(usize),
    #[error("threshold {threshold} is invalid for {keys} keys")]
    BadThreshold { threshold: usize, keys: usize },
    #[error("duplicate key {0} in multisig")]
    DuplicateKey(XOnlyPublicKey),
    #[error("script truncated at offset {0}")]
    Truncated(usize),
    #[error("push of {len} bytes at offset {offset} does not use the minimal opcode")]
    NonMinimalPush { offset: usize, len: usize },
    #[error("push of {0} bytes exceeds the stack element limit")]
    OversizedPush(usize),
}

/// One script operation. Push variants always carry their payload and must
/// satisfy the length range of their opcode.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Op {
    /// `OP_PUSHBYTES_n`, n in 1..=75.
    PushBytes(Vec<u8>),
    /// `OP_PUSHDATA1`, 76..=255 bytes.
    PushData1(Vec<u8>),
    /// `OP_PUSHDATA2`, 256..=520 bytes.
    PushData2(Vec<u8>),
    Drop,
    PushNum1,
    /// `OP_RETURN` followed by a single push of the payload (or nothing).
    OpReturn(Vec<u8>),
    Other(u8),
}

impl Op {
    /// Smallest push op for `data`. Panics on empty or oversized data; both are
    /// rejected earlier by every caller.
    pub fn push(data: &[u8]) -> Op {
        match data.len() {
            0 => panic!("empty pushes are encoded as OP_0"),
            1..=75 => Op::PushBytes(data.to_vec()),
            76..=255 => Op::PushData1(data.to_vec()),
            256..=MAX_PUSH_LEN => Op::PushData2(data.to_vec()),
            n => panic!("push of {n} bytes exceeds {MAX_PUSH_LEN}"),
        }
    }

    pub fn push_payload(&self) -> Option<&[u8]> {
        match self {
            Op::PushBytes(d) | Op::PushData1(d) | Op::PushData2(d) => Some(d),
            _ => None,
        }
    }

    fn is_valid(&self) -> bool {
        match self {
            Op::PushBytes(d) => (1..=75).contains(&d.len()),
            Op::PushData1(d) => (76..=255).contains(&d.len()),
            Op::PushData2(d) => (256..=MAX_PUSH_LEN).contains(&d.len()),
            Op::OpReturn(p) => p.len() <= MAX_OP_RETURN_PAYLOAD,
            _ => true,
        }
    }

    /// First byte of the serialized op.
    pub fn opcode(&self) -> u8 {
        match self {
            Op::PushBytes(d) => d.len() as u8,
            Op::PushData1(_) => OP_PUSHDATA1,
            Op::PushData2(_) => OP_PUSHDATA2,
            Op::Drop => OP_DROP,
            Op::PushNum1 => OP_PUSHNUM_1,
            Op::OpReturn(_) => OP_RETURN,
            Op::Other(b) => *b,
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        match self {
            Op::PushBytes(d) => {
                out.push(d.len() as u8);
                out.extend_from_slice(d);
            }
            Op::PushData1(d) => {
                out.push(OP_PUSHDATA1);
                out.push(d.len() as u8);
                out.extend_from_slice(d);
            }
            Op::PushData2(d) => {
                out.push(OP_PUSHDATA2);
                out.extend_from_slice(&(d.len() as u16).to_le_bytes());
                out.extend_from_slice(d);
            }
            Op::OpReturn(p) => {
                out.push(OP_RETURN);
                if !p.is_empty() {
                    Op::push(p).write_to(out);
                }
            }
            other => out.push(other.opcode()),
        }
    }

    fn serialized_len(&self) -> usize {
        match self {
            Op::PushBytes(d) => 1 + d.len(),
            Op::PushData1(d) => 2 + d.len(),
            Op::PushData2(d) => 3 + d.len(),
            Op::OpReturn(p) if p.is_empty() => 1,
            Op::OpReturn(p) => 1 + Op::push(p).serialized_len(),
            _ => 1,
        }
    }
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::PushBytes(d) => write!(f, "OP_PUSHBYTES_{} {}", d.len(), hex::encode(d)),
            Op::PushData1(d) => write!(f, "OP_PUSHDATA1 <{} bytes>", d.len()),
            Op::PushData2(d) => write!(f, "OP_PUSHDATA2 <{} bytes>", d.len()),
            Op::Drop => f.write_str("OP_DROP"),
            Op::PushNum1 => f.write_str("OP_PUSHNUM_1"),
            Op::OpReturn(p) => write!(f, "OP_RETURN {}", hex::encode(p)),
            Op::Other(b) => write!(f, "OP_0x{b:02x}"),
        }
    }
}

/// A parsed script: an ordered list of [`Op`]s.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Script {
    ops: Vec<Op>,
}

impl Script {
    /// Build from ops. Push ops outside their length range are rejected.
    pub fn from_ops(ops: Vec<Op>) -> Result<Script, ScriptError> {
        for op in &ops {
            if !op.is_valid() {
                return match op {
                    Op::OpReturn(p) => Err(ScriptError::PayloadTooLarge(p.len())),
                    Op::PushData2(d) if d.len() > MAX_PUSH_LEN => Err(ScriptError::OversizedPush(d.len())),
                    _ => Err(ScriptError::NonMinimalPush { offset: 0, len: op.push_payload().map_or(0, <[u8]>::len) }),
                };
            }
        }
        Ok(Script { ops })
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.iter().map(Op::serialized_len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        for op in &self.ops {
            op.write_to(&mut out);
        }
        out
    }

    /// Parse raw script bytes. Pushes must be minimal for their length.
    /// `OP_RETURN` followed by exactly one push to the end of the script is
    /// folded into [`Op::OpReturn`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Script, ScriptError> {
        let mut ops = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let opcode = bytes[pos];
            if opcode == OP_RETURN {
                let rest = &bytes[pos + 1..];
                if rest.is_empty() {
                    ops.push(Op::OpReturn(Vec::new()));
                    break;
                }
                if let Ok((Some(payload), used)) = read_push(rest, pos + 1) {
                    if used == rest.len() && payload.len() <= MAX_OP_RETURN_PAYLOAD {
                        ops.push(Op::OpReturn(payload));
                        break;
                    }
                }
                ops.push(Op::Other(OP_RETURN));
                pos += 1;
                continue;
            }
            let (push, used) = read_push(&bytes[pos..], pos)?;
            match push {
                Some(data) => ops.push(Op::push(&data)),
                None => ops.push(match opcode {
                    OP_DROP => Op::Drop,
                    OP_PUSHNUM_1 => Op::PushNum1,
                    b => Op::Other(b),
                }),
            }
            pos += used;
        }
        Ok(Script { ops })
    }
}

/// Reads one op at the start of `bytes`. Returns the pushed payload, if the op
/// is a data push, and the number of bytes consumed.
fn read_push(bytes: &[u8], offset: usize) -> Result<(Option<Vec<u8>>, usize), ScriptError> {
    let opcode = bytes[0];
    let (header, len) = match opcode {
        0x01..=OP_PUSHBYTES_75 => (1, opcode as usize),
        OP_PUSHDATA1 => {
            let len = *bytes.get(1).ok_or(ScriptError::Truncated(offset))? as usize;
            (2, len)
        }
        OP_PUSHDATA2 => {
            let lo = *bytes.get(1).ok_or(ScriptError::Truncated(offset))?;
            let hi = *bytes.get(2).ok_or(ScriptError::Truncated(offset))?;
            (3, u16::from_le_bytes([lo, hi]) as usize)
        }
        OP_PUSHDATA4 => return Err(ScriptError::ForeignOpcode(OP_PUSHDATA4)),
        _ => return Ok((None, 1)),
    };
    let end = header + len;
    if bytes.len() < end {
        return Err(ScriptError::Truncated(offset));
    }
    if len > MAX_PUSH_LEN {
        return Err(ScriptError::OversizedPush(len));
    }
    let minimal = match opcode {
        OP_PUSHDATA1 => len >= 76,
        OP_PUSHDATA2 => len >= 256,
        _ => true,
    };
    if !minimal {
        return Err(ScriptError::NonMinimalPush { offset, len });
    }
    Ok((Some(bytes[header..end].to_vec()), end))
}

impl fmt::Debug for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.ops).finish()
    }
}

/// Encode `data` as `(<push chunk> OP_DROP)* OP_1` with the default size cap.
pub fn build_data_script(data: &[u8]) -> Result<Script, ScriptError> {
    build_data_script_with_limit(data, DEFAULT_MAX_DATA_LEN)
}

pub fn build_data_script_with_limit(data: &[u8], max_len: usize) -> Result<Script, ScriptError> {
    if data.is_empty() {
        return Err(ScriptError::EmptyData);
    }
    if data.len() > max_len {
        return Err(ScriptError::DataTooLarge { len: data.len(), max: max_len });
    }
    let mut ops = Vec::with_capacity(2 * data.len().div_ceil(MAX_PUSH_LEN) + 1);
    for chunk in data.chunks(MAX_PUSH_LEN) {
        ops.push(Op::push(chunk));
        ops.push(Op::Drop);
    }
    ops.push(Op::PushNum1);
    Ok(Script { ops })
}

/// Recover the payload of a data script. Any op other than a push, `OP_DROP`
/// or the closing `OP_1` rejects the whole script.
pub fn parse_data_script(script: &Script) -> Result<Vec<u8>, ScriptError> {
    let ops = script.ops();
    for op in ops {
        match op {
            Op::PushBytes(_) | Op::PushData1(_) | Op::PushData2(_) | Op::Drop | Op::PushNum1 => {}
            other => return Err(ScriptError::ForeignOpcode(other.opcode())),
        }
    }
    let (last, body) = ops.split_last().ok_or(ScriptError::MalformedStructure("empty script"))?;
    if *last != Op::PushNum1 {
        return Err(ScriptError::MalformedStructure("missing closing OP_1"));
    }
    if body.is_empty() || body.len() % 2 != 0 {
        return Err(ScriptError::MalformedStructure("expected push/OP_DROP pairs"));
    }
    let mut data = Vec::new();
    for pair in body.chunks_exact(2) {
        let payload = pair[0].push_payload().ok_or(ScriptError::MalformedStructure("expected a push"))?;
        if pair[1] != Op::Drop {
            return Err(ScriptError::MalformedStructure("push not followed by OP_DROP"));
        }
        data.extend_from_slice(payload);
    }
    Ok(data)
}

/// Parse raw bytes as a data script. Unparseable bytes count as malformed.
pub fn parse_data_script_bytes(bytes: &[u8]) -> Result<Vec<u8>, ScriptError> {
    let script = Script::from_bytes(bytes).map_err(|e| match e {
        ScriptError::ForeignOpcode(b) => ScriptError::ForeignOpcode(b),
        _ => ScriptError::MalformedStructure("unparseable script bytes"),
    })?;
    parse_data_script(&script)
}

pub fn build_op_return_script(payload: &[u8]) -> Result<Script, ScriptError> {
    if payload.len() > MAX_OP_RETURN_PAYLOAD {
        return Err(ScriptError::PayloadTooLarge(payload.len()));
    }
    Ok(Script { ops: vec![Op::OpReturn(payload.to_vec())] })
}

/// Minimal script-number push for a small positive integer.
fn push_small_int(n: usize) -> Op {
    match n {
        1 => Op::PushNum1,
        2..=16 => Op::Other(OP_PUSHNUM_1 + (n as u8 - 1)),
        _ => {
            let mut bytes = Vec::new();
            let mut v = n as u64;
            while v > 0 {
                bytes.push((v & 0xff) as u8);
                v >>= 8;
            }
            if bytes.last().is_some_and(|b| b & 0x80 != 0) {
                bytes.push(0);
            }
            Op::PushBytes(bytes)
        }
    }
}

/// k-of-n tapscript multisig:
/// `<k1> OP_CHECKSIG <k2> OP_CHECKSIGADD ... <kn> OP_CHECKSIGADD <t> OP_NUMEQUAL`.
/// A single key degenerates to `<k1> OP_CHECKSIG`. Keys are used in the given
/// order.
pub fn build_multisig_leaf_script(pubkeys: &[XOnlyPublicKey], threshold: usize) -> Result<Script, ScriptError> {
    if threshold == 0 || threshold > pubkeys.len() {
        return Err(ScriptError::BadThreshold { threshold, keys: pubkeys.len() });
    }
    let mut seen = std::collections::BTreeSet::new();
    for key in pubkeys {
        if !seen.insert(*key) {
            return Err(ScriptError::DuplicateKey(*key));
        }
    }
    let mut ops = Vec::with_capacity(2 * pubkeys.len() + 2);
    for (i, key) in pubkeys.iter().enumerate() {
        ops.push(Op::PushBytes(key.0.to_vec()));
        ops.push(Op::Other(if i == 0 { OP_CHECKSIG } else { OP_CHECKSIGADD }));
    }
    if pubkeys.len() > 1 {
        ops.push(push_small_int(threshold));
        ops.push(Op::Other(OP_NUMEQUAL));
    }
    Ok(Script { ops })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(i: u8) -> XOnlyPublicKey {
        XOnlyPublicKey([i; 32])
    }

    #[test]
    fn opcode_boundaries() {
        let s = build_data_script(&[7u8; 75]).unwrap();
        assert!(matches!(s.ops(), [Op::PushBytes(d), Op::Drop, Op::PushNum1] if d.len() == 75));
        let s = build_data_script(&[7u8; 76]).unwrap();
        assert!(matches!(s.ops(), [Op::PushData1(d), Op::Drop, Op::PushNum1] if d.len() == 76));
        let s = build_data_script(&[7u8; 255]).unwrap();
        assert!(matches!(s.ops(), [Op::PushData1(_), Op::Drop, Op::PushNum1]));
        let s = build_data_script(&[7u8; 256]).unwrap();
        assert!(matches!(s.ops(), [Op::PushData2(d), Op::Drop, Op::PushNum1] if d.len() == 256));
    }

    #[test]
    fn two_chunk_script_for_529_bytes() {
        let s = build_data_script(&[1u8; 529]).unwrap();
        match s.ops() {
            [Op::PushData2(a), Op::Drop, Op::PushBytes(b), Op::Drop, Op::PushNum1] => {
                assert_eq!(a.len(), 520);
                assert_eq!(b.len(), 9);
            }
            other => panic!("unexpected layout {other:?}"),
        }
        // 3 + 520 + 1 + 1 + 9 + 1 + 1
        assert_eq!(s.to_bytes().len(), 536);
    }

    #[test]
    fn empty_and_oversized_data() {
        assert_eq!(build_data_script(&[]), Err(ScriptError::EmptyData));
        assert_eq!(build_data_script_with_limit(&[0u8; 11], 10), Err(ScriptError::DataTooLarge { len: 11, max: 10 }));
    }

    #[test]
    fn checksig_anywhere_is_foreign() {
        let mut ops = build_data_script(b"hello").unwrap().ops().to_vec();
        ops.insert(2, Op::Other(OP_CHECKSIG));
        let s = Script::from_ops(ops).unwrap();
        assert_eq!(parse_data_script(&s), Err(ScriptError::ForeignOpcode(OP_CHECKSIG)));

        let s = Script::from_ops(vec![Op::Other(OP_CHECKSIG)]).unwrap();
        assert_eq!(parse_data_script(&s), Err(ScriptError::ForeignOpcode(OP_CHECKSIG)));
    }

    #[test]
    fn structure_violations() {
        let s = Script::from_ops(vec![Op::push(b"abc"), Op::Drop]).unwrap();
        assert!(matches!(parse_data_script(&s), Err(ScriptError::MalformedStructure(_))));
        let s = Script::from_ops(vec![Op::push(b"abc"), Op::push(b"def"), Op::PushNum1]).unwrap();
        assert!(matches!(parse_data_script(&s), Err(ScriptError::MalformedStructure(_))));
        let s = Script::from_ops(vec![Op::PushNum1]).unwrap();
        assert!(matches!(parse_data_script(&s), Err(ScriptError::MalformedStructure(_))));
        let s = Script::from_ops(vec![Op::PushNum1, Op::Drop, Op::push(b"a"), Op::Drop, Op::PushNum1]).unwrap();
        assert!(matches!(parse_data_script(&s), Err(ScriptError::MalformedStructure(_))));
    }

    #[test]
    fn op_return_limits() {
        let s = build_op_return_script(&[9u8; 78]).unwrap();
        // OP_RETURN OP_PUSHDATA1 0x4e <78 bytes>
        assert_eq!(s.to_bytes().len(), 81);
        assert!(build_op_return_script(&[0u8; 80]).is_ok());
        assert_eq!(build_op_return_script(&[0u8; 81]), Err(ScriptError::PayloadTooLarge(81)));
        let back = Script::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn single_key_multisig_is_checksig() {
        let s = build_multisig_leaf_script(&[key(1)], 1).unwrap();
        assert_eq!(s.ops().len(), 2);
        assert_eq!(s.ops()[1], Op::Other(OP_CHECKSIG));
        assert_eq!(s.len(), 34);
    }

    #[test]
    fn four_of_five() {
        let keys: Vec<_> = (1..=5).map(key).collect();
        let s = build_multisig_leaf_script(&keys, 4).unwrap();
        let pushes = s.ops().iter().filter(|o| matches!(o, Op::PushBytes(d) if d.len() == 32)).count();
        assert_eq!(pushes, 5);
        assert_eq!(s.ops()[s.ops().len() - 2], Op::Other(0x54));
        assert_eq!(s.len(), 34 * 5 + 2);
    }

    #[test]
    fn multisig_errors() {
        let keys = vec![key(1), key(2)];
        assert!(matches!(build_multisig_leaf_script(&keys, 0), Err(ScriptError::BadThreshold { .. })));
        assert!(matches!(build_multisig_leaf_script(&keys, 3), Err(ScriptError::BadThreshold { .. })));
        assert_eq!(build_multisig_leaf_script(&[key(1), key(1)], 1), Err(ScriptError::DuplicateKey(key(1))));
    }

    #[test]
    fn threshold_pushes() {
        assert_eq!(push_small_int(16), Op::Other(0x60));
        assert_eq!(push_small_int(17), Op::PushBytes(vec![17]));
        assert_eq!(push_small_int(67), Op::PushBytes(vec![67]));
        assert_eq!(push_small_int(128), Op::PushBytes(vec![0x80, 0x00]));
    }

    #[test]
    fn non_minimal_push_rejected() {
        // OP_PUSHDATA1 carrying 3 bytes
        assert!(matches!(Script::from_bytes(&[OP_PUSHDATA1, 3, 1, 2, 3]), Err(ScriptError::NonMinimalPush { .. })));
        assert!(matches!(Script::from_bytes(&[0x05, 1, 2]), Err(ScriptError::Truncated(0))));
    }

    #[test]
    fn parse_raw_data_script() {
        let data = vec![3u8; 600];
        let bytes = build_data_script(&data).unwrap().to_bytes();
        assert_eq!(parse_data_script_bytes(&bytes).unwrap(), data);
        assert_eq!(
            parse_data_script_bytes(&[OP_PUSHDATA4, 1, 0, 0, 0, 1]),
            Err(ScriptError::ForeignOpcode(OP_PUSHDATA4))
        );
    }
}
