//! Event scripts: the subnet-side activity replayed between checkpoints.
//!
//! One event per line; `#` starts a comment.
//!
//! ```text
//! TRANSFER <target-subnet-id> <dest-hex> <amount>
//! WITHDRAW <btc-address> <amount>
//! CHECKPOINT
//! ```

use thiserror::Error;

use crate::address::{parse_subnet_id, AddressNetwork, BtcAddress, SubnetId, UserAddress};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct EventScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptEvent {
    Transfer { target: SubnetId, destination: UserAddress, amount: u64 },
    Withdraw { address: BtcAddress, amount: u64 },
    Checkpoint,
}

/// Transfers and withdrawals accumulated for one checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckpointEvents {
    pub transfers: Vec<(SubnetId, UserAddress, u64)>,
    pub withdrawals: Vec<(BtcAddress, u64)>,
}

/// Formats as the script line it parses from.
impl std::fmt::Display for ScriptEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScriptEvent::Transfer { target, destination, amount } => {
                write!(f, "TRANSFER {target} {destination} {amount}")
            }
            ScriptEvent::Withdraw { address, amount } => write!(f, "WITHDRAW {address} {amount}"),
            ScriptEvent::Checkpoint => f.write_str("CHECKPOINT"),
        }
    }
}

impl CheckpointEvents {
    pub fn is_empty(&self) -> bool {
        self.transfers.is_empty() && self.withdrawals.is_empty()
    }
}

pub fn parse_event_script(text: &str, network: AddressNetwork) -> Result<Vec<ScriptEvent>, EventScriptError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| EventScriptError { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let amount = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad amount {s:?}")));
        let event = match fields.as_slice() {
            ["TRANSFER", target, dest, amt] => ScriptEvent::Transfer {
                target: parse_subnet_id(target).map_err(|e| err(e.to_string()))?,
                destination: dest.parse().map_err(|e: crate::address::AddressError| err(e.to_string()))?,
                amount: amount(amt)?,
            },
            ["WITHDRAW", addr, amt] => ScriptEvent::Withdraw {
                address: BtcAddress::parse_for(addr, network).map_err(|e| err(e.to_string()))?,
                amount: amount(amt)?,
            },
            ["CHECKPOINT"] => ScriptEvent::Checkpoint,
            [verb, ..] => return Err(err(format!("unknown or malformed event {verb}"))),
            [] => unreachable!("blank lines are skipped"),
        };
        out.push(event);
    }
    Ok(out)
}

/// Split events at each `CHECKPOINT`. Events after the last marker are
/// returned separately as still pending.
pub fn group_by_checkpoint(events: &[ScriptEvent]) -> (Vec<CheckpointEvents>, CheckpointEvents) {
    let mut groups = Vec::new();
    let mut cur = CheckpointEvents::default();
    for e in events {
        match e {
            ScriptEvent::Transfer { target, destination, amount } => {
                cur.transfers.push((target.clone(), *destination, *amount))
            }
            ScriptEvent::Withdraw { address, amount } => cur.withdrawals.push((address.clone(), *amount)),
            ScriptEvent::Checkpoint => groups.push(std::mem::take(&mut cur)),
        }
    }
    (groups, cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = "\
# two transfers and a withdrawal
TRANSFER /b4/t410fhor637l2pmjle6whfq7go5upmf74qg6dbr4uzei 0x0c0fdb67670e3727482fdfe1322d01fb1a27ff4b 5000
WITHDRAW bcrt1qw508d6qejxtdg4y5r3zarvary0c5xw7kygt080 700

CHECKPOINT
TRANSFER /b4/t410fhor637l2pmjle6whfq7go5upmf74qg6dbr4uzei 0c0fdb67670e3727482fdfe1322d01fb1a27ff4b 1
";

    #[test]
    fn parses_and_groups() {
        let events = parse_event_script(SCRIPT, AddressNetwork::Regtest).unwrap();
        assert_eq!(events.len(), 4);
        let (groups, rest) = group_by_checkpoint(&events);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].transfers.len(), 1);
        assert_eq!(groups[0].withdrawals[0].1, 700);
        assert_eq!(rest.transfers[0].2, 1);
    }

    #[test]
    fn lines_round_trip() {
        let events = parse_event_script(SCRIPT, AddressNetwork::Regtest).unwrap();
        let text: String = events.iter().map(|e| format!("{e}\n")).collect();
        assert_eq!(parse_event_script(&text, AddressNetwork::Regtest).unwrap(), events);
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_event_script("CHECKPOINT\nWITHDRAW nope 5\n", AddressNetwork::Regtest).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_event_script("MINT 1", AddressNetwork::Regtest).is_err());
        assert!(parse_event_script(
            "WITHDRAW bcrt1qw508d6qejxtdg4y5r3zarvary0c5xw7kygt080 -1",
            AddressNetwork::Regtest
        )
        .is_err());
    }
}
