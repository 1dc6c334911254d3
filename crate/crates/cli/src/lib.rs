//! `btc-ipc`: drive subnets on a simulated chain kept in a state directory.
//!
//! The directory holds `chain.bin` and `registry.bin` snapshots plus one
//! `<subnet>.events` file per subnet with transfers and withdrawals queued
//! for its next checkpoint. Wallets are derived from their names.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use btc_ipc::address::{parse_subnet_id, BtcAddress, Root, SubnetId, UserAddress};
use btc_ipc::chain::SimChain;
use btc_ipc::codec::SubnetParams;
use btc_ipc::events::{group_by_checkpoint, parse_event_script, CheckpointEvents, ScriptEvent};
use btc_ipc::fees::ScheduledFeeOracle;
use btc_ipc::keys::XOnlyPublicKey;
use btc_ipc::monitor::{MonitorEvent, Registry};
use btc_ipc::node::{CycleReport, Node};

const CHAIN_FILE: &str = "chain.bin";
const REGISTRY_FILE: &str = "registry.bin";

#[derive(Debug, Parser)]
#[command(name = "btc-ipc", version, about = "Bitcoin-anchored IPC subnets on a simulated chain")]
pub struct Cli {
    /// Directory holding the simulation state.
    #[arg(long, global = true, env = "BTC_IPC_STATE", default_value = ".btc-ipc")]
    pub state_dir: PathBuf,
    /// Constant fee rate in sat/vB.
    #[arg(long, global = true, default_value_t = 1)]
    pub fee_rate: u64,
    /// CSV of block_height,sat_per_vb; overrides --fee-rate.
    #[arg(long, global = true)]
    pub fee_schedule: Option<PathBuf>,
    /// Leave submitted transactions in the mempool instead of mining a block.
    #[arg(long, global = true)]
    pub no_mine: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start a fresh simulation.
    Init {
        #[arg(long, default_value = "b4")]
        root: Root,
        /// Replace existing state.
        #[arg(long)]
        force: bool,
    },
    /// Credit a wallet out of thin air.
    Faucet { wallet: String, amount: u64 },
    /// Mine blocks and print what the monitor saw.
    Mine {
        #[arg(default_value_t = 1)]
        blocks: u64,
    },
    /// Key, address and balance of a wallet.
    WalletInfo { wallet: String },
    /// Create a subnet.
    Create {
        #[arg(long = "from")]
        creator: String,
        #[arg(long)]
        min_collateral: u64,
        #[arg(long)]
        min_validators: u64,
        /// Comma-separated x-only keys (hex) or wallet names.
        #[arg(long, value_delimiter = ',', required = true)]
        whitelist: Vec<String>,
        /// Subnet blocks between checkpoints.
        #[arg(long)]
        checkpoint_period: u64,
        #[arg(long, default_value_t = 100)]
        active_validators_limit: u64,
        #[arg(long, default_value_t = 1)]
        min_cross_msg_fee: u64,
    },
    /// Join a subnet as a validator.
    Join {
        subnet: String,
        #[arg(long = "from")]
        validator: String,
        #[arg(long)]
        collateral: u64,
        /// Where collateral goes back when the subnet is killed.
        #[arg(long)]
        backup_address: Option<String>,
    },
    /// Leave a subnet, effective at the next checkpoint.
    Leave {
        subnet: String,
        #[arg(long = "from")]
        validator: String,
    },
    /// Add collateral.
    Stake {
        subnet: String,
        #[arg(long = "from")]
        validator: String,
        #[arg(long)]
        amount: u64,
    },
    /// Withdraw part of the collateral.
    Unstake {
        subnet: String,
        #[arg(long = "from")]
        validator: String,
        #[arg(long)]
        amount: u64,
    },
    /// Lock BTC in the subnet for a subnet account.
    Deposit {
        subnet: String,
        #[arg(long = "from")]
        user: String,
        /// 20-byte subnet account, hex.
        #[arg(long)]
        to: UserAddress,
        #[arg(long)]
        amount: u64,
    },
    /// Queue a withdrawal to L1 for the next checkpoint.
    Withdraw { subnet: String, address: String, amount: u64 },
    /// Queue a transfer to another subnet for the next checkpoint.
    Transfer { subnet: String, target: String, destination: UserAddress, amount: u64 },
    /// Run one checkpoint with everything queued.
    Checkpoint {
        subnet: String,
        /// Relayers racing to submit the bundle.
        #[arg(long, default_value_t = 1)]
        relayers: usize,
    },
    /// Replay an event script, one checkpoint per CHECKPOINT line.
    RunScript { subnet: String, file: PathBuf },
    /// Propose shutting the subnet down.
    KillPropose {
        subnet: String,
        #[arg(long = "from")]
        validator: String,
    },
    /// Vote for a pending kill proposal.
    KillVote {
        subnet: String,
        #[arg(long = "from")]
        validator: String,
    },
    /// All subnets.
    List,
    /// Validators of the current configuration.
    ListValidators { subnet: String },
}

/// Loaded simulation state.
pub struct State {
    dir: PathBuf,
    pub node: Node,
}

impl State {
    pub fn init(dir: &Path, root: Root, force: bool) -> Result<State> {
        if dir.join(CHAIN_FILE).exists() && !force {
            bail!("{} already holds a simulation; pass --force to replace it", dir.display());
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "events") {
                fs::remove_file(path)?;
            }
        }
        let state = State { dir: dir.to_path_buf(), node: Node::new(SimChain::default(), Registry::new(root)) };
        state.save()?;
        Ok(state)
    }

    pub fn load(dir: &Path) -> Result<State> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).with_context(|| format!("reading {} (run `btc-ipc init` first)", path.display()))
        };
        let chain = SimChain::from_snapshot(&read(CHAIN_FILE)?).context("chain snapshot")?;
        let registry = Registry::from_snapshot(&read(REGISTRY_FILE)?).context("registry snapshot")?;
        Ok(State { dir: dir.to_path_buf(), node: Node::new(chain, registry) })
    }

    pub fn save(&self) -> Result<()> {
        fs::write(self.dir.join(CHAIN_FILE), self.node.chain.to_snapshot())?;
        fs::write(self.dir.join(REGISTRY_FILE), self.node.registry.to_snapshot())?;
        Ok(())
    }

    fn queue_path(&self, subnet: &SubnetId) -> PathBuf {
        self.dir.join(format!("{}.events", hex::encode(subnet.address().0)))
    }

    pub fn queue(&self, subnet: &SubnetId, event: &ScriptEvent) -> Result<()> {
        use std::io::Write;
        let mut f = fs::OpenOptions::new().create(true).append(true).open(self.queue_path(subnet))?;
        writeln!(f, "{event}")?;
        Ok(())
    }

    pub fn queued(&self, subnet: &SubnetId) -> Result<CheckpointEvents> {
        let path = self.queue_path(subnet);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(CheckpointEvents::default()),
            Err(e) => return Err(e.into()),
        };
        let events = parse_event_script(&text, self.node.network()).with_context(|| path.display().to_string())?;
        Ok(group_by_checkpoint(&events).1)
    }

    fn clear_queue(&self, subnet: &SubnetId) -> Result<()> {
        match fs::remove_file(self.queue_path(subnet)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    fn subnet(&self, s: &str) -> Result<SubnetId> {
        let id = parse_subnet_id(s).with_context(|| format!("bad subnet id {s:?}"))?;
        if self.node.registry.subnet(&id.address()).is_none() {
            bail!("subnet {id} is not registered");
        }
        Ok(id)
    }

    fn key(&self, s: &str) -> XOnlyPublicKey {
        s.parse().unwrap_or_else(|_| self.node.wallet(s).pk())
    }
}

fn events_out(out: &mut String, events: &[MonitorEvent]) {
    for e in events {
        let _ = writeln!(out, "  {e}");
    }
}

fn cycle_out(out: &mut String, r: &CycleReport) {
    let b = &r.bundle;
    let _ = writeln!(out, "checkpointTx {} ({} vB)", b.checkpoint_tx.txid(), b.checkpoint_tx.vbytes());
    if let Some(t) = &b.batch_transfer_tx {
        let _ = writeln!(out, "batchTransferTx {} ({} vB)", t.txid(), t.vbytes());
    }
    for (i, res) in r.relay_results.iter().enumerate() {
        match res {
            Ok(txid) => {
                let _ = writeln!(out, "relayer {i}: submitted {txid}");
            }
            Err(e) => {
                let _ = writeln!(out, "relayer {i}: {e}");
            }
        }
    }
    if let Some(c) = &r.consolidation {
        let _ = writeln!(out, "consolidation {}", c.txid());
    }
    if r.stranded > 0 {
        let _ = writeln!(out, "stranded {} sat under old configurations", r.stranded);
    }
    if let Some(s) = &r.settlement {
        let _ = writeln!(out, "kill settlement {}", s.checkpoint_tx.txid());
    }
    events_out(out, &r.events);
}

/// Execute one command; returns what to print.
pub fn run(cli: Cli) -> Result<String> {
    let mut out = String::new();
    if let Command::Init { root, force } = cli.command {
        State::init(&cli.state_dir, root, force)?;
        let _ = writeln!(out, "initialized {} on {root}", cli.state_dir.display());
        return Ok(out);
    }
    let mut st = State::load(&cli.state_dir)?;
    st.node = std::mem::replace(&mut st.node, Node::new(SimChain::default(), Registry::new(Root::Regtest)))
        .with_fee_rate(cli.fee_rate);
    if let Some(path) = &cli.fee_schedule {
        let f = fs::File::open(path).with_context(|| path.display().to_string())?;
        st.node.fee_oracle = Box::new(ScheduledFeeOracle::from_csv(f)?);
    }
    let mut submitted = true;
    match cli.command {
        Command::Init { .. } => unreachable!("handled above"),
        Command::Faucet { wallet, amount } => {
            let w = st.node.wallet(&wallet);
            let u = st.node.chain.faucet(&w.script_pubkey(), amount);
            let _ = writeln!(out, "{} received {amount} sat in {}:{}", w.address(), u.outpoint.txid, u.outpoint.vout);
            submitted = false;
        }
        Command::Mine { blocks } => {
            let events = st.node.mine(blocks)?;
            let _ = writeln!(out, "height {}", st.node.chain.height());
            events_out(&mut out, &events);
            submitted = false;
        }
        Command::WalletInfo { wallet } => {
            let w = st.node.wallet(&wallet);
            let _ = writeln!(out, "name     {}", w.name);
            let _ = writeln!(out, "pubkey   {}", w.pk());
            let _ = writeln!(out, "address  {}", w.address());
            let _ = writeln!(out, "balance  {} sat", w.balance(&st.node.chain));
            submitted = false;
        }
        Command::Create {
            creator,
            min_collateral,
            min_validators,
            whitelist,
            checkpoint_period,
            active_validators_limit,
            min_cross_msg_fee,
        } => {
            let params = SubnetParams {
                min_collateral,
                min_validators,
                whitelist: whitelist.iter().map(|k| st.key(k)).collect(),
                checkpoint_period,
                active_validators_limit,
                min_cross_msg_fee,
            };
            let w = st.node.wallet(&creator);
            let (id, cr) = st.node.create_subnet(&w, &params)?;
            let _ = writeln!(out, "subnet {id}");
            let _ = writeln!(out, "commit {} reveal {}", cr.commit.txid(), cr.reveal.txid());
        }
        Command::Join { subnet, validator, collateral, backup_address } => {
            let id = st.subnet(&subnet)?;
            let backup = backup_address.map(|a| BtcAddress::parse_for(&a, st.node.network())).transpose()?;
            let w = st.node.wallet(&validator);
            let cr = st.node.join(&w, &id, collateral, backup)?;
            let _ = writeln!(out, "join commit {} reveal {}", cr.commit.txid(), cr.reveal.txid());
        }
        Command::Leave { subnet, validator } => {
            let id = st.subnet(&subnet)?;
            let w = st.node.wallet(&validator);
            let _ = writeln!(out, "leave {}", st.node.leave(&w, &id)?.txid());
        }
        Command::Stake { subnet, validator, amount } => {
            let id = st.subnet(&subnet)?;
            let w = st.node.wallet(&validator);
            let _ = writeln!(out, "stake {}", st.node.stake(&w, &id, amount)?.txid());
        }
        Command::Unstake { subnet, validator, amount } => {
            let id = st.subnet(&subnet)?;
            let w = st.node.wallet(&validator);
            let _ = writeln!(out, "unstake {}", st.node.unstake(&w, &id, amount)?.txid());
        }
        Command::Deposit { subnet, user, to, amount } => {
            let id = st.subnet(&subnet)?;
            let w = st.node.wallet(&user);
            let _ = writeln!(out, "deposit {}", st.node.deposit(&w, &id, to, amount)?.txid());
        }
        Command::Withdraw { subnet, address, amount } => {
            let id = st.subnet(&subnet)?;
            let address = BtcAddress::parse_for(&address, st.node.network())?;
            let e = ScriptEvent::Withdraw { address, amount };
            st.queue(&id, &e)?;
            let _ = writeln!(out, "queued {e}");
            submitted = false;
        }
        Command::Transfer { subnet, target, destination, amount } => {
            let id = st.subnet(&subnet)?;
            let target = st.subnet(&target)?;
            let e = ScriptEvent::Transfer { target, destination, amount };
            st.queue(&id, &e)?;
            let _ = writeln!(out, "queued {e}");
            submitted = false;
        }
        Command::Checkpoint { subnet, relayers } => {
            let id = st.subnet(&subnet)?;
            let events = st.queued(&id)?;
            st.node.relayers = relayers.max(1);
            let report = st.node.run_checkpoint_cycle(&id, &events)?;
            st.clear_queue(&id)?;
            cycle_out(&mut out, &report);
            submitted = false;
        }
        Command::RunScript { subnet, file } => {
            let id = st.subnet(&subnet)?;
            let text = fs::read_to_string(&file).with_context(|| file.display().to_string())?;
            let events = parse_event_script(&text, st.node.network()).with_context(|| file.display().to_string())?;
            let (groups, rest) = group_by_checkpoint(&events);
            let mut pending = st.queued(&id)?;
            for (i, g) in groups.into_iter().enumerate() {
                pending.transfers.extend(g.transfers);
                pending.withdrawals.extend(g.withdrawals);
                let report = st.node.run_checkpoint_cycle(&id, &std::mem::take(&mut pending))?;
                st.clear_queue(&id)?;
                let _ = writeln!(out, "checkpoint {}", i + 1);
                cycle_out(&mut out, &report);
            }
            for (target, destination, amount) in rest.transfers {
                st.queue(&id, &ScriptEvent::Transfer { target, destination, amount })?;
            }
            for (address, amount) in rest.withdrawals {
                st.queue(&id, &ScriptEvent::Withdraw { address, amount })?;
            }
            submitted = false;
        }
        Command::KillPropose { subnet, validator } => {
            let id = st.subnet(&subnet)?;
            let w = st.node.wallet(&validator);
            let _ = writeln!(out, "kill proposal {}", st.node.kill_propose(&w, &id)?.txid());
        }
        Command::KillVote { subnet, validator } => {
            let id = st.subnet(&subnet)?;
            let w = st.node.wallet(&validator);
            let _ = writeln!(out, "kill vote {}", st.node.kill_vote(&w, &id)?.txid());
        }
        Command::List => {
            for rec in st.node.registry.subnets() {
                let _ = writeln!(
                    out,
                    "{}  {}  config {}  validators {}  checkpoints {}  locked {} sat",
                    rec.id,
                    rec.phase,
                    rec.configuration_number(),
                    rec.current_configuration().map_or(0, |c| c.validators.len()),
                    rec.checkpoint_count,
                    rec.owned_value(),
                );
            }
            submitted = false;
        }
        Command::ListValidators { subnet } => {
            let id = st.subnet(&subnet)?;
            let rec = st.node.registry.subnet(&id.address()).expect("checked");
            match rec.current_configuration() {
                Some(c) => {
                    let _ =
                        writeln!(out, "configuration {} ({}-of-{})", c.number, c.signer_count(), c.validators.len());
                    for v in &c.validators {
                        let _ = writeln!(out, "{}  {} sat  backup {}", v.pk, v.weight, v.backup_address);
                    }
                }
                None => {
                    let _ = writeln!(
                        out,
                        "configuration 0 (whitelist, {}-of-{})",
                        rec.whitelist.threshold,
                        rec.whitelist.keys.len()
                    );
                    for k in &rec.whitelist.keys {
                        let _ = writeln!(out, "{k}");
                    }
                }
            }
            submitted = false;
        }
    }
    if submitted && !cli.no_mine {
        let events = st.node.mine(1)?;
        events_out(&mut out, &events);
    }
    st.save()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn queue_survives_reload() {
        let dir = tempfile::tempdir().unwrap();
        let st = State::init(dir.path(), Root::Regtest, false).unwrap();
        let id: SubnetId = "/b4/t410f3zb2eqgmsrbya4zdvs42433kwnueaaodxcvkypq".parse().unwrap();
        let address = st.node.wallet("w").address();
        st.queue(&id, &ScriptEvent::Withdraw { address, amount: 700 }).unwrap();
        let again = State::load(dir.path()).unwrap();
        assert_eq!(again.queued(&id).unwrap().withdrawals.len(), 1);
        again.clear_queue(&id).unwrap();
        assert!(again.queued(&id).unwrap().withdrawals.is_empty());
    }
}
