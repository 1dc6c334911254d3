use std::path::Path;
use std::process::Command;

struct Sim {
    dir: tempfile::TempDir,
}

impl Sim {
    fn new() -> Sim {
        let sim = Sim { dir: tempfile::tempdir().unwrap() };
        sim.ok(&["init"]);
        sim
    }

    fn run(&self, args: &[&str]) -> std::process::Output {
        Command::new(env!("CARGO_BIN_EXE_btc-ipc")).env("BTC_IPC_STATE", self.dir.path()).args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert!(out.status.success(), "{args:?}: {}{stdout}", String::from_utf8_lossy(&out.stderr));
        stdout
    }

    fn err(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(!out.status.success(), "{args:?} should fail");
        String::from_utf8(out.stderr).unwrap()
    }

    fn address(&self, wallet: &str) -> String {
        let info = self.ok(&["wallet-info", wallet]);
        info.lines().find_map(|l| l.strip_prefix("address")).unwrap().trim().to_string()
    }

    fn balance(&self, wallet: &str) -> u64 {
        let info = self.ok(&["wallet-info", wallet]);
        let line = info.lines().find_map(|l| l.strip_prefix("balance")).unwrap();
        line.trim().trim_end_matches(" sat").parse().unwrap()
    }

    /// A subnet with four validators that has been activated.
    fn active_subnet(&self, prefix: &str) -> String {
        let vals: Vec<String> = (1..=4).map(|i| format!("{prefix}-v{i}")).collect();
        for w in vals.iter().map(String::as_str).chain([prefix]) {
            self.ok(&["faucet", w, "5000000"]);
        }
        let out = self.ok(&[
            "create",
            "--from",
            prefix,
            "--min-collateral",
            "100000",
            "--min-validators",
            "4",
            "--whitelist",
            &vals.join(","),
            "--checkpoint-period",
            "10",
        ]);
        let id = out.lines().find_map(|l| l.strip_prefix("subnet ")).unwrap().to_string();
        for v in &vals {
            self.ok(&["join", &id, "--from", v, "--collateral", "200000"]);
        }
        assert!(self.ok(&["list"]).contains(&format!("{id}  active")));
        id
    }
}

#[test]
fn init_refuses_to_clobber() {
    let sim = Sim::new();
    assert!(sim.err(&["init"]).contains("--force"));
    sim.ok(&["init", "--force"]);
}

#[test]
fn commands_need_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_btc-ipc"))
        .args(["--state-dir", dir.path().join("none").to_str().unwrap(), "list"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("init"));
}

#[test]
fn lifecycle_through_the_cli() {
    let sim = Sim::new();
    let id = sim.active_subnet("alice");
    let validators = sim.ok(&["list-validators", &id]);
    assert_eq!(validators.lines().count(), 5, "{validators}");

    sim.ok(&[
        "deposit",
        &id,
        "--from",
        "alice",
        "--to",
        "0x1111111111111111111111111111111111111111",
        "--amount",
        "60000",
    ]);
    let before = sim.balance("alice");
    let to = sim.address("alice");
    sim.ok(&["withdraw", &id, &to, "25000"]);
    assert!(Path::new(sim.dir.path()).read_dir().unwrap().any(|e| e
        .unwrap()
        .path()
        .extension()
        .is_some_and(|x| x == "events")));
    let out = sim.ok(&["checkpoint", &id]);
    assert!(out.contains("checkpoint #0"), "{out}");
    assert_eq!(sim.balance("alice"), before + 25000);
    assert!(sim.ok(&["list"]).contains("checkpoints 1"));

    sim.ok(&["stake", &id, "--from", "alice-v1", "--amount", "50000"]);
    sim.ok(&["unstake", &id, "--from", "alice-v2", "--amount", "10000"]);
    sim.ok(&["checkpoint", &id]);
    let validators = sim.ok(&["list-validators", &id]);
    assert!(validators.contains("250000 sat") && validators.contains("190000 sat"), "{validators}");
}

#[test]
fn transfers_between_subnets() {
    let sim = Sim::new();
    let a = sim.active_subnet("alice");
    let b = sim.active_subnet("bob");
    sim.ok(&["deposit", &a, "--from", "alice", "--to", "22".repeat(20).as_str(), "--amount", "100000"]);
    sim.ok(&["checkpoint", &a]);
    sim.ok(&["checkpoint", &b]);
    let dest = "33".repeat(20);
    sim.ok(&["transfer", &a, &b, &dest, "30000"]);
    sim.ok(&["transfer", &a, &b, &dest, "40000"]);
    let out = sim.ok(&["checkpoint", &a]);
    assert!(out.contains("batchTransferTx"), "{out}");
    assert!(out.contains("2 transfers (70000 sat)"), "{out}");
}

#[test]
fn event_scripts_replay() {
    let sim = Sim::new();
    let id = sim.active_subnet("carol");
    sim.ok(&["deposit", &id, "--from", "carol", "--to", "44".repeat(20).as_str(), "--amount", "90000"]);
    let to = sim.address("carol");
    let script = sim.dir.path().join("run.events");
    std::fs::write(
        &script,
        format!("# two rounds\nWITHDRAW {to} 10000\nCHECKPOINT\nWITHDRAW {to} 15000\nCHECKPOINT\nWITHDRAW {to} 5000\n"),
    )
    .unwrap();
    let before = sim.balance("carol");
    let out = sim.ok(&["run-script", &id, script.to_str().unwrap()]);
    assert!(out.contains("checkpoint 2"), "{out}");
    assert_eq!(sim.balance("carol"), before + 25000);
    sim.ok(&["checkpoint", &id]);
    assert_eq!(sim.balance("carol"), before + 30000);
}

#[test]
fn kill_by_vote() {
    let sim = Sim::new();
    let id = sim.active_subnet("dave");
    sim.ok(&["checkpoint", &id]);
    sim.ok(&["kill-propose", &id, "--from", "dave-v1"]);
    sim.ok(&["kill-vote", &id, "--from", "dave-v2"]);
    let out = sim.ok(&["kill-vote", &id, "--from", "dave-v3"]);
    assert!(out.contains("toBeKilled"), "{out}");
    assert!(sim.ok(&["list"]).contains("toBeKilled"));
}

#[test]
fn fee_schedule_and_bad_input() {
    let sim = Sim::new();
    let sched = sim.dir.path().join("fees.csv");
    std::fs::write(&sched, "block_height,sat_per_vb\n0,5\n").unwrap();
    sim.ok(&["faucet", "erin", "1000000"]);
    sim.ok(&["--fee-schedule", sched.to_str().unwrap(), "mine", "2"]);
    assert!(sim.err(&["list-validators", "/b4/t410fnope"]).contains("subnet"));
    assert!(sim.err(&["deposit", "/b4/t410fnope", "--from", "erin", "--to", "zz", "--amount", "1"]).contains("zz"));
}
