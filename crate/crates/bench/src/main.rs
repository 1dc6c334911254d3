use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use btc_ipc_bench::{run_sweep, write_csv, Exec, Sweep, SweepSpec};

/// Measure checkpoint bundle sizes and fees and write one CSV per sweep.
#[derive(Debug, Parser)]
#[command(name = "btc-ipc-bench", version)]
struct Args {
    /// Sweep to run; all of them when omitted.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Vec<Sweep>,
    /// Fee rate in sat/vB.
    #[arg(long, default_value_t = 200)]
    fee_rate: u64,
    #[arg(long, default_value = "bench-plots")]
    out_dir: PathBuf,
    /// Per-transaction size cap in vB.
    #[arg(long, default_value_t = 100_000)]
    max_tx_vbytes: usize,
    /// Evaluate parameter combinations on one thread.
    #[arg(long)]
    sequential: bool,
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    s.parse().map_err(|e: btc_ipc_bench::BenchError| e.to_string())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let sweeps = if args.sweep.is_empty() { Sweep::ALL.to_vec() } else { args.sweep.clone() };
    let exec = if args.sequential { Exec::Sequential } else { Exec::default() };
    for sweep in sweeps {
        let spec = SweepSpec {
            fee_rate_sat_vb: args.fee_rate,
            max_tx_vbytes: args.max_tx_vbytes,
            ..SweepSpec::default_for(sweep)
        };
        let result = run_sweep(sweep, &spec, exec)
            .and_then(|rows| write_csv(&args.out_dir, sweep, &rows).map(|p| (p, rows.len())));
        match result {
            Ok((path, n)) => println!("{sweep}: {n} rows -> {}", path.display()),
            Err(e) => {
                eprintln!("{sweep}: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    ExitCode::SUCCESS
}
