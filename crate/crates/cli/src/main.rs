use clap::Parser;

fn main() -> anyhow::Result<()> {
    let out = btc_ipc_cli::run(btc_ipc_cli::Cli::parse())?;
    print!("{out}");
    Ok(())
}
