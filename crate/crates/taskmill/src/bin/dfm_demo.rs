//! The distributed-list demo: a read → select → statistics → histogram
//! pipeline over synthetic scored records, run bulk-synchronously on
//! in-process ranks, narrated with per-phase timings.

use anyhow::Result;
use clap::Parser;

use taskmill::dfm::demo::{narrate, run_demo};

#[derive(Parser)]
#[command(
    name = "dfm-demo",
    about = "Bulk-synchronous distributed-list pipeline on simulated ranks"
)]
struct Cli {
    /// Simulated ranks to run the pipeline on
    #[arg(long)]
    ranks: usize,
    /// Synthetic input files to read (two 24-record batches each)
    #[arg(long)]
    n: u64,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    anyhow::ensure!(cli.ranks >= 1, "need at least one rank");
    anyhow::ensure!(cli.n >= 1, "need at least one file");
    let report = run_demo(cli.ranks, cli.n);
    print!("{}", narrate(&report));
    println!(
        "phase timings: read {:.3}s, stats {:.3}s, histogram {:.3}s",
        report.read_secs, report.stat_secs, report.hist_secs
    );
    Ok(())
}
