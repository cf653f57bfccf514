//! Benchmark harness CLI: sweep task durations across worker counts for a
//! chosen scheduler, compute METG per worker count, fit the scaling law,
//! and emit `results.csv`, `summary.txt`, and `metg.json`.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use taskmill::metg::{
    default_iterations, emit_report, run_bench, BenchRequest, Kernel, Scheduler, ScriptKernel,
};
use taskmill::worker::busy_spin;

#[derive(Parser)]
#[command(name = "metgbench", about = "Scheduler overhead and METG benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a duration sweep and write the report files.
    Run {
        /// Scheduler to exercise: graph | bsp | filemake
        #[arg(long)]
        scheduler: Scheduler,
        /// Worker counts to sweep, comma separated (e.g. 1,2,4,8)
        #[arg(long, value_delimiter = ',', required = true)]
        workers: Vec<usize>,
        /// Per-kernel durations in microseconds, comma separated, increasing
        #[arg(long, value_delimiter = ',', required = true)]
        durations: Vec<f64>,
        /// Kernel executions per worker at every sweep point
        #[arg(long, default_value_t = 1024)]
        tasks_per_worker: u64,
        /// Kernel executions bundled into one task (default: 256, bsp: 1)
        #[arg(long)]
        iters: Option<u64>,
        /// Repeats per sweep point
        #[arg(long, default_value_t = 3)]
        repeats: u32,
        /// Kernel body: spin (busy CPU) | wait (timed sleep)
        #[arg(long, default_value = "spin")]
        kernel: Kernel,
        /// Directory for results.csv, summary.txt, metg.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Busy-spin for MICROS microseconds, ITERS times (script kernel body).
    #[command(name = "spin-kernel", hide = true)]
    SpinKernel { micros: u64, iters: u64 },
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run {
            scheduler,
            workers,
            durations,
            tasks_per_worker,
            iters,
            repeats,
            kernel,
            out,
        } => {
            for d in &durations {
                anyhow::ensure!(d.is_finite() && *d >= 0.0, "bad duration {d} µs");
            }
            let mut req = BenchRequest::new(
                scheduler,
                workers,
                durations
                    .iter()
                    .map(|micros| Duration::from_secs_f64(micros / 1e6))
                    .collect(),
            );
            req.tasks_per_worker = tasks_per_worker;
            req.iterations_per_task = iters.unwrap_or_else(|| default_iterations(scheduler));
            req.repeats = repeats;
            req.kernel = kernel;
            req.script_kernel = script_kernel_for(kernel)?;

            let outcome = run_bench(&req)?;
            let paths = emit_report(&outcome, &out)?;
            let summary = std::fs::read_to_string(&paths.summary)
                .with_context(|| format!("reading back {}", paths.summary.display()))?;
            print!("{summary}");
            println!(
                "wrote {}, {}, {}",
                paths.csv.display(),
                paths.summary.display(),
                paths.json.display()
            );
            Ok(())
        }
        Cmd::SpinKernel { micros, iters } => {
            for _ in 0..iters {
                busy_spin(Duration::from_micros(micros));
            }
            Ok(())
        }
    }
}

/// Filemake scripts call back into this binary's hidden spin-kernel
/// subcommand when a busy-CPU kernel is requested; a wait kernel maps to
/// the portable `sleep` form.
fn script_kernel_for(kernel: Kernel) -> Result<ScriptKernel> {
    Ok(match kernel {
        Kernel::Wait => ScriptKernel::Sleep,
        Kernel::Spin => {
            let exe = std::env::current_exe().context("locating own executable")?;
            ScriptKernel::Command(vec![
                exe.to_string_lossy().into_owned(),
                "spin-kernel".into(),
                "{micros}".into(),
                "{iters}".into(),
            ])
        }
    })
}
