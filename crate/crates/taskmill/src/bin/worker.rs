//! A pull-based worker: steals tasks from a hub, executes them (with the
//! next steal in flight while the current task runs), and reports back.
//! SIGINT finishes the executing task, hands prefetched tasks back, and
//! exits with a summary.

use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use taskmill::worker::{
    run_loop_ctl, shell_executor, spin_executor, PipelineConfig, WorkerSummary,
};

#[derive(Parser)]
#[command(name = "worker", about = "Pull-based task executor for a taskmill hub")]
struct Cli {
    /// Hub (or relay) address
    #[arg(long, env = "HUB_ADDR")]
    hub: String,
    /// Worker name the hub tracks assignments under
    #[arg(long, default_value_t = default_id())]
    id: String,
    /// Tasks buffered beyond the one executing (0 = strict lock-step)
    #[arg(long, default_value_t = 1)]
    prefetch: usize,
    /// Tasks requested per steal
    #[arg(long, default_value_t = 1)]
    batch: u32,
    /// How payloads run: a subordinate shell, or the busy-spin kernel
    /// (payload "<micros> <iters>")
    #[arg(long, value_enum, default_value_t = ExecKind::Shell)]
    exec: ExecKind,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecKind {
    Shell,
    Spin,
}

fn default_id() -> String {
    format!("worker-{}", std::process::id())
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("worker: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_sigint as *const () as libc::sighandler_t);
    }
    let cfg = PipelineConfig {
        prefetch_depth: cli.prefetch,
        batch_n: cli.batch,
        ..PipelineConfig::default()
    };
    let summary = match cli.exec {
        ExecKind::Shell => run_loop_ctl(&cli.hub, &cli.id, shell_executor(), &cfg, &INTERRUPTED),
        ExecKind::Spin => run_loop_ctl(&cli.hub, &cli.id, spin_executor(), &cfg, &INTERRUPTED),
    }
    .with_context(|| format!("worker {} against hub {}", cli.id, cli.hub))?;
    report(&cli.id, &summary);
    Ok(())
}

fn report(id: &str, s: &WorkerSummary) {
    let mut rtts: Vec<f64> = s.steal_rtts.iter().map(|d| d.as_secs_f64()).collect();
    rtts.sort_by(f64::total_cmp);
    let median_rtt = rtts.get(rtts.len() / 2).copied().unwrap_or(0.0);
    println!(
        "{id}: executed {} ({} ok, {} failed), compute {:.3}s, median steal rtt {:.1}µs",
        s.executed,
        s.succeeded,
        s.failed,
        s.compute.as_secs_f64(),
        median_rtt * 1e6,
    );
}
