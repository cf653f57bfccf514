//! The hub daemon and its shell-facing sidecars: `serve` runs the
//! task-graph hub, `relay` fans many clients into one upstream
//! connection, and `query` drives a hub from shell scripts.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use taskmill::hub::relay::{relay, RelayConfig};
use taskmill::hub::{serve, HubClient, HubConfig};
use taskmill::wire::{Message, TaskSpec};

#[derive(Parser)]
#[command(name = "hubd", about = "Task-graph hub: daemon, relay, and query client")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve a hub until SIGINT (which flushes a final snapshot)
    Serve {
        /// host:port to listen on (port 0 picks a free one)
        #[arg(long, default_value = "127.0.0.1:7723")]
        listen: String,
        /// Database file: restored on startup, written on shutdown
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Also snapshot every SECS seconds (0 = only on shutdown)
        #[arg(long, value_name = "SECS", default_value_t = 0)]
        snapshot_interval: u64,
    },
    /// Forward many downstream clients over one upstream connection
    Relay {
        /// host:port to listen on (port 0 picks a free one)
        #[arg(long, default_value = "127.0.0.1:7724")]
        listen: String,
        /// The hub (or next relay) to forward to
        #[arg(long, env = "HUB_ADDR")]
        upstream: String,
    },
    /// Interact with a hub from the shell
    Query(QueryCmd),
}

#[derive(Args)]
struct QueryCmd {
    /// Hub (or relay) address
    #[arg(long, env = "HUB_ADDR")]
    hub: String,
    #[command(subcommand)]
    op: QueryOp,
}

#[derive(Subcommand)]
enum QueryOp {
    /// Register a task (its dependencies must already exist)
    Create {
        name: String,
        payload: String,
        /// Names of tasks this one depends on
        deps: Vec<String>,
    },
    /// Report an executed task
    Complete {
        worker: String,
        name: String,
        /// The task succeeded
        #[arg(long, conflicts_with = "fail")]
        ok: bool,
        /// The task failed
        #[arg(long)]
        fail: bool,
    },
    /// Declare a worker gone; its assigned tasks return to the ready pool
    Exit { worker: String },
    /// Print per-state task counts
    Stat,
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_sigint() {
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_sigint as *const () as libc::sighandler_t);
    }
}

fn wait_for_interrupt() {
    while !INTERRUPTED.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hubd: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Serve {
            listen,
            snapshot,
            snapshot_interval,
        } => {
            install_sigint();
            let hub = serve(HubConfig {
                listen,
                snapshot_path: snapshot,
                snapshot_interval: Duration::from_secs(snapshot_interval),
                ..HubConfig::default()
            })
            .context("start hub")?;
            println!("hub listening on {}", hub.addr());
            wait_for_interrupt();
            hub.shutdown().context("orderly shutdown")?;
            println!("hub stopped");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Relay { listen, upstream } => {
            install_sigint();
            let handle = relay(RelayConfig::new(listen, &upstream))
                .with_context(|| format!("relay to {upstream}"))?;
            println!("relay listening on {} for {}", handle.addr(), upstream);
            wait_for_interrupt();
            handle.shutdown();
            println!("relay stopped");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Query(q) => query(q),
    }
}

fn query(q: QueryCmd) -> Result<ExitCode> {
    let mut client = HubClient::connect(&q.hub)
        .with_context(|| format!("connect to hub at {}", q.hub))?;
    let request = match &q.op {
        QueryOp::Create {
            name,
            payload,
            deps,
        } => Message::CreateReq {
            task: TaskSpec::new(name.clone(), payload.clone(), "hubd-query"),
            deps: deps.clone(),
        },
        QueryOp::Complete {
            worker,
            name,
            ok,
            fail,
        } => {
            if *ok == *fail {
                bail!("complete needs exactly one of --ok / --fail");
            }
            Message::CompleteReq {
                worker: worker.clone(),
                task: name.clone(),
                ok: *ok,
            }
        }
        QueryOp::Exit { worker } => Message::ExitReq {
            worker: worker.clone(),
        },
        QueryOp::Stat => Message::StatReq,
    };

    match client.request(&request).context("hub request")? {
        Message::OkResp => {
            println!("ok");
            Ok(ExitCode::SUCCESS)
        }
        Message::StatResp { counts } => {
            println!("waiting {}", counts.waiting);
            println!("ready {}", counts.ready);
            println!("assigned {}", counts.assigned);
            println!("done {}", counts.done);
            println!("errored {}", counts.errored);
            println!("deque {}", counts.deque);
            println!("assignments {}", counts.assignments);
            Ok(ExitCode::SUCCESS)
        }
        Message::ErrResp { message } => {
            eprintln!("hub refused: {message}");
            Ok(ExitCode::FAILURE)
        }
        other => {
            eprintln!("unexpected response: {}", other.kind());
            Ok(ExitCode::FAILURE)
        }
    }
}
