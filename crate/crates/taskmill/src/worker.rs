//! The pull-based worker: steal, execute, report — with the next steal
//! request in flight while the current task executes.
//!
//! Two concurrent activities make up a worker: a communicator (this
//! module's main loop) and an executor thread, joined by a bounded handoff
//! queue of depth `prefetch_depth`. The hub answers each connection's
//! requests in order, so the communicator pipelines: it keeps at most one
//! steal outstanding, matches responses to requests positionally, and
//! reports completions as the executor finishes them. With
//! `prefetch_depth = 0` the worker degrades to strict
//! request-execute-report lock-step (useful as the no-overlap baseline).
//!
//! Execution is at-least-once by design: if a worker exits (voluntarily
//! after a failed self-diagnostic, or by operator action on the hub), its
//! assigned tasks return to the ready pool and other workers re-run them.
//! Payloads should therefore tolerate re-execution.

use std::collections::VecDeque;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TrySendError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::hub::{ClientError, HubClient};
use crate::wire::{Message, TaskSpec};

/// What one execution attempt came to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunResult {
    /// Payload succeeded; report `complete(ok)`.
    Ok,
    /// Payload failed but the worker is presumed fine; after a healthy
    /// self-diagnostic this reports `complete(fail)` and carries on.
    TaskError(String),
    /// The worker itself is compromised (cannot even spawn a shell);
    /// hand everything back and exit.
    Fatal(String),
}

/// Self-diagnostic verdict after a task error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnosis {
    Healthy,
    Broken,
}

/// Something that runs payloads. Executors never talk to the hub.
pub trait Executor: Send {
    fn run(&mut self, payload: &str) -> RunResult;
    fn diagnose(&mut self) -> Diagnosis;
}

/// Communicator/executor pipeline shape.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Tasks buffered beyond the one executing; 0 = strict lock-step.
    pub prefetch_depth: usize,
    /// Tasks requested per steal ("Steal n").
    pub batch_n: u32,
    /// (initial, max) wait after an idle NotFound; doubles up to max.
    pub idle_backoff: (Duration, Duration),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prefetch_depth: 1,
            batch_n: 1,
            idle_backoff: (Duration::from_millis(10), Duration::from_secs(1)),
        }
    }
}

/// Exit report of one worker run.
#[derive(Debug, Clone, Default)]
pub struct WorkerSummary {
    pub executed: u64,
    pub succeeded: u64,
    pub failed: u64,
    /// Sum of executor run() durations.
    pub compute: Duration,
    /// Steal request→response round trips, in request order.
    pub steal_rtts: Vec<Duration>,
    /// First execution start / last execution end, for busy-window and
    /// straggler (sync) attribution by the benchmark harness.
    pub first_run_started: Option<Instant>,
    pub last_run_ended: Option<Instant>,
}

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("cannot reach hub: {0}")]
    Connect(#[from] std::io::Error),
    #[error("hub connection lost and reconnection failed: {0}")]
    Disconnected(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// Next idle wait: doubled, capped. Consecutive NotFounds therefore
/// produce non-decreasing waits up to the configured ceiling.
pub fn next_backoff(current: Duration, max: Duration) -> Duration {
    (current * 2).min(max)
}

/// Run until the hub says exit, the executor breaks, or `stop` is set.
///
/// `stop` is the operator interrupt: the executing task finishes and is
/// reported, and prefetched-but-unexecuted tasks are handed back via
/// `transfer` with no new dependencies (re-inserted at the serving end)
/// rather than silently dropped.
pub fn run_loop_ctl(
    hub_addr: &str,
    id: &str,
    exec: impl Executor + 'static,
    cfg: &PipelineConfig,
    stop: &AtomicBool,
) -> Result<WorkerSummary, WorkerError> {
    let client = HubClient::connect(hub_addr)?;
    if cfg.prefetch_depth == 0 {
        strict_loop(client, id, exec, cfg, stop)
    } else {
        pipelined_loop(hub_addr, client, id, exec, cfg, stop)
    }
}

/// [`run_loop_ctl`] without an external interrupt.
pub fn run_loop(
    hub_addr: &str,
    id: &str,
    exec: impl Executor + 'static,
    cfg: &PipelineConfig,
) -> Result<WorkerSummary, WorkerError> {
    run_loop_ctl(hub_addr, id, exec, cfg, &AtomicBool::new(false))
}

/// Result of one executor attempt, reported back to the communicator.
struct ExecDone {
    task: String,
    result: RunResult,
    diagnosis: Option<Diagnosis>,
    started: Instant,
    ended: Instant,
}

/// Everything the communicator can be woken by.
enum Inbound {
    Resp(Message),
    Exec(ExecDone),
    SocketDead(String),
}

/// In-flight requests, matched FIFO against responses.
enum Expect {
    Steal { sent: Instant },
    Report { resent: bool },
    Transfer,
    Exit,
}

fn record(summary: &mut WorkerSummary, done: &ExecDone) {
    summary.executed += 1;
    match done.result {
        RunResult::Ok => summary.succeeded += 1,
        _ => summary.failed += 1,
    }
    summary.compute += done.ended.duration_since(done.started);
    if summary.first_run_started.is_none() {
        summary.first_run_started = Some(done.started);
    }
    summary.last_run_ended = Some(done.ended);
}

/// Strict request-execute-report, one message in flight at a time.
fn strict_loop(
    mut client: HubClient,
    id: &str,
    mut exec: impl Executor,
    cfg: &PipelineConfig,
    stop: &AtomicBool,
) -> Result<WorkerSummary, WorkerError> {
    let mut summary = WorkerSummary::default();
    let (init, max) = cfg.idle_backoff;
    let mut backoff = init;
    let mut send_exit_and_stop = false;
    'outer: loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let sent = Instant::now();
        let outcome = client
            .steal(id, cfg.batch_n.max(1))
            .map_err(client_err)?;
        match outcome {
            crate::graphstore::StealOutcome::Tasks(tasks) => {
                summary.steal_rtts.push(sent.elapsed());
                backoff = init;
                let mut pending: VecDeque<TaskSpec> = tasks.into();
                while let Some(task) = pending.pop_front() {
                    let started = Instant::now();
                    let result = exec.run(&task.payload);
                    let ended = Instant::now();
                    let diagnosis = match result {
                        RunResult::TaskError(_) => Some(exec.diagnose()),
                        _ => None,
                    };
                    record(
                        &mut summary,
                        &ExecDone {
                            task: task.name.clone(),
                            result: result.clone(),
                            diagnosis,
                            started,
                            ended,
                        },
                    );
                    match (result, diagnosis) {
                        (RunResult::Ok, _) => {
                            client.complete(id, &task.name, true).map_err(client_err)?
                        }
                        (RunResult::TaskError(_), Some(Diagnosis::Healthy)) => {
                            client.complete(id, &task.name, false).map_err(client_err)?
                        }
                        // Broken or fatal: stop executing; the exit request
                        // hands pending work back to the hub.
                        _ => {
                            send_exit_and_stop = true;
                            break 'outer;
                        }
                    }
                    if stop.load(Ordering::SeqCst) {
                        // Give unexecuted stolen tasks back, front of queue.
                        for t in pending {
                            client.transfer(id, &t.name, &[]).map_err(client_err)?;
                        }
                        break 'outer;
                    }
                }
            }
            crate::graphstore::StealOutcome::NotFound => {
                thread::sleep(backoff);
                backoff = next_backoff(backoff, max);
            }
            crate::graphstore::StealOutcome::Exit => break,
        }
    }
    if send_exit_and_stop {
        client.exit_worker(id).map_err(client_err)?;
    }
    Ok(summary)
}

fn client_err(e: ClientError) -> WorkerError {
    match e {
        ClientError::Io(e) => WorkerError::Disconnected(e.to_string()),
        ClientError::Closed => WorkerError::Disconnected("hub closed the connection".into()),
        ClientError::Hub(m) => WorkerError::Protocol(format!("hub refused: {m}")),
        ClientError::Protocol(m) => WorkerError::Protocol(m),
    }
}

/// The assembly-line loop: executor thread + socket reader feeding one
/// event queue, communicator keeping a steal in flight while work runs.
fn pipelined_loop(
    hub_addr: &str,
    client: HubClient,
    id: &str,
    exec: impl Executor + 'static,
    cfg: &PipelineConfig,
    stop: &AtomicBool,
) -> Result<WorkerSummary, WorkerError> {
    let depth = cfg.prefetch_depth;
    let batch = cfg.batch_n.max(1);
    let (init_backoff, max_backoff) = cfg.idle_backoff;

    let (inbound_tx, inbound) = mpsc::channel::<Inbound>();
    let mut client = SplitClient::start(client, inbound_tx.clone());

    // Executor thread: bounded handoff in, results out.
    let (work_tx, work_rx) = mpsc::sync_channel::<TaskSpec>(depth);
    let exec_thread = {
        let tx = inbound_tx.clone();
        thread::spawn(move || executor_thread(exec, work_rx, tx))
    };
    let mut work_tx = Some(work_tx);

    let mut summary = WorkerSummary::default();
    let mut buffered: VecDeque<TaskSpec> = VecDeque::new();
    let mut outstanding: VecDeque<Expect> = VecDeque::new();
    let mut unacked_reports: Vec<(String, bool)> = Vec::new();
    let mut in_exec = 0usize; // handed to executor, result not yet seen
    let mut steal_out = false; // one steal in flight at most
    let mut steal_gate = true; // closed by NotFound until new cause to retry
    let mut backoff = init_backoff;
    let mut draining = false; // hub said exit
    let mut stopping = false; // operator said stop
    let mut broke: Option<String> = None; // executor said broken/fatal
    let mut reconnects = 0u32;

    let outcome = 'main: loop {
        if !stopping && stop.load(Ordering::SeqCst) {
            stopping = true;
            // Unexecuted prefetched tasks go back to the serving end.
            for t in buffered.drain(..) {
                if let Err(e) = client.send(&Message::TransferReq {
                    worker: id.into(),
                    task: t.name,
                    new_deps: vec![],
                }) {
                    break 'main Err(WorkerError::Disconnected(e.to_string()));
                }
                outstanding.push_back(Expect::Transfer);
            }
        }

        if broke.is_some() && in_exec == 0 {
            // Tell the hub we are leaving; it reclaims whatever we still
            // hold (including anything buffered and never executed).
            if let Err(e) = client.send(&Message::ExitReq { worker: id.into() }) {
                break 'main Err(WorkerError::Disconnected(e.to_string()));
            }
            outstanding.push_back(Expect::Exit);
            buffered.clear();
            broke = None;
            draining = true;
        }

        // Feed the executor as far as the handoff queue allows.
        if let Some(tx) = &work_tx {
            while let Some(task) = buffered.pop_front() {
                match tx.try_send(task) {
                    Ok(()) => in_exec += 1,
                    Err(TrySendError::Full(task)) => {
                        buffered.push_front(task);
                        break;
                    }
                    Err(TrySendError::Disconnected(task)) => {
                        buffered.push_front(task);
                        break;
                    }
                }
            }
        }

        // Keep the pipeline primed: one steal in flight whenever there is
        // room for its result.
        if !draining
            && !stopping
            && broke.is_none()
            && !steal_out
            && steal_gate
            && buffered.len() + in_exec <= depth
        {
            if let Err(e) = client.send(&Message::StealReq {
                worker: id.into(),
                n: batch,
            }) {
                break 'main Err(WorkerError::Disconnected(e.to_string()));
            }
            outstanding.push_back(Expect::Steal {
                sent: Instant::now(),
            });
            steal_out = true;
        }

        // Done? Everything reported and acknowledged, nothing running.
        if (draining || stopping)
            && outstanding.is_empty()
            && in_exec == 0
            && buffered.is_empty()
        {
            break Ok(());
        }

        // Idle: nothing in flight anywhere — sleep out the backoff, then
        // allow another steal.
        if outstanding.is_empty() && in_exec == 0 && !steal_gate {
            thread::sleep(backoff);
            backoff = next_backoff(backoff, max_backoff);
            steal_gate = true;
            continue;
        }

        match inbound.recv() {
            Ok(Inbound::Exec(done)) => {
                in_exec -= 1;
                record(&mut summary, &done);
                match (&done.result, done.diagnosis) {
                    (RunResult::Ok, _) => {
                        report(&mut client, &mut outstanding, &mut unacked_reports, id, &done.task, true)?;
                        steal_gate = true;
                        backoff = init_backoff;
                    }
                    (RunResult::TaskError(_), Some(Diagnosis::Healthy)) => {
                        report(&mut client, &mut outstanding, &mut unacked_reports, id, &done.task, false)?;
                        steal_gate = true;
                        backoff = init_backoff;
                    }
                    (RunResult::TaskError(_), _) | (RunResult::Fatal(_), _) => {
                        // Executor compromised: stop feeding it.
                        work_tx = None;
                        broke = Some(match &done.result {
                            RunResult::Fatal(m) => m.clone(),
                            RunResult::TaskError(m) => format!("broken after task error: {m}"),
                            RunResult::Ok => unreachable!(),
                        });
                    }
                }
            }
            Ok(Inbound::Resp(msg)) => {
                let Some(expect) = outstanding.pop_front() else {
                    break Err(WorkerError::Protocol(format!(
                        "unsolicited {} response",
                        msg.kind()
                    )));
                };
                match (expect, msg) {
                    (Expect::Steal { sent }, Message::TasksResp { tasks }) => {
                        steal_out = false;
                        summary
                            .steal_rtts
                            .push(Instant::now().duration_since(sent));
                        backoff = init_backoff;
                        steal_gate = true;
                        if stopping {
                            // Arrived after the interrupt: hand them back.
                            for t in tasks {
                                client
                                    .send(&Message::TransferReq {
                                        worker: id.into(),
                                        task: t.name,
                                        new_deps: vec![],
                                    })
                                    .map_err(|e| WorkerError::Disconnected(e.to_string()))?;
                                outstanding.push_back(Expect::Transfer);
                            }
                        } else if draining {
                            // Arrived after our exit request, which the hub
                            // processed later than this steal: the hub has
                            // already reclaimed these assignments, so they
                            // must not be run or buffered here.
                        } else {
                            buffered.extend(tasks);
                        }
                    }
                    (Expect::Steal { .. }, Message::NotFoundResp) => {
                        steal_out = false;
                        steal_gate = false;
                    }
                    (Expect::Steal { .. }, Message::ExitResp) => {
                        steal_out = false;
                        draining = true;
                    }
                    (Expect::Report { .. }, Message::OkResp) => {
                        unacked_reports.remove(0);
                    }
                    (Expect::Report { resent }, Message::ErrResp { message }) => {
                        // A resent report can race a completion the hub
                        // already applied before the reconnect; that
                        // rejection is benign. A first-send rejection is a
                        // real protocol breach.
                        unacked_reports.remove(0);
                        if !resent {
                            break Err(WorkerError::Protocol(format!(
                                "hub refused completion: {message}"
                            )));
                        }
                    }
                    (Expect::Transfer, Message::OkResp | Message::ErrResp { .. }) => {}
                    (Expect::Exit, Message::OkResp | Message::ErrResp { .. }) => {}
                    (_, other) => {
                        break Err(WorkerError::Protocol(format!(
                            "response {} outside the request's legal set",
                            other.kind()
                        )));
                    }
                }
            }
            Ok(Inbound::SocketDead(why)) => {
                // Bounded reconnection; on success, re-send unacknowledged
                // reports (the hub may or may not have applied them).
                reconnects += 1;
                if reconnects > 5 {
                    break Err(WorkerError::Disconnected(why));
                }
                thread::sleep(Duration::from_millis(50 * reconnects as u64));
                match HubClient::connect(hub_addr) {
                    Ok(fresh) => {
                        client.replace(fresh, inbound_tx.clone());
                        outstanding.clear();
                        steal_out = false;
                        steal_gate = true;
                        for (task, ok) in unacked_reports.clone() {
                            client
                                .send(&Message::CompleteReq {
                                    worker: id.into(),
                                    task,
                                    ok,
                                })
                                .map_err(|e| WorkerError::Disconnected(e.to_string()))?;
                            outstanding.push_back(Expect::Report { resent: true });
                        }
                    }
                    Err(_) => {
                        // Try again on the next SocketDead... which will
                        // not come on its own; synthesize one.
                        let _ = inbound_tx.send(Inbound::SocketDead(why));
                    }
                }
            }
            Err(_) => break Err(WorkerError::Disconnected("event sources gone".into())),
        }
    };

    drop(work_tx);
    drop(client);
    let _ = exec_thread.join();
    outcome.map(|()| summary)
}

fn report(
    client: &mut SplitClient,
    outstanding: &mut VecDeque<Expect>,
    unacked: &mut Vec<(String, bool)>,
    id: &str,
    task: &str,
    ok: bool,
) -> Result<(), WorkerError> {
    client
        .send(&Message::CompleteReq {
            worker: id.into(),
            task: task.into(),
            ok,
        })
        .map_err(|e| WorkerError::Disconnected(e.to_string()))?;
    outstanding.push_back(Expect::Report { resent: false });
    unacked.push((task.to_string(), ok));
    Ok(())
}

/// A client split into a send half (owned here) and a reader thread that
/// pumps responses into the shared event queue.
struct SplitClient {
    client: HubClient,
    generation: Arc<AtomicBool>, // flips to retire the old reader
}

impl SplitClient {
    fn start(client: HubClient, tx: Sender<Inbound>) -> Self {
        let mut me = SplitClient {
            client,
            generation: Arc::new(AtomicBool::new(true)),
        };
        me.spawn_reader(tx);
        me
    }

    fn spawn_reader(&mut self, tx: Sender<Inbound>) {
        let mut reader = self
            .client
            .take_reader()
            .expect("fresh client has its reader");
        let live = Arc::clone(&self.generation);
        thread::spawn(move || loop {
            match crate::hub::framed::read_message(&mut reader, crate::wire::DEFAULT_FRAME_CAP) {
                Ok(Some((_, msg))) => {
                    if tx.send(Inbound::Resp(msg)).is_err() {
                        break;
                    }
                }
                Ok(None) => {
                    if live.load(Ordering::SeqCst) {
                        let _ = tx.send(Inbound::SocketDead("hub closed the connection".into()));
                    }
                    break;
                }
                Err(e) => {
                    if live.load(Ordering::SeqCst) {
                        let _ = tx.send(Inbound::SocketDead(e.to_string()));
                    }
                    break;
                }
            }
        });
    }

    fn send(&mut self, msg: &Message) -> std::io::Result<()> {
        self.client.send(msg)
    }

    fn replace(&mut self, fresh: HubClient, tx: Sender<Inbound>) {
        self.generation.store(false, Ordering::SeqCst);
        let _ = self.client.shutdown(); // unblock the retired reader
        self.generation = Arc::new(AtomicBool::new(true));
        self.client = fresh;
        self.spawn_reader(tx);
    }
}

impl Drop for SplitClient {
    fn drop(&mut self) {
        self.generation.store(false, Ordering::SeqCst);
        let _ = self.client.shutdown();
    }
}

fn executor_thread(
    mut exec: impl Executor,
    work: Receiver<TaskSpec>,
    tx: Sender<Inbound>,
) {
    for task in work {
        let started = Instant::now();
        let result = exec.run(&task.payload);
        let ended = Instant::now();
        let diagnosis = match result {
            RunResult::TaskError(_) => Some(exec.diagnose()),
            _ => None,
        };
        if tx
            .send(Inbound::Exec(ExecDone {
                task: task.name,
                result,
                diagnosis,
                started,
                ended,
            }))
            .is_err()
        {
            break;
        }
    }
}

// --- bundled executors -------------------------------------------------

/// Runs payloads in a subordinate shell: exit 0 is success, nonzero is a
/// task error, and failing to spawn a shell at all is fatal.
pub struct ShellExec;

/// Shell-command executor (see [`ShellExec`]).
pub fn shell_executor() -> ShellExec {
    ShellExec
}

impl Executor for ShellExec {
    fn run(&mut self, payload: &str) -> RunResult {
        match Command::new("sh").arg("-c").arg(payload).status() {
            Ok(status) if status.success() => RunResult::Ok,
            Ok(status) => RunResult::TaskError(format!("shell exited with {status}")),
            Err(e) => RunResult::Fatal(format!("cannot spawn shell: {e}")),
        }
    }

    fn diagnose(&mut self) -> Diagnosis {
        match Command::new("sh").arg("-c").arg("true").status() {
            Ok(status) if status.success() => Diagnosis::Healthy,
            _ => Diagnosis::Broken,
        }
    }
}

/// Busy-spin until `d` has elapsed on the monotonic clock.
pub fn busy_spin(d: Duration) {
    let end = Instant::now() + d;
    while Instant::now() < end {
        std::hint::spin_loop();
    }
}

/// Synthetic compute kernel: payload `"<micros> <iters>"` busy-spins the
/// CPU for micros × iters. The benchmark harness uses this as its
/// configurable-duration stand-in for real kernels.
pub struct SpinExec;

/// Busy-spin executor (see [`SpinExec`]).
pub fn spin_executor() -> SpinExec {
    SpinExec
}

fn parse_kernel_payload(payload: &str) -> Result<(u64, u64), String> {
    let mut parts = payload.split_whitespace();
    let micros: u64 = parts
        .next()
        .ok_or("empty payload")?
        .parse()
        .map_err(|e| format!("bad micros: {e}"))?;
    let iters: u64 = parts
        .next()
        .ok_or("missing iteration count")?
        .parse()
        .map_err(|e| format!("bad iters: {e}"))?;
    Ok((micros, iters))
}

impl Executor for SpinExec {
    fn run(&mut self, payload: &str) -> RunResult {
        match parse_kernel_payload(payload) {
            Ok((micros, iters)) => {
                for _ in 0..iters {
                    busy_spin(Duration::from_micros(micros));
                }
                RunResult::Ok
            }
            Err(e) => RunResult::TaskError(e),
        }
    }

    fn diagnose(&mut self) -> Diagnosis {
        Diagnosis::Healthy
    }
}

/// Ask for precise timed waits on the calling thread. Linux grants
/// threads ~50 µs of timer slack by default, which would dominate (and
/// flatten) sub-millisecond sleeping kernels; benchmark math needs a
/// sleep to take roughly as long as requested. Idempotent per thread,
/// best-effort, a no-op off Linux.
pub(crate) fn precise_timed_waits() {
    thread_local! {
        static DONE: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
    }
    DONE.with(|done| {
        if !done.get() {
            done.set(true);
            #[cfg(target_os = "linux")]
            unsafe {
                libc::prctl(libc::PR_SET_TIMERSLACK, 1usize);
            }
        }
    });
}

/// Kernel that *waits* instead of spinning: payload as in [`SpinExec`],
/// but the duration passes in a blocked sleep. This emulates work
/// offloaded to an accelerator — the host thread is idle while the
/// "device" computes — so worker counts beyond the host's core count
/// still weak-scale. The benchmark harness offers it for oversubscribed
/// sweeps.
pub struct WaitExec;

/// Sleeping kernel executor (see [`WaitExec`]).
pub fn wait_executor() -> WaitExec {
    WaitExec
}

impl Executor for WaitExec {
    fn run(&mut self, payload: &str) -> RunResult {
        match parse_kernel_payload(payload) {
            Ok((micros, iters)) => {
                let total = Duration::from_micros(micros) * iters as u32;
                if !total.is_zero() {
                    precise_timed_waits();
                    thread::sleep(total);
                }
                RunResult::Ok
            }
            Err(e) => RunResult::TaskError(e),
        }
    }

    fn diagnose(&mut self) -> Diagnosis {
        Diagnosis::Healthy
    }
}
