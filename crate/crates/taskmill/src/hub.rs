//! The network service exposing a [`graphstore::Store`] over the wire
//! protocol, plus a message-forwarding relay and a blocking client.
//!
//! Connection I/O is handled by one reader and one writer thread per
//! connection, but every graphstore mutation funnels through a single
//! serialized applier loop; responses are posted back to per-connection
//! ordered outboxes. That gives each connection exactly one response per
//! request, in request order, while letting clients pipeline requests.
//!
//! The relay ([`relay::relay`]) multiplexes many downstream connections
//! over one upstream connection — the answer to connection fan-in when
//! thousands of workers would otherwise hammer one listener. Relays chain:
//! a client behaves identically pointed at a hub, a relay, or a relay's
//! relay.

use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::graphstore::{SnapshotError, StealOutcome, Store};
use crate::wire::{Message, DEFAULT_FRAME_CAP};

pub mod client;
pub mod delay;
pub mod framed;
pub mod relay;

pub use client::{ClientError, HubClient};

/// How the hub serves.
#[derive(Debug, Clone)]
pub struct HubConfig {
    /// host:port to listen on; port 0 picks a free one.
    pub listen: String,
    /// Database file. Restored on startup when it exists; written on
    /// shutdown and every `snapshot_interval`.
    pub snapshot_path: Option<PathBuf>,
    /// Zero means snapshot only on shutdown.
    pub snapshot_interval: Duration,
    /// Per-frame octet cap.
    pub frame_cap: u32,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            listen: "127.0.0.1:0".into(),
            snapshot_path: None,
            snapshot_interval: Duration::ZERO,
            frame_cap: DEFAULT_FRAME_CAP,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error("hub I/O: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// One unit of work for the applier loop: either a decoded request to
/// apply, or a pre-formed reply (connection-level errors) that is routed
/// through the applier so it cannot overtake responses still in flight
/// for the same connection.
enum Event {
    Request {
        tag: Option<u32>,
        msg: Message,
        reply: Sender<(Option<u32>, Message)>,
    },
    Reply {
        tag: Option<u32>,
        msg: Message,
        reply: Sender<(Option<u32>, Message)>,
    },
}

/// Live connections, so shutdown can unblock their reader threads.
#[derive(Clone, Default)]
struct Registry {
    conns: Arc<Mutex<Vec<(u64, TcpStream)>>>,
    next: Arc<AtomicU64>,
}

impl Registry {
    fn add(&self, stream: &TcpStream) -> u64 {
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        if let Ok(clone) = stream.try_clone() {
            self.conns.lock().unwrap().push((id, clone));
        }
        id
    }

    fn remove(&self, id: u64) {
        self.conns.lock().unwrap().retain(|(i, _)| *i != id);
    }

    fn close_all(&self) {
        let mut conns = self.conns.lock().unwrap();
        for (_, c) in conns.iter() {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
        conns.clear();
    }
}

/// A running hub. Dropping the handle leaves the hub running (detached);
/// call [`HubHandle::shutdown`] for an orderly stop with a final snapshot.
pub struct HubHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    registry: Registry,
    accept: JoinHandle<()>,
    applier: JoinHandle<Result<(), HubError>>,
}

impl HubHandle {
    /// The bound listen address (useful with port 0).
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting, close live connections, flush a final snapshot.
    pub fn shutdown(self) -> Result<(), HubError> {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        let _ = self.accept.join();
        self.registry.close_all();
        self.applier
            .join()
            .unwrap_or_else(|_| Err(HubError::Io(io::Error::other("applier panicked"))))
    }
}

/// Serve a hub until [`HubHandle::shutdown`].
///
/// Restores the snapshot file when one exists at the configured path;
/// refuses to start when it exists but does not restore.
pub fn serve(cfg: HubConfig) -> Result<HubHandle, HubError> {
    let store = match &cfg.snapshot_path {
        Some(path) if path.exists() => {
            let mut reader = BufReader::new(std::fs::File::open(path)?);
            Store::restore(&mut reader)?
        }
        _ => Store::new(),
    };
    let listener = TcpListener::bind(&cfg.listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry = Registry::default();
    let (tx, rx) = mpsc::channel::<Event>();

    let applier = {
        let cfg = cfg.clone();
        thread::spawn(move || applier_loop(store, rx, &cfg))
    };
    let accept = {
        let stop = Arc::clone(&stop);
        let registry = registry.clone();
        let cap = cfg.frame_cap;
        thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let id = registry.add(&stream);
                let tx = tx.clone();
                let registry = registry.clone();
                thread::spawn(move || {
                    connection_loop(stream, tx, cap);
                    registry.remove(id);
                });
            }
        })
    };
    Ok(HubHandle {
        addr,
        stop,
        registry,
        accept,
        applier,
    })
}

/// The one place graphstore mutations happen. Serializing here is the
/// whole concurrency story: readers decode in parallel, the store stays
/// single-threaded.
fn applier_loop(
    mut store: Store,
    rx: Receiver<Event>,
    cfg: &HubConfig,
) -> Result<(), HubError> {
    let interval = cfg.snapshot_interval;
    let periodic = cfg.snapshot_path.is_some() && !interval.is_zero();
    let mut next_snapshot = Instant::now() + interval;
    loop {
        let event = if periodic {
            match rx.recv_timeout(next_snapshot.saturating_duration_since(Instant::now())) {
                Ok(ev) => Some(ev),
                Err(RecvTimeoutError::Timeout) => {
                    write_snapshot(&store, cfg)?;
                    next_snapshot = Instant::now() + interval;
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => None,
            }
        } else {
            rx.recv().ok()
        };
        match event {
            Some(Event::Request { tag, msg, reply }) => {
                let resp = apply(&mut store, msg);
                // A vanished connection is not an error; the store mutation
                // already happened and recovery is the client's problem.
                let _ = reply.send((tag, resp));
            }
            Some(Event::Reply { tag, msg, reply }) => {
                let _ = reply.send((tag, msg));
            }
            // All connection senders dropped: the hub is shutting down.
            None => break,
        }
    }
    write_snapshot(&store, cfg)
}

fn write_snapshot(store: &Store, cfg: &HubConfig) -> Result<(), HubError> {
    let Some(path) = &cfg.snapshot_path else {
        return Ok(());
    };
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp)?;
    store.snapshot(&mut file)?;
    file.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Map one request onto the store. Errors become `ErrResp`; response
/// kinds arriving as requests are protocol violations worth a message of
/// their own.
fn apply(store: &mut Store, msg: Message) -> Message {
    fn done(result: Result<(), crate::graphstore::StoreError>) -> Message {
        match result {
            Ok(()) => Message::OkResp,
            Err(e) => Message::ErrResp {
                message: e.to_string(),
            },
        }
    }
    match msg {
        Message::CreateReq { task, deps } => done(store.create(task, &deps)),
        Message::StealReq { worker, n } => match store.steal(&worker, n as usize) {
            StealOutcome::Tasks(tasks) => Message::TasksResp { tasks },
            StealOutcome::NotFound => Message::NotFoundResp,
            StealOutcome::Exit => Message::ExitResp,
        },
        Message::CompleteReq { worker, task, ok } => done(store.complete(&worker, &task, ok)),
        Message::TransferReq {
            worker,
            task,
            new_deps,
        } => done(store.transfer(&worker, &task, &new_deps)),
        Message::ExitReq { worker } => {
            store.exit_worker(&worker);
            Message::OkResp
        }
        Message::StatReq => Message::StatResp {
            counts: store.stats(),
        },
        other => Message::ErrResp {
            message: format!("expected a request, got {:?} response kind", other.kind()),
        },
    }
}

/// Read frames off one connection and feed the applier; a paired writer
/// thread drains the outbox so responses never block the reader.
fn connection_loop(stream: TcpStream, tx: Sender<Event>, cap: u32) {
    let (out_tx, out_rx) = mpsc::channel::<(Option<u32>, Message)>();
    let writer_stream = match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    };
    let writer = thread::spawn(move || {
        let mut w = writer_stream;
        for (tag, msg) in out_rx {
            if framed::write_message(&mut w, tag, &msg, cap).is_err() {
                break;
            }
        }
        let _ = w.shutdown(std::net::Shutdown::Both);
    });
    let mut reader = BufReader::new(stream);
    loop {
        match framed::read_message(&mut reader, cap) {
            Ok(Some((tag, msg))) => {
                if tx
                    .send(Event::Request {
                        tag,
                        msg,
                        reply: out_tx.clone(),
                    })
                    .is_err()
                {
                    break; // hub shutting down
                }
            }
            Ok(None) => break, // clean EOF
            Err(framed::ReadError::Malformed(detail)) => {
                // One error frame, then the connection closes: a peer that
                // cannot frame correctly cannot be resynchronized.
                let _ = tx.send(Event::Reply {
                    tag: None,
                    msg: Message::ErrResp { message: detail },
                    reply: out_tx.clone(),
                });
                break;
            }
            Err(_) => break, // connection-level I/O failure
        }
    }
    // Dropping the last outbox sender lets the writer flush pending
    // responses (including a final ErrResp) before closing the socket.
    drop(out_tx);
    let _ = writer.join();
}
