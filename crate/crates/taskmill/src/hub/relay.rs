//! Message-forwarding relay: many downstream connections multiplexed onto
//! one upstream connection.
//!
//! Every downstream connection gets a fresh `ctag`; its frames go upstream
//! wrapped with that tag (replacing — and remembering — any tag an inner
//! relay put there), and the hub echoes tags back on responses, so the
//! relay can route each response to the right downstream connection and
//! restore the inner tag. Because the hub answers in request order per
//! connection, a per-connection FIFO of remembered inner tags suffices.
//!
//! Relays are deliberately stateless about tasks: on upstream loss the
//! relay just drops every downstream connection. Workers reconnect and
//! re-steal; nothing is lost because assignments live in the hub and
//! worker-exit recovery covers the rest.

use std::collections::{HashMap, VecDeque};
use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::{framed, HubError, Registry};
use crate::wire::{Message, DEFAULT_FRAME_CAP};

/// How the relay forwards.
#[derive(Debug, Clone)]
pub struct RelayConfig {
    /// host:port to listen on; port 0 picks a free one.
    pub listen: String,
    /// The hub (or next relay) to forward to.
    pub upstream: String,
    pub frame_cap: u32,
}

impl RelayConfig {
    pub fn new(listen: impl Into<String>, upstream: impl Into<String>) -> Self {
        RelayConfig {
            listen: listen.into(),
            upstream: upstream.into(),
            frame_cap: DEFAULT_FRAME_CAP,
        }
    }
}

/// Responses owed to one downstream connection.
struct Route {
    outbox: Sender<(Option<u32>, Message)>,
    /// Inner tags of in-flight requests, restored FIFO as responses land.
    pending: VecDeque<Option<u32>>,
}

/// A running relay. As with the hub, dropping the handle detaches it.
pub struct RelayHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    registry: Registry,
    upstream: TcpStream,
    accept: JoinHandle<()>,
}

impl RelayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Drop the upstream link and every downstream connection.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.upstream.shutdown(std::net::Shutdown::Both);
        let _ = TcpStream::connect(self.addr);
        let _ = self.accept.join();
        self.registry.close_all();
    }
}

/// Start a relay between `cfg.listen` and `cfg.upstream`.
pub fn relay(cfg: RelayConfig) -> Result<RelayHandle, HubError> {
    let upstream = TcpStream::connect(&cfg.upstream)?;
    upstream.set_nodelay(true)?;
    let listener = TcpListener::bind(&cfg.listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry = Registry::default();
    let routes: Arc<Mutex<HashMap<u32, Route>>> = Arc::default();
    let cap = cfg.frame_cap;

    // One writer serializes upstream frames so multiplexed requests never
    // interleave mid-frame.
    let (up_tx, up_rx) = mpsc::channel::<(u32, Message)>();
    let mut up_writer = upstream.try_clone()?;
    thread::spawn(move || {
        for (tag, msg) in up_rx {
            if framed::write_message(&mut up_writer, Some(tag), &msg, cap).is_err() {
                break;
            }
        }
    });

    // Upstream reader: demultiplex responses by tag, restore inner tags.
    {
        let routes = Arc::clone(&routes);
        let registry = registry.clone();
        let stop = Arc::clone(&stop);
        let mut up_reader = BufReader::new(upstream.try_clone()?);
        thread::spawn(move || {
            loop {
                match framed::read_message(&mut up_reader, cap) {
                    Ok(Some((Some(tag), msg))) => {
                        let mut routes = routes.lock().unwrap();
                        if let Some(route) = routes.get_mut(&tag) {
                            let inner = route.pending.pop_front().unwrap_or(None);
                            let _ = route.outbox.send((inner, msg));
                        }
                    }
                    // An untagged response is unroutable; skip it.
                    Ok(Some((None, _))) => continue,
                    Ok(None) | Err(_) => break,
                }
            }
            // Upstream lost: drop every downstream connection. Clients
            // reconnect; hub-side assignment state makes this safe.
            stop.store(true, Ordering::SeqCst);
            routes.lock().unwrap().clear();
            registry.close_all();
        });
    }

    let accept = {
        let stop = Arc::clone(&stop);
        let registry = registry.clone();
        let routes = Arc::clone(&routes);
        thread::spawn(move || {
            let mut next_tag: u32 = 1;
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let tag = next_tag;
                next_tag = next_tag.wrapping_add(1);
                let id = registry.add(&stream);
                let registry = registry.clone();
                let routes = Arc::clone(&routes);
                let up_tx = up_tx.clone();
                thread::spawn(move || {
                    downstream_loop(stream, tag, routes, up_tx, cap);
                    registry.remove(id);
                });
            }
        })
    };

    Ok(RelayHandle {
        addr,
        stop,
        registry,
        upstream,
        accept,
    })
}

fn downstream_loop(
    stream: TcpStream,
    tag: u32,
    routes: Arc<Mutex<HashMap<u32, Route>>>,
    up_tx: Sender<(u32, Message)>,
    cap: u32,
) {
    let (out_tx, out_rx) = mpsc::channel::<(Option<u32>, Message)>();
    routes.lock().unwrap().insert(
        tag,
        Route {
            outbox: out_tx,
            pending: VecDeque::new(),
        },
    );
    let writer_stream = match stream.try_clone() {
        Ok(s) => s,
        Err(_) => {
            routes.lock().unwrap().remove(&tag);
            return;
        }
    };
    let writer = thread::spawn(move || {
        let mut w = writer_stream;
        for (inner, msg) in out_rx {
            if framed::write_message(&mut w, inner, &msg, cap).is_err() {
                break;
            }
        }
        let _ = w.shutdown(std::net::Shutdown::Both);
    });
    let mut reader = BufReader::new(stream);
    loop {
        match framed::read_message(&mut reader, cap) {
            Ok(Some((inner, msg))) => {
                // Remember the inner tag before the request can race its
                // own response back through the routes table.
                let mut guard = routes.lock().unwrap();
                let Some(route) = guard.get_mut(&tag) else {
                    break; // upstream already lost
                };
                route.pending.push_back(inner);
                drop(guard);
                if up_tx.send((tag, msg)).is_err() {
                    break;
                }
            }
            Ok(None) => break,
            Err(framed::ReadError::Malformed(detail)) => {
                // Relay-level framing error: answer directly and hang up.
                if let Some(route) = routes.lock().unwrap().get(&tag) {
                    let _ = route.outbox.send((None, Message::ErrResp { message: detail }));
                }
                break;
            }
            Err(_) => break,
        }
    }
    // Dropping the route drops the outbox sender; the writer drains
    // whatever is queued and closes the socket.
    routes.lock().unwrap().remove(&tag);
    let _ = writer.join();
}
