//! A response-delaying proxy for latency experiments.
//!
//! Sits between a client and a hub (or relay) and holds every *response*
//! frame for a fixed duration before forwarding it; requests pass through
//! immediately. This turns round-trip latency into a controlled variable,
//! which is how the worker pipeline's communication/computation overlap is
//! measured: with prefetch enabled a task's steal latency should hide
//! behind the previous task's compute time, so per-task wall time stays
//! near the task duration rather than duration + delay.

use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{framed, Registry};
use crate::wire::DEFAULT_FRAME_CAP;

/// A running delay proxy. Dropping the handle detaches it.
pub struct DelayProxy {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    registry: Registry,
    accept: JoinHandle<()>,
}

impl DelayProxy {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        let _ = self.accept.join();
        self.registry.close_all();
    }
}

/// Proxy `upstream`, delaying each response frame by `delay`.
pub fn delay_proxy(upstream: SocketAddr, delay: Duration) -> io::Result<DelayProxy> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry = Registry::default();
    let accept = {
        let stop = Arc::clone(&stop);
        let registry = registry.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(down) = stream else { continue };
                let _ = down.set_nodelay(true);
                let Ok(up) = TcpStream::connect(upstream) else {
                    continue;
                };
                let _ = up.set_nodelay(true);
                let down_id = registry.add(&down);
                let up_id = registry.add(&up);
                let registry2 = registry.clone();

                // Requests forward immediately.
                let (mut down_r, mut up_w) = match (down.try_clone(), up.try_clone()) {
                    (Ok(a), Ok(b)) => (BufReader::new(a), b),
                    _ => continue,
                };
                thread::spawn(move || {
                    while let Ok(Some((tag, msg))) =
                        framed::read_message(&mut down_r, DEFAULT_FRAME_CAP)
                    {
                        if framed::write_message(&mut up_w, tag, &msg, DEFAULT_FRAME_CAP)
                            .is_err()
                        {
                            break;
                        }
                    }
                    let _ = up_w.shutdown(std::net::Shutdown::Both);
                });
                // Responses wait out the delay.
                let mut up_r = BufReader::new(up);
                let mut down_w = down;
                thread::spawn(move || {
                    while let Ok(Some((tag, msg))) =
                        framed::read_message(&mut up_r, DEFAULT_FRAME_CAP)
                    {
                        thread::sleep(delay);
                        if framed::write_message(&mut down_w, tag, &msg, DEFAULT_FRAME_CAP)
                            .is_err()
                        {
                            break;
                        }
                    }
                    let _ = down_w.shutdown(std::net::Shutdown::Both);
                    registry2.remove(down_id);
                    registry2.remove(up_id);
                });
            }
        })
    };
    Ok(DelayProxy {
        addr,
        stop,
        registry,
        accept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hub::{serve, HubClient, HubConfig};
    use std::time::Instant;

    #[test]
    fn responses_arrive_late_by_about_the_delay() {
        let hub = serve(HubConfig::default()).unwrap();
        let proxy = delay_proxy(hub.addr(), Duration::from_millis(30)).unwrap();
        let mut c = HubClient::connect(proxy.addr()).unwrap();
        let t0 = Instant::now();
        let _ = c.stat().unwrap();
        let rtt = t0.elapsed();
        assert!(
            rtt >= Duration::from_millis(30),
            "round trip {rtt:?} did not include the delay"
        );
        proxy.shutdown();
        hub.shutdown().unwrap();
    }
}
