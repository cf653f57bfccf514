//! Blocking hub client: one connection, request/response or pipelined.
//!
//! [`HubClient::request`] and the typed helpers cover the common
//! lock-step pattern. The worker's prefetch pipeline uses the split
//! [`HubClient::send`] / [`HubClient::recv`] halves: the hub guarantees
//! one response per request in request order, so a client may keep
//! several requests in flight and match responses by position.

use std::io::{self, BufReader};
use std::net::{TcpStream, ToSocketAddrs};

use super::framed;
use crate::graphstore::StealOutcome;
use crate::wire::{Message, StatCounts, TaskSpec, DEFAULT_FRAME_CAP};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("hub connection: {0}")]
    Io(#[from] io::Error),
    /// The hub answered `ErrResp` (e.g. duplicate task, unknown dep,
    /// completion of an unassigned task).
    #[error("hub refused: {0}")]
    Hub(String),
    /// The hub answered with a kind outside the request's legal set.
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("hub closed the connection")]
    Closed,
}

pub struct HubClient {
    reader: Option<BufReader<TcpStream>>,
    writer: TcpStream,
    cap: u32,
}

impl HubClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(HubClient {
            reader: Some(BufReader::new(stream)),
            writer,
            cap: DEFAULT_FRAME_CAP,
        })
    }

    /// Detach the read half so a dedicated thread can own it; afterwards
    /// only [`HubClient::send`] works on this handle.
    pub fn take_reader(&mut self) -> Option<BufReader<TcpStream>> {
        self.reader.take()
    }

    /// Tear down the connection (both directions, all clones), unblocking
    /// any thread that is mid-read on the detached half.
    pub fn shutdown(&self) -> io::Result<()> {
        self.writer.shutdown(std::net::Shutdown::Both)
    }

    /// Queue one request without waiting for its response.
    pub fn send(&mut self, msg: &Message) -> io::Result<()> {
        framed::write_message(&mut self.writer, None, msg, self.cap)
    }

    /// Read the next response in order.
    pub fn recv(&mut self) -> Result<Message, ClientError> {
        let reader = self
            .reader
            .as_mut()
            .expect("recv on a client whose reader was detached");
        match framed::read_message(reader, self.cap) {
            Ok(Some((_, msg))) => Ok(msg),
            Ok(None) => Err(ClientError::Closed),
            Err(framed::ReadError::Io(e)) => Err(ClientError::Io(e)),
            Err(framed::ReadError::Malformed(m)) => Err(ClientError::Protocol(m)),
        }
    }

    /// Lock-step request/response.
    pub fn request(&mut self, msg: &Message) -> Result<Message, ClientError> {
        self.send(msg)?;
        self.recv()
    }

    fn expect_ok(&mut self, msg: &Message) -> Result<(), ClientError> {
        match self.request(msg)? {
            Message::OkResp => Ok(()),
            Message::ErrResp { message } => Err(ClientError::Hub(message)),
            other => Err(ClientError::Protocol(format!(
                "expected ok/err, got {}",
                other.kind()
            ))),
        }
    }

    pub fn create(&mut self, task: TaskSpec, deps: &[String]) -> Result<(), ClientError> {
        self.expect_ok(&Message::CreateReq {
            task,
            deps: deps.to_vec(),
        })
    }

    pub fn steal(&mut self, worker: &str, n: u32) -> Result<StealOutcome, ClientError> {
        match self.request(&Message::StealReq {
            worker: worker.into(),
            n,
        })? {
            Message::TasksResp { tasks } => Ok(StealOutcome::Tasks(tasks)),
            Message::NotFoundResp => Ok(StealOutcome::NotFound),
            Message::ExitResp => Ok(StealOutcome::Exit),
            Message::ErrResp { message } => Err(ClientError::Hub(message)),
            other => Err(ClientError::Protocol(format!(
                "expected tasks/notfound/exitresp, got {}",
                other.kind()
            ))),
        }
    }

    pub fn complete(&mut self, worker: &str, task: &str, ok: bool) -> Result<(), ClientError> {
        self.expect_ok(&Message::CompleteReq {
            worker: worker.into(),
            task: task.into(),
            ok,
        })
    }

    pub fn transfer(
        &mut self,
        worker: &str,
        task: &str,
        new_deps: &[String],
    ) -> Result<(), ClientError> {
        self.expect_ok(&Message::TransferReq {
            worker: worker.into(),
            task: task.into(),
            new_deps: new_deps.to_vec(),
        })
    }

    pub fn exit_worker(&mut self, worker: &str) -> Result<(), ClientError> {
        self.expect_ok(&Message::ExitReq {
            worker: worker.into(),
        })
    }

    pub fn stat(&mut self) -> Result<StatCounts, ClientError> {
        match self.request(&Message::StatReq)? {
            Message::StatResp { counts } => Ok(counts),
            Message::ErrResp { message } => Err(ClientError::Hub(message)),
            other => Err(ClientError::Protocol(format!(
                "expected statresp, got {}",
                other.kind()
            ))),
        }
    }
}
