//! A stream-socket communicator: real processes, bootstrapped from a
//! rank-0 rendezvous address.
//!
//! Rank 0 listens and every other rank dials in, announcing its rank.
//! Collectives run as a star: each rank ships its outgoing row to rank 0,
//! which transposes the matrix and ships each rank its column. That costs
//! an extra hop versus a full mesh but keeps the bootstrap to a single
//! well-known address, and at the scales this crate targets the hop is
//! noise. I/O failures mid-collective panic — a bulk-synchronous program
//! cannot make progress once a peer is gone.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use super::comm::Communicator;

/// Largest single collective payload a rank will accept (a guard against
/// corrupt streams, not a protocol limit).
const MAX_BLOB: u32 = 256 * 1024 * 1024;

pub struct TcpComm {
    rank: usize,
    size: usize,
    links: Mutex<Links>,
}

impl std::fmt::Debug for TcpComm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TcpComm")
            .field("rank", &self.rank)
            .field("size", &self.size)
            .finish()
    }
}

enum Links {
    /// Streams to ranks `1..size`, indexed by `rank - 1`.
    Root(Vec<TcpStream>),
    /// The lone stream to rank 0.
    Leaf(TcpStream),
}

impl TcpComm {
    /// Become rank 0 of `size`: accept the other `size − 1` ranks on
    /// `listener` (bind it yourself — port 0 works — and publish the
    /// address out of band).
    pub fn root(listener: &TcpListener, size: usize) -> io::Result<TcpComm> {
        assert!(size >= 1);
        let mut slots: Vec<Option<TcpStream>> = (1..size).map(|_| None).collect();
        for _ in 1..size {
            let (mut stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            let mut hello = [0u8; 4];
            stream.read_exact(&mut hello)?;
            let rank = u32::from_le_bytes(hello) as usize;
            if rank == 0 || rank >= size {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("peer announced rank {rank}, valid ranks are 1..{size}"),
                ));
            }
            if slots[rank - 1].replace(stream).is_some() {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("two peers both announced rank {rank}"),
                ));
            }
        }
        Ok(TcpComm {
            rank: 0,
            size,
            links: Mutex::new(Links::Root(
                slots.into_iter().map(|s| s.expect("all slots filled")).collect(),
            )),
        })
    }

    /// Join as `rank` (1 ≤ rank < size) by dialing the root's address.
    /// Retries for a few seconds so ranks may start in any order.
    pub fn join(addr: impl ToSocketAddrs + Clone, rank: usize, size: usize) -> io::Result<TcpComm> {
        assert!(rank >= 1 && rank < size, "joiners take ranks 1..size");
        let mut last = None;
        for _ in 0..250 {
            match TcpStream::connect(addr.clone()) {
                Ok(mut stream) => {
                    stream.set_nodelay(true)?;
                    stream.write_all(&(rank as u32).to_le_bytes())?;
                    return Ok(TcpComm {
                        rank,
                        size,
                        links: Mutex::new(Links::Leaf(stream)),
                    });
                }
                Err(e) => {
                    last = Some(e);
                    std::thread::sleep(Duration::from_millis(20));
                }
            }
        }
        Err(last.unwrap_or_else(|| io::Error::other("rendezvous never came up")))
    }
}

impl Communicator for TcpComm {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn exchange(&self, out: Vec<Option<Vec<u8>>>) -> Vec<Option<Vec<u8>>> {
        assert_eq!(out.len(), self.size, "one slot per destination");
        let mut links = self.links.lock().unwrap();
        match &mut *links {
            Links::Root(leaves) => {
                let mut rows: Vec<Vec<Option<Vec<u8>>>> = Vec::with_capacity(self.size);
                rows.push(out);
                for stream in leaves.iter_mut() {
                    rows.push(read_slots(stream).expect("tcp collective: leaf row"));
                }
                for (i, stream) in leaves.iter_mut().enumerate() {
                    let dest = i + 1;
                    let col: Vec<Option<Vec<u8>>> =
                        rows.iter_mut().map(|row| row[dest].take()).collect();
                    write_slots(stream, &col).expect("tcp collective: column to leaf");
                }
                rows.iter_mut().map(|row| row[0].take()).collect()
            }
            Links::Leaf(stream) => {
                write_slots(stream, &out).expect("tcp collective: row to root");
                read_slots(stream).expect("tcp collective: column from root")
            }
        }
    }
}

/// Frame: `u32` slot count, then per slot a presence byte and, when
/// present, `u32` length + payload. All integers little-endian.
fn write_slots(w: &mut TcpStream, slots: &[Option<Vec<u8>>]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(16 + slots.iter().flatten().map(Vec::len).sum::<usize>());
    buf.extend_from_slice(&(slots.len() as u32).to_le_bytes());
    for slot in slots {
        match slot {
            None => buf.push(0),
            Some(blob) => {
                buf.push(1);
                buf.extend_from_slice(&(blob.len() as u32).to_le_bytes());
                buf.extend_from_slice(blob);
            }
        }
    }
    w.write_all(&buf)
}

fn read_slots(r: &mut TcpStream) -> io::Result<Vec<Option<Vec<u8>>>> {
    let count = read_u32(r)?;
    if count > 65_536 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("implausible rank count {count} in frame"),
        ));
    }
    let mut slots = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        slots.push(match flag[0] {
            0 => None,
            1 => {
                let len = read_u32(r)?;
                if len > MAX_BLOB {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("blob of {len} bytes exceeds the {MAX_BLOB}-byte cap"),
                    ));
                }
                let mut blob = vec![0u8; len as usize];
                r.read_exact(&mut blob)?;
                Some(blob)
            }
            b => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("bad presence byte {b}"),
                ))
            }
        });
    }
    Ok(slots)
}

fn read_u32(r: &mut TcpStream) -> io::Result<u32> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    Ok(u32::from_le_bytes(word))
}
