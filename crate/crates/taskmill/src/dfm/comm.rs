//! The communicator contract and the in-process (thread) implementation.
//!
//! One primitive carries everything: [`Communicator::exchange`], a full
//! all-to-all of optional byte blobs that also acts as a barrier. The
//! typed collectives (broadcast, gather, all-to-all, reductions, prefix
//! scans) are provided methods layered on it, so both communicators get
//! them — and the bulk-synchronous contract ("every rank calls the same
//! collectives in the same order") only has to hold for `exchange`.

use std::any::Any;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::list::Context;

/// Anything that can cross a rank boundary. Blanket-implemented; payloads
/// are JSON-encoded on the wire (and through the in-process board, so the
/// two communicators cannot diverge).
pub trait Wire: Serialize + DeserializeOwned + Send + 'static {}
impl<T: Serialize + DeserializeOwned + Send + 'static> Wire for T {}

pub(crate) fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("collective payload failed to encode")
}

pub(crate) fn decode<T: DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes)
        .expect("collective payload failed to decode — mismatched collective calls?")
}

/// A bulk-synchronous communicator for `size()` ranks.
///
/// Collective calls must be matched across all ranks in identical order;
/// a rank that skips one leaves the others stuck in it.
pub trait Communicator: Send {
    /// This rank's index in `[0, size)`.
    fn rank(&self) -> usize;
    /// Total rank count (≥ 1).
    fn size(&self) -> usize;
    /// The one true collective: deliver `out[d]` to rank `d`, return what
    /// every rank addressed to us (`result[s]` came from rank `s`). All
    /// ranks enter before any leaves, so `exchange` is also a barrier.
    fn exchange(&self, out: Vec<Option<Vec<u8>>>) -> Vec<Option<Vec<u8>>>;

    /// Block until every rank arrives.
    fn barrier(&self) {
        self.exchange(vec![None; self.size()]);
    }

    /// Send `value` from `root` to every rank. The root must pass
    /// `Some`; other ranks' inputs are ignored.
    fn broadcast<T: Wire>(&self, value: Option<T>, root: usize) -> T {
        let mut out = vec![None; self.size()];
        if self.rank() == root {
            let blob = encode(&value.expect("broadcast: the root rank must supply a value"));
            out = (0..self.size()).map(|_| Some(blob.clone())).collect();
        }
        let got = self.exchange(out);
        decode(got[root].as_deref().expect("broadcast: no payload from root"))
    }

    /// Collect one value per rank at `root` (rank order); `None` elsewhere.
    fn gather<T: Wire>(&self, value: T, root: usize) -> Option<Vec<T>> {
        let mut out = vec![None; self.size()];
        out[root] = Some(encode(&value));
        let got = self.exchange(out);
        (self.rank() == root).then(|| {
            got.iter()
                .map(|b| decode(b.as_deref().expect("gather: a rank sent nothing")))
                .collect()
        })
    }

    /// Personalized exchange: `buckets[d]` goes to rank `d`; the result
    /// holds one list per source rank.
    fn all_to_all<T: Wire>(&self, buckets: Vec<Vec<T>>) -> Vec<Vec<T>> {
        assert_eq!(buckets.len(), self.size(), "one bucket per destination");
        let out = buckets.iter().map(|b| Some(encode(b))).collect();
        self.exchange(out)
            .iter()
            .map(|b| decode(b.as_deref().expect("all_to_all: a rank sent nothing")))
            .collect()
    }

    /// Fold one value per rank (rank order) at `root`; `None` elsewhere.
    fn reduce<T: Wire>(&self, value: T, op: impl Fn(&T, &T) -> T, root: usize) -> Option<T> {
        self.gather(value, root).map(|vs| fold_ranked(vs, &op))
    }

    /// Fold one value per rank (rank order); every rank gets the result.
    fn allreduce<T: Wire>(&self, value: T, op: impl Fn(&T, &T) -> T) -> T {
        let folded = self.gather(value, 0).map(|vs| fold_ranked(vs, &op));
        self.broadcast(folded, 0)
    }

    /// Exclusive prefix fold: rank `p` receives
    /// `init ⊕ v₀ ⊕ … ⊕ v₍p₋₁₎` (so rank 0 receives `init`, as read on
    /// rank 0 — the bulk-synchronous contract makes all `init`s equal).
    fn exscan<T: Wire>(&self, value: T, op: impl Fn(&T, &T) -> T, init: T) -> T {
        let all = self.gather(value, 0);
        let mut out = vec![None; self.size()];
        if let Some(vs) = all {
            let mut acc = init;
            for (p, v) in vs.iter().enumerate() {
                out[p] = Some(encode(&acc));
                acc = op(&acc, v);
            }
        }
        let got = self.exchange(out);
        decode(got[0].as_deref().expect("exscan: no prefix from root"))
    }
}

fn fold_ranked<T>(values: Vec<T>, op: &impl Fn(&T, &T) -> T) -> T {
    let mut it = values.into_iter();
    let first = it.next().expect("size() >= 1");
    it.fold(first, |a, b| op(&a, &b))
}

/// In-process ranks: every rank is a thread, and collectives meet at a
/// shared exchange board (post your row, wait for all, take your column).
pub struct ThreadComm {
    rank: usize,
    size: usize,
    board: Arc<Board>,
}

struct Board {
    state: Mutex<BoardState>,
    /// Signalled when the last rank posts its row.
    all_in: Condvar,
    /// Signalled when the last rank takes its column (round over).
    drained: Condvar,
}

struct BoardState {
    /// `slots[src][dst]`.
    slots: Vec<Vec<Option<Vec<u8>>>>,
    posted: usize,
    taken: usize,
    generation: u64,
    /// Set when any rank panics; parks everyone out of their waits.
    poisoned: bool,
}

/// The board's own `poisoned` flag is the failure signal; std mutex
/// poisoning (a rank panicking mid-`exchange`) must not cascade into
/// unrelated panics, so it is deliberately ignored.
fn lock_board(board: &Board) -> std::sync::MutexGuard<'_, BoardState> {
    board.state.lock().unwrap_or_else(|p| p.into_inner())
}

fn wait_on<'a>(
    cv: &Condvar,
    guard: std::sync::MutexGuard<'a, BoardState>,
) -> std::sync::MutexGuard<'a, BoardState> {
    cv.wait(guard).unwrap_or_else(|p| p.into_inner())
}

impl Board {
    fn new(size: usize) -> Board {
        Board {
            state: Mutex::new(BoardState {
                slots: vec![vec![None; size]; size],
                posted: 0,
                taken: 0,
                generation: 0,
                poisoned: false,
            }),
            all_in: Condvar::new(),
            drained: Condvar::new(),
        }
    }

    fn poison(&self) {
        lock_board(self).poisoned = true;
        self.all_in.notify_all();
        self.drained.notify_all();
    }
}

impl Communicator for ThreadComm {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn exchange(&self, out: Vec<Option<Vec<u8>>>) -> Vec<Option<Vec<u8>>> {
        assert_eq!(out.len(), self.size, "one slot per destination");
        let board = &*self.board;
        let mut st = lock_board(board);

        // A previous round may still be draining; posting now would
        // overwrite rows other ranks haven't read yet.
        while !st.poisoned && st.posted == self.size {
            st = wait_on(&board.drained, st);
        }
        if st.poisoned {
            drop(st);
            panic!("a peer rank panicked during a collective");
        }

        let gen = st.generation;
        st.slots[self.rank] = out;
        st.posted += 1;
        if st.posted == self.size {
            board.all_in.notify_all();
        }
        // The generation cannot advance until we take our column, so
        // `posted == size` can only mean *our* round is fully posted.
        while !st.poisoned && st.posted < self.size {
            st = wait_on(&board.all_in, st);
        }
        if st.poisoned {
            drop(st);
            panic!("a peer rank panicked during a collective");
        }

        let mine: Vec<Option<Vec<u8>>> =
            (0..self.size).map(|s| st.slots[s][self.rank].take()).collect();
        st.taken += 1;
        if st.taken == self.size {
            st.posted = 0;
            st.taken = 0;
            st.generation = st.generation.wrapping_add(1);
            board.drained.notify_all();
        } else {
            while !st.poisoned && st.generation == gen {
                st = wait_on(&board.drained, st);
            }
            if st.poisoned {
                drop(st);
                panic!("a peer rank panicked during a collective");
            }
        }
        mine
    }
}

/// Run the same bulk-synchronous program on `procs` simulated ranks
/// (one thread each) and return the per-rank results in rank order.
///
/// If any rank panics the board is poisoned so the others exit their
/// collectives, and this call panics with every failing rank's message.
pub fn run_bsp<R, F>(procs: usize, program: F) -> Vec<R>
where
    R: Send + 'static,
    F: Fn(Context<ThreadComm>) -> R + Send + Sync + 'static,
{
    assert!(procs >= 1, "need at least one rank");
    let board = Arc::new(Board::new(procs));
    let program = Arc::new(program);
    let handles: Vec<_> = (0..procs)
        .map(|p| {
            let comm = ThreadComm {
                rank: p,
                size: procs,
                board: Arc::clone(&board),
            };
            let program = Arc::clone(&program);
            let board = Arc::clone(&board);
            thread::Builder::new()
                .name(format!("rank{p}"))
                .spawn(move || {
                    let out = catch_unwind(AssertUnwindSafe(|| program(Context::new(comm))));
                    if out.is_err() {
                        board.poison();
                    }
                    out
                })
                .expect("spawn rank thread")
        })
        .collect();

    let mut results = Vec::with_capacity(procs);
    let mut failures = Vec::new();
    for (p, h) in handles.into_iter().enumerate() {
        match h.join().expect("rank threads report panics as Err, not by dying") {
            Ok(r) => results.push(r),
            Err(payload) => failures.push(format!("rank {p}: {}", panic_message(&payload))),
        }
    }
    if !failures.is_empty() {
        panic!("bsp program failed on {}", failures.join(" | "));
    }
    results
}

pub(crate) fn panic_message(payload: &Box<dyn Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else {
        "opaque panic payload".into()
    }
}
