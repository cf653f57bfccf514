//! The distributed list itself: [`Context`], [`DFM`], and the block
//! [`Partition`] that decides which rank holds which slice.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use super::comm::{decode, encode, panic_message, Communicator, Wire};

/// How `n` items split over `procs` ranks: contiguous blocks in rank
/// order, sizes differing by at most one (the first `n % procs` ranks
/// get the extra item).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub n: u64,
    pub procs: u64,
}

impl Partition {
    /// Global index of rank `p`'s first item: `p·⌊n/P⌋ + min(p, n mod P)`.
    pub fn start(&self, p: u64) -> u64 {
        p * (self.n / self.procs) + p.min(self.n % self.procs)
    }

    /// How many items rank `p` holds.
    pub fn count(&self, p: u64) -> u64 {
        self.n / self.procs + u64::from(p < self.n % self.procs)
    }

    /// Which rank holds global item `i` (requires `i < n`).
    pub fn rank_of(&self, i: u64) -> u64 {
        assert!(i < self.n, "item {i} out of range for n={}", self.n);
        let base = self.n / self.procs;
        let rem = self.n % self.procs;
        let fat = rem * (base + 1); // items held by the first `rem` ranks
        if i < fat {
            i / (base + 1)
        } else {
            rem + (i - fat) / base
        }
    }
}

/// Errors from the element-moving operations. They are *collective*:
/// when any rank's inputs are bad, every rank returns the same error (and
/// no data moves), so the bulk-synchronous call sequence stays matched.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DfmError {
    #[error("split chunks carry {got} records where {expected} were asked for")]
    InconsistentLength { expected: u64, got: u64 },
    #[error("destination {dest} out of range for {procs} ranks")]
    DestinationOutOfRange { dest: usize, procs: usize },
}

/// A rank's handle on the bulk-synchronous world: the communicator plus
/// convenience constructors for distributed lists.
pub struct Context<C: Communicator> {
    comm: Arc<C>,
}

impl<C: Communicator> Clone for Context<C> {
    fn clone(&self) -> Self {
        Context {
            comm: Arc::clone(&self.comm),
        }
    }
}

impl<C: Communicator> Context<C> {
    pub fn new(comm: C) -> Self {
        assert!(comm.size() >= 1, "a context needs at least one rank");
        Context {
            comm: Arc::new(comm),
        }
    }

    pub fn rank(&self) -> usize {
        self.comm.rank()
    }

    pub fn procs(&self) -> usize {
        self.comm.size()
    }

    pub fn comm(&self) -> &C {
        &self.comm
    }

    /// The distributed list `0..n`: rank `p` holds the block starting at
    /// [`Partition::start`]. Purely local — no communication.
    pub fn iterates(&self, n: u64) -> DFM<C, i64> {
        let part = Partition {
            n,
            procs: self.procs() as u64,
        };
        let p = self.rank() as u64;
        let start = part.start(p);
        let local = (start..start + part.count(p)).map(|i| i as i64).collect();
        DFM {
            ctx: self.clone(),
            local,
            start: Some(start),
        }
    }

    /// Wrap per-rank data this rank already holds. The global list is the
    /// rank-order concatenation of what every rank passes in.
    pub fn from_local<T>(&self, local: Vec<T>) -> DFM<C, T> {
        DFM {
            ctx: self.clone(),
            local,
            start: None,
        }
    }
}

/// A distributed free monoid: this rank's slice of a logically ordered
/// global list. Local operations never communicate; collectives must be
/// called by every rank in the same order.
pub struct DFM<C: Communicator, T> {
    ctx: Context<C>,
    local: Vec<T>,
    /// Global index of `local[0]`, when cheaply known (kept by `map` and
    /// `scan`, invalidated by `flat_map`); used to annotate `f` failures.
    start: Option<u64>,
}

impl<C: Communicator, T: std::fmt::Debug> std::fmt::Debug for DFM<C, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DFM")
            .field("rank", &self.ctx.rank())
            .field("local", &self.local)
            .field("start", &self.start)
            .finish()
    }
}

impl<C: Communicator, T> DFM<C, T> {
    pub fn context(&self) -> &Context<C> {
        &self.ctx
    }

    /// This rank's elements, in global order.
    pub fn local(&self) -> &[T] {
        &self.local
    }

    fn where_is(&self, i: usize) -> String {
        match self.start {
            Some(s) => format!("global element {}", s + i as u64),
            None => format!("local element {i} on rank {}", self.ctx.rank()),
        }
    }

    /// Apply `f` to every element. Local; element count (and the global
    /// order) is preserved. A panic in `f` is re-raised annotated with the
    /// element's position.
    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> DFM<C, U> {
        let local = self
            .local
            .iter()
            .enumerate()
            .map(|(i, x)| match catch_unwind(AssertUnwindSafe(|| f(x))) {
                Ok(v) => v,
                Err(p) => panic!("map failed at {}: {}", self.where_is(i), panic_message(&p)),
            })
            .collect();
        DFM {
            ctx: self.ctx.clone(),
            local,
            start: self.start,
        }
    }

    /// Replace every element by a list and splice the lists in place.
    /// Local; global order is preserved within and across ranks.
    pub fn flat_map<U>(&self, f: impl Fn(&T) -> Vec<U>) -> DFM<C, U> {
        let mut local = Vec::new();
        for (i, x) in self.local.iter().enumerate() {
            match catch_unwind(AssertUnwindSafe(|| f(x))) {
                Ok(mut vs) => local.append(&mut vs),
                Err(p) => panic!(
                    "flat_map failed at {}: {}",
                    self.where_is(i),
                    panic_message(&p)
                ),
            }
        }
        DFM {
            ctx: self.ctx.clone(),
            local,
            start: None,
        }
    }

    /// Global element count. Collective.
    pub fn len(&self) -> u64 {
        self.ctx
            .comm
            .allreduce(self.local.len() as u64, |a, b| a + b)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gather the whole list to rank 0 in global order (`None` on every
    /// other rank). Collective.
    pub fn collect(&self) -> Option<Vec<T>>
    where
        T: Wire,
    {
        let comm = self.ctx.comm();
        let mut out = vec![None; comm.size()];
        out[0] = Some(encode(&self.local));
        let got = comm.exchange(out);
        (comm.rank() == 0).then(|| {
            got.iter()
                .flat_map(|b| decode::<Vec<T>>(b.as_deref().expect("collect: a rank sent nothing")))
                .collect()
        })
    }

    /// Fold the whole list with an associative `op` whose identity is
    /// `init`; every rank receives the result. Collective.
    pub fn reduce(&self, op: impl Fn(&T, &T) -> T, init: T) -> T
    where
        T: Wire,
    {
        let folded = self.local.iter().fold(init, |acc, x| op(&acc, x));
        self.ctx.comm.allreduce(folded, op)
    }

    /// Inclusive prefix fold: element `i` of the result is
    /// `init ⊕ x₀ ⊕ … ⊕ xᵢ`. Collective.
    pub fn scan(&self, op: impl Fn(&T, &T) -> T, init: T) -> DFM<C, T>
    where
        T: Wire + Clone,
    {
        // Rank totals travel as Option so empty ranks contribute nothing
        // and `init` enters every prefix exactly once — seeding the local
        // folds with `init` would count it once per non-empty rank.
        let folded = self.local.iter().fold(None, |acc: Option<T>, x| {
            Some(match acc {
                None => x.clone(),
                Some(a) => op(&a, x),
            })
        });
        let earlier = self.ctx.comm.exscan(
            folded,
            |a, b| match (a, b) {
                (None, b) => b.clone(),
                (a, None) => a.clone(),
                (Some(a), Some(b)) => Some(op(a, b)),
            },
            None,
        );
        let mut acc = match earlier {
            None => init,
            Some(c) => op(&init, &c),
        };
        let local: Vec<T> = self
            .local
            .iter()
            .map(|x| {
                acc = op(&acc, x);
                acc.clone()
            })
            .collect();
        DFM {
            ctx: self.ctx.clone(),
            local,
            start: self.start,
        }
    }

    /// Re-balance *records* (not elements) across ranks. Each element is a
    /// container of `len_f(x)` records; the global record sequence is
    /// redistributed by the [`Partition`] formula over the total record
    /// count, and each rank merges what it receives into **one** element
    /// with `concat_f` (`concat_f(vec![])` — an identity — on ranks that
    /// receive nothing).
    ///
    /// `split_f(x, sizes)` must cut `x` into `sizes.len()` chunks with
    /// exactly `sizes[i]` records each, in order; this is validated and
    /// a violation fails the call on every rank.
    pub fn repartition(
        &self,
        len_f: impl Fn(&T) -> u64,
        split_f: impl Fn(&T, &[u64]) -> Vec<T>,
        concat_f: impl Fn(Vec<T>) -> T,
    ) -> Result<DFM<C, T>, DfmError>
    where
        T: Wire,
    {
        let comm = self.ctx.comm();
        let procs = comm.size();
        let mine: u64 = self.local.iter().map(&len_f).sum();
        let offset = comm.exscan(mine, |a, b| a + b, 0);
        let total = comm.allreduce(mine, |a, b| a + b);
        let part = Partition {
            n: total,
            procs: procs as u64,
        };

        let mut buckets: Vec<Vec<T>> = (0..procs).map(|_| Vec::new()).collect();
        let mut bad: Option<(u64, u64)> = None; // (expected, got)
        let mut cursor = offset;
        for elem in &self.local {
            let l = len_f(elem);
            if l == 0 {
                continue; // no records, nothing to place
            }
            // Which target ranks does [cursor, cursor+l) overlap?
            let mut dests = Vec::new();
            let mut sizes = Vec::new();
            let mut q = part.rank_of(cursor);
            let mut at = cursor;
            while at < cursor + l {
                let end = (part.start(q) + part.count(q)).min(cursor + l);
                dests.push(q as usize);
                sizes.push(end - at);
                at = end;
                q += 1;
            }
            let chunks = split_f(elem, &sizes);
            let got: u64 = chunks.iter().map(&len_f).sum();
            let sized_right = chunks.len() == sizes.len()
                && chunks
                    .iter()
                    .zip(&sizes)
                    .all(|(c, &s)| len_f(c) == s);
            if !sized_right {
                bad.get_or_insert((l, got));
                cursor += l;
                continue;
            }
            for (d, c) in dests.into_iter().zip(chunks) {
                buckets[d].push(c);
            }
            cursor += l;
        }

        // Errors are collective: agree on the lowest-rank failure (if
        // any) before moving data, so every rank takes the same branch.
        let verdict = comm.allreduce(bad, |a, b| a.or(*b));
        if let Some((expected, got)) = verdict {
            return Err(DfmError::InconsistentLength { expected, got });
        }

        let received = comm.all_to_all(buckets);
        let merged = concat_f(received.into_iter().flatten().collect());
        Ok(DFM {
            ctx: self.ctx.clone(),
            local: vec![merged],
            start: Some(comm.rank() as u64),
        })
    }

    /// Route items to explicit destination ranks. `dest_f` turns each
    /// element into `{destination rank → items}`; all items travel in one
    /// exchange; each rank combines what it receives (ordered by source
    /// rank, then source-local order) into **one** element with
    /// `combine_f` (`combine_f(vec![])` on ranks that receive nothing).
    pub fn group<I: Wire, U>(
        &self,
        dest_f: impl Fn(&T) -> BTreeMap<usize, Vec<I>>,
        combine_f: impl Fn(Vec<I>) -> U,
    ) -> Result<DFM<C, U>, DfmError> {
        let comm = self.ctx.comm();
        let procs = comm.size();
        let mut buckets: Vec<Vec<I>> = (0..procs).map(|_| Vec::new()).collect();
        let mut bad: Option<u64> = None;
        for elem in &self.local {
            for (dest, mut items) in dest_f(elem) {
                if dest >= procs {
                    bad.get_or_insert(dest as u64);
                } else {
                    buckets[dest].append(&mut items);
                }
            }
        }
        let verdict = comm.allreduce(bad, |a, b| a.or(*b));
        if let Some(dest) = verdict {
            return Err(DfmError::DestinationOutOfRange {
                dest: dest as usize,
                procs,
            });
        }
        let received = comm.all_to_all(buckets);
        let combined = combine_f(received.into_iter().flatten().collect());
        Ok(DFM {
            ctx: self.ctx.clone(),
            local: vec![combined],
            start: Some(comm.rank() as u64),
        })
    }
}
