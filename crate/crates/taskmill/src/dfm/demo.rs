//! A bundled end-to-end pipeline in the shape the distributed list was
//! built for: read a scored dataset in parallel batches, collect global
//! statistics, then histogram the whole thing — reporting per-phase
//! timings. Synthetic, seeded records stand in for on-disk files so the
//! demo is deterministic and self-contained.

use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::comm::Communicator;
use super::list::Context;
use crate::dfm::run_bsp;

/// One scored record: the quantity of interest and a secondary feature
/// (named after the columns the pipeline histograms).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Record {
    pub score: f64,
    pub r3: f64,
}

pub type Batch = Vec<Record>;

/// Records per generated sub-batch, before selection.
const BATCH_RECORDS: usize = 24;
/// Sub-batches per "file".
const BATCHES_PER_FILE: u64 = 2;
/// Histogram bins (score × r3).
pub const HIST_BINS: (usize, usize) = (301, 201);

/// Deterministically synthesize the batches of "file" `n`.
pub fn read_scored(n: i64) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE ^ n as u64);
    let score = Uniform::new(-2.0f64, 8.0);
    let r3 = Uniform::new(0.0f64, 1.0);
    (0..BATCHES_PER_FILE)
        .map(|_| {
            (0..BATCH_RECORDS)
                .map(|_| Record {
                    score: score.sample(&mut rng),
                    r3: r3.sample(&mut rng),
                })
                .collect()
        })
        .collect()
}

/// Keep the better-scoring half of a batch (stable order otherwise —
/// selection by threshold, like keeping rows of a dataframe).
pub fn best_scores(batch: &Batch) -> Batch {
    if batch.len() < 2 {
        return batch.clone();
    }
    let mut scores: Vec<f64> = batch.iter().map(|r| r.score).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let cut = scores[batch.len() / 2 - 1];
    let keep = batch.len() / 2;
    batch
        .iter()
        .filter(|r| r.score >= cut)
        .take(keep)
        .copied()
        .collect()
}

/// Per-batch bounds of (score, r3) — the "stats" the pipeline collects.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: (f64, f64),
    pub hi: (f64, f64),
}

impl Bounds {
    fn of(batch: &Batch) -> Bounds {
        let mut b = Bounds {
            lo: (f64::INFINITY, f64::INFINITY),
            hi: (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for r in batch {
            b.lo.0 = b.lo.0.min(r.score);
            b.lo.1 = b.lo.1.min(r.r3);
            b.hi.0 = b.hi.0.max(r.score);
            b.hi.1 = b.hi.1.max(r.r3);
        }
        b
    }

    fn merge(a: &Bounds, b: &Bounds) -> Bounds {
        Bounds {
            lo: (a.lo.0.min(b.lo.0), a.lo.1.min(b.lo.1)),
            hi: (a.hi.0.max(b.hi.0), a.hi.1.max(b.hi.1)),
        }
    }
}

/// A dense 2-D histogram over (score, r3), flattened row-major.
fn his2d(batch: &Batch, bounds: &Bounds) -> Vec<u64> {
    let (nx, ny) = HIST_BINS;
    let mut bins = vec![0u64; nx * ny];
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let sx = span(bounds.lo.0, bounds.hi.0);
    let sy = span(bounds.lo.1, bounds.hi.1);
    for r in batch {
        let ix = (((r.score - bounds.lo.0) / sx) * nx as f64) as usize;
        let iy = (((r.r3 - bounds.lo.1) / sy) * ny as f64) as usize;
        bins[ix.min(nx - 1) * ny + iy.min(ny - 1)] += 1;
    }
    bins
}

fn npsum(a: &Vec<u64>, b: &Vec<u64>) -> Vec<u64> {
    if a.is_empty() {
        return b.clone();
    }
    if b.is_empty() {
        return a.clone();
    }
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// What the demo pipeline produced, plus how long each phase took on
/// rank 0 (phases are barrier-aligned so the numbers mean something).
#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub procs: usize,
    pub files: u64,
    pub batches: u64,
    pub records: u64,
    pub lo: (f64, f64),
    pub hi: (f64, f64),
    pub hist_bins: (usize, usize),
    pub hist_hits: u64,
    pub read_secs: f64,
    pub stat_secs: f64,
    pub hist_secs: f64,
}

/// Run the full pipeline on `procs` simulated ranks over `files` synthetic
/// files: read → select → stats to rank 0 → broadcast bounds → histogram.
pub fn run_demo(procs: usize, files: u64) -> DemoReport {
    let mut reports = run_bsp(procs, move |ctx| pipeline(&ctx, files));
    reports.swap_remove(0).expect("rank 0 reports")
}

/// The rank-side program; returns `Some(report)` on rank 0 only.
pub fn pipeline<C: Communicator>(ctx: &Context<C>, files: u64) -> Option<DemoReport> {
    assert!(files >= 1, "the demo needs at least one file's worth of data");
    let comm = ctx.comm();

    comm.barrier();
    let t0 = Instant::now();
    let dfm = ctx
        .iterates(files)
        .flat_map(|&n| read_scored(n))
        .map(best_scores);
    let batches = dfm.len();
    let read_secs = t0.elapsed().as_secs_f64();

    comm.barrier();
    let t1 = Instant::now();
    let stats = dfm.map(Bounds::of).collect();
    let bounds = comm.broadcast(
        stats.map(|all| {
            all.iter().fold(
                Bounds {
                    lo: (f64::INFINITY, f64::INFINITY),
                    hi: (f64::NEG_INFINITY, f64::NEG_INFINITY),
                },
                |acc, b| Bounds::merge(&acc, b),
            )
        }),
        0,
    );
    let stat_secs = t1.elapsed().as_secs_f64();

    comm.barrier();
    let t2 = Instant::now();
    let hist = dfm.map(|b| his2d(b, &bounds)).reduce(npsum, Vec::new());
    let hist_secs = t2.elapsed().as_secs_f64();

    (ctx.rank() == 0).then(|| DemoReport {
        procs: ctx.procs(),
        files,
        batches,
        records: batches * (BATCH_RECORDS as u64 / 2),
        lo: bounds.lo,
        hi: bounds.hi,
        hist_bins: HIST_BINS,
        hist_hits: hist.iter().sum(),
        read_secs,
        stat_secs,
        hist_secs,
    })
}

/// The demo's narrative output, one phase per line.
pub fn narrate(r: &DemoReport) -> String {
    format!(
        "Read {} batches ({} records) to {} processes in {:.3} secs.\n\
         Collected stats to rank 0 in {:.3} secs. score ∈ [{:.3}, {:.3}], r3 ∈ [{:.3}, {:.3}]\n\
         Collected histogram1 ({}x{} bins, {} hits) in {:.3} secs.\n",
        r.batches,
        r.records,
        r.procs,
        r.read_secs,
        r.stat_secs,
        r.lo.0,
        r.hi.0,
        r.lo.1,
        r.hi.1,
        r.hist_bins.0,
        r.hist_bins.1,
        r.hist_hits,
        r.hist_secs,
    )
}
