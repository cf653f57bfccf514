//! A workflow-scheduling suite built around three scheduler archetypes:
//!
//! * [`hub`] + [`worker`] — a pull-based task-graph server and its clients.
//!   Workers *steal* runnable tasks from a central hub that tracks a
//!   dependency DAG with join counters, recovers tasks from dead workers,
//!   and snapshots its database to disk.
//! * [`pmake`] — a file-directed parallel make: YAML rules and targets are
//!   backward-chained into a file DAG, prioritized by transitive node-hours,
//!   and run greedily inside a fixed node budget.
//! * [`dfm`] — a bulk-synchronous distributed list (a "distributed free
//!   monoid") over pluggable communicators, with map/reduce/scan/
//!   repartition/group operations.
//!
//! The [`metg`] module measures all three the same way: it sweeps task
//! granularity and reports the minimum effective task granularity (METG) —
//! the task duration at which scheduling overhead eats half the wall time —
//! plus a per-phase overhead breakdown.
//!
//! The wire protocol spoken between workers, relays, and the hub lives in
//! [`wire`]; the hub's state machine lives in [`graphstore`].

pub mod dfm;
pub mod graphstore;
pub mod hub;
pub mod metg;
pub mod pmake;
pub mod wire;
pub mod worker;
