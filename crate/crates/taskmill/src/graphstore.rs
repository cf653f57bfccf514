//! The hub's state machine: a two-table task database (task metadata plus
//! join counters and successor lists), a ready deque, per-worker
//! assignments, transitive error propagation, and snapshot/restore.
//!
//! The store is a single logical state machine — all mutating operations
//! are serialized by the owner. The server funnels every decoded message
//! through one event loop; tests drive a [`Store`] directly.
//!
//! Deque orientation: `steal` pops the serving end (front); tasks that
//! become ready the normal way (created with no pending dependencies, or a
//! join counter reaching zero) append at the back, giving oldest-first
//! FIFO service. Transfer-reinsertions whose dependencies are already
//! satisfied and exit-recovered tasks are pushed at the serving end so
//! they are handed out next.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::wire::{StatCounts, TaskSpec};

/// Lifecycle of one task.
///
/// Legal transitions: Waiting→Ready (last dependency done), Ready→Assigned
/// (steal), Assigned→Done (complete ok), Assigned→Errored (complete
/// not-ok), Assigned→Ready or Assigned→Waiting (transfer or worker exit),
/// and Waiting→Errored (transitive error propagation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskState {
    Waiting,
    Ready,
    Assigned,
    Done,
    Errored,
}

/// Task metadata row.
#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub spec: TaskSpec,
    pub state: TaskState,
    /// Present exactly while `state == Assigned`.
    pub assigned_to: Option<String>,
}

/// Join counter and successor list for one task.
///
/// The join counter counts not-yet-Done dependencies. A task appears in
/// the successors of `d` exactly when it was created (or transferred)
/// naming `d` as a dependency while `d` was unfinished. Successor lists
/// are append-only history; counters do the bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct DepEntry {
    pub join_counter: usize,
    pub successors: Vec<String>,
}

/// Outcome of a steal request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StealOutcome {
    /// Up to `n` tasks, oldest first, now assigned to the caller.
    Tasks(Vec<TaskSpec>),
    /// Nothing runnable, but waiting tasks remain — retry later.
    NotFound,
    /// No ready and no waiting tasks remain — the worker may exit.
    Exit,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("task {0:?} already exists")]
    DuplicateName(String),
    #[error("dependency {0:?} was never created")]
    UnknownDependency(String),
    #[error("task {task:?} is not assigned to worker {worker:?}")]
    NotAssigned { worker: String, task: String },
}

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

/// The two-table database plus the run-time structures derived from it.
///
/// Only the two tables are persisted by [`Store::snapshot`]; the ready
/// deque and assignment map are rebuilt on [`Store::restore`].
#[derive(Debug, Default)]
pub struct Store {
    tasks: BTreeMap<String, TaskRecord>,
    deps: BTreeMap<String, DepEntry>,
    ready: VecDeque<String>,
    /// worker → tasks in steal order; consistent with `assigned_to`.
    assignments: BTreeMap<String, Vec<String>>,
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Register a new task.
    ///
    /// With no unfinished dependencies the task is immediately ready (back
    /// of the deque). Otherwise it waits with a join counter equal to its
    /// count of distinct unfinished dependencies, and is recorded in each
    /// one's successor list. If any dependency is already errored the new
    /// task is errored from birth: error propagation extends to creations
    /// after the fact.
    pub fn create(&mut self, spec: TaskSpec, deps: &[String]) -> Result<(), StoreError> {
        if self.tasks.contains_key(&spec.name) {
            return Err(StoreError::DuplicateName(spec.name));
        }
        for d in deps {
            if !self.tasks.contains_key(d) {
                return Err(StoreError::UnknownDependency(d.clone()));
            }
        }
        let name = spec.name.clone();
        let (state, join_counter) = self.link_dependencies(&name, deps);
        self.tasks.insert(
            name.clone(),
            TaskRecord {
                spec,
                state,
                assigned_to: None,
            },
        );
        self.deps.insert(
            name.clone(),
            DepEntry {
                join_counter,
                successors: Vec::new(),
            },
        );
        if state == TaskState::Ready {
            self.ready.push_back(name);
        }
        Ok(())
    }

    /// Pop up to `n` tasks from the serving end and assign them to
    /// `worker`, oldest first. With an empty deque, waiting tasks mean
    /// [`StealOutcome::NotFound`]; otherwise (only done/errored — and
    /// possibly tasks assigned to other workers — remain) the worker is
    /// told to exit.
    pub fn steal(&mut self, worker: &str, n: usize) -> StealOutcome {
        debug_assert!(n >= 1, "steal count must be positive");
        if self.ready.is_empty() {
            let waiting = self
                .tasks
                .values()
                .any(|t| t.state == TaskState::Waiting);
            return if waiting {
                StealOutcome::NotFound
            } else {
                StealOutcome::Exit
            };
        }
        let mut out = Vec::new();
        while out.len() < n {
            let Some(name) = self.ready.pop_front() else {
                break;
            };
            let rec = self.tasks.get_mut(&name).expect("deque member exists");
            debug_assert_eq!(rec.state, TaskState::Ready);
            rec.state = TaskState::Assigned;
            rec.assigned_to = Some(worker.to_string());
            self.assignments
                .entry(worker.to_string())
                .or_default()
                .push(name.clone());
            out.push(rec.spec.clone());
        }
        StealOutcome::Tasks(out)
    }

    /// Report an assigned task. Success marks it done and decrements each
    /// successor's join counter, promoting those that reach zero to the
    /// back of the deque in successor-list order. Failure marks the task
    /// and its entire transitive successor closure errored.
    pub fn complete(&mut self, worker: &str, task: &str, ok: bool) -> Result<(), StoreError> {
        self.unassign(worker, task)?;
        if ok {
            self.tasks.get_mut(task).unwrap().state = TaskState::Done;
            let successors = self.deps[task].successors.clone();
            for s in successors {
                let entry = self.deps.get_mut(&s).expect("successor has a dep entry");
                debug_assert!(entry.join_counter > 0, "join counter underflow at {s}");
                entry.join_counter = entry.join_counter.saturating_sub(1);
                let rec = self.tasks.get_mut(&s).expect("successor exists");
                if entry.join_counter == 0 && rec.state == TaskState::Waiting {
                    rec.state = TaskState::Ready;
                    self.ready.push_back(s);
                }
            }
        } else {
            self.mark_errored_closure(task);
        }
        Ok(())
    }

    /// Hand an assigned task back with new dependencies. Unfinished new
    /// dependencies return it to waiting; otherwise it re-enters the deque
    /// at the serving end, ahead of everything already queued. An errored
    /// new dependency errors the task (and its successors) immediately.
    pub fn transfer(
        &mut self,
        worker: &str,
        task: &str,
        new_deps: &[String],
    ) -> Result<(), StoreError> {
        if !matches!(
            self.tasks.get(task),
            Some(rec) if rec.assigned_to.as_deref() == Some(worker)
        ) {
            return Err(StoreError::NotAssigned {
                worker: worker.to_string(),
                task: task.to_string(),
            });
        }
        for d in new_deps {
            if !self.tasks.contains_key(d) {
                return Err(StoreError::UnknownDependency(d.clone()));
            }
        }
        self.unassign(worker, task)?;
        let (state, join_counter) = self.link_dependencies(task, new_deps);
        self.deps.get_mut(task).unwrap().join_counter = join_counter;
        self.tasks.get_mut(task).unwrap().state = state;
        match state {
            TaskState::Ready => self.ready.push_front(task.to_string()),
            TaskState::Errored => self.mark_errored_closure(task),
            _ => {}
        }
        Ok(())
    }

    /// Move every task assigned to `worker` back to the serving end of the
    /// deque, preserving steal order (first stolen is served first again).
    /// Unknown workers are a no-op; the operation is idempotent.
    pub fn exit_worker(&mut self, worker: &str) {
        let Some(tasks) = self.assignments.remove(worker) else {
            return;
        };
        for name in tasks.iter().rev() {
            let rec = self.tasks.get_mut(name).expect("assigned task exists");
            debug_assert_eq!(rec.state, TaskState::Assigned);
            rec.state = TaskState::Ready;
            rec.assigned_to = None;
            self.ready.push_front(name.clone());
        }
    }

    /// Per-state counts plus deque length and assignment count.
    pub fn stats(&self) -> StatCounts {
        let mut c = StatCounts::default();
        for rec in self.tasks.values() {
            match rec.state {
                TaskState::Waiting => c.waiting += 1,
                TaskState::Ready => c.ready += 1,
                TaskState::Assigned => c.assigned += 1,
                TaskState::Done => c.done += 1,
                TaskState::Errored => c.errored += 1,
            }
        }
        c.deque = self.ready.len() as u64;
        c.assignments = self.assignments.values().map(|v| v.len() as u64).sum();
        c
    }

    pub fn task(&self, name: &str) -> Option<&TaskRecord> {
        self.tasks.get(name)
    }

    pub fn dep_entry(&self, name: &str) -> Option<&DepEntry> {
        self.deps.get(name)
    }

    /// Names of tasks currently assigned to `worker`, in steal order.
    pub fn assigned_to(&self, worker: &str) -> &[String] {
        self.assignments.get(worker).map_or(&[], |v| v.as_slice())
    }

    /// Classify `deps` (deduplicated) against the current tables and
    /// register `name` as a successor of each unfinished one.
    ///
    /// Returns the state the task should enter and its join counter: any
    /// errored dependency poisons the task immediately; otherwise a
    /// positive counter means waiting, zero means ready.
    fn link_dependencies(&mut self, name: &str, deps: &[String]) -> (TaskState, usize) {
        let mut seen: Vec<&String> = Vec::with_capacity(deps.len());
        let mut join_counter = 0;
        let mut poisoned = false;
        for d in deps {
            if seen.contains(&d) {
                continue;
            }
            seen.push(d);
            let dep_state = self.tasks[d].state;
            if dep_state == TaskState::Done {
                continue;
            }
            if dep_state == TaskState::Errored {
                poisoned = true;
            }
            join_counter += 1;
            self.deps
                .get_mut(d)
                .expect("dependency has a dep entry")
                .successors
                .push(name.to_string());
        }
        let state = if poisoned {
            TaskState::Errored
        } else if join_counter > 0 {
            TaskState::Waiting
        } else {
            TaskState::Ready
        };
        (state, join_counter)
    }

    /// Remove the (worker, task) assignment or report `NotAssigned`.
    fn unassign(&mut self, worker: &str, task: &str) -> Result<(), StoreError> {
        let not_assigned = || StoreError::NotAssigned {
            worker: worker.to_string(),
            task: task.to_string(),
        };
        let rec = self.tasks.get_mut(task).ok_or_else(not_assigned)?;
        if rec.assigned_to.as_deref() != Some(worker) {
            return Err(not_assigned());
        }
        rec.assigned_to = None;
        let held = self.assignments.get_mut(worker).ok_or_else(not_assigned)?;
        held.retain(|t| t != task);
        if held.is_empty() {
            self.assignments.remove(worker);
        }
        Ok(())
    }

    /// Mark `root` errored and propagate to its transitive successors.
    ///
    /// Only waiting tasks can be reached by propagation: a successor of an
    /// unfinished task can never have advanced past waiting, and tasks
    /// already errored by another path terminate the walk.
    fn mark_errored_closure(&mut self, root: &str) {
        self.tasks.get_mut(root).unwrap().state = TaskState::Errored;
        let mut frontier = vec![root.to_string()];
        while let Some(at) = frontier.pop() {
            let successors = self.deps[&at].successors.clone();
            for s in successors {
                let rec = self.tasks.get_mut(&s).expect("successor exists");
                if rec.state == TaskState::Waiting {
                    rec.state = TaskState::Errored;
                    frontier.push(s);
                }
            }
        }
    }
}

// --- snapshot / restore ----------------------------------------------------

/// Magic token opening every snapshot file.
const SNAPSHOT_MAGIC: &str = "taskmill.snapshot";
/// Current snapshot format version.
const SNAPSHOT_VERSION: u32 = 1;

/// One persisted task row. Assigned tasks are collapsed to `ready`:
/// run-time assignment is not part of the durable state and recovery
/// re-serves those tasks.
#[derive(Debug, Serialize, Deserialize)]
struct SnapshotRow {
    name: String,
    payload: String,
    originator: String,
    state: String,
    join_counter: usize,
    successors: Vec<String>,
}

impl Store {
    /// Persist the two tables. Line 1 is a header with format version and
    /// task count; then one JSON object per task in name order; then a
    /// checksum trailer over all preceding octets.
    pub fn snapshot(&self, sink: &mut dyn Write) -> Result<(), SnapshotError> {
        let mut buf = Vec::new();
        writeln!(
            buf,
            "{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION} tasks={}",
            self.tasks.len()
        )?;
        for (name, rec) in &self.tasks {
            let entry = &self.deps[name];
            let state = match rec.state {
                TaskState::Waiting => "waiting",
                // Assignment is run-time info, regenerated on startup.
                TaskState::Ready | TaskState::Assigned => "ready",
                TaskState::Done => "done",
                TaskState::Errored => "errored",
            };
            let row = SnapshotRow {
                name: name.clone(),
                payload: rec.spec.payload.clone(),
                originator: rec.spec.originator.clone(),
                state: state.to_string(),
                join_counter: entry.join_counter,
                successors: entry.successors.clone(),
            };
            serde_json::to_writer(&mut buf, &row).map_err(|e| {
                SnapshotError::Io(io::Error::new(io::ErrorKind::Other, e))
            })?;
            buf.push(b'\n');
        }
        let digest = Sha256::digest(&buf);
        writeln!(buf, "sha256 {}", hex(&digest))?;
        sink.write_all(&buf)?;
        sink.flush()?;
        Ok(())
    }

    /// Rebuild a store from a snapshot. The ready deque is derived — every
    /// task with a zero join counter that is neither done nor errored — in
    /// table (name) order, and the assignment map starts empty.
    pub fn restore(source: &mut dyn BufRead) -> Result<Store, SnapshotError> {
        let corrupt = |m: &str| SnapshotError::Corrupt(m.to_string());
        let mut text = String::new();
        source.read_to_string(&mut text)?;

        let mut lines = text.split_inclusive('\n');
        let header = lines.next().ok_or_else(|| corrupt("empty file"))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(SNAPSHOT_MAGIC) {
            return Err(corrupt("missing magic token"));
        }
        let version = fields.next().unwrap_or("");
        if version != format!("v{SNAPSHOT_VERSION}") {
            return Err(SnapshotError::Corrupt(format!(
                "unsupported format version {version:?}"
            )));
        }
        let count: usize = fields
            .next()
            .and_then(|f| f.strip_prefix("tasks="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| corrupt("missing task count"))?;

        let mut store = Store::new();
        let mut checked = header.len();
        let mut rows = 0usize;
        let mut trailer = None;
        for line in lines {
            let body = line.trim_end_matches('\n');
            if let Some(sum) = body.strip_prefix("sha256 ") {
                trailer = Some(sum.to_string());
                break;
            }
            checked += line.len();
            let row: SnapshotRow = serde_json::from_str(body)
                .map_err(|e| SnapshotError::Corrupt(format!("bad task row: {e}")))?;
            let state = match row.state.as_str() {
                "waiting" => TaskState::Waiting,
                "ready" => TaskState::Ready,
                "done" => TaskState::Done,
                "errored" => TaskState::Errored,
                other => {
                    return Err(SnapshotError::Corrupt(format!(
                        "unknown task state {other:?}"
                    )))
                }
            };
            if store.tasks.contains_key(&row.name) {
                return Err(SnapshotError::Corrupt(format!(
                    "duplicate task {:?}",
                    row.name
                )));
            }
            store.tasks.insert(
                row.name.clone(),
                TaskRecord {
                    spec: TaskSpec {
                        name: row.name.clone(),
                        payload: row.payload,
                        originator: row.originator,
                    },
                    state,
                    assigned_to: None,
                },
            );
            store.deps.insert(
                row.name,
                DepEntry {
                    join_counter: row.join_counter,
                    successors: row.successors,
                },
            );
            rows += 1;
        }
        let trailer = trailer.ok_or_else(|| corrupt("missing checksum trailer"))?;
        if rows != count {
            return Err(SnapshotError::Corrupt(format!(
                "header says {count} tasks, found {rows}"
            )));
        }
        let digest = Sha256::digest(text[..checked].as_bytes());
        if trailer != hex(&digest) {
            return Err(corrupt("checksum mismatch"));
        }
        for entry in store.deps.values() {
            for s in &entry.successors {
                if !store.tasks.contains_key(s) {
                    return Err(SnapshotError::Corrupt(format!(
                        "successor {s:?} names a missing task"
                    )));
                }
            }
        }
        // Derive the ready set: zero join counter, not finished. The deque
        // comes back in deterministic table order; only the set matters.
        let ready: Vec<String> = store
            .tasks
            .iter()
            .filter(|(name, rec)| {
                store.deps[*name].join_counter == 0
                    && !matches!(rec.state, TaskState::Done | TaskState::Errored)
            })
            .map(|(name, _)| name.clone())
            .collect();
        for name in ready {
            store.tasks.get_mut(&name).unwrap().state = TaskState::Ready;
            store.ready.push_back(name);
        }
        Ok(store)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str) -> TaskSpec {
        TaskSpec::new(name, format!("payload of {name}"), "test")
    }

    fn store_with(names: &[(&str, &[&str])]) -> Store {
        let mut s = Store::new();
        for (name, deps) in names {
            let deps: Vec<String> = deps.iter().map(|d| d.to_string()).collect();
            s.create(spec(name), &deps).unwrap();
        }
        s
    }

    fn steal_names(s: &mut Store, worker: &str, n: usize) -> Vec<String> {
        match s.steal(worker, n) {
            StealOutcome::Tasks(t) => t.into_iter().map(|t| t.name).collect(),
            other => panic!("expected tasks, got {other:?}"),
        }
    }

    #[test]
    fn create_without_deps_is_immediately_ready() {
        let mut s = store_with(&[("A", &[])]);
        assert_eq!(s.task("A").unwrap().state, TaskState::Ready);
        assert_eq!(steal_names(&mut s, "w", 1), ["A"]);
    }

    #[test]
    fn create_with_pending_dep_waits_and_registers_successor() {
        let s = store_with(&[("A", &[]), ("B", &["A"])]);
        assert_eq!(s.task("B").unwrap().state, TaskState::Waiting);
        assert_eq!(s.dep_entry("B").unwrap().join_counter, 1);
        assert_eq!(s.dep_entry("A").unwrap().successors, ["B"]);
    }

    #[test]
    fn join_counter_holds_until_every_dep_completes() {
        let mut s = store_with(&[("A", &[]), ("B", &["A"]), ("C", &["A", "B"])]);
        assert_eq!(s.dep_entry("C").unwrap().join_counter, 2);
        assert_eq!(steal_names(&mut s, "w", 1), ["A"]);
        s.complete("w", "A", true).unwrap();
        assert_eq!(s.task("C").unwrap().state, TaskState::Waiting);
        assert_eq!(steal_names(&mut s, "w", 1), ["B"]);
        s.complete("w", "B", true).unwrap();
        assert_eq!(s.task("C").unwrap().state, TaskState::Ready);
    }

    #[test]
    fn duplicate_and_unknown_names_are_rejected() {
        let mut s = store_with(&[("A", &[])]);
        assert!(matches!(
            s.create(spec("A"), &[]),
            Err(StoreError::DuplicateName(_))
        ));
        assert!(matches!(
            s.create(spec("B"), &["nope".to_string()]),
            Err(StoreError::UnknownDependency(_))
        ));
        // The failed create must not have left a partial row behind.
        assert!(s.task("B").is_none());
        assert_eq!(s.stats().total(), 1);
    }

    #[test]
    fn duplicate_deps_count_once() {
        let mut s = store_with(&[("A", &[])]);
        s.create(spec("B"), &["A".to_string(), "A".to_string()])
            .unwrap();
        assert_eq!(s.dep_entry("B").unwrap().join_counter, 1);
        assert_eq!(s.dep_entry("A").unwrap().successors, ["B"]);
        let w = "w";
        assert_eq!(steal_names(&mut s, w, 1), ["A"]);
        s.complete(w, "A", true).unwrap();
        assert_eq!(s.task("B").unwrap().state, TaskState::Ready);
    }

    #[test]
    fn create_on_done_dep_is_ready_create_on_errored_dep_is_errored() {
        let mut s = store_with(&[("A", &[]), ("F", &[])]);
        steal_names(&mut s, "w", 2);
        s.complete("w", "A", true).unwrap();
        s.complete("w", "F", false).unwrap();
        s.create(spec("afterA"), &["A".to_string()]).unwrap();
        assert_eq!(s.task("afterA").unwrap().state, TaskState::Ready);
        s.create(spec("afterF"), &["F".to_string()]).unwrap();
        assert_eq!(s.task("afterF").unwrap().state, TaskState::Errored);
    }

    #[test]
    fn steal_pops_oldest_first_and_batches() {
        let mut s = store_with(&[("A", &[]), ("B", &[]), ("C", &[])]);
        assert_eq!(steal_names(&mut s, "w", 2), ["A", "B"]);
        assert_eq!(s.task("A").unwrap().assigned_to.as_deref(), Some("w"));
        assert_eq!(s.assigned_to("w"), ["A", "B"]);
        // A short deque yields a short batch, not NotFound.
        assert_eq!(steal_names(&mut s, "w", 5), ["C"]);
    }

    #[test]
    fn steal_distinguishes_notfound_from_exit() {
        let mut s = store_with(&[("A", &[]), ("B", &["A"])]);
        assert_eq!(steal_names(&mut s, "w", 1), ["A"]);
        // B still waits on A: not found, retry later.
        assert_eq!(s.steal("v", 1), StealOutcome::NotFound);
        s.complete("w", "A", true).unwrap();
        assert_eq!(steal_names(&mut s, "v", 1), ["B"]);
        // B assigned, nothing waiting: other workers may leave.
        assert_eq!(s.steal("w", 1), StealOutcome::Exit);
        s.complete("v", "B", true).unwrap();
        assert_eq!(s.steal("v", 1), StealOutcome::Exit);
    }

    #[test]
    fn complete_is_rejected_twice_and_from_the_wrong_worker() {
        let mut s = store_with(&[("A", &[])]);
        steal_names(&mut s, "w", 1);
        assert!(matches!(
            s.complete("intruder", "A", true),
            Err(StoreError::NotAssigned { .. })
        ));
        s.complete("w", "A", true).unwrap();
        assert!(matches!(
            s.complete("w", "A", true),
            Err(StoreError::NotAssigned { .. })
        ));
    }

    #[test]
    fn failure_errors_the_transitive_closure() {
        let mut s = store_with(&[
            ("A", &[]),
            ("B", &["A"]),
            ("C", &["B"]),
            ("side", &[]),
        ]);
        steal_names(&mut s, "w", 1);
        s.complete("w", "A", false).unwrap();
        for t in ["A", "B", "C"] {
            assert_eq!(s.task(t).unwrap().state, TaskState::Errored, "{t}");
        }
        assert_eq!(s.task("side").unwrap().state, TaskState::Ready);
        // The poisoned graph still drains workers: side is the one ready
        // task left, then Exit.
        assert_eq!(steal_names(&mut s, "w", 1), ["side"]);
        s.complete("w", "side", true).unwrap();
        assert_eq!(s.steal("w", 1), StealOutcome::Exit);
    }

    #[test]
    fn transfer_with_pending_dep_waits_then_reruns() {
        let mut s = store_with(&[("A", &[]), ("B", &[])]);
        assert_eq!(steal_names(&mut s, "w", 1), ["A"]);
        s.transfer("w", "A", &["B".to_string()]).unwrap();
        assert_eq!(s.task("A").unwrap().state, TaskState::Waiting);
        assert_eq!(s.dep_entry("B").unwrap().successors, ["A"]);
        assert_eq!(steal_names(&mut s, "w", 1), ["B"]);
        s.complete("w", "B", true).unwrap();
        // A runs again after its new dependency.
        assert_eq!(steal_names(&mut s, "w", 1), ["A"]);
    }

    #[test]
    fn transfer_with_satisfied_deps_reinserts_at_serving_end() {
        let mut s = store_with(&[("D", &[]), ("A", &[]), ("X", &[])]);
        let w = "w";
        assert_eq!(steal_names(&mut s, w, 2), ["D", "A"]);
        s.complete(w, "D", true).unwrap();
        // Deque currently holds [X]; A returns with its dep already done.
        s.transfer(w, "A", &["D".to_string()]).unwrap();
        assert_eq!(steal_names(&mut s, w, 2), ["A", "X"]);
    }

    #[test]
    fn transfer_can_deadlock_the_graph_detectably() {
        // A transferred onto its own successor never becomes ready; steal
        // reports NotFound forever and stat shows the waiting remainder.
        let mut s = store_with(&[("A", &[]), ("B", &["A"])]);
        steal_names(&mut s, "w", 1);
        s.transfer("w", "A", &["B".to_string()]).unwrap();
        assert_eq!(s.steal("w", 1), StealOutcome::NotFound);
        let c = s.stats();
        assert_eq!((c.waiting, c.ready, c.assigned, c.deque), (2, 0, 0, 0));
    }

    #[test]
    fn exit_recovers_assigned_tasks_ahead_of_the_queue() {
        let mut s = store_with(&[("A", &[]), ("B", &[]), ("C", &[])]);
        assert_eq!(steal_names(&mut s, "w", 2), ["A", "B"]);
        s.exit_worker("w");
        assert!(s.assigned_to("w").is_empty());
        // Recovered tasks come back in steal order, ahead of C.
        assert_eq!(steal_names(&mut s, "v", 3), ["A", "B", "C"]);
    }

    #[test]
    fn exit_of_unknown_worker_is_a_noop() {
        let mut s = store_with(&[("A", &[])]);
        s.exit_worker("ghost");
        assert_eq!(s.stats().ready, 1);
    }

    #[test]
    fn stats_track_states_and_sum_to_creations() {
        let mut s = Store::new();
        assert_eq!(s.stats(), StatCounts::default());
        s.create(spec("A"), &[]).unwrap();
        s.create(spec("B"), &["A".to_string()]).unwrap();
        let c = s.stats();
        assert_eq!((c.ready, c.waiting), (1, 1));
        assert_eq!(c.total(), 2);
        steal_names(&mut s, "w", 1);
        let c = s.stats();
        assert_eq!((c.ready, c.assigned, c.deque, c.assignments), (0, 1, 0, 1));
        assert_eq!(c.total(), 2);
    }

    #[test]
    fn snapshot_roundtrips_and_collapses_assignments() {
        let mut s = store_with(&[("A", &[]), ("B", &["A"]), ("C", &["B"])]);
        steal_names(&mut s, "w", 1);
        let mut buf = Vec::new();
        s.snapshot(&mut buf).unwrap();
        let restored = Store::restore(&mut buf.as_slice()).unwrap();
        // A was assigned; it comes back ready with no assignments.
        assert_eq!(restored.task("A").unwrap().state, TaskState::Ready);
        assert!(restored.assigned_to("w").is_empty());
        assert_eq!(restored.task("B").unwrap().state, TaskState::Waiting);
        assert_eq!(restored.dep_entry("B").unwrap().join_counter, 1);
        assert_eq!(restored.dep_entry("A").unwrap().successors, ["B"]);
        let mut c = s.stats();
        // Post-restore stats agree once assignment is folded into ready.
        c.ready += c.assigned;
        c.deque += c.assigned;
        c.assigned = 0;
        c.assignments = 0;
        assert_eq!(restored.stats(), c);
    }

    #[test]
    fn snapshot_of_empty_store_roundtrips() {
        let s = Store::new();
        let mut buf = Vec::new();
        s.snapshot(&mut buf).unwrap();
        let restored = Store::restore(&mut buf.as_slice()).unwrap();
        assert_eq!(restored.stats(), StatCounts::default());
    }

    #[test]
    fn snapshot_layout_is_stable() {
        let mut s = store_with(&[("A", &[]), ("B", &["A"])]);
        let _ = s.steal("w", 1);
        let mut buf = Vec::new();
        s.snapshot(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "taskmill.snapshot v1 tasks=2");
        assert_eq!(
            lines[1],
            r#"{"name":"A","payload":"payload of A","originator":"test","state":"ready","join_counter":0,"successors":["B"]}"#
        );
        assert_eq!(
            lines[2],
            r#"{"name":"B","payload":"payload of B","originator":"test","state":"waiting","join_counter":1,"successors":[]}"#
        );
        assert!(lines[3].starts_with("sha256 "), "trailer: {}", lines[3]);
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn tampered_snapshots_are_rejected() {
        let s = store_with(&[("A", &[])]);
        let mut buf = Vec::new();
        s.snapshot(&mut buf).unwrap();

        let good = String::from_utf8(buf).unwrap();
        let flipped = good.replace("payload of A", "payload of Z");
        let err = Store::restore(&mut flipped.as_bytes()).unwrap_err();
        assert!(matches!(err, SnapshotError::Corrupt(m) if m.contains("checksum")));

        let truncated = &good[..good.len() - 20];
        assert!(Store::restore(&mut truncated.as_bytes()).is_err());

        let wrong_magic = good.replace(SNAPSHOT_MAGIC, "somethingelse");
        assert!(Store::restore(&mut wrong_magic.as_bytes()).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        /// Random DAG: each task may depend on a subset of earlier tasks.
        fn arb_dag(max: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
            proptest::collection::vec(proptest::collection::vec(any::<prop::sample::Index>(), 0..4), 1..max)
                .prop_map(|raw| {
                    raw.into_iter()
                        .enumerate()
                        .map(|(i, picks)| {
                            let mut deps: Vec<usize> = picks
                                .into_iter()
                                .filter(|_| i > 0)
                                .map(|ix| ix.index(i.max(1)))
                                .collect();
                            deps.sort_unstable();
                            deps.dedup();
                            deps
                        })
                        .collect()
                })
        }

        fn name(i: usize) -> String {
            format!("t{i}")
        }

        proptest! {
            /// Conservation + liveness: a single worker draining any DAG
            /// visits every task exactly once, in dependency order.
            #[test]
            fn single_worker_drains_any_dag(dag in arb_dag(40)) {
                let mut s = Store::new();
                for (i, deps) in dag.iter().enumerate() {
                    let deps: Vec<String> = deps.iter().map(|d| name(*d)).collect();
                    s.create(spec(&name(i)), &deps).unwrap();
                }
                let mut done = vec![false; dag.len()];
                let mut served = 0usize;
                loop {
                    match s.steal("w", 1) {
                        StealOutcome::Tasks(tasks) => {
                            let t = &tasks[0].name;
                            let i: usize = t[1..].parse().unwrap();
                            // Never-early: all deps are done.
                            for d in &dag[i] {
                                prop_assert!(done[*d], "{t} served before t{d}");
                            }
                            prop_assert!(!done[i], "{t} served twice");
                            done[i] = true;
                            served += 1;
                            s.complete("w", t, true).unwrap();
                        }
                        StealOutcome::NotFound => prop_assert!(false, "single worker starved"),
                        StealOutcome::Exit => break,
                    }
                }
                prop_assert_eq!(served, dag.len());
                let c = s.stats();
                prop_assert_eq!(c.done as usize, dag.len());
                prop_assert_eq!(c.total() as usize, dag.len());
            }

            /// Snapshot fidelity at an arbitrary drain point.
            #[test]
            fn snapshot_restores_tables_at_any_point(dag in arb_dag(30), cut in 0usize..30) {
                let mut s = Store::new();
                for (i, deps) in dag.iter().enumerate() {
                    let deps: Vec<String> = deps.iter().map(|d| name(*d)).collect();
                    s.create(spec(&name(i)), &deps).unwrap();
                }
                for _ in 0..cut {
                    match s.steal("w", 1) {
                        StealOutcome::Tasks(tasks) => {
                            s.complete("w", &tasks[0].name, true).unwrap();
                        }
                        _ => break,
                    }
                }
                // Leave something assigned if possible.
                let _ = s.steal("w", 1);
                let mut buf = Vec::new();
                s.snapshot(&mut buf).unwrap();
                let restored = Store::restore(&mut buf.as_slice()).unwrap();
                for i in 0..dag.len() {
                    let n = name(i);
                    let a = s.task(&n).unwrap();
                    let b = restored.task(&n).unwrap();
                    prop_assert_eq!(&a.spec, &b.spec);
                    let collapsed = match a.state {
                        TaskState::Assigned => TaskState::Ready,
                        st => st,
                    };
                    prop_assert_eq!(collapsed, b.state);
                    prop_assert_eq!(
                        s.dep_entry(&n).unwrap().join_counter,
                        restored.dep_entry(&n).unwrap().join_counter
                    );
                    prop_assert_eq!(
                        &s.dep_entry(&n).unwrap().successors,
                        &restored.dep_entry(&n).unwrap().successors
                    );
                }
                prop_assert_eq!(restored.stats().assignments, 0);
            }

            /// Conservation holds under random interleavings that include
            /// failures, transfers, and worker exits.
            #[test]
            fn conservation_under_chaos(
                dag in arb_dag(30),
                moves in proptest::collection::vec((any::<u8>(), any::<prop::sample::Index>()), 0..120),
            ) {
                let mut s = Store::new();
                for (i, deps) in dag.iter().enumerate() {
                    let deps: Vec<String> = deps.iter().map(|d| name(*d)).collect();
                    s.create(spec(&name(i)), &deps).unwrap();
                }
                let workers = ["w0", "w1", "w2"];
                let mut held: Vec<Vec<String>> = vec![vec![]; workers.len()];
                for (op, pick) in moves {
                    let w = (op % 3) as usize;
                    match op % 5 {
                        0 | 1 => {
                            if let StealOutcome::Tasks(tasks) = s.steal(workers[w], 1 + (op as usize % 3)) {
                                held[w].extend(tasks.into_iter().map(|t| t.name));
                            }
                        }
                        2 => {
                            if !held[w].is_empty() {
                                let at = pick.index(held[w].len());
                                let t = held[w].remove(at);
                                s.complete(workers[w], &t, op & 0x10 == 0).unwrap();
                            }
                        }
                        3 => {
                            if !held[w].is_empty() {
                                let at = pick.index(held[w].len());
                                let t = held[w].remove(at);
                                s.transfer(workers[w], &t, &[]).unwrap();
                            }
                        }
                        _ => {
                            s.exit_worker(workers[w]);
                            held[w].clear();
                        }
                    }
                    let c = s.stats();
                    prop_assert_eq!(c.total() as usize, dag.len());
                    prop_assert_eq!(c.deque, c.ready);
                    prop_assert_eq!(c.assignments, c.assigned);
                }
            }
        }
    }
}
