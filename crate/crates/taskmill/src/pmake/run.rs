//! The greedy node-budgeted scheduler: start the highest-priority
//! runnable node that fits the free nodes, reap children, repeat.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use super::plan::{NodeState, Plan};
use super::subst::{render, substitute, Env};
use super::{PmakeError, ResourceSet};

/// Where and how scripts launch: the node budget and the `{mpirun}`
/// launcher expansion.
#[derive(Debug, Clone)]
pub struct MachineConfig {
    pub total_nodes: u64,
    /// Template with `{nrs}`, `{cpu}`, `{gpu}`, `{ranks}` (and `{time}`)
    /// placeholders; empty = run commands unwrapped.
    pub launcher_template: String,
    pub flavor: String,
}

impl MachineConfig {
    /// Plain local execution: `{mpirun}` expands to nothing.
    pub fn local(total_nodes: u64) -> Self {
        MachineConfig {
            total_nodes,
            launcher_template: String::new(),
            flavor: "local".into(),
        }
    }

    /// Slurm-style `srun` launcher.
    pub fn slurm(total_nodes: u64) -> Self {
        MachineConfig {
            total_nodes,
            launcher_template:
                "srun -N {nrs} --ntasks-per-node {ranks} -c {cpu} --gpus-per-node {gpu}".into(),
            flavor: "slurm".into(),
        }
    }

    /// LSF-style `jsrun` launcher (resource-set flags map one to one).
    pub fn lsf(total_nodes: u64) -> Self {
        MachineConfig {
            total_nodes,
            launcher_template: "jsrun -n {nrs} -a {ranks} -c {cpu} -g {gpu}".into(),
            flavor: "lsf".into(),
        }
    }

    /// Expand the launcher for one node's resources.
    pub fn launcher(&self, r: &ResourceSet) -> Result<String, PmakeError> {
        let mut env = Env::default();
        env.plain.insert("nrs".into(), r.nrs.to_string());
        env.plain.insert("cpu".into(), r.cpu.to_string());
        env.plain.insert("gpu".into(), r.gpu.to_string());
        env.plain.insert("ranks".into(), r.ranks.to_string());
        env.plain.insert("time".into(), r.time.to_string());
        render(&self.launcher_template, &env)
    }
}

/// Per-node outcome of a run.
#[derive(Debug, Clone)]
pub struct NodeReport {
    pub id: String,
    pub state: NodeState,
    pub wall: Option<Duration>,
    pub exit: Option<i32>,
    /// Declared output that was absent after a zero exit, if any.
    pub missing_output: Option<String>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub nodes: Vec<NodeReport>,
    /// Scripts actually spawned (skipped nodes spawn nothing).
    pub spawned: usize,
}

impl RunReport {
    pub fn all_ok(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| matches!(n.state, NodeState::Done | NodeState::Skipped))
    }
}

struct RunningNode {
    id: String,
    child: Child,
    started: Instant,
}

/// Run the plan: greedy argmax over runnable nodes within the node
/// budget, scripts rendered to `<id>.sh` and logged to `<id>.log` beside
/// the build root.
pub fn schedule_run(plan: &mut Plan, machine: &MachineConfig) -> Result<RunReport, PmakeError> {
    for node in plan.nodes.values() {
        if node.state != NodeState::Skipped && node.resources.nrs > machine.total_nodes {
            return Err(PmakeError::NodeExceedsMachine(
                node.id.clone(),
                node.resources.nrs,
                machine.total_nodes,
            ));
        }
    }
    let mut running: Vec<RunningNode> = Vec::new();
    let outcome = drive(plan, machine, &mut running);
    if outcome.is_err() {
        for mut r in running {
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }
    outcome
}

fn drive(
    plan: &mut Plan,
    machine: &MachineConfig,
    running: &mut Vec<RunningNode>,
) -> Result<RunReport, PmakeError> {
    let root = plan.root.clone();
    let mut free = machine.total_nodes;
    let mut walls: BTreeMap<String, Duration> = BTreeMap::new();
    let mut exits: BTreeMap<String, i32> = BTreeMap::new();
    let mut missing: BTreeMap<String, String> = BTreeMap::new();
    let mut logs: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut spawned = 0usize;

    loop {
        // Promote: pending nodes whose producers finished and whose input
        // files are all really on disk (never early).
        let promote: Vec<String> = plan
            .nodes
            .values()
            .filter(|n| n.state == NodeState::Pending)
            .filter(|n| {
                n.deps.iter().all(|d| {
                    matches!(
                        plan.nodes[d].state,
                        NodeState::Done | NodeState::Skipped
                    )
                })
            })
            .filter(|n| {
                n.inputs
                    .iter()
                    .all(|f| root.join(&n.dirname).join(f).exists())
            })
            .map(|n| n.id.clone())
            .collect();
        for id in promote {
            plan.nodes.get_mut(&id).unwrap().state = NodeState::Runnable;
        }

        // Start: highest priority first, lexicographic id on ties, only
        // what fits in the free budget.
        loop {
            let pick = plan
                .nodes
                .values()
                .filter(|n| n.state == NodeState::Runnable && n.resources.nrs <= free)
                .max_by(|a, b| {
                    a.priority
                        .partial_cmp(&b.priority)
                        .expect("priorities are finite")
                        .then_with(|| b.id.cmp(&a.id))
                })
                .map(|n| n.id.clone());
            let Some(id) = pick else { break };
            let text = substitute(plan, &id, machine)?;
            let sh = root.join(format!("{id}.sh"));
            let log = root.join(format!("{id}.log"));
            fs::write(&sh, text)?;
            let log_file = fs::File::create(&log)?;
            let child = Command::new("sh")
                .arg(&sh)
                .current_dir(&root)
                .stdin(Stdio::null())
                .stdout(log_file.try_clone()?)
                .stderr(log_file)
                .spawn()?;
            let node = plan.nodes.get_mut(&id).unwrap();
            node.state = NodeState::Running;
            free -= node.resources.nrs;
            spawned += 1;
            logs.insert(id.clone(), log);
            running.push(RunningNode {
                id,
                child,
                started: Instant::now(),
            });
        }

        if running.is_empty() {
            break;
        }

        // Reap at least one child before reconsidering the plan.
        let finished = wait_for_exit(running)?;
        for (done, status, started) in finished {
            let wall = started.elapsed();
            free += done_nrs(plan, &done);
            walls.insert(done.clone(), wall);
            let code = status;
            if let Some(c) = code {
                exits.insert(done.clone(), c);
            }
            let ok = code == Some(0);
            let missing_out = if ok {
                let node = &plan.nodes[&done];
                node.outputs
                    .iter()
                    .find(|f| !root.join(&node.dirname).join(f).exists())
                    .cloned()
            } else {
                None
            };
            let new_state = if ok && missing_out.is_none() {
                NodeState::Done
            } else {
                NodeState::Failed
            };
            if let Some(m) = missing_out {
                missing.insert(done.clone(), m);
            }
            plan.nodes.get_mut(&done).unwrap().state = new_state;
            if new_state == NodeState::Failed {
                fail_closure(plan, &done);
            }
        }
    }

    let nodes = plan
        .nodes
        .values()
        .map(|n| NodeReport {
            id: n.id.clone(),
            state: n.state,
            wall: walls.get(&n.id).copied(),
            exit: exits.get(&n.id).copied(),
            missing_output: missing.get(&n.id).cloned(),
            log: logs.get(&n.id).cloned(),
        })
        .collect();
    Ok(RunReport { nodes, spawned })
}

fn done_nrs(plan: &Plan, id: &str) -> u64 {
    plan.nodes[id].resources.nrs
}

/// Block (polling) until at least one child exits; return their ids,
/// exit codes (None = killed by signal), and start instants.
fn wait_for_exit(
    running: &mut Vec<RunningNode>,
) -> Result<Vec<(String, Option<i32>, Instant)>, PmakeError> {
    loop {
        let mut finished = Vec::new();
        let mut i = 0;
        while i < running.len() {
            match running[i].child.try_wait()? {
                Some(status) => {
                    let r = running.swap_remove(i);
                    finished.push((r.id, status.code(), r.started));
                }
                None => i += 1,
            }
        }
        if !finished.is_empty() {
            return Ok(finished);
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// A failed node poisons everything downstream of it.
fn fail_closure(plan: &mut Plan, failed: &str) {
    let mut stack = vec![failed.to_string()];
    while let Some(id) = stack.pop() {
        let succs: Vec<String> = plan.nodes[&id].successors.iter().cloned().collect();
        for s in succs {
            let node = plan.nodes.get_mut(&s).unwrap();
            if matches!(node.state, NodeState::Pending | NodeState::Runnable) {
                node.state = NodeState::Failed;
                stack.push(s);
            }
        }
    }
}

/// Pure simulation of the greedy choice sequence: every script is assumed
/// to succeed and to take exactly its declared time. Used to reason about
/// scheduling order without spawning anything (`--dry-run`).
pub fn dry_sequence(plan: &Plan, total_nodes: u64) -> Vec<String> {
    let mut state: BTreeMap<&str, NodeState> =
        plan.nodes.values().map(|n| (n.id.as_str(), n.state)).collect();
    let mut free = total_nodes;
    let mut clock = 0u64;
    let mut running: Vec<(u64, &str)> = Vec::new(); // (finish, id)
    let mut seq = Vec::new();
    loop {
        for n in plan.nodes.values() {
            if state[n.id.as_str()] == NodeState::Pending
                && n.deps.iter().all(|d| {
                    matches!(
                        state[d.as_str()],
                        NodeState::Done | NodeState::Skipped
                    )
                })
            {
                state.insert(&n.id, NodeState::Runnable);
            }
        }
        loop {
            let pick = plan
                .nodes
                .values()
                .filter(|n| state[n.id.as_str()] == NodeState::Runnable && n.resources.nrs <= free)
                .max_by(|a, b| {
                    a.priority
                        .partial_cmp(&b.priority)
                        .expect("priorities are finite")
                        .then_with(|| b.id.cmp(&a.id))
                });
            let Some(n) = pick else { break };
            state.insert(&n.id, NodeState::Running);
            free -= n.resources.nrs;
            seq.push(n.id.clone());
            running.push((clock + n.resources.time, n.id.as_str()));
        }
        if running.is_empty() {
            break;
        }
        let finish = running.iter().map(|(f, _)| *f).min().unwrap();
        clock = finish;
        let mut i = 0;
        while i < running.len() {
            if running[i].0 == finish {
                let (_, id) = running.swap_remove(i);
                state.insert(id, NodeState::Done);
                free += plan.nodes[id].resources.nrs;
            } else {
                i += 1;
            }
        }
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmake::fixtures::{RULES, TARGETS};
    use crate::pmake::parse::{parse_rules, parse_targets};
    use crate::pmake::plan::resolve_plan;

    fn resolve(rules: &str, targets: &str, dir: &tempfile::TempDir) -> Plan {
        let rules = parse_rules(rules).unwrap();
        let targets = parse_targets(targets).unwrap();
        resolve_plan(&rules, &targets, dir.path()).unwrap()
    }

    fn report_for<'a>(report: &'a RunReport, id: &str) -> &'a NodeReport {
        report.nodes.iter().find(|n| n.id == id).unwrap()
    }

    #[test]
    fn launcher_templates_render_per_flavor() {
        let r = ResourceSet {
            time: 120,
            nrs: 10,
            cpu: 42,
            gpu: 6,
            ranks: 1,
        };
        assert_eq!(MachineConfig::local(4).launcher(&r).unwrap(), "");
        assert_eq!(
            MachineConfig::slurm(12).launcher(&r).unwrap(),
            "srun -N 10 --ntasks-per-node 1 -c 42 --gpus-per-node 6"
        );
        assert_eq!(
            MachineConfig::lsf(12).launcher(&r).unwrap(),
            "jsrun -n 10 -a 1 -c 42 -g 6"
        );
    }

    #[test]
    fn substituted_scripts_embed_the_launcher() {
        let dir = tempfile::tempdir().unwrap();
        let sys = dir.path().join("System1");
        std::fs::create_dir(&sys).unwrap();
        for n in 1..=10 {
            std::fs::write(sys.join(format!("{n}.param")), "").unwrap();
        }
        let plan = resolve(RULES, TARGETS, &dir);

        let slurm = substitute(&plan, "simulate.2", &MachineConfig::slurm(12)).unwrap();
        assert!(slurm.starts_with("set -e\ncd System1\nmodule load cuda\n"));
        assert!(slurm.contains(
            "srun -N 10 --ntasks-per-node 1 -c 42 --gpus-per-node 6 simulate 2.param 2.trj"
        ));

        // An empty launcher leaves the command bare (modulo the leading
        // space where {mpirun} stood).
        let local = substitute(&plan, "simulate.2", &MachineConfig::local(12)).unwrap();
        assert!(local.contains("\n simulate 2.param 2.trj"));
    }

    #[test]
    fn setup_lines_cannot_use_the_launcher() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.in"), "").unwrap();
        let rules = "\
a:
  resources: {time: 1}
  out: {f: x.out}
  setup: \"{mpirun} echo nope\"
  script: touch {out[f]}
";
        let targets = "\
t:
  dirname: .
  out: {f: x.out}
";
        let plan = resolve(rules, targets, &dir);
        let err = substitute(&plan, "a", &MachineConfig::local(1)).unwrap_err();
        assert!(matches!(err, PmakeError::UnboundPlaceholder(ref n) if n == "mpirun"));
    }

    #[test]
    fn the_node_budget_caps_concurrency() {
        let dir = tempfile::tempdir().unwrap();
        let rules = "\
task:
  resources: {time: 1}
  out:
    stamp: \"{n}.done\"
  script: |
    date +%s%N > {out[stamp]}.start
    sleep 0.12
    date +%s%N > {out[stamp]}.end
    touch {out[stamp]}
";
        let targets = "\
all:
  dirname: .
  loop:
    n: \"range(4)\"
    tgt:
      stamp: \"{n}.done\"
";
        let mut plan = resolve(rules, targets, &dir);
        let report = schedule_run(&mut plan, &MachineConfig::local(2)).unwrap();
        assert!(report.all_ok());
        assert_eq!(report.spawned, 4);

        // Sweep the start/end events: never more than two alive at once,
        // and the budget was actually used (two really overlapped).
        let mut events: Vec<(u128, i32)> = Vec::new();
        for n in 0..4 {
            let at = |suffix: &str| -> u128 {
                std::fs::read_to_string(dir.path().join(format!("{n}.done.{suffix}")))
                    .unwrap()
                    .trim()
                    .parse()
                    .unwrap()
            };
            events.push((at("start"), 1));
            events.push((at("end"), -1));
        }
        events.sort();
        let mut alive = 0;
        let mut peak = 0;
        for (_, delta) in events {
            alive += delta;
            peak = peak.max(alive);
        }
        assert!(peak <= 2, "budget exceeded: {peak} tasks alive at once");
        assert_eq!(peak, 2, "independent tasks should have overlapped");
    }

    #[test]
    fn higher_priority_nodes_start_first() {
        let dir = tempfile::tempdir().unwrap();
        // zz_big sorts after aa_small by id, so only its larger
        // node-hours can put it in front.
        let rules = "\
zz_big:
  resources: {time: 60}
  out: {f: big.out}
  script: |
    echo zz_big >> order.txt
    touch {out[f]}
aa_small:
  resources: {time: 6}
  out: {f: small.out}
  script: |
    echo aa_small >> order.txt
    touch {out[f]}
";
        let targets = "\
t1:
  dirname: .
  out: {f: big.out}
t2:
  dirname: .
  out: {f: small.out}
";
        let mut plan = resolve(rules, targets, &dir);
        let report = schedule_run(&mut plan, &MachineConfig::local(1)).unwrap();
        assert!(report.all_ok());
        let order = std::fs::read_to_string(dir.path().join("order.txt")).unwrap();
        assert_eq!(order, "zz_big\naa_small\n");
    }

    #[test]
    fn a_failed_node_poisons_its_successors_only() {
        let dir = tempfile::tempdir().unwrap();
        let rules = "\
bad:
  resources: {time: 1}
  out: {f: bad.out}
  script: exit 3
dep:
  resources: {time: 1}
  inp: {f: bad.out}
  out: {g: dep.out}
  script: touch {out[g]}
ok:
  resources: {time: 1}
  out: {f: ok.out}
  script: touch {out[f]}
";
        let targets = "\
t1:
  dirname: .
  out: {g: dep.out}
t2:
  dirname: .
  out: {f: ok.out}
";
        let mut plan = resolve(rules, targets, &dir);
        let report = schedule_run(&mut plan, &MachineConfig::local(2)).unwrap();
        assert!(!report.all_ok());
        assert_eq!(report.spawned, 2); // bad and ok; never dep
        assert_eq!(report_for(&report, "bad").exit, Some(3));
        assert_eq!(report_for(&report, "bad").state, NodeState::Failed);
        assert_eq!(report_for(&report, "dep").state, NodeState::Failed);
        assert_eq!(report_for(&report, "dep").exit, None);
        assert_eq!(report_for(&report, "ok").state, NodeState::Done);
        assert!(!dir.path().join("dep.sh").exists());
        assert!(dir.path().join("bad.log").exists());
    }

    #[test]
    fn a_zero_exit_without_its_output_fails() {
        let dir = tempfile::tempdir().unwrap();
        let rules = "\
phantom:
  resources: {time: 1}
  out: {f: phantom.out}
  script: \"true\"
";
        let targets = "\
t:
  dirname: .
  out: {f: phantom.out}
";
        let mut plan = resolve(rules, targets, &dir);
        let report = schedule_run(&mut plan, &MachineConfig::local(1)).unwrap();
        assert!(!report.all_ok());
        let node = report_for(&report, "phantom");
        assert_eq!(node.exit, Some(0));
        assert_eq!(node.state, NodeState::Failed);
        assert_eq!(node.missing_output.as_deref(), Some("phantom.out"));
    }

    #[test]
    fn a_finished_build_reruns_as_a_no_op() {
        let dir = tempfile::tempdir().unwrap();
        let rules = "\
first:
  resources: {time: 1}
  out: {f: first.out}
  script: echo payload > {out[f]}
second:
  resources: {time: 1}
  inp: {f: first.out}
  out: {g: second.out}
  script: cp {inp[f]} {out[g]}
";
        let targets = "\
t:
  dirname: .
  out: {g: second.out}
";
        let mut plan = resolve(rules, targets, &dir);
        let report = schedule_run(&mut plan, &MachineConfig::local(1)).unwrap();
        assert!(report.all_ok());
        assert_eq!(report.spawned, 2);
        let copied = std::fs::read_to_string(dir.path().join("second.out")).unwrap();
        assert_eq!(copied, "payload\n");

        // Resolving again sees the finished outputs: one skipped node,
        // nothing respawned.
        let mut again = resolve(rules, targets, &dir);
        assert!(again.nodes.values().all(|n| n.state == NodeState::Skipped));
        let rerun = schedule_run(&mut again, &MachineConfig::local(1)).unwrap();
        assert!(rerun.all_ok());
        assert_eq!(rerun.spawned, 0);
    }

    #[test]
    fn oversized_nodes_are_rejected_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let sys = dir.path().join("System1");
        std::fs::create_dir(&sys).unwrap();
        for n in 1..=10 {
            std::fs::write(sys.join(format!("{n}.param")), "").unwrap();
        }
        let mut plan = resolve(RULES, TARGETS, &dir);
        let err = schedule_run(&mut plan, &MachineConfig::local(2)).unwrap_err();
        assert!(matches!(
            err,
            PmakeError::NodeExceedsMachine(_, 10, 2)
        ));
    }

    #[test]
    fn dry_sequences_follow_priority_and_scale_invariance() {
        let dir = tempfile::tempdir().unwrap();
        let rules_at = |scale: u64| {
            format!(
                "\
a:
  resources: {{time: {}}}
  out: {{f: a.out}}
  script: touch {{out[f]}}
b:
  resources: {{time: {}}}
  inp: {{f: a.out}}
  out: {{g: b.out}}
  script: touch {{out[g]}}
c:
  resources: {{time: {}}}
  out: {{h: c.out}}
  script: touch {{out[h]}}
",
                60 * scale,
                30 * scale,
                45 * scale
            )
        };
        let targets = "\
t1:
  dirname: .
  out: {g: b.out}
t2:
  dirname: .
  out: {h: c.out}
";
        // a carries b on its back (1.0 + 0.5), so it beats c (0.75).
        let plan = resolve(&rules_at(1), targets, &dir);
        assert_eq!(dry_sequence(&plan, 2), vec!["a", "c", "b"]);
        // Scaling every duration by the same factor changes nothing.
        let scaled = resolve(&rules_at(7), targets, &dir);
        assert_eq!(dry_sequence(&scaled, 2), dry_sequence(&plan, 2));
    }
}
