//! Backward chaining from demanded files to a prioritized DAG of rule
//! instances.
//!
//! For every file a target demands: if a node already produces it, add an
//! edge; else if exactly one rule's out-template matches it, instantiate
//! that rule (the match binds the rule's template variable) and recurse
//! into its inputs; else the file had better exist on disk. A rule
//! instance whose outputs all exist already is recorded as skipped and
//! its inputs are not chased — the search stops as soon as the files it
//! needs are accounted for.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::iterable::expand_iterable;
use super::subst::{render, Env};
use super::{PmakeError, ResourceSet, Rule, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    Pending,
    Runnable,
    Running,
    Done,
    Failed,
    Skipped,
}

impl std::fmt::Display for NodeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NodeState::Pending => "pending",
            NodeState::Runnable => "runnable",
            NodeState::Running => "running",
            NodeState::Done => "done",
            NodeState::Failed => "failed",
            NodeState::Skipped => "skipped",
        };
        f.write_str(s)
    }
}

/// One rule instance in the plan.
#[derive(Debug, Clone)]
pub struct PlanNode {
    /// `<rule>.<var value>` (plain `<rule>` when the rule has no
    /// variable); also the stem of the node's script and log files.
    pub id: String,
    pub rule: String,
    pub dirname: String,
    /// Substitution variables: demanding target's attributes plus the
    /// bound template variable.
    pub binding: BTreeMap<String, String>,
    /// The bound template variable, if the rule has one.
    pub var: Option<(String, String)>,
    /// Input files, relative to `dirname`.
    pub inputs: Vec<String>,
    /// Output files, relative to `dirname`.
    pub outputs: Vec<String>,
    pub resources: ResourceSet,
    /// Node-hours of this node plus its transitive successors
    /// (filled by [`priority`]).
    pub priority: f64,
    pub state: NodeState,
    /// Producer nodes this node's inputs come from.
    pub deps: BTreeSet<String>,
    /// Direct consumers (filled by [`priority`]).
    pub successors: BTreeSet<String>,
}

/// A resolved plan: nodes by id, plus the rules they render from and the
/// directory the whole build is rooted at.
#[derive(Debug, Clone)]
pub struct Plan {
    pub nodes: BTreeMap<String, PlanNode>,
    pub rules: BTreeMap<String, Rule>,
    pub root: PathBuf,
}

impl Plan {
    /// Σ nrs over nodes that still have to run — a quick feasibility look.
    pub fn max_nrs(&self) -> u64 {
        self.nodes
            .values()
            .filter(|n| n.state != NodeState::Skipped)
            .map(|n| n.resources.nrs)
            .max()
            .unwrap_or(0)
    }
}

/// Try to bind `rule`'s template variable so that one of its out
/// templates renders to `file`. `Some(None)` = constant template matched.
fn bind_out(rule: &Rule, file: &str) -> Result<Option<Option<String>>, PmakeError> {
    const SENTINEL: &str = "\u{1}";
    for tmpl in rule.out.values() {
        match &rule.var {
            None => {
                if render(tmpl, &Env::default())? == file {
                    return Ok(Some(None));
                }
            }
            Some(var) => {
                let mut env = Env::default();
                env.plain.insert(var.clone(), SENTINEL.to_string());
                let probed = render(tmpl, &env)?;
                let Some(prefix_len) = probed.find(SENTINEL) else {
                    // This template does not use the variable: constant.
                    if probed == file {
                        return Ok(Some(None));
                    }
                    continue;
                };
                if file.len() <= prefix_len || !file.starts_with(&probed[..prefix_len]) {
                    continue;
                }
                let remaining = &file[prefix_len..];
                for end in 1..=remaining.len() {
                    if !remaining.is_char_boundary(end) {
                        continue;
                    }
                    let candidate = &remaining[..end];
                    env.plain.insert(var.clone(), candidate.to_string());
                    if render(tmpl, &env)? == file {
                        return Ok(Some(Some(candidate.to_string())));
                    }
                }
            }
        }
    }
    Ok(None)
}

struct Planner<'a> {
    rules: &'a [Rule],
    root: &'a Path,
    nodes: BTreeMap<String, PlanNode>,
    /// (dirname, file) → producing node id.
    producer: HashMap<(String, String), String>,
    /// Nodes whose inputs are being chased right now (cycle detection).
    visiting: HashSet<String>,
}

impl<'a> Planner<'a> {
    fn exists(&self, dir: &str, file: &str) -> bool {
        self.root.join(dir).join(file).exists()
    }

    /// Make `file` (relative to `dir`) accounted for: find or create its
    /// producer, or verify it exists on disk.
    fn need(
        &mut self,
        dir: &str,
        file: &str,
        attrs: &BTreeMap<String, String>,
    ) -> Result<Option<String>, PmakeError> {
        if let Some(id) = self.producer.get(&(dir.to_string(), file.to_string())) {
            if self.visiting.contains(id) {
                return Err(PmakeError::CyclicPlan(id.clone()));
            }
            return Ok(Some(id.clone()));
        }
        let mut matched: Vec<(&Rule, Option<String>)> = Vec::new();
        for rule in self.rules {
            if let Some(binding) = bind_out(rule, file)? {
                matched.push((rule, binding));
            }
        }
        match matched.len() {
            0 => {
                if self.exists(dir, file) {
                    Ok(None)
                } else {
                    Err(PmakeError::NoRuleForFile(format!("{dir}/{file}")))
                }
            }
            1 => {
                let (rule, binding) = matched.pop().unwrap();
                self.instantiate(rule, binding, dir, attrs).map(Some)
            }
            _ => Err(PmakeError::AmbiguousRule(
                matched[0].0.name.clone(),
                matched[1].0.name.clone(),
                file.to_string(),
            )),
        }
    }

    fn instantiate(
        &mut self,
        rule: &Rule,
        value: Option<String>,
        dir: &str,
        attrs: &BTreeMap<String, String>,
    ) -> Result<String, PmakeError> {
        let base = match &value {
            Some(v) => format!("{}.{}", rule.name, v),
            None => rule.name.clone(),
        };
        // Same instance demanded twice is the same node; the same rule
        // and binding under a different dirname is a separate node with a
        // suffixed id (ids double as script file stems).
        let mut id = base.clone();
        let mut k = 1;
        loop {
            match self.nodes.get(&id) {
                Some(n) if n.dirname == dir => {
                    if self.visiting.contains(&id) {
                        return Err(PmakeError::CyclicPlan(id));
                    }
                    return Ok(id);
                }
                Some(_) => {
                    k += 1;
                    id = format!("{base}.{k}");
                }
                None => break,
            }
        }

        let mut binding = attrs.clone();
        if let (Some(var), Some(v)) = (&rule.var, &value) {
            binding.insert(var.clone(), v.clone());
        }
        let env = Env::from_plain(&binding);

        let mut outputs = Vec::new();
        for tmpl in rule.out.values() {
            outputs.push(render(tmpl, &env)?);
        }
        let mut inputs = Vec::new();
        for tmpl in rule.inp.values() {
            inputs.push(render(tmpl, &env)?);
        }
        if let Some(l) = &rule.loop_inp {
            for v in expand_iterable(&l.iterable)? {
                let mut loop_env = env.clone();
                loop_env.plain.insert(l.var.clone(), v.to_string());
                for tmpl in l.templates.values() {
                    inputs.push(render(tmpl, &loop_env)?);
                }
            }
        }

        let skipped = !outputs.is_empty() && outputs.iter().all(|f| self.exists(dir, f));

        let node = PlanNode {
            id: id.clone(),
            rule: rule.name.clone(),
            dirname: dir.to_string(),
            binding,
            var: rule.var.clone().zip(value),
            inputs: inputs.clone(),
            outputs: outputs.clone(),
            resources: rule.resources.clone(),
            priority: 0.0,
            state: if skipped {
                NodeState::Skipped
            } else {
                NodeState::Pending
            },
            deps: BTreeSet::new(),
            successors: BTreeSet::new(),
        };
        self.nodes.insert(id.clone(), node);
        for out in &outputs {
            let key = (dir.to_string(), out.clone());
            if let Some(prev) = self.producer.get(&key) {
                return Err(PmakeError::DuplicateOutput {
                    file: format!("{dir}/{out}"),
                    first: prev.clone(),
                    second: id,
                });
            }
            self.producer.insert(key, id.clone());
        }

        // A node whose outputs all exist needs nothing chased: the search
        // for rules stops here.
        if !skipped {
            self.visiting.insert(id.clone());
            let attrs = self.nodes[&id].binding.clone();
            let mut deps = BTreeSet::new();
            for input in &inputs {
                if let Some(producer) = self.need(dir, input, &attrs)? {
                    deps.insert(producer);
                }
            }
            self.visiting.remove(&id);
            self.nodes.get_mut(&id).unwrap().deps = deps;
        }
        Ok(id)
    }
}

/// Backward-chain all targets into a prioritized plan rooted at `root`
/// (target dirnames are relative to it; demanded files relative to those).
pub fn resolve_plan(
    rules: &[Rule],
    targets: &[Target],
    root: impl Into<PathBuf>,
) -> Result<Plan, PmakeError> {
    let root = root.into();
    let mut planner = Planner {
        rules,
        root: &root,
        nodes: BTreeMap::new(),
        producer: HashMap::new(),
        visiting: HashSet::new(),
    };
    for target in targets {
        let base_env = Env::from_plain(&target.attrs);
        for tmpl in target.out.values() {
            let file = render(tmpl, &base_env)?;
            planner.need(&target.dirname, &file, &target.attrs)?;
        }
        if let Some(l) = &target.loop_tgt {
            for v in expand_iterable(&l.iterable)? {
                let mut attrs = target.attrs.clone();
                attrs.insert(l.var.clone(), v.to_string());
                let env = Env::from_plain(&attrs);
                for tmpl in l.templates.values() {
                    let file = render(tmpl, &env)?;
                    planner.need(&target.dirname, &file, &attrs)?;
                }
            }
        }
    }
    let mut plan = Plan {
        nodes: planner.nodes,
        rules: rules.iter().map(|r| (r.name.clone(), r.clone())).collect(),
        root,
    };
    priority(&mut plan)?;
    Ok(plan)
}

/// Fill every node's priority: its own node-hours plus the node-hours of
/// each transitive successor, counted once (set union, not per path).
/// Also fills the direct-successor sets.
pub fn priority(plan: &mut Plan) -> Result<(), PmakeError> {
    let ids: Vec<String> = plan.nodes.keys().cloned().collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let n = ids.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (i, id) in ids.iter().enumerate() {
        for dep in &plan.nodes[id].deps {
            let d = *index.get(dep.as_str()).ok_or_else(|| {
                PmakeError::UnknownNode(dep.clone())
            })?;
            succ[d].push(i);
            indegree[i] += 1;
        }
    }
    for (i, id) in ids.iter().enumerate() {
        let set: BTreeSet<String> = succ[i].iter().map(|&s| ids[s].clone()).collect();
        plan.nodes.get_mut(id).unwrap().successors = set;
    }

    // Topological order, producers first.
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut topo = Vec::with_capacity(n);
    while let Some(v) = queue.pop() {
        topo.push(v);
        for &s in &succ[v] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                queue.push(s);
            }
        }
    }
    if topo.len() != n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap();
        return Err(PmakeError::CyclicPlan(ids[stuck].clone()));
    }

    let nh: Vec<f64> = ids.iter().map(|id| plan.nodes[id].resources.node_hours()).collect();
    let mut trans: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &v in topo.iter().rev() {
        let mut set = BTreeSet::new();
        for &s in &succ[v] {
            set.insert(s);
            set.extend(trans[s].iter().copied());
        }
        trans[v] = set;
    }
    for (i, id) in ids.iter().enumerate() {
        let p = nh[i] + trans[i].iter().map(|&s| nh[s]).sum::<f64>();
        plan.nodes.get_mut(id).unwrap().priority = p;
    }
    Ok(())
}
