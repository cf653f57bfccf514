//! File-directed parallel make: rules + targets → file DAG → greedy
//! node-budgeted execution.
//!
//! `pmake` answers the question "which scripts, in what order, to produce
//! these files" the way `make` does — by backward-chaining from demanded
//! outputs through rule templates until it reaches files that already
//! exist — and then runs the plan with an allocation-aware greedy
//! scheduler: every rule carries a resource set, every node gets a
//! priority equal to the node-hours of itself plus everything downstream
//! of it, and the runner starts the highest-priority runnable node that
//! fits the free node budget.
//!
//! The pieces are usable separately: [`parse_rules`] / [`parse_targets`]
//! (YAML in the layout of the bundled examples), [`resolve_plan`] (pure
//! planning against a directory), [`substitute`] (script rendering),
//! [`priority`] (node-hours), and [`schedule_run`] (the event loop).

pub mod iterable;
pub mod parse;
pub mod plan;
pub mod run;
pub mod subst;

pub use iterable::expand_iterable;
pub use parse::{parse_rules, parse_targets};
pub use plan::{priority, resolve_plan, NodeState, Plan, PlanNode};
pub use run::{dry_sequence, schedule_run, MachineConfig, NodeReport, RunReport};
pub use subst::substitute;

use std::collections::BTreeMap;

use serde::Deserialize;

/// What one rule instance is allowed to consume, and for how long.
///
/// `nrs` counts resource sets ("node equivalents"); `cpu`/`gpu` size one
/// set; `ranks` is how many MPI ranks launch per set; `time` is minutes.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSet {
    pub time: u64,
    #[serde(default = "default_one")]
    pub nrs: u64,
    #[serde(default = "default_one")]
    pub cpu: u64,
    #[serde(default)]
    pub gpu: u64,
    #[serde(default = "default_one")]
    pub ranks: u64,
}

fn default_one() -> u64 {
    1
}

impl ResourceSet {
    /// time(min)/60 × nrs — the quantity priorities are built from.
    pub fn node_hours(&self) -> f64 {
        self.time as f64 / 60.0 * self.nrs as f64
    }

    fn validate(&self, context: &str) -> Result<(), PmakeError> {
        if self.time == 0 {
            return Err(PmakeError::Parse(format!(
                "{context}: resources.time must be positive (minutes)"
            )));
        }
        if self.nrs == 0 || self.cpu == 0 || self.ranks == 0 {
            return Err(PmakeError::Parse(format!(
                "{context}: nrs, cpu and ranks must be at least 1"
            )));
        }
        Ok(())
    }
}

/// A loop directive: one variable swept over an iterable, filling a named
/// group of file templates (`tgt:` under targets, `inp:` under rules).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSpec {
    pub var: String,
    pub iterable: String,
    pub templates: BTreeMap<String, String>,
}

/// One make-rule: inputs demanded, outputs produced, script to run.
///
/// At most one template variable may appear across the `out` templates;
/// demanding a file that matches an out template binds that variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub resources: ResourceSet,
    pub inp: BTreeMap<String, String>,
    pub out: BTreeMap<String, String>,
    pub setup: Option<String>,
    pub script: String,
    /// Extra looped inputs: the `inp` templates inside expand once per
    /// iterable value, all expansions becoming inputs of the one node.
    pub loop_inp: Option<LoopSpec>,
    /// The single out-template variable, if any (derived at parse time).
    pub var: Option<String>,
}

/// A top-level build goal: files wanted (relative to `dirname`), plus
/// arbitrary attributes that become substitution variables for every rule
/// instance planned on this target's behalf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub name: String,
    pub dirname: String,
    pub out: BTreeMap<String, String>,
    pub loop_tgt: Option<LoopSpec>,
    pub attrs: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PmakeError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported iterable `{0}` (use range(a), range(a,b), range(a,b,s) or a comma list)")]
    UnsupportedIterable(String),
    #[error("no rule makes `{0}` and it does not exist on disk")]
    NoRuleForFile(String),
    #[error("rules `{0}` and `{1}` can both make `{2}`")]
    AmbiguousRule(String, String, String),
    #[error("dependency cycle through `{0}`")]
    CyclicPlan(String),
    #[error("unbound placeholder `{0}`")]
    UnboundPlaceholder(String),
    #[error("bad placeholder syntax: {0}")]
    BadPlaceholder(String),
    #[error("`{file}` would be produced by both `{first}` and `{second}`")]
    DuplicateOutput {
        file: String,
        first: String,
        second: String,
    },
    #[error("node `{0}` needs {1} nodes but the machine only has {2}")]
    NodeExceedsMachine(String, u64, u64),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// The bundled simulate→analyze example, shared across module tests.
#[cfg(test)]
pub(crate) mod fixtures {
    pub const RULES: &str = r#"
simulate:
  resources: {time: 120, nrs: 10, cpu: 42, gpu: 6}
  inp:
    param: "{n}.param"
  out:
    trj: "{n}.trj"
  setup: module load cuda
  script: |
    {mpirun} simulate {inp[param]} {out[trj]}

analyze:
  resources: {time: 10, nrs: 1, cpu: 1}
  inp:
    trj: "{n}.trj"
  out:
    npy: "an_{n}.npy"
  setup: module load Python/3
  script: |
    {mpirun} Python compute_averages.py {inp[trj]} {out[npy]}
"#;

    pub const TARGETS: &str = r#"
sim1:
  dirname: System1
  loop:
    n: "range(1,11)"
    tgt:
      npy: "an_{n}.npy"
"#;
}
