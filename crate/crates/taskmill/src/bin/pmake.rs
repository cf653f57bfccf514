//! File-directed parallel make: backward-chain YAML rules and targets
//! into a file DAG, prioritize by transitive node-hours, and run greedily
//! inside a node budget. `--dry-run` prints the plan and its simulated
//! start order without spawning anything.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};

use taskmill::pmake::{
    dry_sequence, parse_rules, parse_targets, resolve_plan, schedule_run, MachineConfig,
    NodeState, Plan,
};

#[derive(Parser)]
#[command(
    name = "pmake",
    about = "Plan and run a file-directed build under a node budget"
)]
struct Cli {
    /// Rules file (YAML: name → resources/inp/out/script)
    #[arg(long)]
    rules: PathBuf,
    /// Targets file (YAML: name → dirname/outputs/attributes)
    #[arg(long)]
    targets: PathBuf,
    /// Node budget (default: the largest single node in the plan)
    #[arg(long)]
    nodes: Option<u64>,
    /// Launcher flavor scripts render with
    #[arg(long, value_enum, default_value_t = Flavor::Local)]
    machine: Flavor,
    /// Print the plan with priorities and the simulated start order, then exit
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Flavor {
    Local,
    Slurm,
    Lsf,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("pmake: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let rules_text = std::fs::read_to_string(&cli.rules)
        .with_context(|| format!("read {}", cli.rules.display()))?;
    let targets_text = std::fs::read_to_string(&cli.targets)
        .with_context(|| format!("read {}", cli.targets.display()))?;
    let rules = parse_rules(&rules_text).context("parse rules")?;
    let targets = parse_targets(&targets_text).context("parse targets")?;
    let cwd = std::env::current_dir().context("current directory")?;
    let mut plan = resolve_plan(&rules, &targets, &cwd).context("resolve plan")?;

    let budget = cli.nodes.unwrap_or_else(|| plan.max_nrs());
    let machine = match cli.machine {
        Flavor::Local => MachineConfig::local(budget),
        Flavor::Slurm => MachineConfig::slurm(budget),
        Flavor::Lsf => MachineConfig::lsf(budget),
    };

    if cli.dry_run {
        print_plan(&plan, budget);
        return Ok(ExitCode::SUCCESS);
    }

    let report = schedule_run(&mut plan, &machine).context("run plan")?;
    let mut ok = true;
    for node in &report.nodes {
        let wall = node
            .wall
            .map(|w| format!("{:.2}s", w.as_secs_f64()))
            .unwrap_or_else(|| "-".into());
        let detail = match (&node.state, &node.missing_output) {
            (NodeState::Failed, Some(missing)) => format!(" (missing output {missing})"),
            (NodeState::Failed, None) => node
                .exit
                .map(|c| format!(" (exit {c})"))
                .unwrap_or_else(|| " (not started)".into()),
            _ => String::new(),
        };
        println!("{:?} {} {}{}", node.state, node.id, wall, detail);
        ok &= matches!(node.state, NodeState::Done | NodeState::Skipped);
    }
    println!(
        "{} of {} scripts spawned",
        report.spawned,
        report.nodes.len()
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn print_plan(plan: &Plan, budget: u64) {
    println!("plan: {} nodes, budget {}", plan.nodes.len(), budget);
    let mut nodes: Vec<_> = plan.nodes.values().collect();
    nodes.sort_by(|a, b| {
        b.priority
            .partial_cmp(&a.priority)
            .unwrap()
            .then_with(|| a.id.cmp(&b.id))
    });
    for n in nodes {
        let deps = if n.deps.is_empty() {
            "-".to_string()
        } else {
            n.deps.iter().cloned().collect::<Vec<_>>().join(",")
        };
        println!(
            "{:<24} priority {:>10.4}  nrs {:>3}  time {:>4}m  state {:?}  deps {}",
            n.id, n.priority, n.resources.nrs, n.resources.time, n.state, deps
        );
    }
    let order = dry_sequence(plan, budget);
    if !order.is_empty() {
        println!("start order: {}", order.join(" "));
    }
}
