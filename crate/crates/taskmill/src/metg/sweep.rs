//! The sweep runners: one measurement protocol per scheduler, sharing the
//! weak-scaling shape (a fixed kernel count per worker) and the efficiency
//! definition (measured single-worker ideal ÷ measured per-task wall).
//!
//! Every runner returns wall time plus a [`PhaseBreakdown`] whose phases
//! tile the wall from below — overlapped communication is *not* charged,
//! which is exactly how the pull-based worker pipeline earns its
//! efficiency. A failed task does not fail the sweep: the point is
//! recorded as an error row and the sweep moves to the next duration.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    calibrate_spin, compute_metg, median, scaling_report, Kernel, MetgCurvePoint, MetgError,
    MetgResult, PhaseBreakdown, Scheduler, ScalingReport, SpinCalibration, SweepConfig,
};
use crate::dfm::{run_bsp, Communicator};
use crate::hub::{serve, HubClient, HubConfig};
use crate::pmake::{parse_rules, parse_targets, resolve_plan, schedule_run, MachineConfig};
use crate::wire::{Message, TaskSpec};
use crate::worker::{
    run_loop, Diagnosis, Executor, PipelineConfig, RunResult, SpinExec, WaitExec, WorkerSummary,
};

/// What the generated filemake scripts run as their kernel.
///
/// `Sleep` emits `sleep <seconds>` — a portable timed wait with the same
/// wall-clock footprint as a spin (and better behavior on oversubscribed
/// hosts). `Command` is an argv template; `{micros}` and `{iters}`
/// expand to the sweep point's values before the script is generated, so
/// a benchmark binary can point it at its own busy-spin subcommand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptKernel {
    Sleep,
    Command(Vec<String>),
}

impl ScriptKernel {
    fn command_line(&self, micros: u64, iters: u64) -> String {
        match self {
            ScriptKernel::Sleep => {
                format!("sleep {:.6}", micros as f64 * iters as f64 / 1e6)
            }
            ScriptKernel::Command(argv) => argv
                .iter()
                .map(|a| {
                    a.replace("{micros}", &micros.to_string())
                        .replace("{iters}", &iters.to_string())
                })
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

/// One measured run (one duration × one repeat), as persisted to
/// `results.csv`. Error rows keep zeroed measurements and say what broke.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheduler: Scheduler,
    pub workers: usize,
    /// Requested per-iteration kernel duration.
    pub requested_micros: u64,
    pub iterations: u64,
    /// Measured single-worker kernel seconds per task (the baseline).
    pub task_ideal_seconds: f64,
    pub repeat: u32,
    pub wall_seconds: f64,
    pub phases: PhaseBreakdown,
    pub efficiency: f64,
    /// Median steal round trip (graph runs; 0 elsewhere).
    pub median_rtt_seconds: f64,
    /// Measurement oddities worth surfacing (e.g. super-ideal efficiency).
    pub note: Option<String>,
    pub error: Option<String>,
}

/// One worker count's sweep: raw rows, the efficiency curve (repeat means
/// per duration), and the METG crossing when any point measured cleanly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerSweep {
    pub workers: usize,
    pub records: Vec<RunRecord>,
    pub curve: Vec<MetgCurvePoint>,
    pub metg: Option<MetgResult>,
}

/// A whole benchmark: one scheduler swept over several worker counts.
#[derive(Debug, Clone)]
pub struct BenchRequest {
    pub scheduler: Scheduler,
    pub worker_counts: Vec<usize>,
    pub durations: Vec<Duration>,
    pub tasks_per_worker: u64,
    pub iterations_per_task: u64,
    pub repeats: u32,
    pub kernel: Kernel,
    pub script_kernel: ScriptKernel,
}

impl BenchRequest {
    /// Conventional defaults for `scheduler` (see [`SweepConfig::new`]).
    pub fn new(
        scheduler: Scheduler,
        worker_counts: Vec<usize>,
        durations: Vec<Duration>,
    ) -> BenchRequest {
        BenchRequest {
            scheduler,
            worker_counts,
            durations,
            tasks_per_worker: 1024,
            iterations_per_task: super::default_iterations(scheduler),
            repeats: 1,
            kernel: Kernel::Spin,
            script_kernel: ScriptKernel::Sleep,
        }
    }

    fn config_for(&self, workers: usize) -> SweepConfig {
        SweepConfig {
            scheduler: self.scheduler,
            workers,
            tasks_per_worker: self.tasks_per_worker,
            iterations_per_task: self.iterations_per_task,
            durations: self.durations.clone(),
            repeats: self.repeats,
            kernel: self.kernel,
            script_kernel: self.script_kernel.clone(),
        }
    }
}

/// Everything a benchmark produced; [`super::emit_report`] serializes it.
#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub scheduler: Scheduler,
    pub kernel: Kernel,
    pub tasks_per_worker: u64,
    pub iterations_per_task: u64,
    pub repeats: u32,
    pub calibration: SpinCalibration,
    pub sweeps: Vec<WorkerSweep>,
    /// Present once at least two worker counts yielded an METG.
    pub scaling: Option<ScalingReport>,
}

/// Run the full worker-count matrix and fit the scaling law.
pub fn run_bench(req: &BenchRequest) -> Result<BenchOutcome, MetgError> {
    if req.worker_counts.is_empty() {
        return Err(MetgError::NoWorkers);
    }
    let calibration = calibrate_spin();
    let mut sweeps = Vec::with_capacity(req.worker_counts.len());
    for &w in &req.worker_counts {
        sweeps.push(run_sweep(&req.config_for(w))?);
    }
    let points: Vec<(usize, f64)> = sweeps
        .iter()
        .filter_map(|s| s.metg.as_ref().map(|m| (s.workers, m.metg_seconds)))
        .collect();
    let scaling = (points.len() >= 2).then(|| scaling_report(req.scheduler, &points));
    Ok(BenchOutcome {
        scheduler: req.scheduler,
        kernel: req.kernel,
        tasks_per_worker: req.tasks_per_worker,
        iterations_per_task: req.iterations_per_task,
        repeats: req.repeats,
        calibration,
        sweeps,
        scaling,
    })
}

/// Sweep one worker count across the configured durations.
///
/// Per duration: re-measure the single-worker baseline, run `repeats`
/// measurements, and average their efficiencies into one curve point. A
/// failure aborts that duration (error row) and the sweep continues.
pub fn run_sweep(cfg: &SweepConfig) -> Result<WorkerSweep, MetgError> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut curve = Vec::new();

    for &d in &cfg.durations {
        let micros = d.as_micros() as u64;
        let ideal = measure_task_ideal(cfg.kernel, micros, cfg.iterations_per_task);
        let mut effs = Vec::new();

        for repeat in 0..cfg.repeats {
            let point = match cfg.scheduler {
                Scheduler::Graph => graph_point(cfg, micros)?,
                Scheduler::Bsp => Ok::<PointMeasure, MetgError>(bsp_sweep_point(cfg, micros))?,
                Scheduler::Filemake => filemake_point(cfg, micros)?,
            };
            let mut rec = RunRecord {
                scheduler: cfg.scheduler,
                workers: cfg.workers,
                requested_micros: micros,
                iterations: cfg.iterations_per_task,
                task_ideal_seconds: ideal,
                repeat,
                wall_seconds: point.wall,
                phases: point.phases,
                efficiency: 0.0,
                median_rtt_seconds: point.median_rtt,
                note: None,
                error: point.error,
            };
            if rec.error.is_none() {
                let per_task_wall = point.wall / cfg.tasks_per_worker_share();
                rec.efficiency = if per_task_wall > 0.0 {
                    ideal / per_task_wall
                } else {
                    0.0
                };
                if rec.efficiency > 1.05 {
                    rec.note = Some("super-ideal efficiency (measurement noise)".into());
                }
                effs.push(rec.efficiency);
            }
            let failed = rec.error.is_some();
            records.push(rec);
            if failed {
                break; // abort this sweep point, move to the next duration
            }
        }

        if !effs.is_empty() {
            curve.push(MetgCurvePoint {
                task_ideal_seconds: ideal,
                efficiency: effs.iter().sum::<f64>() / effs.len() as f64,
            });
        }
    }

    let metg = compute_metg(&curve).ok();
    Ok(WorkerSweep {
        workers: cfg.workers,
        records,
        curve,
        metg,
    })
}

/// The dedicated single-worker baseline: median kernel seconds per task.
fn measure_task_ideal(kernel: Kernel, micros: u64, iterations: u64) -> f64 {
    let d = Duration::from_micros(micros);
    let reps = if d * iterations as u32 > Duration::from_millis(50) {
        3
    } else {
        5
    };
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..iterations {
                kernel.run_once(d);
            }
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut times)
}

struct PointMeasure {
    wall: f64,
    phases: PhaseBreakdown,
    median_rtt: f64,
    error: Option<String>,
}

impl PointMeasure {
    fn failed(wall: f64, why: String) -> PointMeasure {
        PointMeasure {
            wall,
            phases: PhaseBreakdown::default(),
            median_rtt: 0.0,
            error: Some(why),
        }
    }
}

/// The worker executor for the selected kernel.
struct KernelExec(Kernel);

impl Executor for KernelExec {
    fn run(&mut self, payload: &str) -> RunResult {
        match self.0 {
            Kernel::Spin => SpinExec.run(payload),
            Kernel::Wait => WaitExec.run(payload),
        }
    }

    fn diagnose(&mut self) -> Diagnosis {
        Diagnosis::Healthy
    }
}

/// Graph protocol: serve a hub, create all tasks (spawn phase), run W
/// worker threads to drain it, and attribute their summaries.
///
/// Attribution tiles the wall exactly up to the teardown tail:
/// `spawn` = hub startup + task creation, `compute` = mean worker kernel
/// time, `sync` = last-finisher minus first-finisher, and `comm` = the
/// first finisher's window minus compute — the *exposed* request/report
/// wait, which overlap is supposed to hide.
fn graph_point(cfg: &SweepConfig, micros: u64) -> Result<PointMeasure, MetgError> {
    let total_tasks = cfg.total_tasks();
    let t0 = Instant::now();
    let hub = serve(HubConfig::default())?;
    let addr = hub.addr().to_string();

    let created = (|| -> Result<(), MetgError> {
        let mut c = HubClient::connect(&addr)?;
        for i in 0..total_tasks {
            c.send(&Message::CreateReq {
                task: TaskSpec::new(
                    format!("k{i}"),
                    format!("{micros} {}", cfg.iterations_per_task),
                    "metgbench",
                ),
                deps: Vec::new(),
            })?;
        }
        for _ in 0..total_tasks {
            match c.recv().map_err(|e| MetgError::Protocol(e.to_string()))? {
                Message::OkResp => {}
                Message::ErrResp { message } => return Err(MetgError::Protocol(message)),
                other => {
                    return Err(MetgError::Protocol(format!(
                        "unexpected {} to create",
                        other.kind()
                    )))
                }
            }
        }
        Ok(())
    })();
    if let Err(e) = created {
        let _ = hub.shutdown();
        return Err(e);
    }
    let spawn_end = Instant::now();

    let pipeline = PipelineConfig {
        prefetch_depth: 1,
        batch_n: 1,
        idle_backoff: (Duration::from_millis(1), Duration::from_millis(8)),
    };
    let joins: Vec<_> = (0..cfg.workers)
        .map(|w| {
            let addr = addr.clone();
            let pipeline = pipeline.clone();
            let kernel = cfg.kernel;
            thread::spawn(move || run_loop(&addr, &format!("w{w}"), KernelExec(kernel), &pipeline))
        })
        .collect();

    let mut summaries: Vec<WorkerSummary> = Vec::with_capacity(cfg.workers);
    let mut failure: Option<String> = None;
    for j in joins {
        match j.join() {
            Ok(Ok(s)) => {
                if s.failed > 0 && failure.is_none() {
                    failure = Some(format!("{} task(s) reported failure", s.failed));
                }
                summaries.push(s);
            }
            Ok(Err(e)) => failure = Some(e.to_string()),
            Err(_) => failure = Some("worker thread panicked".into()),
        }
    }
    let t_end = Instant::now();
    let _ = hub.shutdown();

    let wall = (t_end - t0).as_secs_f64();
    if let Some(why) = failure {
        return Ok(PointMeasure::failed(wall, why));
    }

    let spawn = (spawn_end - t0).as_secs_f64();
    let ends: Vec<Instant> = summaries
        .iter()
        .map(|s| s.last_run_ended.unwrap_or(spawn_end))
        .collect();
    let min_end = ends.iter().min().copied().unwrap_or(spawn_end);
    let max_end = ends.iter().max().copied().unwrap_or(spawn_end);
    let compute = summaries
        .iter()
        .map(|s| s.compute.as_secs_f64())
        .sum::<f64>()
        / cfg.workers as f64;
    let comm =
        (min_end.saturating_duration_since(spawn_end).as_secs_f64() - compute).max(0.0);
    let sync = max_end.saturating_duration_since(min_end).as_secs_f64();

    let mut rtts: Vec<f64> = summaries
        .iter()
        .flat_map(|s| s.steal_rtts.iter().map(|d| d.as_secs_f64()))
        .collect();

    Ok(PointMeasure {
        wall,
        phases: PhaseBreakdown {
            spawn,
            comm,
            compute,
            sync,
        },
        median_rtt: median(&mut rtts),
        error: None,
    })
}

/// Per-rank measurements from one bulk-synchronous run.
#[derive(Debug, Clone)]
pub struct BspMeasure {
    pub wall_seconds: f64,
    pub phases: PhaseBreakdown,
    /// Per-rank kernel seconds (straggler diagnosis).
    pub per_rank_compute: Vec<f64>,
}

/// Run `steps` supersteps on `workers` in-process ranks: each step is
/// `iterations` kernels followed by a gather that doubles as the barrier.
///
/// `sync` accumulates the per-step straggler spread — slowest minus
/// fastest rank — which is the BSP scheduler's entire overhead story;
/// `comm` is 0 by construction (messaging *is* the synchronization).
/// `inject` adds a one-off delay to one rank's first step, for calibrating
/// the sync attribution against a known straggler.
pub fn bsp_point(
    workers: usize,
    steps: u64,
    iterations: u64,
    duration: Duration,
    kernel: Kernel,
    inject: Option<(usize, Duration)>,
) -> BspMeasure {
    let t0 = Instant::now();
    let results = run_bsp(workers, move |ctx| {
        let comm = ctx.comm();
        comm.barrier();
        let started = Instant::now();
        let mut compute = 0.0f64;
        let mut sync_sum = 0.0f64;
        for step in 0..steps {
            let t = Instant::now();
            for _ in 0..iterations {
                kernel.run_once(duration);
            }
            if let Some((rank, extra)) = inject {
                if rank == ctx.rank() && step == 0 {
                    // The straggler's delay is indistinguishable from long
                    // compute; attribution must recover it as sync spread.
                    thread::sleep(extra);
                }
            }
            let dt = t.elapsed().as_secs_f64();
            compute += dt;
            if let Some(all) = comm.gather(dt, 0) {
                let fastest = all.iter().copied().fold(f64::MAX, f64::min);
                let slowest = all.iter().copied().fold(f64::MIN, f64::max);
                sync_sum += slowest - fastest;
            }
        }
        (started, compute, sync_sum)
    });
    let wall = t0.elapsed().as_secs_f64();

    let per_rank_compute: Vec<f64> = results.iter().map(|&(_, c, _)| c).collect();
    let spawn = results
        .iter()
        .map(|&(s, _, _)| s.saturating_duration_since(t0).as_secs_f64())
        .sum::<f64>()
        / workers as f64;
    let compute = per_rank_compute.iter().sum::<f64>() / workers as f64;
    let sync = results[0].2;

    BspMeasure {
        wall_seconds: wall,
        phases: PhaseBreakdown {
            spawn,
            comm: 0.0,
            compute,
            sync,
        },
        per_rank_compute,
    }
}

fn bsp_sweep_point(cfg: &SweepConfig, micros: u64) -> PointMeasure {
    let m = bsp_point(
        cfg.workers,
        cfg.steps_per_rank(),
        cfg.iterations_per_task,
        Duration::from_micros(micros),
        cfg.kernel,
        None,
    );
    PointMeasure {
        wall: m.wall_seconds,
        phases: m.phases,
        median_rtt: 0.0,
        error: None,
    }
}

static SCRATCH_SEQ: AtomicU64 = AtomicU64::new(0);

/// A unique throwaway directory under the system temp dir.
fn scratch_dir() -> Result<PathBuf, std::io::Error> {
    let dir = std::env::temp_dir().join(format!(
        "metg-{}-{}",
        std::process::id(),
        SCRATCH_SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(dir.join("work"))?;
    Ok(dir)
}

/// Filemake protocol: generate a rules/targets pair whose scripts run the
/// kernel and touch their declared output, resolve it into a plan, and run
/// it under a node budget equal to the worker count.
///
/// `spawn` is planning plus the per-script overhead — each node's wall
/// minus its kernel time — which is the job-startup cost that dominates
/// this scheduler's METG. Reap-polling latency in the run loop stays
/// unattributed (it is visible as wall minus the phase sum).
fn filemake_point(cfg: &SweepConfig, micros: u64) -> Result<PointMeasure, MetgError> {
    let total_tasks = cfg.total_tasks();
    let kernel_line = cfg.script_kernel.command_line(micros, cfg.iterations_per_task);
    let ideal = Duration::from_micros(micros * cfg.iterations_per_task).as_secs_f64();

    let rules_yaml = format!(
        r#"kern:
  resources: {{time: 1}}
  out:
    done: "{{n}}.done"
  script: |
    {kernel_line}
    : > {{out[done]}}
"#
    );
    let targets_yaml = format!(
        r#"bench:
  dirname: work
  loop:
    n: "range({total_tasks})"
    tgt:
      done: "{{n}}.done"
"#
    );
    let rules = parse_rules(&rules_yaml)?;
    let targets = parse_targets(&targets_yaml)?;
    let root = scratch_dir()?;

    let t0 = Instant::now();
    let mut plan = resolve_plan(&rules, &targets, &root)?;
    let planned = Instant::now();
    let run = schedule_run(&mut plan, &MachineConfig::local(cfg.workers as u64));
    let wall = t0.elapsed().as_secs_f64();
    let report = match run {
        Ok(r) => r,
        Err(e) => {
            let _ = std::fs::remove_dir_all(&root);
            return Err(e.into());
        }
    };
    let _ = std::fs::remove_dir_all(&root);

    if !report.all_ok() {
        let who = report
            .nodes
            .iter()
            .find(|n| n.wall.is_some() && n.exit != Some(0))
            .map(|n| format!("node {} exited with {:?}", n.id, n.exit))
            .unwrap_or_else(|| "a node failed".into());
        return Ok(PointMeasure::failed(wall, who));
    }

    let node_walls: Vec<f64> = report
        .nodes
        .iter()
        .filter_map(|n| n.wall.map(|w| w.as_secs_f64()))
        .collect();
    let per_script_overhead: f64 = node_walls.iter().map(|w| (w - ideal).max(0.0)).sum();
    let kernel_time: f64 = node_walls.iter().map(|w| w.min(ideal)).sum();
    let w = cfg.workers as f64;

    Ok(PointMeasure {
        wall,
        phases: PhaseBreakdown {
            spawn: (planned - t0).as_secs_f64() + per_script_overhead / w,
            comm: 0.0,
            compute: kernel_time / w,
            sync: 0.0,
        },
        median_rtt: 0.0,
        error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(scheduler: Scheduler, workers: usize, durations: Vec<Duration>) -> SweepConfig {
        SweepConfig {
            tasks_per_worker: 8,
            iterations_per_task: 2,
            ..SweepConfig::new(scheduler, workers, durations)
        }
    }

    #[test]
    fn a_zero_work_graph_sweep_is_overhead_bound() {
        // Pure-overhead limit: with nothing to compute, per-task wall is
        // all scheduling, so efficiency collapses and comm dominates.
        let cfg = tiny(Scheduler::Graph, 1, vec![Duration::ZERO]);
        let sweep = run_sweep(&cfg).unwrap();
        assert_eq!(sweep.records.len(), 1);
        let rec = &sweep.records[0];
        assert!(rec.error.is_none(), "{:?}", rec.error);
        assert!(
            rec.efficiency < 0.2,
            "zero-work efficiency {}",
            rec.efficiency
        );
        assert!(
            rec.phases.comm >= rec.phases.compute,
            "comm {} should dominate compute {}",
            rec.phases.comm,
            rec.phases.compute
        );
        let metg = sweep.metg.unwrap();
        assert!(metg.unbracketed, "a single sub-0.5 point cannot bracket");
    }

    #[test]
    fn a_long_task_graph_sweep_overlaps_its_comm() {
        // Task duration ≫ round-trip: prefetch hides the request/report
        // latency, so efficiency approaches 1 and exposed comm is small.
        let cfg = SweepConfig {
            tasks_per_worker: 4,
            iterations_per_task: 1,
            ..SweepConfig::new(Scheduler::Graph, 1, vec![Duration::from_millis(25)])
        };
        let sweep = run_sweep(&cfg).unwrap();
        let rec = &sweep.records[0];
        assert!(rec.error.is_none(), "{:?}", rec.error);
        assert!(
            rec.efficiency > 0.9,
            "long-task efficiency {}",
            rec.efficiency
        );
        assert!(
            rec.phases.comm < 0.2 * rec.phases.compute,
            "comm {} vs compute {}",
            rec.phases.comm,
            rec.phases.compute
        );
        // Attribution closure: phases tile the wall from below, and at
        // large task sizes nearly all of it is accounted for.
        assert!(rec.phases.attributed() <= rec.wall_seconds * 1.0001);
        assert!(rec.phases.attributed() >= 0.9 * rec.wall_seconds);
    }

    #[test]
    fn graph_efficiency_rises_with_task_size() {
        let cfg = tiny(
            Scheduler::Graph,
            1,
            vec![Duration::from_micros(1), Duration::from_millis(10)],
        );
        let sweep = run_sweep(&cfg).unwrap();
        assert_eq!(sweep.curve.len(), 2);
        assert!(
            sweep.curve[0].efficiency < sweep.curve[1].efficiency,
            "curve should rise: {:?}",
            sweep.curve
        );
    }

    #[test]
    fn bsp_sync_picks_up_an_injected_straggler() {
        // One rank sleeps an extra 50 ms in its first step; max-minus-min
        // attribution must recover roughly that much as sync.
        let delay = Duration::from_millis(50);
        let m = bsp_point(
            3,
            4,
            1,
            Duration::from_millis(1),
            Kernel::Wait,
            Some((1, delay)),
        );
        assert!(
            m.phases.sync >= 0.045 && m.phases.sync <= 0.065,
            "injected 50 ms, measured sync {}s",
            m.phases.sync
        );
        assert_eq!(m.phases.comm, 0.0);
        assert_eq!(m.per_rank_compute.len(), 3);
        // The straggler's own clock shows the delay as compute.
        assert!(m.per_rank_compute[1] > m.per_rank_compute[0]);
    }

    #[test]
    fn a_balanced_bsp_sweep_attributes_no_comm() {
        let cfg = SweepConfig {
            tasks_per_worker: 4,
            iterations_per_task: 1,
            kernel: Kernel::Wait,
            ..SweepConfig::new(Scheduler::Bsp, 2, vec![Duration::from_millis(2)])
        };
        let sweep = run_sweep(&cfg).unwrap();
        let rec = &sweep.records[0];
        assert!(rec.error.is_none());
        assert_eq!(rec.phases.comm, 0.0, "bsp never exposes comm");
        assert!(rec.phases.sync >= 0.0);
        assert!(rec.efficiency > 0.0);
    }

    #[test]
    fn filemake_charges_spawn_per_script() {
        let cfg = SweepConfig {
            tasks_per_worker: 2,
            iterations_per_task: 1,
            ..SweepConfig::new(Scheduler::Filemake, 1, vec![Duration::from_millis(5)])
        };
        let sweep = run_sweep(&cfg).unwrap();
        let rec = &sweep.records[0];
        assert!(rec.error.is_none(), "{:?}", rec.error);
        assert!(rec.phases.spawn > 0.0, "script spawn must cost something");
        assert_eq!(rec.phases.comm, 0.0);
        // Two 5 ms scripts on one node run back to back.
        assert!(rec.wall_seconds >= 0.010);
        assert!(
            (rec.task_ideal_seconds - 0.005).abs() < 0.002,
            "baseline {}",
            rec.task_ideal_seconds
        );
    }

    #[test]
    fn a_failing_script_records_an_error_row() {
        let cfg = SweepConfig {
            tasks_per_worker: 2,
            iterations_per_task: 1,
            repeats: 3,
            script_kernel: ScriptKernel::Command(vec!["false".into()]),
            ..SweepConfig::new(Scheduler::Filemake, 1, vec![Duration::from_millis(1)])
        };
        let sweep = run_sweep(&cfg).unwrap();
        // The failure aborts the point: one error row, not three.
        assert_eq!(sweep.records.len(), 1);
        assert!(sweep.records[0].error.is_some());
        assert_eq!(sweep.records[0].efficiency, 0.0);
        assert!(sweep.curve.is_empty());
        assert!(sweep.metg.is_none());
    }

    #[test]
    fn command_kernels_expand_their_placeholders() {
        let k = ScriptKernel::Command(vec![
            "/usr/bin/bench".into(),
            "spin-kernel".into(),
            "{micros}".into(),
            "{iters}".into(),
        ]);
        assert_eq!(
            k.command_line(250, 16),
            "/usr/bin/bench spin-kernel 250 16"
        );
        assert_eq!(ScriptKernel::Sleep.command_line(1500, 2), "sleep 0.003000");
    }

    #[test]
    fn a_bench_runs_every_worker_count_and_fits_when_it_can() {
        let req = BenchRequest {
            tasks_per_worker: 4,
            iterations_per_task: 1,
            kernel: Kernel::Wait,
            ..BenchRequest::new(
                Scheduler::Graph,
                vec![1, 2],
                vec![Duration::from_micros(100), Duration::from_millis(20)],
            )
        };
        let out = run_bench(&req).unwrap();
        assert_eq!(out.sweeps.len(), 2);
        assert_eq!(out.sweeps[0].workers, 1);
        assert_eq!(out.sweeps[1].workers, 2);
        let scaling = out.scaling.expect("two metg points fit a flagged law");
        assert!(scaling.underpowered);
        assert_eq!(out.calibration.samples.len(), 4);
    }

    #[test]
    fn repeats_fill_rows_and_average_into_one_curve_point() {
        let cfg = SweepConfig {
            tasks_per_worker: 2,
            iterations_per_task: 1,
            repeats: 3,
            kernel: Kernel::Wait,
            ..SweepConfig::new(Scheduler::Bsp, 2, vec![Duration::from_millis(1)])
        };
        let sweep = run_sweep(&cfg).unwrap();
        assert_eq!(sweep.records.len(), 3);
        assert_eq!(sweep.curve.len(), 1);
        let mean = sweep.records.iter().map(|r| r.efficiency).sum::<f64>() / 3.0;
        assert!((sweep.curve[0].efficiency - mean).abs() < 1e-12);
    }

    #[test]
    fn scratch_dirs_are_unique_and_disposable() {
        let a = scratch_dir().unwrap();
        let b = scratch_dir().unwrap();
        assert_ne!(a, b);
        assert!(a.join("work").is_dir());
        std::fs::remove_dir_all(&a).unwrap();
        std::fs::remove_dir_all(&b).unwrap();
    }
}
