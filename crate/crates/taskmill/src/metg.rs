//! The measurement harness: sweeps task granularity across all three
//! schedulers and reports each one's METG — *minimum effective task
//! granularity*, the task duration at which scheduling overhead eats half
//! the wall time — plus a per-phase overhead breakdown.
//!
//! The sweep methodology is weak scaling: every worker executes a fixed
//! number of kernels (`tasks_per_worker`), grouped into tasks of
//! `iterations_per_task` kernels each, and the per-iteration kernel
//! duration is swept. Efficiency at a sweep point is the single-worker
//! ideal task time divided by the measured per-task wall time; METG is
//! where that curve crosses 0.5, linearly interpolated:
//!
//! ```
//! use taskmill::metg::{compute_metg, MetgCurvePoint};
//!
//! let curve = [
//!     MetgCurvePoint { task_ideal_seconds: 0.001, efficiency: 0.4 },
//!     MetgCurvePoint { task_ideal_seconds: 0.002, efficiency: 0.6 },
//! ];
//! let metg = compute_metg(&curve).unwrap();
//! assert!((metg.metg_seconds - 0.0015).abs() < 1e-12);
//! assert!(!metg.unbracketed);
//! ```
//!
//! [`sweep`] holds the runners (one per scheduler); [`report`] writes
//! `results.csv`, `summary.txt`, and `metg.json`.

pub mod report;
pub mod sweep;

pub use report::{emit_report, ReportPaths};
pub use sweep::{
    bsp_point, run_bench, run_sweep, BenchOutcome, BenchRequest, BspMeasure, RunRecord,
    ScriptKernel, WorkerSweep,
};

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::worker::busy_spin;

/// Which scheduler a sweep exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    /// Pull-based task-graph hub + workers.
    Graph,
    /// Bulk-synchronous ranks over the in-process communicator.
    Bsp,
    /// File-directed parallel make running subordinate scripts.
    Filemake,
}

impl fmt::Display for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheduler::Graph => "graph",
            Scheduler::Bsp => "bsp",
            Scheduler::Filemake => "filemake",
        })
    }
}

impl FromStr for Scheduler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "graph" => Ok(Scheduler::Graph),
            "bsp" => Ok(Scheduler::Bsp),
            "filemake" => Ok(Scheduler::Filemake),
            other => Err(format!("unknown scheduler `{other}` (graph|bsp|filemake)")),
        }
    }
}

/// The synthetic compute kernel.
///
/// `Spin` busies the CPU for the requested duration — the honest kernel
/// when each worker owns a core. `Wait` blocks for the same duration,
/// emulating work offloaded to an accelerator; it keeps weak scaling
/// meaningful when workers outnumber host cores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Spin,
    Wait,
}

impl Kernel {
    /// Execute one kernel of duration `d`.
    pub fn run_once(self, d: Duration) {
        match self {
            Kernel::Spin => busy_spin(d),
            Kernel::Wait => {
                if !d.is_zero() {
                    crate::worker::precise_timed_waits();
                    std::thread::sleep(d);
                }
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Spin => "spin",
            Kernel::Wait => "wait",
        })
    }
}

impl FromStr for Kernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spin" => Ok(Kernel::Spin),
            "wait" => Ok(Kernel::Wait),
            other => Err(format!("unknown kernel `{other}` (spin|wait)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetgError {
    #[error("kernel durations must be strictly increasing")]
    UnorderedDurations,
    #[error("need at least one kernel duration")]
    NoDurations,
    #[error("repeats must be at least 1")]
    ZeroRepeats,
    #[error("need at least one worker")]
    NoWorkers,
    #[error("tasks_per_worker and iterations_per_task must be at least 1")]
    ZeroScale,
    #[error("efficiency curve is empty")]
    EmptyCurve,
    #[error("hub: {0}")]
    Hub(#[from] crate::hub::HubError),
    #[error("hub client: {0}")]
    Client(#[from] crate::hub::ClientError),
    #[error("worker: {0}")]
    Worker(#[from] crate::worker::WorkerError),
    #[error("plan: {0}")]
    Pmake(#[from] crate::pmake::PmakeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
}

/// One sweep: a scheduler, a worker count, and the granularities to visit.
///
/// `tasks_per_worker` counts *kernel executions* per worker; the grouping
/// of kernels into schedulable tasks is `iterations_per_task` (so a worker
/// runs `tasks_per_worker / iterations_per_task` tasks). The defaults —
/// 1024 kernels per worker, 256 iterations per task for the task-shaped
/// schedulers, 1 for bsp where a "task" is one superstep — keep a sweep
/// point's work identical across schedulers.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub scheduler: Scheduler,
    pub workers: usize,
    /// Kernel executions per worker (weak scaling: total = this × workers).
    pub tasks_per_worker: u64,
    /// Kernels per schedulable task (bsp: per superstep).
    pub iterations_per_task: u64,
    /// Per-iteration kernel durations to sweep; strictly increasing.
    pub durations: Vec<Duration>,
    /// Measurement repeats per duration.
    pub repeats: u32,
    pub kernel: Kernel,
    /// What the generated filemake scripts run as their kernel; ignored by
    /// the other schedulers.
    pub script_kernel: ScriptKernel,
}

impl SweepConfig {
    /// A config with the conventional defaults for `scheduler`.
    pub fn new(scheduler: Scheduler, workers: usize, durations: Vec<Duration>) -> SweepConfig {
        SweepConfig {
            scheduler,
            workers,
            tasks_per_worker: 1024,
            iterations_per_task: default_iterations(scheduler),
            durations,
            repeats: 1,
            kernel: Kernel::Spin,
            script_kernel: ScriptKernel::Sleep,
        }
    }

    pub fn validate(&self) -> Result<(), MetgError> {
        if self.workers == 0 {
            return Err(MetgError::NoWorkers);
        }
        if self.durations.is_empty() {
            return Err(MetgError::NoDurations);
        }
        if self.durations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetgError::UnorderedDurations);
        }
        if self.repeats == 0 {
            return Err(MetgError::ZeroRepeats);
        }
        if self.tasks_per_worker == 0 || self.iterations_per_task == 0 {
            return Err(MetgError::ZeroScale);
        }
        Ok(())
    }

    /// Total schedulable tasks for the task-shaped schedulers.
    pub fn total_tasks(&self) -> u64 {
        let kernels = self.tasks_per_worker * self.workers as u64;
        kernels.div_ceil(self.iterations_per_task)
    }

    /// Supersteps per rank for bsp.
    pub fn steps_per_rank(&self) -> u64 {
        self.tasks_per_worker.div_ceil(self.iterations_per_task)
    }

    /// Tasks each worker is expected to process (fractional when the total
    /// does not divide evenly).
    pub fn tasks_per_worker_share(&self) -> f64 {
        match self.scheduler {
            Scheduler::Bsp => self.steps_per_rank() as f64,
            _ => self.total_tasks() as f64 / self.workers as f64,
        }
    }
}

/// 256 iterations per task for the task-shaped schedulers, 1 for bsp.
pub fn default_iterations(scheduler: Scheduler) -> u64 {
    match scheduler {
        Scheduler::Bsp => 1,
        _ => 256,
    }
}

/// Where one run's seconds went.
///
/// `spawn` is launch/startup (the batch-launcher and allocation analog),
/// `comm` the *exposed* per-task request/report wait (communication hidden
/// behind compute is not charged), `compute` the mean per-worker kernel
/// time, and `sync` the straggler spread — slowest minus fastest worker
/// completion. Phases are defined to tile the measured wall from below:
/// their sum never exceeds it, and negative attributions are clamped to 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub spawn: f64,
    pub comm: f64,
    pub compute: f64,
    pub sync: f64,
}

impl PhaseBreakdown {
    /// Seconds the breakdown accounts for.
    pub fn attributed(&self) -> f64 {
        self.spawn + self.comm + self.compute + self.sync
    }
}

/// One point on the efficiency curve.
///
/// `task_ideal_seconds` is the measured single-worker kernel time per task
/// (the dedicated baseline run, not the requested duration); `efficiency`
/// is that ideal divided by the measured per-task wall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetgCurvePoint {
    pub task_ideal_seconds: f64,
    pub efficiency: f64,
}

/// The 50%-efficiency crossing of one sweep's curve.
///
/// When the curve never crosses 0.5 the nearest swept endpoint is reported
/// and `unbracketed` is set: an all-efficient curve means the true METG
/// lies at or below the smallest swept size, an all-inefficient one means
/// it lies above the largest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetgResult {
    pub metg_seconds: f64,
    pub unbracketed: bool,
    /// The sweep points the crossing was interpolated between.
    pub bracket: Option<(MetgCurvePoint, MetgCurvePoint)>,
}

/// Locate the smallest swept task size with efficiency ≥ 0.5, linearly
/// interpolated between the bracketing sweep points.
pub fn compute_metg(curve: &[MetgCurvePoint]) -> Result<MetgResult, MetgError> {
    if curve.is_empty() {
        return Err(MetgError::EmptyCurve);
    }
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.task_ideal_seconds.total_cmp(&b.task_ideal_seconds));

    let crossing = pts.iter().position(|p| p.efficiency >= 0.5);
    Ok(match crossing {
        Some(0) => MetgResult {
            metg_seconds: pts[0].task_ideal_seconds,
            unbracketed: true,
            bracket: None,
        },
        Some(i) => {
            let (lo, hi) = (pts[i - 1], pts[i]);
            let t = (0.5 - lo.efficiency) / (hi.efficiency - lo.efficiency);
            MetgResult {
                metg_seconds: lo.task_ideal_seconds
                    + t * (hi.task_ideal_seconds - lo.task_ideal_seconds),
                unbracketed: false,
                bracket: Some((lo, hi)),
            }
        }
        None => MetgResult {
            metg_seconds: pts[pts.len() - 1].task_ideal_seconds,
            unbracketed: true,
            bracket: None,
        },
    })
}

/// One calibration probe: a requested spin duration, the median measured
/// wall time, and the relative spread across repeats.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub requested_seconds: f64,
    pub measured_seconds: f64,
    /// (max − min) / median over the repeats.
    pub spread: f64,
}

/// The spin-kernel accuracy check persisted alongside results.
///
/// The spin kernel runs to a monotonic-clock deadline, so calibration
/// verifies accuracy rather than fitting a loop-count model. `unstable`
/// means some nonzero probe's spread exceeded 25% — a warning (noisy
/// machine), not a failure; sweeps proceed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinCalibration {
    pub samples: Vec<CalibrationSample>,
    pub unstable: bool,
}

impl SpinCalibration {
    /// Worst relative error |measured/requested − 1| over nonzero probes.
    pub fn worst_error(&self) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.requested_seconds > 0.0)
            .map(|s| (s.measured_seconds / s.requested_seconds - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Probe the spin kernel at the standard durations (0, 100 µs, 300 µs,
/// 1 ms). The zero-duration probe measures bare call overhead and is
/// excluded from the stability verdict.
pub fn calibrate_spin() -> SpinCalibration {
    calibrate_spin_with(
        &[
            Duration::ZERO,
            Duration::from_micros(100),
            Duration::from_micros(300),
            Duration::from_millis(1),
        ],
        9,
    )
}

/// [`calibrate_spin`] with explicit probe durations and repeat count.
pub fn calibrate_spin_with(requests: &[Duration], reps: usize) -> SpinCalibration {
    let reps = reps.max(1);
    let mut samples = Vec::with_capacity(requests.len());
    let mut unstable = false;
    for &req in requests {
        let mut times: Vec<f64> = (0..reps)
            .map(|_| {
                let t = Instant::now();
                busy_spin(req);
                t.elapsed().as_secs_f64()
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let measured = times[times.len() / 2];
        let spread = if measured > 0.0 {
            (times[times.len() - 1] - times[0]) / measured
        } else {
            0.0
        };
        if !req.is_zero() && spread > 0.25 {
            unstable = true;
        }
        samples.push(CalibrationSample {
            requested_seconds: req.as_secs_f64(),
            measured_seconds: measured,
            spread,
        });
    }
    SpinCalibration { samples, unstable }
}

/// The fitted METG-versus-workers law, shaped per scheduler.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum ScalingLaw {
    /// Graph: METG(W) ≈ slope × W — the slope is the effective per-task
    /// serve latency of the hub.
    Linear { slope: f64, r2: f64 },
    /// Filemake: METG is worker-count independent, equal to the per-task
    /// startup cost; `spread` is max − min across worker counts.
    Constant { mean: f64, spread: f64 },
    /// Bsp: the per-worker-count METG values are reported as-is (the
    /// straggler spread grows slowly and fits no simple law worth forcing).
    Spread { per_workers: Vec<(usize, f64)> },
}

/// METG across worker counts plus the scheduler-appropriate fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub scheduler: Scheduler,
    /// (workers, metg_seconds), ascending by workers.
    pub points: Vec<(usize, f64)>,
    pub law: ScalingLaw,
    /// The fit explains the data badly; reported, never hidden.
    pub poor_fit: bool,
    /// Fewer than three worker counts — the fit is under-determined.
    pub underpowered: bool,
}

/// Fit the scheduler's expected scaling law to (workers, METG) points.
///
/// Graph gets a through-origin linear fit (slope = Σ W·M / Σ W², R²
/// against the mean-only model); filemake a constant (mean and spread);
/// bsp's distribution is echoed without a fit. Poor fits set `poor_fit`.
pub fn scaling_report(scheduler: Scheduler, points: &[(usize, f64)]) -> ScalingReport {
    assert!(!points.is_empty(), "scaling needs at least one METG point");
    let mut points = points.to_vec();
    points.sort_by_key(|&(w, _)| w);
    let underpowered = points.len() < 3;

    let (law, poor_fit) = match scheduler {
        Scheduler::Graph => {
            let sum_wm: f64 = points.iter().map(|&(w, m)| w as f64 * m).sum();
            let sum_ww: f64 = points.iter().map(|&(w, _)| (w as f64).powi(2)).sum();
            let slope = sum_wm / sum_ww;
            let mean: f64 =
                points.iter().map(|&(_, m)| m).sum::<f64>() / points.len() as f64;
            let ss_res: f64 = points
                .iter()
                .map(|&(w, m)| (m - slope * w as f64).powi(2))
                .sum();
            let ss_tot: f64 = points.iter().map(|&(_, m)| (m - mean).powi(2)).sum();
            let r2 = if ss_tot > 0.0 {
                1.0 - ss_res / ss_tot
            } else if ss_res.abs() < 1e-30 {
                1.0
            } else {
                0.0
            };
            (ScalingLaw::Linear { slope, r2 }, r2 < 0.9)
        }
        Scheduler::Filemake => {
            let vals: Vec<f64> = points.iter().map(|&(_, m)| m).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let spread = vals.iter().fold(f64::MIN, |a, &b| a.max(b))
                - vals.iter().fold(f64::MAX, |a, &b| a.min(b));
            (ScalingLaw::Constant { mean, spread }, spread > 0.5 * mean)
        }
        Scheduler::Bsp => (
            ScalingLaw::Spread {
                per_workers: points.clone(),
            },
            false,
        ),
    };

    ScalingReport {
        scheduler,
        points,
        law,
        poor_fit,
        underpowered,
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    #[test]
    fn sweep_defaults_follow_the_scheduler() {
        let g = SweepConfig::new(Scheduler::Graph, 2, vec![ms(1)]);
        assert_eq!(g.tasks_per_worker, 1024);
        assert_eq!(g.iterations_per_task, 256);
        // 2 workers × 1024 kernels ÷ 256 per task.
        assert_eq!(g.total_tasks(), 8);

        let b = SweepConfig::new(Scheduler::Bsp, 4, vec![ms(1)]);
        assert_eq!(b.iterations_per_task, 1);
        assert_eq!(b.steps_per_rank(), 1024);

        let f = SweepConfig::new(Scheduler::Filemake, 1, vec![ms(1)]);
        assert_eq!(f.iterations_per_task, 256);
    }

    #[test]
    fn validation_rejects_malformed_sweeps() {
        let ok = SweepConfig::new(Scheduler::Graph, 1, vec![ms(1), ms(2)]);
        assert!(ok.validate().is_ok());

        let mut unordered = ok.clone();
        unordered.durations = vec![ms(2), ms(1)];
        assert!(matches!(
            unordered.validate(),
            Err(MetgError::UnorderedDurations)
        ));

        let mut duplicate = ok.clone();
        duplicate.durations = vec![ms(1), ms(1)];
        assert!(matches!(
            duplicate.validate(),
            Err(MetgError::UnorderedDurations)
        ));

        let mut none = ok.clone();
        none.durations.clear();
        assert!(matches!(none.validate(), Err(MetgError::NoDurations)));

        let mut zero_rep = ok.clone();
        zero_rep.repeats = 0;
        assert!(matches!(zero_rep.validate(), Err(MetgError::ZeroRepeats)));

        let mut no_workers = ok.clone();
        no_workers.workers = 0;
        assert!(matches!(no_workers.validate(), Err(MetgError::NoWorkers)));

        let mut zero_scale = ok;
        zero_scale.iterations_per_task = 0;
        assert!(matches!(zero_scale.validate(), Err(MetgError::ZeroScale)));
    }

    #[test]
    fn metg_interpolates_the_half_efficiency_crossing() {
        let curve = [
            MetgCurvePoint {
                task_ideal_seconds: 0.001,
                efficiency: 0.4,
            },
            MetgCurvePoint {
                task_ideal_seconds: 0.002,
                efficiency: 0.6,
            },
        ];
        let r = compute_metg(&curve).unwrap();
        assert!((r.metg_seconds - 0.0015).abs() < 1e-12);
        assert!(!r.unbracketed);
        let (lo, hi) = r.bracket.unwrap();
        assert_eq!(lo, curve[0]);
        assert_eq!(hi, curve[1]);
    }

    #[test]
    fn an_all_efficient_curve_is_flagged_below_range() {
        let curve = [
            MetgCurvePoint {
                task_ideal_seconds: 0.001,
                efficiency: 0.7,
            },
            MetgCurvePoint {
                task_ideal_seconds: 0.002,
                efficiency: 0.9,
            },
        ];
        let r = compute_metg(&curve).unwrap();
        assert_eq!(r.metg_seconds, 0.001);
        assert!(r.unbracketed);
        assert!(r.bracket.is_none());
    }

    #[test]
    fn an_all_inefficient_curve_is_flagged_above_range() {
        let curve = [
            MetgCurvePoint {
                task_ideal_seconds: 0.001,
                efficiency: 0.1,
            },
            MetgCurvePoint {
                task_ideal_seconds: 0.002,
                efficiency: 0.3,
            },
        ];
        let r = compute_metg(&curve).unwrap();
        assert_eq!(r.metg_seconds, 0.002);
        assert!(r.unbracketed);
    }

    #[test]
    fn an_empty_curve_is_an_error() {
        assert!(matches!(compute_metg(&[]), Err(MetgError::EmptyCurve)));
    }

    #[test]
    fn a_synthetic_latency_curve_crosses_at_the_latency() {
        // A single server with per-task latency ℓ gives eff(d) = d/(d+ℓ),
        // which crosses 0.5 exactly at d = ℓ.
        let latency = 0.001;
        let curve: Vec<MetgCurvePoint> = [0.000125, 0.00025, 0.0005, 0.001, 0.002, 0.004, 0.008]
            .iter()
            .map(|&d| MetgCurvePoint {
                task_ideal_seconds: d,
                efficiency: d / (d + latency),
            })
            .collect();
        let r = compute_metg(&curve).unwrap();
        assert!(!r.unbracketed);
        assert!(
            (r.metg_seconds - latency).abs() / latency < 0.05,
            "metg {} vs latency {latency}",
            r.metg_seconds
        );
    }

    #[test]
    fn metg_picks_the_smallest_crossing_of_a_wiggly_curve() {
        let curve = [
            MetgCurvePoint {
                task_ideal_seconds: 1.0,
                efficiency: 0.4,
            },
            MetgCurvePoint {
                task_ideal_seconds: 2.0,
                efficiency: 0.6,
            },
            MetgCurvePoint {
                task_ideal_seconds: 3.0,
                efficiency: 0.45,
            },
            MetgCurvePoint {
                task_ideal_seconds: 4.0,
                efficiency: 0.8,
            },
        ];
        let r = compute_metg(&curve).unwrap();
        assert!((r.metg_seconds - 1.5).abs() < 1e-12);
    }

    #[test]
    fn spin_calibration_brackets_the_request() {
        let cal = calibrate_spin_with(&[Duration::from_millis(1)], 9);
        let s = cal.samples[0];
        assert!(
            s.measured_seconds >= 0.0009 && s.measured_seconds <= 0.0011,
            "1 ms spin measured {}s",
            s.measured_seconds
        );
    }

    #[test]
    fn a_zero_request_measures_call_overhead_only() {
        let cal = calibrate_spin_with(&[Duration::ZERO], 9);
        assert!(
            cal.samples[0].measured_seconds < 100e-6,
            "zero-duration spin took {}s",
            cal.samples[0].measured_seconds
        );
        // The zero probe never drives the stability verdict.
        assert!(!cal.unstable);
    }

    #[test]
    fn calibration_is_monotonic_in_the_request() {
        let cal =
            calibrate_spin_with(&[Duration::from_millis(1), Duration::from_millis(2)], 5);
        assert!(cal.samples[1].measured_seconds > cal.samples[0].measured_seconds);
    }

    #[test]
    fn the_standard_calibration_covers_the_standard_probes() {
        let cal = calibrate_spin();
        assert_eq!(cal.samples.len(), 4);
        assert!(cal.worst_error() < 0.10, "worst error {}", cal.worst_error());
    }

    #[test]
    fn a_through_origin_fit_recovers_the_slope() {
        let pts = [(1, 0.002), (2, 0.004), (4, 0.008), (8, 0.016)];
        let rep = scaling_report(Scheduler::Graph, &pts);
        let ScalingLaw::Linear { slope, r2 } = rep.law else {
            panic!("graph law must be linear");
        };
        assert!((slope - 0.002).abs() < 1e-12);
        assert!(r2 > 0.999);
        assert!(!rep.poor_fit);
        assert!(!rep.underpowered);
    }

    #[test]
    fn a_noisy_linear_fit_is_flagged_poor() {
        let pts = [(1, 10.0), (2, 1.0), (4, 20.0), (8, 1.0)];
        let rep = scaling_report(Scheduler::Graph, &pts);
        assert!(rep.poor_fit);
    }

    #[test]
    fn a_constant_law_reports_mean_and_spread() {
        let pts = [(1, 0.005), (2, 0.006), (4, 0.0055)];
        let rep = scaling_report(Scheduler::Filemake, &pts);
        let ScalingLaw::Constant { mean, spread } = rep.law else {
            panic!("filemake law must be constant");
        };
        assert!((mean - 0.0055).abs() < 1e-12);
        assert!((spread - 0.001).abs() < 1e-12);
        assert!(!rep.poor_fit);
    }

    #[test]
    fn bsp_scaling_echoes_the_distribution() {
        let pts = [(2, 0.001), (4, 0.0012), (8, 0.0015)];
        let rep = scaling_report(Scheduler::Bsp, &pts);
        let ScalingLaw::Spread { per_workers } = &rep.law else {
            panic!("bsp law echoes the distribution");
        };
        assert_eq!(per_workers.as_slice(), &pts);
    }

    #[test]
    fn two_points_are_flagged_underpowered() {
        let rep = scaling_report(Scheduler::Graph, &[(1, 0.001), (2, 0.002)]);
        assert!(rep.underpowered);
    }
}
