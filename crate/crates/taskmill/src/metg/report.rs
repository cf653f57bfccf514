//! Result files: a machine-readable `results.csv` (one row per run), a
//! human `summary.txt` (per-phase table, METG lines, calibration and
//! scaling verdicts), and `metg.json` (the whole [`BenchOutcome`]).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{BenchOutcome, MetgError, RunRecord, ScalingLaw};

/// Where [`emit_report`] wrote its three files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub json: PathBuf,
}

pub const CSV_HEADER: &str = "scheduler,workers,requested_micros,iterations,\
task_ideal_seconds,repeat,wall_seconds,spawn_seconds,comm_seconds,compute_seconds,\
sync_seconds,efficiency,median_rtt_seconds,note,error";

fn csv_field(text: &str) -> String {
    // Values are free-form only in `note`/`error`; keep the format
    // delimiter-safe without quoting rules.
    text.replace([',', '\n'], ";")
}

fn csv_row(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{:.9},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.9},{},{}",
        r.scheduler,
        r.workers,
        r.requested_micros,
        r.iterations,
        r.task_ideal_seconds,
        r.repeat,
        r.wall_seconds,
        r.phases.spawn,
        r.phases.comm,
        r.phases.compute,
        r.phases.sync,
        r.efficiency,
        r.median_rtt_seconds,
        csv_field(r.note.as_deref().unwrap_or("")),
        csv_field(r.error.as_deref().unwrap_or("")),
    )
}

fn human_seconds(s: f64) -> String {
    if s >= 1.0 {
        format!("{s:.3} s")
    } else if s >= 1e-3 {
        format!("{:.3} ms", s * 1e3)
    } else {
        format!("{:.1} µs", s * 1e6)
    }
}

fn summary_text(outcome: &BenchOutcome) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scheduler: {}   kernel: {}   kernels/worker: {}   iters/task: {}   repeats: {}",
        outcome.scheduler,
        outcome.kernel,
        outcome.tasks_per_worker,
        outcome.iterations_per_task,
        outcome.repeats
    );

    let cal = &outcome.calibration;
    if cal.unstable {
        let _ = writeln!(
            out,
            "spin calibration: UNSTABLE (spread above 25% — treat timings with suspicion)"
        );
    } else {
        let _ = writeln!(
            out,
            "spin calibration: ok (worst error {:.1}%)",
            cal.worst_error() * 100.0
        );
    }
    out.push('\n');

    for sweep in &outcome.sweeps {
        let _ = writeln!(out, "workers = {}", sweep.workers);
        let _ = writeln!(
            out,
            "  {:>14} {:>10} {:>12} {:>12} {:>12} {:>12}",
            "task size", "eff", "spawn", "comm/task", "compute", "sync"
        );
        for rec in &sweep.records {
            if let Some(err) = &rec.error {
                let _ = writeln!(
                    out,
                    "  {:>14} ERROR: {err}",
                    human_seconds(rec.task_ideal_seconds)
                );
                continue;
            }
            let tasks_share =
                (outcome.tasks_per_worker as f64 / rec.iterations.max(1) as f64).max(1.0);
            let comm_per_task = rec.phases.comm / tasks_share;
            let _ = writeln!(
                out,
                "  {:>14} {:>10.3} {:>12} {:>12} {:>12} {:>12}{}",
                human_seconds(rec.task_ideal_seconds),
                rec.efficiency,
                human_seconds(rec.phases.spawn),
                human_seconds(comm_per_task),
                human_seconds(rec.phases.compute),
                human_seconds(rec.phases.sync),
                rec.note
                    .as_deref()
                    .map(|n| format!("   ({n})"))
                    .unwrap_or_default(),
            );
        }
        match &sweep.metg {
            Some(m) if m.unbracketed => {
                let _ = writeln!(
                    out,
                    "  METG: not bracketed by the sweep (nearest endpoint {})",
                    human_seconds(m.metg_seconds)
                );
            }
            Some(m) => {
                let _ = writeln!(out, "  METG: {}", human_seconds(m.metg_seconds));
            }
            None => {
                let _ = writeln!(out, "  METG: unavailable (no clean measurements)");
            }
        }
        out.push('\n');
    }

    if let Some(scaling) = &outcome.scaling {
        match &scaling.law {
            ScalingLaw::Linear { slope, r2 } => {
                let _ = writeln!(
                    out,
                    "scaling: METG ≈ {} × workers (per-task serve latency; R² = {r2:.3}){}",
                    human_seconds(*slope),
                    if scaling.poor_fit { "  [POOR FIT]" } else { "" }
                );
            }
            ScalingLaw::Constant { mean, spread } => {
                let _ = writeln!(
                    out,
                    "scaling: METG ≈ {} independent of workers (spread {}){}",
                    human_seconds(*mean),
                    human_seconds(*spread),
                    if scaling.poor_fit { "  [POOR FIT]" } else { "" }
                );
            }
            ScalingLaw::Spread { per_workers } => {
                let pts: Vec<String> = per_workers
                    .iter()
                    .map(|(w, m)| format!("{w}→{}", human_seconds(*m)))
                    .collect();
                let _ = writeln!(out, "scaling: sync spread per worker count: {}", pts.join(", "));
            }
        }
        if scaling.underpowered {
            let _ = writeln!(out, "scaling: fewer than three worker counts — fit is indicative only");
        }
    }
    out
}

/// Write `results.csv`, `summary.txt`, and `metg.json` into `dir`
/// (created if missing). An outcome with no runs still writes all three —
/// the CSV is then header-only.
pub fn emit_report(outcome: &BenchOutcome, dir: &Path) -> Result<ReportPaths, MetgError> {
    fs::create_dir_all(dir)?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for sweep in &outcome.sweeps {
        for rec in &sweep.records {
            csv.push_str(&csv_row(rec));
            csv.push('\n');
        }
    }
    let paths = ReportPaths {
        csv: dir.join("results.csv"),
        summary: dir.join("summary.txt"),
        json: dir.join("metg.json"),
    };
    fs::write(&paths.csv, csv)?;
    fs::write(&paths.summary, summary_text(outcome))?;
    let json = serde_json::to_string_pretty(outcome)
        .map_err(|e| MetgError::Protocol(format!("serialize outcome: {e}")))?;
    fs::write(&paths.json, json)?;
    Ok(paths)
}
