//! Every controller against the nominal plant and each configured
//! perturbation, ranked by lateral RMS within each plant variant.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use super::config::{ControllerKind, Perturbation, ScenarioConfig};
use super::scenario::{run_prepared, PreparedScenario, ScenarioResult};
use super::HarnessError;

/// One cell of the comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonEntry {
    pub controller: ControllerKind,
    pub perturbation: Perturbation,
    /// 1-based rank within the plant variant.
    pub rank: usize,
    /// The run, or the reason it could not be started.
    pub outcome: Result<ScenarioResult, String>,
}

impl ComparisonEntry {
    pub fn variant(&self) -> String {
        self.perturbation.label()
    }

    pub fn status_label(&self) -> &str {
        match &self.outcome {
            Ok(r) => r.status.label(),
            Err(_) => "error",
        }
    }

    /// Lateral RMS of a completed run.
    pub fn completed_lateral_rms(&self) -> Option<f64> {
        match &self.outcome {
            Ok(r) if r.status.is_completed() => Some(r.metrics.lateral_rms),
            _ => None,
        }
    }

    fn sort_key(&self) -> (u8, f64) {
        match &self.outcome {
            Ok(r) if r.status.is_completed() => (0, nan_last(r.metrics.lateral_rms)),
            Ok(r) => (1, nan_last(r.metrics.lateral_rms)),
            Err(_) => (2, f64::INFINITY),
        }
    }
}

fn nan_last(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

/// Comparison table, grouped by variant (nominal first) and sorted by rank.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub entries: Vec<ComparisonEntry>,
}

pub const COMPARISON_COLUMNS: [&str; 18] = [
    "variant",
    "cf_scale",
    "cr_scale",
    "controller",
    "rank",
    "status",
    "partial",
    "terminated_at",
    "samples",
    "lateral_max",
    "lateral_rms",
    "yaw_max",
    "yaw_rms",
    "speed_rms",
    "effort_torque",
    "effort_steer",
    "saturation_torque",
    "saturation_steer",
];

impl Comparison {
    pub fn entries_for(&self, p: Perturbation) -> impl Iterator<Item = &ComparisonEntry> + '_ {
        self.entries.iter().filter(move |e| e.perturbation == p)
    }

    /// Best-ranked controller of a variant.
    pub fn winner(&self, p: Perturbation) -> Option<ControllerKind> {
        self.entries_for(p).find(|e| e.rank == 1).map(|e| e.controller)
    }

    pub fn get(&self, controller: ControllerKind, p: Perturbation) -> Option<&ComparisonEntry> {
        self.entries_for(p).find(|e| e.controller == controller)
    }

    pub fn to_csv(&self) -> String {
        let mut out = COMPARISON_COLUMNS.join(",");
        out.push('\n');
        for e in &self.entries {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                e.variant(),
                e.perturbation.cf_scale,
                e.perturbation.cr_scale,
                e.controller,
                e.rank,
                e.status_label()
            );
            match &e.outcome {
                Ok(r) => {
                    let _ = write!(out, ",{}", !r.status.is_completed());
                    match r.status.end_time() {
                        Some(t) => {
                            let _ = write!(out, ",{t}");
                        }
                        None => out.push(','),
                    }
                    for (_, v) in r.metrics.entries() {
                        let _ = write!(out, ",{v}");
                    }
                }
                Err(_) => {
                    out.push_str(",true,");
                    out.push_str(&",".repeat(10));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the three controllers on the nominal plant and on each entry of
/// `cfg.compare_perturbations`. Jobs run on worker threads; the table is
/// assembled in job order, so its content does not depend on scheduling.
/// A run that cannot start is recorded in its cell; only a track or
/// reference that cannot be built fails the whole comparison.
pub fn compare_controllers(cfg: &ScenarioConfig) -> Result<Comparison, HarnessError> {
    let prep = PreparedScenario::new(cfg)?;
    let variants: Vec<Perturbation> = std::iter::once(Perturbation::NONE)
        .chain(cfg.compare_perturbations.iter().copied())
        .collect();
    let jobs: Vec<(Perturbation, ControllerKind)> = variants
        .iter()
        .flat_map(|p| ControllerKind::ALL.iter().map(move |c| (*p, *c)))
        .collect();

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len())
        .max(1);
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, prep) = (&jobs, &next, &prep);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(perturbation, controller)) = jobs.get(i) else { break };
                let run_cfg = ScenarioConfig { controller, perturbation, ..cfg.clone() };
                let outcome = run_prepared(&run_cfg, prep).map_err(|e| e.to_string());
                if tx.send((i, outcome)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);

    let mut outcomes: Vec<Option<Result<ScenarioResult, String>>> = vec![None; jobs.len()];
    for (i, outcome) in rx {
        outcomes[i] = Some(outcome);
    }

    let mut entries = Vec::with_capacity(jobs.len());
    for (chunk, variant_jobs) in outcomes.chunks_mut(ControllerKind::ALL.len()).zip(jobs.chunks(ControllerKind::ALL.len())) {
        let mut group: Vec<ComparisonEntry> = chunk
            .iter_mut()
            .zip(variant_jobs)
            .map(|(o, &(perturbation, controller))| ComparisonEntry {
                controller,
                perturbation,
                rank: 0,
                outcome: o.take().unwrap_or_else(|| Err("worker did not report".into())),
            })
            .collect();
        // Stable sort keeps the controller order for ties.
        group.sort_by(|a, b| {
            let (ka, kb) = (a.sort_key(), b.sort_key());
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
        });
        for (i, e) in group.iter_mut().enumerate() {
            e.rank = i + 1;
        }
        entries.extend(group);
    }
    Ok(Comparison { entries })
}
