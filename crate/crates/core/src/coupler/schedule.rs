//! Bounded worker pool for oracle jobs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{CrystalStructure, PropertyKind, PropertyValue};
use crate::oracle::{cost_of, evaluate, relax, CallKind, OracleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxSettings {
    pub max_steps: usize,
    pub step_size: f64,
    pub tol: f64,
}

impl Default for RelaxSettings {
    fn default() -> Self {
        RelaxSettings { max_steps: 20, step_size: 0.01, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JobKind {
    Evaluate(PropertyKind),
    /// Relax, then evaluate the property on the relaxed structure.
    RelaxEvaluate(PropertyKind, RelaxSettings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleJob {
    pub id: usize,
    pub structure: CrystalStructure,
    pub kind: JobKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub structure: CrystalStructure,
    pub value: PropertyValue,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobResult {
    pub id: usize,
    /// Failures are kept per task as their message.
    pub outcome: std::result::Result<JobOutput, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    /// Sorted by job id.
    pub results: Vec<JobResult>,
    /// Sum of the successful jobs' costs, added in id order.
    pub total_cost_units: f64,
}

/// Runs one job; the cost includes the relaxation steps and the final
/// property call.
pub fn run_job(job: &OracleJob, cfg: &OracleConfig) -> Result<JobOutput> {
    let (structure, kind, mut cost) = match job.kind {
        JobKind::Evaluate(kind) => (job.structure.clone(), kind, 0.0),
        JobKind::RelaxEvaluate(kind, r) => {
            let relaxed = relax(&job.structure, cfg, r.max_steps, r.step_size, r.tol)?;
            let cost = cost_of(CallKind::Relax(relaxed.steps), cfg);
            (relaxed.structure, kind, cost)
        }
    };
    let value = evaluate(&structure, kind, cfg)?;
    cost += cost_of(
        match kind {
            PropertyKind::FormationEnergy => CallKind::Energy,
            PropertyKind::BandGap => CallKind::Gap,
        },
        cfg,
    );
    cfg.simulate_latency(cost);
    Ok(JobOutput { structure, value, cost })
}

/// Executes `jobs` on at most `workers` threads. Results come back in job-id
/// order and the cost total is summed in that order, so the outcome does not
/// depend on how the work interleaved.
pub fn schedule(jobs: Vec<OracleJob>, workers: usize, cfg: &OracleConfig) -> Result<ScheduleOutcome> {
    if workers == 0 {
        return Err(Error::usage("schedule needs at least one worker"));
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<JobResult>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                let outcome = run_job(job, cfg).map_err(|e| e.to_string());
                slots.lock().expect("no worker panics while holding the lock")[k] =
                    Some(JobResult { id: job.id, outcome });
            });
        }
    });
    let mut results: Vec<JobResult> =
        slots.into_inner().expect("workers joined").into_iter().map(|r| r.expect("every job ran")).collect();
    results.sort_by_key(|r| r.id);
    let total_cost_units = results.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|o| o.cost).sum();
    Ok(ScheduleOutcome { results, total_cost_units })
}
