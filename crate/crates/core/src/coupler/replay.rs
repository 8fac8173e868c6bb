//! Recorded coordinate-pattern traces and the mock tools that replay them.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coordinate::{
    run_coordinate_pattern, CandidateSource, CoordinateQuery, CoordinateSettings, CoordinateTools, MatchScorer,
    OracleTool, PropertyModel,
};
use super::gate::Route;
use super::planner::RulePlanner;
use super::report::{PatternRunReport, TraceEvent};
use super::schedule::JobOutput;
use crate::depot::{digest, Depot, NewRecord, Provenance};
use crate::error::{Error, Result};
use crate::matcore::{Composition, CrystalStructure, PropertyKind, PropertyValue, ValueSource};
use crate::surrogate::Confidence;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepOutcome {
    /// The generator produced nothing usable.
    Failed,
    /// A candidate, possibly a repeat of an earlier one.
    Candidate,
}

/// One recorded iteration. `p_match`, `prediction` and `oracle_value` are
/// what the models and the oracle returned for the candidate; `route` is
/// the routing the recording observed (absent for failed or repeated
/// proposals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceStep {
    pub iteration: usize,
    pub outcome: StepOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<CrystalStructure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_match: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Confidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub id: String,
    pub structure: CrystalStructure,
    #[serde(default)]
    pub properties: Vec<PropertyValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayTrace {
    pub schema_version: u32,
    pub name: String,
    pub query: CoordinateQuery,
    pub settings: CoordinateSettings,
    pub depot_seed: Vec<SeedRecord>,
    pub steps: Vec<TraceStep>,
}

impl ReplayTrace {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let trace: ReplayTrace = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), detail: e.to_string() })?;
        if trace.schema_version != TRACE_SCHEMA_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                detail: format!("unsupported trace schema_version {}", trace.schema_version),
            });
        }
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.len() != self.query.max_iterations {
            return Err(Error::usage(format!(
                "trace has {} steps for {} iterations",
                self.steps.len(),
                self.query.max_iterations
            )));
        }
        for (k, step) in self.steps.iter().enumerate() {
            if step.iteration != k + 1 {
                return Err(Error::usage(format!("trace step {k} records iteration {}", step.iteration)));
            }
            if step.outcome == StepOutcome::Candidate && step.structure.is_none() {
                return Err(Error::usage(format!("candidate at iteration {} has no structure", step.iteration)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayMode {
    /// Routing must reproduce the recorded routes exactly.
    Strict,
    /// Recorded routes are ignored; used for threshold sweeps.
    Sweep,
}

#[derive(Debug, Clone, Copy, Default)]
struct Recorded {
    p_match: Option<f64>,
    prediction: Option<Confidence>,
    oracle_value: Option<f64>,
}

fn recordings(trace: &ReplayTrace) -> HashMap<String, Recorded> {
    let mut map = HashMap::new();
    for step in &trace.steps {
        if let Some(s) = &step.structure {
            map.entry(digest(s)).or_insert(Recorded {
                p_match: step.p_match,
                prediction: step.prediction,
                oracle_value: step.oracle_value,
            });
        }
    }
    map
}

fn lookup<'a>(map: &'a HashMap<String, Recorded>, s: &CrystalStructure) -> Result<&'a Recorded> {
    map.get(&digest(s)).ok_or_else(|| Error::ReplayMismatch { iteration: 0, detail: "unrecorded structure".into() })
}

struct ReplaySource<'a> {
    steps: &'a [TraceStep],
}

impl CandidateSource for ReplaySource<'_> {
    fn propose(&mut self, _composition: &Composition, iteration: usize) -> Result<CrystalStructure> {
        let step = &self.steps[iteration - 1];
        match (step.outcome, &step.structure) {
            (StepOutcome::Candidate, Some(s)) => Ok(s.clone()),
            _ => Err(Error::Generation("recorded generation failure".into())),
        }
    }
}

struct ReplayScorer<'a>(&'a HashMap<String, Recorded>);

impl MatchScorer for ReplayScorer<'_> {
    fn p_match(&self, s: &CrystalStructure) -> Result<f64> {
        lookup(self.0, s)?.p_match.ok_or_else(|| Error::ReplayMismatch { iteration: 0, detail: "no p_match".into() })
    }
}

/// Recorded confidences do not change with fine-tuning; the flush itself is
/// still counted by the engine.
#[derive(Clone)]
struct ReplayModel<'a>(&'a HashMap<String, Recorded>);

impl PropertyModel for ReplayModel<'_> {
    fn predict(&self, s: &CrystalStructure) -> Result<Confidence> {
        lookup(self.0, s)?
            .prediction
            .ok_or_else(|| Error::ReplayMismatch { iteration: 0, detail: "no prediction".into() })
    }

    fn fine_tuned(&self, _samples: &[(CrystalStructure, f64)]) -> Result<Self> {
        Ok(self.clone())
    }
}

struct ReplayOracle<'a> {
    map: &'a HashMap<String, Recorded>,
    latency: f64,
}

impl OracleTool for ReplayOracle<'_> {
    fn evaluate(&mut self, s: &CrystalStructure, kind: PropertyKind) -> Result<JobOutput> {
        let value = lookup(self.map, s)?
            .oracle_value
            .ok_or_else(|| Error::ReplayMismatch { iteration: 0, detail: "no oracle value".into() })?;
        Ok(JobOutput {
            structure: s.clone(),
            value: PropertyValue::new(kind, value, ValueSource::Oracle)?,
            cost: self.latency,
        })
    }
}

/// Seeds `depot` with the trace's records and runs the coordinate pattern on
/// recorded tool outputs. In strict mode each iteration's routing is
/// compared with the recording.
pub fn run_replay(trace: &ReplayTrace, mode: ReplayMode, depot: &mut Depot) -> Result<PatternRunReport> {
    run_replay_with(trace, &trace.query, mode, depot)
}

/// As [`run_replay`] with an overriding query (thresholds for sweeps).
pub fn run_replay_with(
    trace: &ReplayTrace,
    query: &CoordinateQuery,
    mode: ReplayMode,
    depot: &mut Depot,
) -> Result<PatternRunReport> {
    trace.validate()?;
    let seeds = trace
        .depot_seed
        .iter()
        .map(|r| {
            let mut rec = NewRecord::new(r.structure.clone(), Provenance::Corpus).with_id(r.id.clone());
            rec.properties = r.properties.clone();
            rec
        })
        .collect();
    depot.ingest(seeds)?;

    let map = recordings(trace);
    let mut source = ReplaySource { steps: &trace.steps };
    let scorer = ReplayScorer(&map);
    let mut oracle = ReplayOracle { map: &map, latency: trace.settings.oracle_latency_units };
    let tools = CoordinateTools { source: &mut source, scorer: &scorer, model: ReplayModel(&map), oracle: &mut oracle };
    let (report, _) = run_coordinate_pattern(query, &trace.settings, 0, tools, depot, &RulePlanner, None)?;

    if mode == ReplayMode::Strict {
        let mut observed: Vec<Option<Route>> = vec![None; trace.steps.len()];
        for entry in &report.trace {
            match entry.event {
                TraceEvent::AcceptedAi => observed[entry.iteration - 1] = Some(Route::AcceptAi),
                TraceEvent::Oracle => observed[entry.iteration - 1] = Some(Route::FallbackOracle),
                _ => {}
            }
        }
        for (step, got) in trace.steps.iter().zip(observed) {
            if step.route != got {
                return Err(Error::ReplayMismatch {
                    iteration: step.iteration,
                    detail: format!("recorded {:?}, replayed {:?}", step.route, got),
                });
            }
        }
    }
    Ok(report)
}
