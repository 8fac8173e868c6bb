//! Run reports shared by the three workflow patterns.

use serde::{Deserialize, Serialize};

use super::gate::{Calibration, RouteDecision};
use super::planner::PlanStep;
use crate::matcore::{PropertyKind, ValueSource};
use crate::screen::FilterCounts;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Surrogate,
    Directive,
    Coordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceEvent {
    DepotHit,
    GenerationFailed,
    Duplicate,
    AcceptedAi,
    Oracle,
    FineTune,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub event: TraceEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<RouteDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<RouteDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TraceEntry {
    pub fn new(iteration: usize, event: TraceEvent) -> Self {
        TraceEntry { iteration, event, generation: None, prediction: None, value: None, id: None, detail: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub property: PropertyKind,
    pub train_size: usize,
    pub eval_size: usize,
    pub train_mae: f64,
    pub heldout_mae: f64,
    pub labelling_cost_units: f64,
    pub oracle_latency_units: f64,
    pub surrogate_latency_units: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: String,
    pub iteration: usize,
    pub formula: String,
    pub value: f64,
    /// `|value − y_target|`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationScreen {
    pub iteration: usize,
    pub generated: usize,
    pub generation_failures: usize,
    pub passed: FilterCounts,
    pub valid_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub generated: usize,
    /// Structures passing all four screen filters.
    pub validated: usize,
    pub generation_cost_units: f64,
    pub generated_per_hour: f64,
    pub validated_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectiveSummary {
    pub property: PropertyKind,
    pub y_target: f64,
    pub valid_rate: Vec<f64>,
    pub screens: Vec<IterationScreen>,
    pub best: Option<RankedCandidate>,
    pub ranked: Vec<RankedCandidate>,
    pub throughput: Throughput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survivor {
    pub iteration: usize,
    pub id: String,
    pub value: f64,
    pub source: ValueSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSummary {
    pub composition: String,
    pub property: PropertyKind,
    pub bound: f64,
    pub plan: Vec<PlanStep>,
    pub depot_hits: Vec<String>,
    pub iterations: usize,
    pub generation_failures: usize,
    pub duplicates: usize,
    pub tau_pred: f64,
    pub tau_gen: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    /// Oracle evaluations replaced by accepted AI predictions.
    pub avoided_oracle_calls: usize,
    pub avoided_cost_units: f64,
    pub pending_buffer: usize,
    pub unique_survivors: usize,
    pub survivors: Vec<Survivor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "lowercase")]
pub enum PatternSummary {
    Surrogate(SurrogateSummary),
    Directive(DirectiveSummary),
    Coordinate(CoordinateSummary),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRunReport {
    pub schema_version: u32,
    pub pattern: Pattern,
    pub seed: u64,
    /// Property values produced by an AI model.
    pub ai_calls: usize,
    /// Property values produced by the oracle.
    pub oracle_calls: usize,
    pub buffered: usize,
    pub fine_tunes: usize,
    pub total_cost_units: f64,
    pub cost_if_all_oracle: f64,
    /// `cost_if_all_oracle / total_cost_units` when AI calls were made,
    /// otherwise 1.
    pub speedup: f64,
    pub outputs: Vec<String>,
    pub trace: Vec<TraceEntry>,
    pub summary: PatternSummary,
}

pub(crate) fn speedup(ai_calls: usize, all_oracle: f64, actual: f64) -> f64 {
    if ai_calls > 0 && actual > 0.0 {
        all_oracle / actual
    } else {
        1.0
    }
}
