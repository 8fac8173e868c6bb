//! The coordinate pattern: confidence-gated routing between generator,
//! surrogate and oracle, with oracle results fed back for fine-tuning.

use serde::{Deserialize, Serialize};

use super::gate::{decide, Calibration, GateKind, Route};
use super::planner::{validate_plan, PlanStep, Planner};
use super::report::{
    speedup, CoordinateSummary, Pattern, PatternRunReport, PatternSummary, Survivor, TraceEntry, TraceEvent,
    REPORT_SCHEMA_VERSION,
};
use super::schedule::JobOutput;
use crate::depot::{BufferEntry, Depot, FineTuneBuffer, NewRecord, Provenance, SearchKey};
use crate::error::{Error, Result};
use crate::matcore::{Composition, CrystalStructure, PropertyKind, PropertyValue, ValueSource};
use crate::screen::{symmetry_order, Deduplicator, DEFAULT_DEDUP_THRESHOLD, DEFAULT_SYMMETRY_TOL};
use crate::surrogate::Confidence;

/// Property filter applied to the final results: `value < bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyBound {
    pub kind: PropertyKind,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinateQuery {
    pub composition: Composition,
    pub property: PropertyBound,
    pub max_iterations: usize,
    /// Variance threshold of the prediction gate.
    pub tau_pred: f64,
    /// Match-probability threshold of the generation gate.
    pub tau_gen: f64,
    pub buffer_flush_threshold: usize,
}

impl CoordinateQuery {
    /// Formation energy below 1 eV/atom, 50 iterations, τ_gen = 0.9,
    /// τ_pred = 0.12², flush every 5 oracle results.
    pub fn new(composition: Composition) -> Self {
        CoordinateQuery {
            composition,
            property: PropertyBound { kind: PropertyKind::FormationEnergy, bound: 1.0 },
            max_iterations: 50,
            tau_pred: 0.0144,
            tau_gen: 0.9,
            buffer_flush_threshold: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::usage("max_iterations must be at least 1"));
        }
        if !(self.tau_pred > 0.0) {
            return Err(Error::usage("tau_pred must be positive"));
        }
        if !(self.tau_gen > 0.0 && self.tau_gen < 1.0) {
            return Err(Error::usage("tau_gen must lie in (0, 1)"));
        }
        if self.buffer_flush_threshold == 0 {
            return Err(Error::usage("buffer_flush_threshold must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneMode {
    /// Fine-tune between iterations.
    #[default]
    Synchronous,
    /// Fine-tune on a background thread; the refreshed model is swapped in
    /// at the next flush or when the loop ends.
    Asynchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinateSettings {
    pub dedup_threshold: f64,
    pub symmetry_tol: f64,
    pub fine_tune_mode: FineTuneMode,
    /// Also flush a non-empty buffer every this many iterations.
    pub flush_every_iterations: Option<usize>,
    /// Cost charged per surrogate prediction.
    pub surrogate_latency_units: f64,
    /// Cost of one oracle property call, used for the avoided-work figure.
    pub oracle_latency_units: f64,
}

impl Default for CoordinateSettings {
    fn default() -> Self {
        CoordinateSettings {
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            symmetry_tol: DEFAULT_SYMMETRY_TOL,
            fine_tune_mode: FineTuneMode::Synchronous,
            flush_every_iterations: None,
            surrogate_latency_units: 1.0,
            oracle_latency_units: 1470.0,
        }
    }
}

/// Proposes a candidate for the composition at a given iteration.
pub trait CandidateSource {
    fn propose(&mut self, composition: &Composition, iteration: usize) -> Result<CrystalStructure>;
}

/// Probability that a candidate matches the ground-truth structure.
pub trait MatchScorer {
    fn p_match(&self, structure: &CrystalStructure) -> Result<f64>;
}

/// Property prediction with a variance estimate.
pub trait PropertyModel: Clone + Send + Sync {
    fn predict(&self, structure: &CrystalStructure) -> Result<Confidence>;
    /// A copy updated on `samples`.
    fn fine_tuned(&self, samples: &[(CrystalStructure, f64)]) -> Result<Self>;
}

pub trait OracleTool {
    fn evaluate(&mut self, structure: &CrystalStructure, kind: PropertyKind) -> Result<JobOutput>;
}

pub struct CoordinateTools<'a, S, M, P, O> {
    pub source: &'a mut S,
    pub scorer: &'a M,
    pub model: P,
    pub oracle: &'a mut O,
}

struct Evaluated {
    iteration: usize,
    id: String,
    structure: CrystalStructure,
    value: f64,
    source: ValueSource,
}

/// Runs the plan produced by `planner` for `query`.
///
/// Each iteration proposes one candidate. A candidate within the dedup
/// threshold of an earlier proposal is dropped without any model or oracle
/// call. Otherwise both gates are evaluated; only when both accept is the
/// surrogate prediction used, else the oracle relaxes and evaluates the
/// candidate, the result is stored in the depot and buffered. A full buffer
/// triggers fine-tuning of the property model.
#[allow(clippy::too_many_arguments)]
pub fn run_coordinate_pattern<S, M, P, O>(
    query: &CoordinateQuery,
    settings: &CoordinateSettings,
    seed: u64,
    tools: CoordinateTools<'_, S, M, P, O>,
    depot: &mut Depot,
    planner: &dyn Planner,
    calibration: Option<Calibration>,
) -> Result<(PatternRunReport, P)>
where
    S: CandidateSource,
    M: MatchScorer,
    P: PropertyModel,
    O: OracleTool,
{
    query.validate()?;
    let plan = planner.plan(query);
    validate_plan(&plan)?;
    let CoordinateTools { source, scorer, model, oracle } = tools;

    let mut state = LoopState {
        model,
        trace: Vec::new(),
        evaluated: Vec::new(),
        buffer: FineTuneBuffer::new(query.buffer_flush_threshold)?,
        ai_calls: 0,
        oracle_calls: 0,
        buffered: 0,
        fine_tunes: 0,
        oracle_cost: 0.0,
        failures: 0,
        duplicates: 0,
    };
    let mut depot_hits = Vec::new();
    let mut survivors = Vec::new();

    for step in &plan {
        match step {
            PlanStep::SearchDepot => {
                for record in depot.search(&SearchKey::Composition(query.composition.clone())) {
                    let mut entry = TraceEntry::new(0, TraceEvent::DepotHit);
                    entry.id = Some(record.id.clone());
                    state.trace.push(entry);
                    depot_hits.push(record.id.clone());
                }
            }
            PlanStep::Iterate => state.iterate(query, settings, source, scorer, oracle, depot)?,
            PlanStep::Finalize => survivors = finalize(&state.evaluated, query, settings)?,
        }
    }

    let ai_cost = state.ai_calls as f64 * settings.surrogate_latency_units;
    let total = state.oracle_cost + ai_cost;
    let all_oracle = state.oracle_cost + state.ai_calls as f64 * settings.oracle_latency_units;
    let summary = CoordinateSummary {
        composition: query.composition.formula(),
        property: query.property.kind,
        bound: query.property.bound,
        plan,
        depot_hits,
        iterations: query.max_iterations,
        generation_failures: state.failures,
        duplicates: state.duplicates,
        tau_pred: query.tau_pred,
        tau_gen: query.tau_gen,
        calibration,
        avoided_oracle_calls: state.ai_calls,
        avoided_cost_units: state.ai_calls as f64 * settings.oracle_latency_units,
        pending_buffer: state.buffer.len(),
        unique_survivors: survivors.len(),
        survivors: survivors.clone(),
    };
    let report = PatternRunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        pattern: Pattern::Coordinate,
        seed,
        ai_calls: state.ai_calls,
        oracle_calls: state.oracle_calls,
        buffered: state.buffered,
        fine_tunes: state.fine_tunes,
        total_cost_units: total,
        cost_if_all_oracle: all_oracle,
        speedup: speedup(state.ai_calls, all_oracle, total),
        outputs: survivors.iter().map(|s| s.id.clone()).collect(),
        trace: state.trace,
        summary: PatternSummary::Coordinate(summary),
    };
    Ok((report, state.model))
}

struct LoopState<P> {
    model: P,
    trace: Vec<TraceEntry>,
    evaluated: Vec<Evaluated>,
    buffer: FineTuneBuffer,
    ai_calls: usize,
    oracle_calls: usize,
    buffered: usize,
    fine_tunes: usize,
    oracle_cost: f64,
    failures: usize,
    duplicates: usize,
}

impl<P: PropertyModel> LoopState<P> {
    fn iterate<S: CandidateSource, M: MatchScorer, O: OracleTool>(
        &mut self,
        query: &CoordinateQuery,
        settings: &CoordinateSettings,
        source: &mut S,
        scorer: &M,
        oracle: &mut O,
        depot: &mut Depot,
    ) -> Result<()> {
        let mut proposals = Deduplicator::new(settings.dedup_threshold)?;
        std::thread::scope(|scope| -> Result<()> {
            let mut pending: Option<std::thread::ScopedJoinHandle<'_, Result<P>>> = None;
            for iteration in 1..=query.max_iterations {
                let candidate = match source.propose(&query.composition, iteration) {
                    Ok(c) if c.composition() == query.composition => c,
                    Ok(c) => {
                        self.fail(iteration, format!("proposed {} instead of {}", c.composition(), query.composition));
                        continue;
                    }
                    Err(e) => {
                        self.fail(iteration, e.to_string());
                        continue;
                    }
                };
                if !proposals.offer(&candidate) {
                    self.duplicates += 1;
                    self.trace.push(TraceEntry::new(iteration, TraceEvent::Duplicate));
                    continue;
                }
                let generation = decide(GateKind::Generation, scorer.p_match(&candidate)?, query.tau_gen);
                let predicted = self.model.predict(&candidate)?;
                let prediction = decide(GateKind::Prediction, predicted.variance, query.tau_pred);
                let accept = generation.route == Route::AcceptAi && prediction.route == Route::AcceptAi;

                let mut entry = TraceEntry::new(iteration, TraceEvent::AcceptedAi);
                entry.generation = Some(generation);
                entry.prediction = Some(prediction);
                if accept {
                    self.ai_calls += 1;
                    let id = format!("candidate_{iteration:04}");
                    entry.value = Some(predicted.mean);
                    entry.id = Some(id.clone());
                    self.evaluated.push(Evaluated {
                        iteration,
                        id,
                        structure: candidate,
                        value: predicted.mean,
                        source: ValueSource::Surrogate,
                    });
                    self.trace.push(entry);
                    continue;
                }

                let out = oracle.evaluate(&candidate, query.property.kind)?;
                self.oracle_calls += 1;
                self.oracle_cost += out.cost;
                let value = PropertyValue::new(query.property.kind, out.value.value, ValueSource::Oracle)?;
                let record = NewRecord::new(out.structure.clone(), Provenance::Oracle).with_property(value);
                let id = depot.ingest(vec![record])?.remove(0);
                entry.event = TraceEvent::Oracle;
                entry.value = Some(value.value);
                entry.id = Some(id.clone());
                self.trace.push(entry);
                self.evaluated.push(Evaluated {
                    iteration,
                    id: id.clone(),
                    structure: out.structure,
                    value: value.value,
                    source: ValueSource::Oracle,
                });
                self.buffered += 1;
                let full = self.buffer.push(BufferEntry { structure_id: id, value })?;
                let periodic = settings.flush_every_iterations.is_some_and(|k| k > 0 && iteration % k == 0);
                if full || periodic {
                    if let Some(handle) = pending.take() {
                        self.model = handle.join().expect("fine-tune thread panicked")?;
                    }
                    let samples = self.flush_samples(depot)?;
                    self.fine_tunes += 1;
                    let mut ft = TraceEntry::new(iteration, TraceEvent::FineTune);
                    ft.detail = Some(format!("{} samples", samples.len()));
                    self.trace.push(ft);
                    match settings.fine_tune_mode {
                        FineTuneMode::Synchronous => self.model = self.model.fine_tuned(&samples)?,
                        FineTuneMode::Asynchronous => {
                            let owned = self.model.clone();
                            pending = Some(scope.spawn(move || owned.fine_tuned(&samples)));
                        }
                    }
                }
            }
            if let Some(handle) = pending.take() {
                self.model = handle.join().expect("fine-tune thread panicked")?;
            }
            Ok(())
        })
    }

    fn fail(&mut self, iteration: usize, detail: String) {
        self.failures += 1;
        let mut entry = TraceEntry::new(iteration, TraceEvent::GenerationFailed);
        entry.detail = Some(detail);
        self.trace.push(entry);
    }

    fn flush_samples(&mut self, depot: &Depot) -> Result<Vec<(CrystalStructure, f64)>> {
        self.buffer
            .flush()
            .into_iter()
            .map(|e| {
                let record = depot
                    .get(&e.structure_id)
                    .ok_or_else(|| Error::Storage(format!("buffered record {} vanished", e.structure_id)))?;
                Ok((record.structure.clone(), e.value.value))
            })
            .collect()
    }
}

/// Dedup on the evaluated structures, drop identity-only symmetry, and keep
/// values strictly below the bound.
fn finalize(evaluated: &[Evaluated], query: &CoordinateQuery, settings: &CoordinateSettings) -> Result<Vec<Survivor>> {
    let mut dedup = Deduplicator::new(settings.dedup_threshold)?;
    Ok(evaluated
        .iter()
        .filter(|e| dedup.offer(&e.structure))
        .filter(|e| symmetry_order(&e.structure, settings.symmetry_tol) > 1)
        .filter(|e| e.value < query.property.bound)
        .map(|e| Survivor { iteration: e.iteration, id: e.id.clone(), value: e.value, source: e.source })
        .collect())
}
