//! The directive pattern: the generator proposes, the screen filters, the
//! oracle relaxes and evaluates, and candidates are ranked by their
//! distance to a target property value.

use serde::{Deserialize, Serialize};

use super::report::{
    DirectiveSummary, IterationScreen, Pattern, PatternRunReport, PatternSummary, RankedCandidate, Throughput,
    TraceEntry, TraceEvent, REPORT_SCHEMA_VERSION,
};
use super::schedule::{schedule, JobKind, OracleJob, RelaxSettings};
use super::sub_seed;
use crate::depot::{Depot, NewRecord, Provenance};
use crate::diffgen::{Generator, SampleMode};
use crate::error::{Error, Result};
use crate::matcore::{CrystalStructure, PropertyKind};
use crate::oracle::OracleConfig;
use crate::screen::{FilterCounts, Screener};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DirectiveConfig {
    pub property: PropertyKind,
    pub y_target: f64,
    pub batch: usize,
    pub iterations: usize,
    pub relax: RelaxSettings,
    /// Number of ranked candidates kept in the report.
    pub top_k: usize,
    /// Cost charged per generated sample.
    pub sample_cost_units: f64,
    /// Wall-clock seconds represented by one cost unit, for the per-hour
    /// throughput figures.
    pub seconds_per_cost_unit: f64,
}

impl Default for DirectiveConfig {
    fn default() -> Self {
        DirectiveConfig {
            property: PropertyKind::FormationEnergy,
            y_target: -1.0,
            batch: 16,
            iterations: 5,
            relax: RelaxSettings::default(),
            top_k: 5,
            sample_cost_units: 1.0,
            seconds_per_cost_unit: 1.0,
        }
    }
}

impl DirectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 {
            return Err(Error::Config("directive pattern needs iterations >= 1 and batch >= 1".into()));
        }
        if !self.y_target.is_finite() {
            return Err(Error::Config("y_target must be finite".into()));
        }
        if !(self.sample_cost_units >= 0.0 && self.seconds_per_cost_unit > 0.0) {
            return Err(Error::Config("throughput cost settings must be non-negative".into()));
        }
        Ok(())
    }
}

/// Runs `cfg.iterations` propose/screen/evaluate rounds. Batch `i` is drawn
/// with seed `sub_seed(seed, i + 1)` and batch index `i`; the screener's
/// dedup memory persists across rounds, so repeated proposals lower the
/// valid rate. Evaluated survivors are stored in `depot` when one is given.
pub fn run_directive_pattern(
    cfg: &DirectiveConfig,
    generator: &dyn Generator,
    oracle: &OracleConfig,
    mut screener: Screener,
    mut depot: Option<&mut Depot>,
    seed: u64,
    workers: usize,
) -> Result<PatternRunReport> {
    cfg.validate()?;
    oracle.validate()?;
    let mut trace = Vec::new();
    let mut screens = Vec::new();
    let mut ranked: Vec<RankedCandidate> = Vec::new();
    let (mut oracle_calls, mut oracle_cost, mut generated, mut validated) = (0usize, 0.0, 0usize, 0usize);

    for iteration in 0..cfg.iterations {
        let batch =
            generator.generate(&SampleMode::AbInitio, cfg.batch, sub_seed(seed, iteration as u64 + 1), iteration);
        let failures = batch.failures();
        let items: Vec<(String, CrystalStructure)> = batch
            .items
            .into_iter()
            .enumerate()
            .filter_map(|(k, r)| r.ok().map(|s| (format!("gen_{iteration:03}_{k:03}"), s)))
            .collect();
        generated += cfg.batch;
        let mut passed = FilterCounts::default();
        let mut survivors = Vec::new();
        for (id, s) in &items {
            if screener.admit(s, &mut passed)? {
                survivors.push((id.clone(), s.clone()));
            }
        }
        let valid_rate = survivors.len() as f64 / cfg.batch as f64;
        validated += survivors.len();
        screens.push(IterationScreen {
            iteration,
            generated: cfg.batch,
            generation_failures: failures,
            passed,
            valid_rate,
        });
        let mut entry = TraceEntry::new(iteration, TraceEvent::Batch);
        entry.value = Some(valid_rate);
        entry.detail = Some(format!("{} of {} passed the screen", survivors.len(), cfg.batch));
        trace.push(entry);
        if survivors.is_empty() {
            continue;
        }

        let jobs = survivors
            .iter()
            .enumerate()
            .map(|(id, (_, s))| OracleJob {
                id,
                structure: s.clone(),
                kind: JobKind::RelaxEvaluate(cfg.property, cfg.relax),
            })
            .collect();
        let outcome = schedule(jobs, workers, oracle)?;
        oracle_cost += outcome.total_cost_units;
        for (result, (gen_id, _)) in outcome.results.into_iter().zip(&survivors) {
            let mut entry = TraceEntry::new(iteration, TraceEvent::Oracle);
            match result.outcome {
                Ok(out) => {
                    oracle_calls += 1;
                    let id = match depot.as_deref_mut() {
                        Some(d) => {
                            let record =
                                NewRecord::new(out.structure.clone(), Provenance::Generated).with_property(out.value);
                            d.ingest(vec![record])?.remove(0)
                        }
                        None => gen_id.clone(),
                    };
                    entry.value = Some(out.value.value);
                    entry.id = Some(id.clone());
                    ranked.push(RankedCandidate {
                        id,
                        iteration,
                        formula: out.structure.composition().formula(),
                        value: out.value.value,
                        loss: (out.value.value - cfg.y_target).abs(),
                    });
                }
                Err(e) => {
                    entry.id = Some(gen_id.clone());
                    entry.detail = Some(e);
                }
            }
            trace.push(entry);
        }
    }

    // stable sort keeps generation order among equal losses
    ranked.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    let best = ranked.first().cloned();
    ranked.truncate(cfg.top_k);
    let generation_cost_units = generated as f64 * cfg.sample_cost_units;
    let per_hour = |count: usize| {
        let hours = generation_cost_units * cfg.seconds_per_cost_unit / 3600.0;
        if hours > 0.0 {
            count as f64 / hours
        } else {
            0.0
        }
    };
    let summary = DirectiveSummary {
        property: cfg.property,
        y_target: cfg.y_target,
        valid_rate: screens.iter().map(|s| s.valid_rate).collect(),
        screens,
        best,
        ranked: ranked.clone(),
        throughput: Throughput {
            generated,
            validated,
            generation_cost_units,
            generated_per_hour: per_hour(generated),
            validated_per_hour: per_hour(validated),
        },
    };
    Ok(PatternRunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        pattern: Pattern::Directive,
        seed,
        ai_calls: 0,
        oracle_calls,
        buffered: 0,
        fine_tunes: 0,
        total_cost_units: oracle_cost + generation_cost_units,
        cost_if_all_oracle: oracle_cost + generation_cost_units,
        speedup: 1.0,
        outputs: ranked.iter().map(|c| c.id.clone()).collect(),
        trace,
        summary: PatternSummary::Directive(summary),
    })
}
