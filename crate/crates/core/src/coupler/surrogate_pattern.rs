//! The surrogate pattern: label a toy corpus with the oracle, train the
//! surrogate on part of it and measure it on the rest.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{
    speedup, Pattern, PatternRunReport, PatternSummary, SurrogateSummary, TraceEntry, TraceEvent, REPORT_SCHEMA_VERSION,
};
use super::schedule::{schedule, JobKind, OracleJob};
use super::sub_seed;
use crate::error::{Error, Result};
use crate::matcore::{CrystalStructure, PropertyKind};
use crate::oracle::OracleConfig;
use crate::surrogate::{featurize_all, train, SurrogateModel, TrainConfig};
use crate::toy::random_corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogatePatternConfig {
    pub train_size: usize,
    pub eval_size: usize,
    pub max_atoms: usize,
    pub property: PropertyKind,
    pub surrogate_latency_units: f64,
    pub train: TrainConfig,
}

impl Default for SurrogatePatternConfig {
    fn default() -> Self {
        SurrogatePatternConfig {
            train_size: 200,
            eval_size: 100,
            max_atoms: 8,
            property: PropertyKind::FormationEnergy,
            surrogate_latency_units: 1.0,
            train: TrainConfig::default(),
        }
    }
}

impl SurrogatePatternConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_size < 2 || self.eval_size < 2 {
            return Err(Error::Config("surrogate pattern needs train_size and eval_size >= 2".into()));
        }
        if !(self.surrogate_latency_units > 0.0) {
            return Err(Error::Config("surrogate_latency_units must be positive".into()));
        }
        self.train.validate()
    }
}

/// Returns the report and the trained model. The speedup compares the
/// held-out predictions against labelling the same structures with the
/// oracle: `eval_size·latency / (eval_size·surrogate_latency)`.
pub fn run_surrogate_pattern(
    cfg: &SurrogatePatternConfig,
    oracle: &OracleConfig,
    seed: u64,
    workers: usize,
) -> Result<(PatternRunReport, SurrogateModel)> {
    cfg.validate()?;
    oracle.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 0));
    let corpus = random_corpus(&mut rng, cfg.train_size + cfg.eval_size, cfg.max_atoms)?;
    let jobs = corpus
        .iter()
        .enumerate()
        .map(|(id, s)| OracleJob { id, structure: s.clone(), kind: JobKind::Evaluate(cfg.property) })
        .collect();
    let labelled = schedule(jobs, workers, oracle)?;
    let data: Vec<(CrystalStructure, f64)> = labelled
        .results
        .into_iter()
        .zip(corpus)
        .map(|(r, s)| r.outcome.map(|o| (s, o.value.value)).map_err(Error::Generation))
        .collect::<Result<_>>()?;
    let (train_set, eval_set) = data.split_at(cfg.train_size);

    let model = train(train_set, &TrainConfig { seed: sub_seed(seed, 1), ..cfg.train.clone() })?;
    let eval_graphs = featurize_all(&eval_set.iter().map(|(s, _)| s).collect::<Vec<_>>(), model.shape.graph)?;
    let train_graphs = featurize_all(&train_set.iter().map(|(s, _)| s).collect::<Vec<_>>(), model.shape.graph)?;
    let labels = |set: &[(CrystalStructure, f64)]| set.iter().map(|(_, y)| *y).collect::<Vec<_>>();
    let train_mae = model.mae(&train_graphs, &labels(train_set));
    let heldout_mae = model.mae(&eval_graphs, &labels(eval_set));

    // one trace entry per property value: oracle labels, then predictions
    let mut trace: Vec<TraceEntry> = data
        .iter()
        .map(|(_, y)| {
            let mut e = TraceEntry::new(0, TraceEvent::Oracle);
            e.value = Some(*y);
            e
        })
        .collect();
    for g in &eval_graphs {
        let mut e = TraceEntry::new(1, TraceEvent::AcceptedAi);
        e.value = Some(model.predict(g)?);
        trace.push(e);
    }

    let ai_calls = cfg.eval_size;
    let total = ai_calls as f64 * cfg.surrogate_latency_units;
    let all_oracle = ai_calls as f64 * oracle.latency_units_per_call;
    let report = PatternRunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        pattern: Pattern::Surrogate,
        seed,
        ai_calls,
        oracle_calls: data.len(),
        buffered: 0,
        fine_tunes: 0,
        total_cost_units: total,
        cost_if_all_oracle: all_oracle,
        speedup: speedup(ai_calls, all_oracle, total),
        outputs: vec![model.meta.dataset_digest.clone()],
        trace,
        summary: PatternSummary::Surrogate(SurrogateSummary {
            property: cfg.property,
            train_size: cfg.train_size,
            eval_size: cfg.eval_size,
            train_mae,
            heldout_mae,
            labelling_cost_units: labelled.total_cost_units,
            oracle_latency_units: oracle.latency_units_per_call,
            surrogate_latency_units: cfg.surrogate_latency_units,
        }),
    };
    Ok((report, model))
}
