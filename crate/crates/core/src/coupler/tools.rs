//! Model-backed implementations of the coordinate-pattern tools.

use super::coordinate::{CandidateSource, MatchScorer, OracleTool, PropertyModel};
use super::schedule::{run_job, JobKind, JobOutput, OracleJob, RelaxSettings};
use super::sub_seed;
use crate::diffgen::{Generator, SampleMode};
use crate::error::{Error, Result};
use crate::matcore::{Composition, CrystalStructure, PropertyKind};
use crate::oracle::OracleConfig;
use crate::screen::{md_probability, MatchDiscriminator};
use crate::surrogate::{Confidence, Ensemble, FineTuneConfig};

/// CSP proposals from a [`Generator`]; iteration `i` uses seed
/// `sub_seed(seed, i)`.
pub struct GeneratorSource<'a> {
    pub generator: &'a dyn Generator,
    pub seed: u64,
}

impl CandidateSource for GeneratorSource<'_> {
    fn propose(&mut self, composition: &Composition, iteration: usize) -> Result<CrystalStructure> {
        let batch = self.generator.generate(
            &SampleMode::Csp(composition.clone()),
            1,
            sub_seed(self.seed, iteration as u64),
            iteration,
        );
        batch.items.into_iter().next().unwrap_or_else(|| Err("empty batch".into())).map_err(Error::Generation)
    }
}

impl MatchScorer for MatchDiscriminator {
    fn p_match(&self, structure: &CrystalStructure) -> Result<f64> {
        md_probability(self, structure)
    }
}

/// Ensemble surrogate that fine-tunes on flushed oracle results mixed with
/// its original training data.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub ensemble: Ensemble,
    pub replay: Vec<(CrystalStructure, f64)>,
    pub fine_tune: FineTuneConfig,
}

impl PropertyModel for EnsembleModel {
    fn predict(&self, structure: &CrystalStructure) -> Result<Confidence> {
        self.ensemble.confidence_structure(structure)
    }

    fn fine_tuned(&self, samples: &[(CrystalStructure, f64)]) -> Result<Self> {
        Ok(EnsembleModel { ensemble: self.ensemble.fine_tune(samples, &self.replay, &self.fine_tune)?, ..self.clone() })
    }
}

/// The simulated oracle: relax, then evaluate.
#[derive(Debug, Clone)]
pub struct SimOracle {
    pub config: OracleConfig,
    pub relax: RelaxSettings,
}

impl OracleTool for SimOracle {
    fn evaluate(&mut self, structure: &CrystalStructure, kind: PropertyKind) -> Result<JobOutput> {
        run_job(
            &OracleJob { id: 0, structure: structure.clone(), kind: JobKind::RelaxEvaluate(kind, self.relax) },
            &self.config,
        )
    }
}
