//! Seed ensembles and their predictive mean and variance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::MaterialGraph;
use super::model::{
    dataset_digest, featurize_all, fine_tune, train_graphs, FineTuneConfig, SurrogateModel, TrainConfig,
};
use crate::error::{Error, Result};
use crate::matcore::CrystalStructure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<SurrogateModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and population variance (divisor `T`) of member outputs.
pub fn mean_variance(values: &[f64]) -> Confidence {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
    Confidence { mean, variance }
}

/// Seed of ensemble member `t`.
pub fn member_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_add(t as u64)
}

impl Ensemble {
    pub fn new(members: Vec<SurrogateModel>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::usage("an ensemble needs at least one member"))?;
        if members.iter().any(|m| m.shape != first.shape) {
            return Err(Error::invariant("ensemble members differ in architecture"));
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[SurrogateModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn predictions(&self, graph: &MaterialGraph) -> Result<Vec<f64>> {
        self.members.iter().map(|m| m.predict(graph)).collect()
    }

    pub fn confidence(&self, graph: &MaterialGraph) -> Result<Confidence> {
        Ok(mean_variance(&self.predictions(graph)?))
    }

    pub fn confidence_structure(&self, structure: &CrystalStructure) -> Result<Confidence> {
        let graph = super::graph::featurize(structure, self.members[0].shape.graph)?;
        self.confidence(&graph)
    }

    /// Fine-tunes every member (member `t` shuffles with `member_seed(seed, t)`).
    pub fn fine_tune(
        &self,
        buffer: &[(CrystalStructure, f64)],
        replay: &[(CrystalStructure, f64)],
        cfg: &FineTuneConfig,
    ) -> Result<Ensemble> {
        let members = self
            .members
            .par_iter()
            .enumerate()
            .map(|(t, m)| {
                fine_tune(m, buffer, replay, &FineTuneConfig { seed: member_seed(cfg.seed, t), ..cfg.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(members)
    }
}

/// Trains `size` members on the same data with seeds `seed, seed+1, …`.
/// Members train concurrently; each run is itself sequential and seeded, so
/// the result does not depend on the thread count.
pub fn train_ensemble(dataset: &[(CrystalStructure, f64)], cfg: &TrainConfig, size: usize) -> Result<Ensemble> {
    if size == 0 {
        return Err(Error::usage("ensemble size must be at least 1"));
    }
    let graphs = featurize_all(&dataset.iter().map(|(s, _)| s).collect::<Vec<_>>(), cfg.graph)?;
    let labels: Vec<f64> = dataset.iter().map(|(_, y)| *y).collect();
    let digest = dataset_digest(dataset);
    let members = (0..size)
        .into_par_iter()
        .map(|t| {
            train_graphs(
                &graphs,
                &labels,
                &TrainConfig { seed: member_seed(cfg.seed, t), ..cfg.clone() },
                digest.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_variance() {
        let c = mean_variance(&[0.0, 2.0]);
        assert_eq!((c.mean, c.variance), (1.0, 1.0));
        assert_eq!(mean_variance(&[3.5]).variance, 0.0);
        assert_eq!(mean_variance(&[1.25, 1.25, 1.25]).variance, 0.0);
    }
}
