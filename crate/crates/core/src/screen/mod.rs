//! Validity screening between generation and evaluation.

mod filters;
mod md;
mod rmsd;

pub use filters::{
    check_components, check_neutrality, symmetry_order, OxidationTable, DEFAULT_SYMMETRY_TOL, MAX_COMPONENTS,
};
pub use md::{md_probability, pooled_features, train_md, CalibrationBin, MatchDiscriminator, MdConfig, MdMetrics};
pub use rmsd::{dedup, label_matches, rmsd, Deduplicator, DEFAULT_DEDUP_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::CrystalStructure;

pub const SCREEN_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenConfig {
    pub symmetry_tol: f64,
    pub dedup_threshold: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig { symmetry_tol: DEFAULT_SYMMETRY_TOL, dedup_threshold: DEFAULT_DEDUP_THRESHOLD }
    }
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.symmetry_tol > 0.0 && self.symmetry_tol < 0.5) {
            return Err(Error::Config("screen.symmetry_tol must lie in (0, 0.5)".into()));
        }
        if !(self.dedup_threshold > 0.0) {
            return Err(Error::Config("screen.dedup_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Structures still alive after each filter, applied in order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub components: usize,
    pub neutrality: usize,
    pub symmetry: usize,
    pub similarity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub schema_version: u32,
    pub input_count: usize,
    pub passed: FilterCounts,
    pub survivors: Vec<String>,
    /// Survivors of all four filters divided by the input count (0 for an
    /// empty batch).
    pub valid_rate: f64,
}

/// Four-filter screen: component count, charge neutrality, non-trivial
/// symmetry, then similarity against everything kept so far. The dedup
/// memory persists across calls, so repeated proposals stop counting as
/// valid.
#[derive(Debug, Clone)]
pub struct Screener {
    table: OxidationTable,
    config: ScreenConfig,
    seen: Deduplicator,
}

impl Screener {
    pub fn new(table: OxidationTable, config: ScreenConfig) -> Result<Self> {
        config.validate()?;
        Ok(Screener { table, config, seen: Deduplicator::new(config.dedup_threshold)? })
    }

    pub fn config(&self) -> &ScreenConfig {
        &self.config
    }

    /// Number of distinct structures accepted so far.
    pub fn memory(&self) -> usize {
        self.seen.len()
    }

    /// Returns whether `structure` passes; `counts` is advanced for every
    /// filter it clears.
    pub fn admit(&mut self, structure: &CrystalStructure, counts: &mut FilterCounts) -> Result<bool> {
        if !check_components(structure) {
            return Ok(false);
        }
        counts.components += 1;
        if !check_neutrality(&structure.composition(), &self.table)? {
            return Ok(false);
        }
        counts.neutrality += 1;
        if symmetry_order(structure, self.config.symmetry_tol) <= 1 {
            return Ok(false);
        }
        counts.symmetry += 1;
        if !self.seen.offer(structure) {
            return Ok(false);
        }
        counts.similarity += 1;
        Ok(true)
    }

    pub fn screen(&mut self, batch: &[(String, CrystalStructure)]) -> Result<ScreenReport> {
        let mut passed = FilterCounts::default();
        let mut survivors = Vec::new();
        for (id, s) in batch {
            if self.admit(s, &mut passed)? {
                survivors.push(id.clone());
            }
        }
        let valid_rate = if batch.is_empty() { 0.0 } else { survivors.len() as f64 / batch.len() as f64 };
        Ok(ScreenReport {
            schema_version: SCREEN_REPORT_SCHEMA_VERSION,
            input_count: batch.len(),
            passed,
            survivors,
            valid_rate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{ElementId, Lattice};

    fn rock_salt(a: f64) -> CrystalStructure {
        let el = |s| ElementId::from_symbol(s).unwrap();
        CrystalStructure::new(Lattice::cubic(a).unwrap(), vec![el("Na"), el("Cl")], vec![[0.0; 3], [0.5; 3]]).unwrap()
    }

    #[test]
    fn report_counts_and_memory() {
        let mut screener = Screener::new(OxidationTable::default(), ScreenConfig::default()).unwrap();
        let el = |s| ElementId::from_symbol(s).unwrap();
        let charged =
            CrystalStructure::new(Lattice::cubic(4.0).unwrap(), vec![el("Na"), el("Na")], vec![[0.0; 3], [0.5; 3]])
                .unwrap();
        let batch =
            vec![("a".to_string(), rock_salt(4.0)), ("b".to_string(), rock_salt(4.0)), ("c".to_string(), charged)];
        let report = screener.screen(&batch).unwrap();
        assert_eq!(report.passed, FilterCounts { components: 3, neutrality: 2, symmetry: 2, similarity: 1 });
        assert_eq!(report.survivors, vec!["a"]);
        assert!((report.valid_rate - 1.0 / 3.0).abs() < 1e-15);
        let again = screener.screen(&batch[..1]).unwrap();
        assert_eq!(again.valid_rate, 0.0);
        assert_eq!(screener.screen(&[]).unwrap().valid_rate, 0.0);
    }
}
