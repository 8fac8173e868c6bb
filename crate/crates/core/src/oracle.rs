//! Deterministic stand-in for an expensive first-principles backend: a
//! closed-form pair potential for formation energy, an electronegativity
//! heuristic for the band gap, finite-difference relaxation and a cost model.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{min_image_distance, CrystalStructure, PropertyKind, PropertyValue, ValueSource};

/// Atoms closer than this are treated as overlapping.
pub const OVERLAP_DISTANCE: f64 = 0.1;

/// Fractional step of the central-difference gradient.
pub const FD_STEP: f64 = 1e-5;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Pair interaction cutoff, Å.
    pub cutoff_radius: f64,
    /// Depth of the pair well, eV.
    pub pair_strength: f64,
    /// Weight of the electronegativity-difference attraction, eV·Å.
    pub ionic_weight: f64,
    /// Band-gap baseline c₀ (eV).
    pub gap_offset: f64,
    /// Band-gap weight c₁ on the mean electronegativity difference.
    pub gap_ionic: f64,
    /// Band-gap weight c₂ on atom density (eV·Å³).
    pub gap_density: f64,
    /// Cost units charged per energy or gap evaluation.
    pub latency_units_per_call: f64,
    /// When positive, each cost unit also sleeps this many milliseconds.
    pub real_latency_ms_per_unit: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cutoff_radius: 6.0,
            pair_strength: 0.5,
            ionic_weight: 1.0,
            gap_offset: 0.5,
            gap_ionic: 2.0,
            gap_density: 8.0,
            // 24.5 min against a 1 s surrogate call
            latency_units_per_call: 1470.0,
            real_latency_ms_per_unit: 0.0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_radius > 0.0) {
            return Err(Error::Config("oracle.cutoff_radius must be positive".into()));
        }
        if !(self.latency_units_per_call >= 0.0) {
            return Err(Error::Config("oracle.latency_units_per_call must be non-negative".into()));
        }
        if !(self.real_latency_ms_per_unit >= 0.0) {
            return Err(Error::Config("oracle.real_latency_ms_per_unit must be non-negative".into()));
        }
        Ok(())
    }

    /// Sleeps for `units` of emulated latency when real latency is enabled.
    pub fn simulate_latency(&self, units: f64) {
        if self.real_latency_ms_per_unit > 0.0 && units > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(units * self.real_latency_ms_per_unit / 1000.0));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CallKind {
    Energy,
    Gap,
    Relax(usize),
}

pub fn cost_of(call: CallKind, cfg: &OracleConfig) -> f64 {
    match call {
        CallKind::Energy | CallKind::Gap => cfg.latency_units_per_call,
        CallKind::Relax(steps) => cfg.latency_units_per_call * steps as f64,
    }
}

fn pair_energy(cfg: &OracleConfig, r0: f64, d_chi: f64, d: f64) -> f64 {
    let x6 = (r0 / d).powi(6);
    cfg.pair_strength * (x6 * x6 - 2.0 * x6) - cfg.ionic_weight * d_chi / d
}

/// Raw formation energy in eV/atom.
pub fn formation_energy_value(structure: &CrystalStructure, cfg: &OracleConfig) -> Result<f64> {
    let n = structure.num_atoms();
    if n == 1 {
        // elemental reference
        return Ok(0.0);
    }
    let species = structure.species();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = min_image_distance(structure, i, j)?;
            if d < OVERLAP_DISTANCE {
                return Err(Error::Overlap { i, j, distance: d });
            }
            if d <= cfg.cutoff_radius {
                let r0 = species[i].covalent_radius() + species[j].covalent_radius();
                let d_chi = (species[i].electronegativity() - species[j].electronegativity()).abs();
                total += pair_energy(cfg, r0, d_chi, d);
            }
        }
    }
    Ok(total / n as f64)
}

pub fn formation_energy(structure: &CrystalStructure, cfg: &OracleConfig) -> Result<PropertyValue> {
    PropertyValue::new(PropertyKind::FormationEnergy, formation_energy_value(structure, cfg)?, ValueSource::Oracle)
}

pub fn band_gap_value(structure: &CrystalStructure, cfg: &OracleConfig) -> Result<f64> {
    let n = structure.num_atoms();
    let species = structure.species();
    let (mut sum, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = min_image_distance(structure, i, j)?;
            if d < OVERLAP_DISTANCE {
                return Err(Error::Overlap { i, j, distance: d });
            }
            sum += (species[i].electronegativity() - species[j].electronegativity()).abs();
            pairs += 1;
        }
    }
    let mean_d_chi = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
    Ok((cfg.gap_offset + cfg.gap_ionic * mean_d_chi - cfg.gap_density * structure.density()).max(0.0))
}

pub fn band_gap(structure: &CrystalStructure, cfg: &OracleConfig) -> Result<PropertyValue> {
    PropertyValue::new(PropertyKind::BandGap, band_gap_value(structure, cfg)?, ValueSource::Oracle)
}

pub fn evaluate(structure: &CrystalStructure, kind: PropertyKind, cfg: &OracleConfig) -> Result<PropertyValue> {
    match kind {
        PropertyKind::FormationEnergy => formation_energy(structure, cfg),
        PropertyKind::BandGap => band_gap(structure, cfg),
    }
}

/// Central-difference gradient of the formation energy with respect to the
/// fractional coordinates, flattened atom-major (3N entries).
pub fn energy_gradient(structure: &CrystalStructure, cfg: &OracleConfig, h: f64) -> Result<Vec<f64>> {
    let base = structure.frac_coords().to_vec();
    let mut grad = vec![0.0; base.len() * 3];
    let mut work = base.clone();
    for atom in 0..base.len() {
        for axis in 0..3 {
            work[atom][axis] = base[atom][axis] + h;
            let plus = formation_energy_value(&structure.with_frac_coords(work.clone())?, cfg)?;
            work[atom][axis] = base[atom][axis] - h;
            let minus = formation_energy_value(&structure.with_frac_coords(work.clone())?, cfg)?;
            work[atom][axis] = base[atom][axis];
            grad[atom * 3 + axis] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxResult {
    pub structure: CrystalStructure,
    /// Energy after each accepted step, starting with the input energy.
    pub energy_trace: Vec<f64>,
    pub converged: bool,
    pub steps: usize,
}

impl RelaxResult {
    pub fn final_energy(&self) -> f64 {
        *self.energy_trace.last().expect("trace is never empty")
    }
}

/// Steepest descent on fractional coordinates (lattice fixed). A trial step
/// that raises the energy is halved until it does not; the run converges
/// when the best available decrease falls below `tol`.
pub fn relax(
    structure: &CrystalStructure,
    cfg: &OracleConfig,
    max_steps: usize,
    step_size: f64,
    tol: f64,
) -> Result<RelaxResult> {
    if max_steps == 0 {
        return Err(Error::usage("relax needs max_steps >= 1"));
    }
    if !(tol > 0.0) || !(step_size > 0.0) {
        return Err(Error::usage("relax needs positive tol and step_size"));
    }
    let mut current = structure.clone();
    let mut energy = formation_energy_value(&current, cfg)?;
    let mut trace = vec![energy];
    let mut converged = false;

    while trace.len() - 1 < max_steps {
        let grad = energy_gradient(&current, cfg, FD_STEP)?;
        if grad.iter().all(|g| *g == 0.0) {
            converged = true;
            break;
        }
        let mut eta = step_size;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let coords = current
                .frac_coords()
                .iter()
                .enumerate()
                .map(|(a, f)| [f[0] - eta * grad[3 * a], f[1] - eta * grad[3 * a + 1], f[2] - eta * grad[3 * a + 2]])
                .collect();
            let trial = current.with_frac_coords(coords)?;
            match formation_energy_value(&trial, cfg) {
                Ok(e) if e <= energy => {
                    accepted = Some((trial, e));
                    break;
                }
                Ok(_) | Err(Error::Overlap { .. }) => eta *= 0.5,
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some((trial, e)) if energy - e >= tol => {
                current = trial;
                energy = e;
                trace.push(e);
            }
            _ => {
                converged = true;
                break;
            }
        }
    }
    let steps = trace.len() - 1;
    Ok(RelaxResult { structure: current, energy_trace: trace, converged, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{ElementId, Lattice};

    fn el(s: &str) -> ElementId {
        ElementId::from_symbol(s).unwrap()
    }

    #[test]
    fn elemental_single_atom_is_zero() {
        let s = CrystalStructure::new(Lattice::cubic(3.0).unwrap(), vec![el("Cu")], vec![[0.0; 3]]).unwrap();
        assert_eq!(formation_energy_value(&s, &OracleConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn gap_clamps_at_zero() {
        // density 1/8 Å⁻³ → c₂·ρ = 1.0 > c₀ = 0.5
        let s = CrystalStructure::new(
            Lattice::cubic(2.0).unwrap(),
            vec![el("Cu"), el("Cu")],
            vec![[0.0; 3], [0.5, 0.5, 0.5]],
        )
        .unwrap();
        let cfg = OracleConfig::default();
        assert!(cfg.gap_density * s.density() > cfg.gap_offset);
        assert_eq!(band_gap_value(&s, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn overlap_is_reported() {
        let s = CrystalStructure::new(
            Lattice::cubic(4.0).unwrap(),
            vec![el("Na"), el("Cl")],
            vec![[0.0; 3], [0.01, 0.0, 0.0]],
        )
        .unwrap();
        let cfg = OracleConfig::default();
        assert!(matches!(formation_energy(&s, &cfg), Err(Error::Overlap { .. })));
        assert!(matches!(band_gap(&s, &cfg), Err(Error::Overlap { .. })));
    }

    #[test]
    fn costs() {
        let mut cfg = OracleConfig { latency_units_per_call: 886.0, ..Default::default() };
        assert_eq!(cost_of(CallKind::Energy, &cfg), 886.0);
        assert_eq!(cost_of(CallKind::Gap, &cfg), 886.0);
        cfg.latency_units_per_call = 0.0;
        assert_eq!(cost_of(CallKind::Energy, &cfg), 0.0);
        cfg.latency_units_per_call = 5.0;
        assert_eq!(cost_of(CallKind::Relax(10), &cfg), 50.0);
    }

    #[test]
    fn relax_budget_and_fixed_points() {
        let cfg = OracleConfig::default();
        let s = CrystalStructure::new(
            Lattice::cubic(5.0).unwrap(),
            vec![el("Na"), el("Cl")],
            vec![[0.0; 3], [0.45, 0.0, 0.0]],
        )
        .unwrap();
        let r = relax(&s, &cfg, 1, 0.002, 1e-8).unwrap();
        assert_eq!(r.steps, 1);
        assert!(!r.converged);
        assert_eq!(r.energy_trace.len(), 2);

        // body-centred pair: every force cancels by symmetry
        let sym = CrystalStructure::new(
            Lattice::cubic(5.0).unwrap(),
            vec![el("Na"), el("Cl")],
            vec![[0.0; 3], [0.5, 0.5, 0.5]],
        )
        .unwrap();
        let r = relax(&sym, &cfg, 10, 0.002, 1e-8).unwrap();
        assert!(r.converged);
        assert_eq!(r.steps, 0);
        assert_eq!(r.structure, sym);

        assert!(relax(&s, &cfg, 0, 0.01, 1e-6).is_err());
        assert!(relax(&s, &cfg, 1, 0.01, 0.0).is_err());
    }
}
