//! Component-count, charge-neutrality and symmetry filters.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{Composition, CrystalStructure, ElementId};

pub const MAX_COMPONENTS: usize = 10;
pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-3;

/// Distinct element count must not exceed [`MAX_COMPONENTS`].
pub fn check_components(structure: &CrystalStructure) -> bool {
    structure.composition().num_components() <= MAX_COMPONENTS
}

/// Allowed oxidation states per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OxidationTable {
    states: BTreeMap<ElementId, Vec<i32>>,
}

impl Default for OxidationTable {
    /// Common oxidation states from the embedded element table.
    fn default() -> Self {
        let states = ElementId::all().map(|e| (e, e.data().oxidation_states.clone())).collect();
        OxidationTable { states }
    }
}

impl OxidationTable {
    pub fn empty() -> Self {
        OxidationTable { states: BTreeMap::new() }
    }

    pub fn set(&mut self, element: ElementId, states: Vec<i32>) -> Result<()> {
        if states.is_empty() {
            return Err(Error::invariant(format!("{element} needs at least one oxidation state")));
        }
        self.states.insert(element, states);
        Ok(())
    }

    pub fn states(&self, element: ElementId) -> Option<&[i32]> {
        self.states.get(&element).map(Vec::as_slice)
    }

    /// Default table with entries replaced from a JSON object such as
    /// `{"Fe": [2, 3], "O": [-2]}`.
    pub fn with_overrides(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parse = |detail: String| Error::Parse { path: path.to_path_buf(), detail };
        let map: BTreeMap<String, Vec<i32>> = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
        let mut table = Self::default();
        for (symbol, states) in map {
            let el = ElementId::from_symbol(&symbol)?;
            table.set(el, states).map_err(|e| parse(e.to_string()))?;
        }
        Ok(table)
    }
}

/// True iff one oxidation state per element balances the charge. Runs a
/// set-of-reachable-sums sweep over the elements.
pub fn check_neutrality(composition: &Composition, table: &OxidationTable) -> Result<bool> {
    let mut reachable = BTreeSet::from([0i64]);
    for (el, count) in composition.iter() {
        let states = table.states(el).ok_or_else(|| Error::UnsupportedElement(el.symbol().to_string()))?;
        let mut next = BTreeSet::new();
        for &sum in &reachable {
            for &q in states {
                next.insert(sum + count as i64 * q as i64);
            }
        }
        reachable = next;
    }
    Ok(reachable.contains(&0))
}

/// The 48 signed permutation matrices.
fn signed_permutations() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(48);
    for p in PERMS {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for r in 0..3 {
                m[(r, p[r])] = if signs & (1 << r) != 0 { -1.0 } else { 1.0 };
            }
            out.push(m);
        }
    }
    out
}

/// Rotations (in the fractional basis) that preserve the metric,
/// `Wᵀ G W ≈ G` within `tol` relative to the largest metric entry.
fn lattice_rotations(structure: &CrystalStructure, tol: f64) -> Vec<Matrix3<f64>> {
    let g = structure.lattice().metric();
    let scale = g.amax();
    signed_permutations().into_iter().filter(|w| (w.transpose() * g * w - g).amax() <= tol * scale).collect()
}

/// Counts the operations `f ↦ W f + t` (W from the 48 signed permutations
/// compatible with the lattice, `t` from the images of atom 0) that map the
/// structure onto itself within `tol` in every fractional component.
pub fn symmetry_order(structure: &CrystalStructure, tol: f64) -> usize {
    let frac: Vec<Vector3<f64>> = structure.frac_coords().iter().map(|f| Vector3::from(*f)).collect();
    let species = structure.species();
    let close = |a: &Vector3<f64>, b: &Vector3<f64>| (0..3).all(|k| (a[k] - b[k] - (a[k] - b[k]).round()).abs() <= tol);
    let mut order = 0;
    for w in lattice_rotations(structure, tol) {
        let image0 = w * frac[0];
        let mut translations: Vec<Vector3<f64>> = Vec::new();
        for (j, fj) in frac.iter().enumerate() {
            if species[j] != species[0] {
                continue;
            }
            let t = fj - image0;
            if translations.iter().any(|u| close(u, &t)) {
                continue;
            }
            let maps = (0..frac.len()).all(|i| {
                let img = w * frac[i] + t;
                (0..frac.len()).any(|j| species[j] == species[i] && close(&img, &frac[j]))
            });
            if maps {
                translations.push(t);
            }
        }
        order += translations.len();
    }
    order.max(1)
}
