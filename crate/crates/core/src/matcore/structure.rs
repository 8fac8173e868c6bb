use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::element::ElementId;
use super::lattice::Lattice;
use crate::error::{Error, Result};

/// Default cap on atoms per cell.
pub const DEFAULT_MAX_ATOMS: usize = 80;

/// Wraps a fractional coordinate into [0, 1).
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn wrap_frac(f: [f64; 3]) -> [f64; 3] {
    [wrap_unit(f[0]), wrap_unit(f[1]), wrap_unit(f[2])]
}

/// Lattice + species + fractional coordinates. Coordinates are stored
/// wrapped into [0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalStructure {
    lattice: Lattice,
    species: Vec<ElementId>,
    frac_coords: Vec<[f64; 3]>,
}

impl CrystalStructure {
    pub fn new(lattice: Lattice, species: Vec<ElementId>, frac_coords: Vec<[f64; 3]>) -> Result<Self> {
        Self::with_max_atoms(lattice, species, frac_coords, DEFAULT_MAX_ATOMS)
    }

    pub fn with_max_atoms(
        lattice: Lattice,
        species: Vec<ElementId>,
        frac_coords: Vec<[f64; 3]>,
        max_atoms: usize,
    ) -> Result<Self> {
        if species.is_empty() {
            return Err(Error::invariant("structure must contain at least one atom"));
        }
        if species.len() != frac_coords.len() {
            return Err(Error::invariant(format!("{} species but {} coordinates", species.len(), frac_coords.len())));
        }
        if species.len() > max_atoms {
            return Err(Error::invariant(format!("{} atoms exceeds the maximum of {max_atoms}", species.len())));
        }
        if frac_coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invariant("non-finite fractional coordinate"));
        }
        let frac_coords = frac_coords.into_iter().map(wrap_frac).collect();
        Ok(CrystalStructure { lattice, species, frac_coords })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn species(&self) -> &[ElementId] {
        &self.species
    }

    pub fn frac_coords(&self) -> &[[f64; 3]] {
        &self.frac_coords
    }

    pub fn num_atoms(&self) -> usize {
        self.species.len()
    }

    pub fn composition(&self) -> Composition {
        Composition::from_species(&self.species)
    }

    /// Atoms per Å³.
    pub fn density(&self) -> f64 {
        self.num_atoms() as f64 / self.lattice.volume()
    }

    /// Copy with every fractional coordinate shifted by `shift` (then wrapped).
    pub fn translated(&self, shift: [f64; 3]) -> Self {
        let frac_coords =
            self.frac_coords.iter().map(|f| wrap_frac([f[0] + shift[0], f[1] + shift[1], f[2] + shift[2]])).collect();
        CrystalStructure { frac_coords, ..self.clone() }
    }

    /// Copy with atoms reordered so that new atom `k` is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.num_atoms()];
        if order.len() != self.num_atoms() {
            return Err(Error::usage("permutation length does not match atom count"));
        }
        for &i in order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::usage("not a permutation"));
            }
        }
        Ok(CrystalStructure {
            lattice: self.lattice.clone(),
            species: order.iter().map(|&i| self.species[i]).collect(),
            frac_coords: order.iter().map(|&i| self.frac_coords[i]).collect(),
        })
    }

    pub fn with_frac_coords(&self, frac_coords: Vec<[f64; 3]>) -> Result<Self> {
        Self::with_max_atoms(self.lattice.clone(), self.species.clone(), frac_coords, usize::MAX)
    }

    /// Canonical atom order: by atomic number, then lexicographically by
    /// fractional coordinates (quantised to 1e-9 so float noise does not
    /// reorder coincident values).
    pub fn canonical_order(&self) -> Vec<usize> {
        let key = |i: usize| {
            let f = self.frac_coords[i];
            (self.species[i].atomic_number(), [quantize(f[0]), quantize(f[1]), quantize(f[2])])
        };
        let mut order: Vec<usize> = (0..self.num_atoms()).collect();
        order.sort_by(|&a, &b| key(a).cmp(&key(b)).then(a.cmp(&b)));
        order
    }

    pub fn canonicalized(&self) -> Self {
        self.permuted(&self.canonical_order()).expect("canonical order is a permutation")
    }
}

fn quantize(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// Cartesian position (Å) of one atom.
pub fn to_cartesian(structure: &CrystalStructure, atom_index: usize) -> Result<Vector3<f64>> {
    let f = structure
        .frac_coords
        .get(atom_index)
        .ok_or_else(|| Error::usage(format!("atom index {atom_index} out of range")))?;
    Ok(structure.lattice.to_cartesian(*f))
}

/// Shortest Cartesian image of the fractional displacement `df`, searching the
/// 27 cells around the nearest-integer-wrapped displacement. With
/// `exclude_zero` the untranslated image is skipped (self-image distances).
///
/// For strongly skewed cells the true minimum can lie outside this 3×3×3
/// shell; reduced cells do not have that problem.
pub fn min_image_vector(lattice: &Lattice, df: [f64; 3], exclude_zero: bool) -> (Vector3<f64>, f64) {
    let base = [df[0] - df[0].round(), df[1] - df[1].round(), df[2] - df[2].round()];
    let mut best = (Vector3::zeros(), f64::INFINITY);
    for a in -1..=1 {
        for b in -1..=1 {
            for c in -1..=1 {
                let f = [base[0] + a as f64, base[1] + b as f64, base[2] + c as f64];
                if exclude_zero && f.iter().all(|v| v.abs() < 1e-12) {
                    continue;
                }
                let v = lattice.to_cartesian(f);
                let d = v.norm();
                if d < best.1 {
                    best = (v, d);
                }
            }
        }
    }
    best
}

/// Minimum-image distance between atoms `i` and `j` in Å. For `i == j` this
/// is the distance to the nearest periodic image of the atom itself.
pub fn min_image_distance(structure: &CrystalStructure, i: usize, j: usize) -> Result<f64> {
    let n = structure.num_atoms();
    if i >= n || j >= n {
        return Err(Error::usage(format!("atom index out of range ({i}, {j}) for N = {n}")));
    }
    let (fi, fj) = (structure.frac_coords[i], structure.frac_coords[j]);
    let df = [fj[0] - fi[0], fj[1] - fi[1], fj[2] - fi[2]];
    let (_, d) = min_image_vector(&structure.lattice, df, i == j);
    if !d.is_finite() {
        return Err(Error::invariant("degenerate lattice in minimum-image search"));
    }
    Ok(d)
}

/// Deterministic SHA-256 digest (hex) of the sorted composition, the lattice
/// rounded to `tol`, and the canonically ordered coordinates rounded to `tol`.
pub fn structure_hash(structure: &CrystalStructure, tol: f64) -> String {
    let tol = if tol > 0.0 { tol } else { 1e-6 };
    let modulus = (1.0 / tol).round().max(1.0) as i64;
    let q = |x: f64| (x / tol).round() as i64;

    let mut hasher = Sha256::new();
    hasher.update(b"tandem-structure-v1");
    for (el, count) in structure.composition().iter() {
        hasher.update([el.atomic_number()]);
        hasher.update(count.to_le_bytes());
    }
    for row in structure.lattice.rows() {
        for v in row {
            hasher.update(q(v).to_le_bytes());
        }
    }
    let mut atoms: Vec<(u8, [i64; 3])> = structure
        .species
        .iter()
        .zip(&structure.frac_coords)
        .map(|(el, f)| (el.atomic_number(), f.map(|x| q(x).rem_euclid(modulus))))
        .collect();
    atoms.sort();
    for (z, c) in atoms {
        hasher.update([z]);
        for v in c {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

#[derive(Serialize, Deserialize)]
struct StructureDoc {
    lattice: [[f64; 3]; 3],
    species: Vec<ElementId>,
    frac_coords: Vec<[f64; 3]>,
}

impl Serialize for CrystalStructure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StructureDoc {
            lattice: self.lattice.rows(),
            species: self.species.clone(),
            frac_coords: self.frac_coords.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CrystalStructure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = StructureDoc::deserialize(d)?;
        let lattice = Lattice::new(doc.lattice).map_err(serde::de::Error::custom)?;
        CrystalStructure::new(lattice, doc.species, doc.frac_coords).map_err(serde::de::Error::custom)
    }
}

/// Element counts of a cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "CompositionRepr", into = "BTreeMap<ElementId, u32>")]
pub struct Composition {
    counts: BTreeMap<ElementId, u32>,
}

impl Composition {
    pub fn new(counts: BTreeMap<ElementId, u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invariant("composition must have at least one element"));
        }
        if counts.values().any(|&c| c == 0) {
            return Err(Error::invariant("composition counts must be positive"));
        }
        Ok(Composition { counts })
    }

    pub fn from_species(species: &[ElementId]) -> Self {
        let mut counts = BTreeMap::new();
        for &s in species {
            *counts.entry(s).or_insert(0) += 1;
        }
        Composition { counts }
    }

    /// Parses formulas such as `Fe2O3` or `NaCl`.
    pub fn parse(formula: &str) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let chars: Vec<char> = formula.chars().filter(|c| !c.is_whitespace()).collect();
        let mut i = 0;
        while i < chars.len() {
            if !chars[i].is_ascii_uppercase() {
                return Err(Error::usage(format!("malformed formula '{formula}'")));
            }
            let mut sym = chars[i].to_string();
            i += 1;
            while i < chars.len() && chars[i].is_ascii_lowercase() {
                sym.push(chars[i]);
                i += 1;
            }
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let count: u32 = if start == i {
                1
            } else {
                chars[start..i]
                    .iter()
                    .collect::<String>()
                    .parse()
                    .map_err(|_| Error::usage(format!("malformed count in '{formula}'")))?
            };
            *counts.entry(ElementId::from_symbol(&sym)?).or_insert(0) += count;
        }
        Composition::new(counts)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ElementId, u32)> + '_ {
        self.counts.iter().map(|(&e, &c)| (e, c))
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementId> + '_ {
        self.counts.keys().copied()
    }

    pub fn count(&self, el: ElementId) -> u32 {
        self.counts.get(&el).copied().unwrap_or(0)
    }

    pub fn num_components(&self) -> usize {
        self.counts.len()
    }

    pub fn total_atoms(&self) -> usize {
        self.counts.values().map(|&c| c as usize).sum()
    }

    /// Divides every count by their greatest common divisor.
    pub fn reduced(&self) -> Composition {
        let g = self.counts.values().fold(0, |acc, &c| gcd(acc, c));
        Composition { counts: self.counts.iter().map(|(&e, &c)| (e, c / g)).collect() }
    }

    /// Formula with elements in ascending electronegativity (ties by atomic
    /// number), so Fe₂O₃ prints as `Fe2O3`.
    pub fn formula(&self) -> String {
        let mut items: Vec<(ElementId, u32)> = self.iter().collect();
        items.sort_by(|a, b| a.0.electronegativity().total_cmp(&b.0.electronegativity()).then(a.0.cmp(&b.0)));
        let mut out = String::new();
        for (el, c) in items {
            out.push_str(el.symbol());
            if c != 1 {
                out.push_str(&c.to_string());
            }
        }
        out
    }

    pub fn reduced_formula(&self) -> String {
        self.reduced().formula()
    }

    /// Species list with each element repeated by its count, in table order.
    pub fn to_species(&self) -> Vec<ElementId> {
        self.iter().flat_map(|(e, c)| std::iter::repeat_n(e, c as usize)).collect()
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Accepted serialized forms: a formula string or an element-count map.
#[derive(Deserialize)]
#[serde(untagged)]
enum CompositionRepr {
    Formula(String),
    Counts(BTreeMap<ElementId, u32>),
}

impl TryFrom<CompositionRepr> for Composition {
    type Error = Error;

    fn try_from(repr: CompositionRepr) -> Result<Self> {
        match repr {
            CompositionRepr::Formula(f) => Composition::parse(&f),
            CompositionRepr::Counts(c) => Composition::new(c),
        }
    }
}

impl TryFrom<BTreeMap<ElementId, u32>> for Composition {
    type Error = Error;
    fn try_from(m: BTreeMap<ElementId, u32>) -> Result<Self> {
        Composition::new(m)
    }
}

impl From<Composition> for BTreeMap<ElementId, u32> {
    fn from(c: Composition) -> Self {
        c.counts
    }
}

impl std::str::FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Composition::parse(s)
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.formula())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PropertyKind {
    /// eV/atom
    FormationEnergy,
    /// eV
    BandGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueSource {
    Oracle,
    Surrogate,
    Depot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyValue {
    pub kind: PropertyKind,
    pub value: f64,
    pub source: ValueSource,
}

impl PropertyValue {
    pub fn new(kind: PropertyKind, value: f64, source: ValueSource) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invariant(format!("{kind:?} value is not finite")));
        }
        if kind == PropertyKind::BandGap && value < 0.0 {
            return Err(Error::invariant(format!("band gap {value} is negative")));
        }
        Ok(PropertyValue { kind, value, source })
    }
}
