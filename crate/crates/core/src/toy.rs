//! Random toy crystals for corpora, training sets and tests.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matcore::{min_image_distance, Composition, CrystalStructure, ElementId, Lattice};

/// Charge-balanced formulas with small formula units.
pub const NEUTRAL_FORMULAS: &[&str] = &[
    "NaCl", "MgO", "ZnS", "LiF", "KBr", "CaO", "NiO", "GaN", "CaF2", "TiO2", "Li2O", "SiO2", "Cu2O", "Fe2O3", "Al2O3",
    "SrTiO3", "BaTiO3", "MgAl2O4",
];

/// Minimum allowed separation as a fraction of the summed covalent radii.
pub const MIN_SEPARATION: f64 = 0.8;

const MAX_ATTEMPTS: usize = 500;

pub fn neutral_compositions() -> Vec<Composition> {
    NEUTRAL_FORMULAS.iter().map(|f| Composition::parse(f).expect("built-in formula parses")).collect()
}

/// Cell volume that leaves room for the atoms of `species`.
fn target_volume(species: &[ElementId], scale: f64) -> f64 {
    species.iter().map(|e| 4.0 * (e.covalent_radius() + 0.5).powi(3)).sum::<f64>() * scale
}

/// A mildly distorted cell of the requested volume.
pub fn random_lattice<R: Rng + ?Sized>(rng: &mut R, volume: f64, max_angle_dev: f64) -> Result<Lattice> {
    let raw = Lattice::from_parameters(
        rng.random_range(0.85..1.2),
        rng.random_range(0.85..1.2),
        rng.random_range(0.85..1.2),
        90.0 + rng.random_range(-max_angle_dev..=max_angle_dev),
        90.0 + rng.random_range(-max_angle_dev..=max_angle_dev),
        90.0 + rng.random_range(-max_angle_dev..=max_angle_dev),
    )?;
    let s = (volume / raw.volume()).cbrt();
    let m = raw.matrix() * s;
    Lattice::from_matrix(m)
}

/// True when every pair (and every atom with its own images) is at least
/// `MIN_SEPARATION · (r_i + r_j)` apart.
pub fn well_separated(s: &CrystalStructure) -> bool {
    let sp = s.species();
    (0..s.num_atoms()).all(|i| {
        (i..s.num_atoms()).all(|j| {
            let d = min_image_distance(s, i, j).unwrap_or(0.0);
            d >= MIN_SEPARATION * (sp[i].covalent_radius() + sp[j].covalent_radius())
        })
    })
}

/// Random structure of the given composition with no close contacts.
pub fn random_structure<R: Rng + ?Sized>(rng: &mut R, composition: &Composition) -> Result<CrystalStructure> {
    let species = composition.to_species();
    for _ in 0..MAX_ATTEMPTS {
        let volume = target_volume(&species, rng.random_range(0.9..1.3));
        let lattice = random_lattice(rng, volume, 12.0)?;
        let coords = (0..species.len()).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let s = CrystalStructure::new(lattice, species.clone(), coords)?;
        if well_separated(&s) {
            return Ok(s);
        }
    }
    Err(Error::Generation(format!("no well-separated {composition} cell after {MAX_ATTEMPTS} attempts")))
}

/// Inversion centres of the unit cell.
const INVERSION_CENTRES: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.0, 0.5],
    [0.5, 0.5, 0.0],
    [0.5, 0.0, 0.5],
    [0.0, 0.5, 0.5],
    [0.5, 0.5, 0.5],
];

/// Random centrosymmetric structure: atoms come in `±f` pairs, with one
/// atom of each odd-count species on a distinct inversion centre.
pub fn random_centrosymmetric<R: Rng + ?Sized>(rng: &mut R, composition: &Composition) -> Result<CrystalStructure> {
    let odd = composition.iter().filter(|(_, c)| c % 2 == 1).count();
    if odd > INVERSION_CENTRES.len() {
        return Err(Error::usage("too many odd-count species for a centrosymmetric cell"));
    }
    let base = composition.to_species();
    for _ in 0..MAX_ATTEMPTS {
        let volume = target_volume(&base, rng.random_range(0.9..1.3));
        let lattice = random_lattice(rng, volume, 12.0)?;
        let mut centres: Vec<[f64; 3]> = INVERSION_CENTRES.to_vec();
        let (mut species, mut coords) = (Vec::new(), Vec::new());
        for (el, count) in composition.iter() {
            if count % 2 == 1 {
                let c = centres.swap_remove(rng.random_range(0..centres.len()));
                species.push(el);
                coords.push(c);
            }
            for _ in 0..count / 2 {
                let f: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                species.extend([el, el]);
                coords.extend([f, [-f[0], -f[1], -f[2]]]);
            }
        }
        let s = CrystalStructure::new(lattice, species, coords)?;
        if well_separated(&s) {
            return Ok(s);
        }
    }
    Err(Error::Generation(format!("no well-separated centrosymmetric {composition} cell")))
}

/// `n` random structures drawn from the neutral formula list, each formula
/// scaled by a random multiplier while the cell stays within `max_atoms`.
pub fn random_corpus<R: Rng + ?Sized>(rng: &mut R, n: usize, max_atoms: usize) -> Result<Vec<CrystalStructure>> {
    corpus_with(rng, n, max_atoms, random_structure)
}

/// As [`random_corpus`], but every cell has an inversion centre.
pub fn random_centrosymmetric_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    max_atoms: usize,
) -> Result<Vec<CrystalStructure>> {
    corpus_with(rng, n, max_atoms, random_centrosymmetric)
}

fn corpus_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    max_atoms: usize,
    make: fn(&mut R, &Composition) -> Result<CrystalStructure>,
) -> Result<Vec<CrystalStructure>> {
    let comps: Vec<Composition> = neutral_compositions().into_iter().filter(|c| c.total_atoms() <= max_atoms).collect();
    if comps.is_empty() {
        return Err(Error::usage("max_atoms is smaller than every toy formula"));
    }
    (0..n)
        .map(|_| {
            let base = comps.choose(rng).expect("non-empty");
            let max_mult = (max_atoms / base.total_atoms()).clamp(1, 2) as u32;
            let mult = rng.random_range(1..=max_mult);
            let counts = base.iter().map(|(e, c)| (e, c * mult)).collect();
            make(rng, &Composition::new(counts)?)
        })
        .collect()
}
