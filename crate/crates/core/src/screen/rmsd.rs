//! Periodic RMSD, greedy deduplication and match labelling.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::matcore::{min_image_vector, structure_hash, Composition, CrystalStructure, Lattice};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.3;
const HASH_TOL: f64 = 1e-4;

fn mean_lattice(a: &Lattice, b: &Lattice) -> Result<Lattice> {
    Lattice::from_matrix((a.matrix() + b.matrix()) * 0.5)
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials, O(n³)).
fn min_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    // 1-based rows/columns; column 0 is the virtual start
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let (mut delta, mut j1) = (f64::INFINITY, 0);
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < min_to[j] {
                        min_to[j] = cur;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[row_of[j] - 1][j - 1]).sum()
}

/// Mean squared displacement between `a` shifted by `t` and `b` under the
/// best species-preserving pairing; distances use the minimum image.
fn shifted_msd(a: &CrystalStructure, b: &CrystalStructure, t: [f64; 3], lattice: &Lattice) -> f64 {
    let mut total = 0.0;
    for el in a.composition().elements() {
        let of = |s: &CrystalStructure| -> Vec<[f64; 3]> {
            s.species().iter().zip(s.frac_coords()).filter(|(e, _)| **e == el).map(|(_, f)| *f).collect()
        };
        let (fa, fb) = (of(a), of(b));
        let cost: Vec<Vec<f64>> = fa
            .iter()
            .map(|p| {
                fb.iter()
                    .map(|q| {
                        let df = [q[0] - p[0] - t[0], q[1] - p[1] - t[1], q[2] - p[2] - t[2]];
                        let (_, d) = min_image_vector(lattice, df, false);
                        d * d
                    })
                    .collect()
            })
            .collect();
        total += min_assignment(&cost);
    }
    total / a.num_atoms() as f64
}

/// Root-mean-square deviation in Å.
///
/// Atoms are paired by an optimal assignment within each species, with
/// minimum-image distances in the mean of the two lattices. Candidate rigid
/// shifts are zero plus every shift that lands the first canonical atom of
/// one structure on a same-species atom of the other (in both directions);
/// the smallest value is returned. The candidate set for `(b, a)` is the
/// negation of the one for `(a, b)`, so `rmsd(a, b) == rmsd(b, a)`.
pub fn rmsd(s1: &CrystalStructure, s2: &CrystalStructure) -> Result<f64> {
    if s1.composition() != s2.composition() {
        return Err(Error::Incomparable(format!("{} vs {}", s1.composition(), s2.composition())));
    }
    let lattice = mean_lattice(s1.lattice(), s2.lattice())?;
    let (c1, c2) = (s1.canonicalized(), s2.canonicalized());
    let mut shifts = vec![[0.0; 3]];
    let first_shifts = |from: &CrystalStructure, to: &CrystalStructure, sign: f64| {
        let (el, f0) = (from.species()[0], from.frac_coords()[0]);
        to.species()
            .iter()
            .zip(to.frac_coords())
            .filter(move |(e, _)| **e == el)
            .map(move |(_, f)| [sign * (f[0] - f0[0]), sign * (f[1] - f0[1]), sign * (f[2] - f0[2])])
            .collect::<Vec<_>>()
    };
    shifts.extend(first_shifts(&c1, &c2, 1.0));
    shifts.extend(first_shifts(&c2, &c1, -1.0));

    let best = shifts.into_iter().map(|t| shifted_msd(&c1, &c2, t, &lattice)).fold(f64::INFINITY, f64::min);
    Ok(best.sqrt())
}

/// Streaming greedy deduplicator. A structure is kept iff its hash is new
/// and its RMSD to every kept structure of the same composition exceeds the
/// threshold.
#[derive(Debug, Clone)]
pub struct Deduplicator {
    threshold: f64,
    hashes: HashSet<String>,
    kept: Vec<(Composition, CrystalStructure)>,
}

impl Deduplicator {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::usage("dedup threshold must be positive"));
        }
        Ok(Deduplicator { threshold, hashes: HashSet::new(), kept: Vec::new() })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Returns true and remembers `structure` if it is not a duplicate.
    pub fn offer(&mut self, structure: &CrystalStructure) -> bool {
        let hash = structure_hash(structure, HASH_TOL);
        if self.hashes.contains(&hash) {
            return false;
        }
        let comp = structure.composition();
        let duplicate = self
            .kept
            .iter()
            .filter(|(c, _)| *c == comp)
            .any(|(_, k)| rmsd(structure, k).map(|d| d <= self.threshold).unwrap_or(false));
        if duplicate {
            return false;
        }
        self.hashes.insert(hash);
        self.kept.push((comp, structure.clone()));
        true
    }
}

/// Indices of the structures kept by a fresh [`Deduplicator`], in input order.
pub fn dedup(structures: &[CrystalStructure], threshold: f64) -> Result<Vec<usize>> {
    let mut d = Deduplicator::new(threshold)?;
    Ok(structures.iter().enumerate().filter(|(_, s)| d.offer(s)).map(|(i, _)| i).collect())
}

/// `rmsd(sample, ground_truth) < d` for each sample.
pub fn label_matches(samples: &[CrystalStructure], ground_truth: &CrystalStructure, d: f64) -> Result<Vec<bool>> {
    samples.iter().map(|s| Ok(rmsd(s, ground_truth)? < d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::ElementId;

    fn el(s: &str) -> ElementId {
        ElementId::from_symbol(s).unwrap()
    }

    fn base() -> CrystalStructure {
        CrystalStructure::new(
            Lattice::orthorhombic(4.0, 5.0, 6.0).unwrap(),
            vec![el("Fe"), el("O"), el("Fe"), el("O")],
            vec![[0.1, 0.2, 0.3], [0.6, 0.1, 0.7], [0.4, 0.8, 0.2], [0.9, 0.55, 0.45]],
        )
        .unwrap()
    }

    /// Moves atom `i` by `dz` Å along c.
    fn displaced(s: &CrystalStructure, i: usize, dz: f64) -> CrystalStructure {
        let mut f = s.frac_coords().to_vec();
        f[i][2] += dz / 6.0;
        s.with_frac_coords(f).unwrap()
    }

    #[test]
    fn single_displacement() {
        let s = base();
        for delta in [0.05, 0.2, 0.7] {
            let d = rmsd(&s, &displaced(&s, 1, delta)).unwrap();
            assert!((d - delta / 2.0).abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn different_compositions_are_incomparable() {
        let other = CrystalStructure::new(Lattice::cubic(4.0).unwrap(), vec![el("Na")], vec![[0.0; 3]]).unwrap();
        assert!(matches!(rmsd(&base(), &other), Err(Error::Incomparable(_))));
    }

    #[test]
    fn dedup_examples() {
        let s = base();
        assert_eq!(dedup(&vec![s.clone(); 5], 0.3).unwrap(), vec![0]);
        let other = CrystalStructure::new(Lattice::cubic(4.0).unwrap(), vec![el("Na")], vec![[0.0; 3]]).unwrap();
        assert_eq!(dedup(&[s.clone(), other], 0.3).unwrap(), vec![0, 1]);
        // rmsd 0.15 = half the threshold
        let near = displaced(&s, 0, 0.3);
        assert!((rmsd(&s, &near).unwrap() - 0.15).abs() < 1e-9);
        assert_eq!(dedup(&[s, near], 0.3).unwrap(), vec![0]);
        assert!(Deduplicator::new(0.0).is_err());
    }

    #[test]
    fn label_threshold_is_strict() {
        let s = base();
        let exact = displaced(&s, 2, 1.0);
        let d = rmsd(&s, &exact).unwrap();
        assert_eq!(label_matches(&[s.clone(), exact], &s, d).unwrap(), vec![true, false]);
    }
}
