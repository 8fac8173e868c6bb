//! Periodic k-nearest-neighbour graphs with k-hot node embeddings and
//! Gaussian radial-basis edge expansions.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{element_table, CrystalStructure, ElementId};

const GROUP_BINS: usize = 18;
const PERIOD_BINS: usize = 7;
const EN_BINS: usize = 10;
const RADIUS_BINS: usize = 4;

/// Width of the k-hot node embedding.
pub const KHOT_WIDTH: usize = GROUP_BINS + PERIOD_BINS + EN_BINS + RADIUS_BINS;

/// Rank-based bin: `floor(bins · #{values < v} / n)`.
fn rank_bin(v: f64, values: &[f64], bins: usize) -> usize {
    let below = values.iter().filter(|&&x| x < v).count();
    (bins * below / values.len()).min(bins - 1)
}

static KHOT_TABLE: LazyLock<Vec<[bool; KHOT_WIDTH]>> = LazyLock::new(|| {
    let table = element_table();
    let en: Vec<f64> = table.iter().map(|e| e.electronegativity).collect();
    let radii: Vec<f64> = table.iter().map(|e| e.covalent_radius).collect();
    table
        .iter()
        .map(|e| {
            let mut bits = [false; KHOT_WIDTH];
            bits[e.group as usize - 1] = true;
            bits[GROUP_BINS + e.period as usize - 1] = true;
            bits[GROUP_BINS + PERIOD_BINS + rank_bin(e.electronegativity, &en, EN_BINS)] = true;
            bits[GROUP_BINS + PERIOD_BINS + EN_BINS + rank_bin(e.covalent_radius, &radii, RADIUS_BINS)] = true;
            bits
        })
        .collect()
});

/// k-hot encoding of an element: one bit each for group, period,
/// electronegativity decile and covalent-radius quartile.
pub fn khot(element: ElementId) -> [bool; KHOT_WIDTH] {
    KHOT_TABLE[element.index()]
}

pub fn khot_vector(element: ElementId) -> Vec<f64> {
    khot(element).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    pub k: usize,
    pub n_basis: usize,
    /// Neighbour search radius and upper end of the RBF centres, Å.
    pub r_max: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams { k: 6, n_basis: 16, r_max: 8.0 }
    }
}

/// Gaussian RBF expansion with `n_basis` centres spread evenly on
/// `[0, r_max]`; the width equals the centre spacing.
pub fn rbf_expand(d: f64, n_basis: usize, r_max: f64) -> Vec<f64> {
    let spacing = r_max / (n_basis - 1) as f64;
    (0..n_basis)
        .map(|m| {
            let z = (d - spacing * m as f64) / spacing;
            (-z * z).exp()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Receiving (target) node.
    pub i: usize,
    /// Sending (source) node; may equal `i` for a periodic self-image.
    pub j: usize,
    pub distance: f64,
}

/// Featurised structure. Edges are stored grouped by receiving node, exactly
/// `k` per node, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialGraph {
    pub params: GraphParams,
    pub node_features: Vec<Vec<f64>>,
    pub edges: Vec<Edge>,
    pub rbf: Vec<Vec<f64>>,
}

impl MaterialGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.len()
    }

    pub fn neighbours(&self, i: usize) -> std::ops::Range<usize> {
        i * self.params.k..(i + 1) * self.params.k
    }
}

pub fn featurize(structure: &CrystalStructure, params: GraphParams) -> Result<MaterialGraph> {
    let GraphParams { k, n_basis, r_max } = params;
    if k == 0 {
        return Err(Error::usage("featurize needs k >= 1"));
    }
    if n_basis < 2 {
        return Err(Error::usage("featurize needs n_basis >= 2"));
    }
    if !(r_max > 0.0) {
        return Err(Error::usage("featurize needs r_max > 0"));
    }
    let lattice = structure.lattice();
    let frac = structure.frac_coords();
    let species = structure.species();
    let n = structure.num_atoms();
    let range = lattice.image_range(r_max);

    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut candidates: Vec<(i64, u8, usize, f64)> = Vec::new();
        for (j, fj) in frac.iter().enumerate() {
            let base = [fj[0] - frac[i][0], fj[1] - frac[i][1], fj[2] - frac[i][2]];
            for a in -range[0]..=range[0] {
                for b in -range[1]..=range[1] {
                    for c in -range[2]..=range[2] {
                        let d =
                            lattice.to_cartesian([base[0] + a as f64, base[1] + b as f64, base[2] + c as f64]).norm();
                        // skips the untranslated self term and coincident atoms
                        if d > 1e-8 && d <= r_max {
                            candidates.push(((d * 1e8).round() as i64, species[j].atomic_number(), j, d));
                        }
                    }
                }
            }
        }
        if candidates.len() < k {
            return Err(Error::EmptyNeighborhood { atom: i, k, r_max });
        }
        // ties at equal distance and species carry identical features
        candidates.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)).then(x.3.total_cmp(&y.3)));
        edges.extend(candidates.iter().take(k).map(|&(_, _, j, d)| Edge { i, j, distance: d }));
    }
    let rbf = edges.iter().map(|e| rbf_expand(e.distance, n_basis, r_max)).collect();
    let node_features = species.iter().map(|&e| khot_vector(e)).collect();
    Ok(MaterialGraph { params, node_features, edges, rbf })
}
