//! Match discriminator: a calibrated logistic classifier over pooled graph
//! features, predicting whether a generated structure lies within RMSD `d`
//! of the ground truth.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::CrystalStructure;
use crate::nn::sigmoid;
use crate::surrogate::{featurize, GraphParams, MaterialGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdConfig {
    pub graph: GraphParams,
    /// RMSD threshold (Å) the labels were produced with.
    pub match_threshold: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for MdConfig {
    fn default() -> Self {
        MdConfig {
            graph: GraphParams::default(),
            match_threshold: 0.5,
            epochs: 500,
            learning_rate: 0.5,
            l2: 1e-3,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_predicted: f64,
    pub observed_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdMetrics {
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
    pub calibration: Vec<CalibrationBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDiscriminator {
    pub graph: GraphParams,
    pub match_threshold: f64,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
    /// Platt scaling `σ(a·z + b)` of the raw logit `z`.
    platt: (f64, f64),
    pub metrics: MdMetrics,
}

/// Mean node features, mean edge RBF expansion, and the mean and minimum
/// neighbour distance.
pub fn pooled_features(graph: &MaterialGraph) -> Vec<f64> {
    let n = graph.num_nodes() as f64;
    let width = graph.node_features[0].len();
    let mut out = vec![0.0; width];
    for row in &graph.node_features {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v / n;
        }
    }
    let e = graph.edges.len() as f64;
    let mut rbf = vec![0.0; graph.params.n_basis];
    for row in &graph.rbf {
        for (o, v) in rbf.iter_mut().zip(row) {
            *o += v / e;
        }
    }
    out.extend(rbf);
    out.push(graph.edges.iter().map(|x| x.distance).sum::<f64>() / e);
    out.push(graph.edges.iter().map(|x| x.distance).fold(f64::INFINITY, f64::min));
    out
}

fn logistic_fit(x: &[Vec<f64>], y: &[bool], cfg: &MdConfig) -> (Vec<f64>, f64) {
    let dim = x[0].len();
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let n = x.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let z = b + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
            let r = sigmoid(z) - if yi { 1.0 } else { 0.0 };
            for (g, v) in gw.iter_mut().zip(xi) {
                *g += r * v / n;
            }
            gb += r / n;
        }
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= cfg.learning_rate * (g + cfg.l2 * *wk);
        }
        b -= cfg.learning_rate * gb;
    }
    (w, b)
}

/// One-dimensional logistic fit of labels on scores: returns `(a, b)`.
fn platt_fit(z: &[f64], y: &[bool]) -> (f64, f64) {
    let (mut a, mut b) = (1.0, 0.0);
    let n = z.len() as f64;
    for _ in 0..2000 {
        let (mut ga, mut gb) = (0.0, 0.0);
        for (&zi, &yi) in z.iter().zip(y) {
            let r = sigmoid(a * zi + b) - if yi { 1.0 } else { 0.0 };
            ga += r * zi / n;
            gb += r / n;
        }
        a -= 0.1 * ga;
        b -= 0.1 * gb;
    }
    (a, b)
}

fn calibration_bins(p: &[f64], y: &[bool], bins: usize) -> Vec<CalibrationBin> {
    (0..bins)
        .map(|k| {
            let (lower, upper) = (k as f64 / bins as f64, (k + 1) as f64 / bins as f64);
            let members: Vec<usize> =
                (0..p.len()).filter(|&i| p[i] >= lower && (p[i] < upper || (k + 1 == bins && p[i] <= 1.0))).collect();
            let count = members.len();
            let (mean_predicted, observed_rate) = if count == 0 {
                (0.0, 0.0)
            } else {
                (
                    members.iter().map(|&i| p[i]).sum::<f64>() / count as f64,
                    members.iter().filter(|&&i| y[i]).count() as f64 / count as f64,
                )
            };
            CalibrationBin { lower, upper, count, mean_predicted, observed_rate }
        })
        .collect()
}

fn accuracy(p: &[f64], y: &[bool]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    p.iter().zip(y).filter(|(pi, yi)| (**pi > 0.5) == **yi).count() as f64 / p.len() as f64
}

/// Trains on `(structure, is_match)` pairs. A shuffled `holdout_fraction`
/// is kept out of the logistic fit and used for the Platt calibration and
/// the holdout metrics. If the holdout lacks one of the classes the
/// calibration stays at the identity.
pub fn train_md(labeled: &[(CrystalStructure, bool)], cfg: &MdConfig) -> Result<MatchDiscriminator> {
    if !(cfg.holdout_fraction >= 0.0 && cfg.holdout_fraction < 1.0) || !(cfg.learning_rate > 0.0) {
        return Err(Error::usage("invalid discriminator config"));
    }
    let positives = labeled.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == labeled.len() {
        return Err(Error::DegenerateLabels);
    }
    let raw: Vec<Vec<f64>> =
        labeled.iter().map(|(s, _)| featurize(s, cfg.graph).map(|g| pooled_features(&g))).collect::<Result<_>>()?;
    let labels: Vec<bool> = labeled.iter().map(|(_, y)| *y).collect();

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_hold = (raw.len() as f64 * cfg.holdout_fraction).floor() as usize;
    let (hold, train) = order.split_at(n_hold);
    let train_y: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
    if train_y.iter().all(|&y| y) || train_y.iter().all(|&y| !y) {
        return Err(Error::DegenerateLabels);
    }

    let dim = raw[0].len();
    let m = train.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|k| train.iter().map(|&i| raw[i][k]).sum::<f64>() / m).collect();
    let std: Vec<f64> = (0..dim)
        .map(|k| {
            let v = train.iter().map(|&i| (raw[i][k] - mean[k]).powi(2)).sum::<f64>() / m;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardise =
        |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&std).map(|((v, mu), s)| (v - mu) / s).collect() };
    let train_x: Vec<Vec<f64>> = train.iter().map(|&i| standardise(&raw[i])).collect();
    let (weights, bias) = logistic_fit(&train_x, &train_y, cfg);

    let mut md = MatchDiscriminator {
        graph: cfg.graph,
        match_threshold: cfg.match_threshold,
        feature_mean: mean,
        feature_std: std,
        weights,
        bias,
        platt: (1.0, 0.0),
        metrics: MdMetrics { train_accuracy: 0.0, holdout_accuracy: 0.0, calibration: Vec::new() },
    };
    let hold_y: Vec<bool> = hold.iter().map(|&i| labels[i]).collect();
    if hold_y.iter().any(|&y| y) && hold_y.iter().any(|&y| !y) {
        let z: Vec<f64> = hold.iter().map(|&i| md.logit(&raw[i])).collect();
        md.platt = platt_fit(&z, &hold_y);
    }
    let train_p: Vec<f64> = train.iter().map(|&i| md.probability_of(&raw[i])).collect();
    let hold_p: Vec<f64> = hold.iter().map(|&i| md.probability_of(&raw[i])).collect();
    md.metrics = MdMetrics {
        train_accuracy: accuracy(&train_p, &train_y),
        holdout_accuracy: accuracy(&hold_p, &hold_y),
        calibration: calibration_bins(&hold_p, &hold_y, 5),
    };
    Ok(md)
}

impl MatchDiscriminator {
    fn logit(&self, raw: &[f64]) -> f64 {
        self.bias
            + raw
                .iter()
                .zip(&self.feature_mean)
                .zip(&self.feature_std)
                .zip(&self.weights)
                .map(|(((v, mu), s), w)| w * (v - mu) / s)
                .sum::<f64>()
    }

    fn probability_of(&self, raw: &[f64]) -> f64 {
        sigmoid(self.platt.0 * self.logit(raw) + self.platt.1)
    }
}

/// Calibrated match probability in `[0, 1]`.
pub fn md_probability(md: &MatchDiscriminator, structure: &CrystalStructure) -> Result<f64> {
    let graph = featurize(structure, md.graph)?;
    let raw = pooled_features(&graph);
    if raw.len() != md.weights.len() {
        return Err(Error::usage("feature width does not match the discriminator"));
    }
    Ok(md.probability_of(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::Composition;
    use crate::toy::random_structure;
    use rand::Rng;

    /// Compressed cells are labelled as matches, expanded ones are not.
    fn separable(n: usize, seed: u64) -> Vec<(CrystalStructure, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let comps: Vec<Composition> = ["NaCl", "MgO", "TiO2", "Fe2O3"].iter().map(|f| f.parse().unwrap()).collect();
        (0..n)
            .map(|i| {
                let s = random_structure(&mut rng, &comps[i % comps.len()]).unwrap();
                let positive = rng.random_bool(0.5);
                let scale = if positive { 0.9 } else { 1.25 };
                let lattice = crate::matcore::Lattice::from_matrix(s.lattice().matrix() * scale).unwrap();
                (CrystalStructure::new(lattice, s.species().to_vec(), s.frac_coords().to_vec()).unwrap(), positive)
            })
            .collect()
    }

    #[test]
    fn separable_labels_are_learned() {
        let data = separable(200, 3);
        let md = train_md(&data, &MdConfig::default()).unwrap();
        assert!(md.metrics.holdout_accuracy >= 0.95, "{:?}", md.metrics);
        let fresh = separable(60, 4);
        let correct = fresh.iter().filter(|(s, y)| (md_probability(&md, s).unwrap() > 0.5) == *y).count();
        assert!(correct as f64 / 60.0 >= 0.95);
        let positive = data.iter().find(|(_, y)| *y).unwrap();
        assert!(md_probability(&md, &positive.0).unwrap() > 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<_> = separable(10, 5).into_iter().map(|(s, _)| (s, true)).collect();
        assert!(matches!(train_md(&data, &MdConfig::default()), Err(Error::DegenerateLabels)));
    }
}
