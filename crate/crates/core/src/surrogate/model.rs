//! Invariant attention regressor over a [`MaterialGraph`].
//!
//! Per edge `i ← j`: `x = φ(h_i) + φ(h_j)`, `f = W_f [rbf(d) ⊕ x] + b_f`,
//! `a = LeakyReLU(f)`, score `ζ = αᵀa`, scalar message `v = w_vᵀa + b_v`.
//! Scores are softmax-normalised over the `k` neighbours of `i`, the node
//! value is `(1/k) Σ att·v`, and the graph value is the mean node value
//! passed through an affine output head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{featurize, GraphParams, MaterialGraph, KHOT_WIDTH};
use crate::error::{Error, Result};
use crate::matcore::{structure_hash, CrystalStructure};
use crate::nn::{clip_norm, init_normal, leaky_relu, leaky_relu_grad};

pub const DEFAULT_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Node feature width.
    pub h: usize,
    /// Hidden (projection) width.
    pub m: usize,
    pub graph: GraphParams,
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_node: usize,
    b_node: usize,
    w_edge: usize,
    b_edge: usize,
    attn: usize,
    w_msg: usize,
    b_msg: usize,
    w_out: usize,
    b_out: usize,
    len: usize,
}

impl ModelShape {
    fn edge_in(&self) -> usize {
        self.graph.n_basis + self.m
    }

    fn layout(&self) -> Layout {
        let (h, m) = (self.h, self.m);
        let w_node = 0;
        let b_node = w_node + m * h;
        let w_edge = b_node + m;
        let b_edge = w_edge + m * self.edge_in();
        let attn = b_edge + m;
        let w_msg = attn + m;
        let b_msg = w_msg + m;
        let w_out = b_msg + 1;
        let b_out = w_out + 1;
        Layout { w_node, b_node, w_edge, b_edge, attn, w_msg, b_msg, w_out, b_out, len: b_out + 1 }
    }

    pub fn num_params(&self) -> usize {
        self.layout().len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    pub dataset_digest: String,
    pub train_mae: f64,
    /// Number of fine-tuning rounds applied since initial training.
    pub fine_tune_generation: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub shape: ModelShape,
    params: Vec<f64>,
    /// Label normalisation: prediction = y_mean + y_scale · head output.
    /// A zero scale means every training label was identical.
    pub y_mean: f64,
    pub y_scale: f64,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub seed: u64,
    pub hidden: usize,
    pub graph: GraphParams,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.02,
            batch: 8,
            seed: 0,
            hidden: 16,
            graph: GraphParams::default(),
            clip_norm: DEFAULT_CLIP_NORM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.hidden == 0 {
            return Err(Error::Config("surrogate batch and hidden must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("surrogate learning_rate and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    edge_in: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    att: Vec<f64>,
    msg: Vec<f64>,
    pooled: f64,
    out: f64,
}

impl SurrogateModel {
    /// Fresh model with N(0, 1/fan_in) weights and zero biases.
    pub fn init(shape: ModelShape, seed: u64, y_mean: f64, y_scale: f64) -> Self {
        let lay = shape.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; lay.len];
        init_normal(&mut rng, &mut params[lay.w_node..lay.b_node], shape.h);
        init_normal(&mut rng, &mut params[lay.w_edge..lay.b_edge], shape.edge_in());
        init_normal(&mut rng, &mut params[lay.attn..lay.w_msg], shape.m);
        init_normal(&mut rng, &mut params[lay.w_msg..lay.b_msg], shape.m);
        // unit gain on the mean attention-weighted message
        params[lay.w_out] = shape.graph.k as f64;
        SurrogateModel {
            shape,
            params,
            y_mean,
            y_scale,
            meta: TrainingMeta {
                epochs: 0,
                seed,
                dataset_digest: String::new(),
                train_mae: f64::NAN,
                fine_tune_generation: 0,
            },
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::usage("parameter vector length mismatch"));
        }
        self.params = params;
        Ok(())
    }

    pub fn check_graph(&self, graph: &MaterialGraph) -> Result<()> {
        let g = &graph.params;
        if g.k != self.shape.graph.k || g.n_basis != self.shape.graph.n_basis {
            return Err(Error::usage(format!(
                "graph built with k={}, n_basis={} but model expects k={}, n_basis={}",
                g.k, g.n_basis, self.shape.graph.k, self.shape.graph.n_basis
            )));
        }
        if graph.node_features.iter().any(|f| f.len() != self.shape.h) {
            return Err(Error::usage("node feature width does not match the model"));
        }
        Ok(())
    }

    fn forward(&self, graph: &MaterialGraph) -> Trace {
        let ModelShape { h, m, .. } = self.shape;
        let lay = self.shape.layout();
        let p = &self.params;
        let n_in = self.shape.edge_in();
        let k = graph.params.k;

        let proj: Vec<Vec<f64>> = graph
            .node_features
            .iter()
            .map(|x| {
                (0..m)
                    .map(|o| {
                        let row = &p[lay.w_node + o * h..lay.w_node + (o + 1) * h];
                        p[lay.b_node + o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect()
            })
            .collect();

        let n_edges = graph.edges.len();
        let mut edge_in = Vec::with_capacity(n_edges);
        let mut pre = Vec::with_capacity(n_edges);
        let mut act = Vec::with_capacity(n_edges);
        let mut score = Vec::with_capacity(n_edges);
        let mut msg = Vec::with_capacity(n_edges);
        for (e, edge) in graph.edges.iter().enumerate() {
            let mut input = graph.rbf[e].clone();
            input.extend((0..m).map(|c| proj[edge.i][c] + proj[edge.j][c]));
            let f: Vec<f64> = (0..m)
                .map(|o| {
                    let row = &p[lay.w_edge + o * n_in..lay.w_edge + (o + 1) * n_in];
                    p[lay.b_edge + o] + row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            let a: Vec<f64> = f.iter().map(|&v| leaky_relu(v)).collect();
            score.push(a.iter().zip(&p[lay.attn..lay.attn + m]).map(|(x, w)| x * w).sum::<f64>());
            msg.push(p[lay.b_msg] + a.iter().zip(&p[lay.w_msg..lay.w_msg + m]).map(|(x, w)| x * w).sum::<f64>());
            edge_in.push(input);
            pre.push(f);
            act.push(a);
        }

        let mut att = vec![0.0; n_edges];
        let mut node_sum = 0.0;
        for i in 0..graph.num_nodes() {
            let r = graph.neighbours(i);
            let max = score[r.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = score[r.clone()].iter().map(|s| (s - max).exp()).sum();
            let mut value = 0.0;
            for e in r {
                att[e] = (score[e] - max).exp() / z;
                value += att[e] * msg[e];
            }
            node_sum += value / k as f64;
        }
        let pooled = node_sum / graph.num_nodes() as f64;
        let out = p[lay.w_out] * pooled + p[lay.b_out];
        Trace { edge_in, pre, act, att, msg, pooled, out }
    }

    /// Accumulates `d(out)/dθ · upstream` into `grad`, where `out` is the
    /// normalised head output.
    fn backward(&self, graph: &MaterialGraph, tr: &Trace, upstream: f64, grad: &mut [f64]) {
        let ModelShape { h, m, .. } = self.shape;
        let lay = self.shape.layout();
        let p = &self.params;
        let n_in = self.shape.edge_in();
        let n_basis = graph.params.n_basis;
        let k = graph.params.k as f64;
        let n = graph.num_nodes();

        grad[lay.w_out] += upstream * tr.pooled;
        grad[lay.b_out] += upstream;
        let d_node = upstream * p[lay.w_out] / n as f64;

        let mut d_proj = vec![vec![0.0; m]; n];
        let mut d_f = vec![0.0; m];
        for i in 0..n {
            let r = graph.neighbours(i);
            // d value_i / d att_e = msg_e / k ; d value_i / d msg_e = att_e / k
            let d_att: Vec<f64> = r.clone().map(|e| d_node * tr.msg[e] / k).collect();
            let mean_d_att: f64 = r.clone().zip(&d_att).map(|(e, d)| tr.att[e] * d).sum();
            for (slot, e) in r.enumerate() {
                let d_score = tr.att[e] * (d_att[slot] - mean_d_att);
                let d_msg = d_node * tr.att[e] / k;
                grad[lay.b_msg] += d_msg;
                for c in 0..m {
                    let a = tr.act[e][c];
                    grad[lay.attn + c] += d_score * a;
                    grad[lay.w_msg + c] += d_msg * a;
                    let d_a = d_score * p[lay.attn + c] + d_msg * p[lay.w_msg + c];
                    d_f[c] = d_a * leaky_relu_grad(tr.pre[e][c]);
                }
                let input = &tr.edge_in[e];
                let edge = graph.edges[e];
                for o in 0..m {
                    let g = d_f[o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[lay.b_edge + o] += g;
                    let base = lay.w_edge + o * n_in;
                    for (c, v) in input.iter().enumerate() {
                        grad[base + c] += g * v;
                    }
                    for c in 0..m {
                        let dx = g * p[base + n_basis + c];
                        d_proj[edge.i][c] += dx;
                        d_proj[edge.j][c] += dx;
                    }
                }
            }
        }
        for (node, dp) in d_proj.iter().enumerate() {
            let x = &graph.node_features[node];
            for o in 0..m {
                grad[lay.b_node + o] += dp[o];
                let base = lay.w_node + o * h;
                for (c, v) in x.iter().enumerate() {
                    grad[base + c] += dp[o] * v;
                }
            }
        }
    }

    /// Property prediction in label units.
    pub fn predict(&self, graph: &MaterialGraph) -> Result<f64> {
        self.check_graph(graph)?;
        Ok(self.y_mean + self.y_scale * self.forward(graph).out)
    }

    pub fn predict_structure(&self, structure: &CrystalStructure) -> Result<f64> {
        self.predict(&featurize(structure, self.shape.graph)?)
    }

    /// Attention weight of every edge, in `graph.edges` order.
    pub fn attention(&self, graph: &MaterialGraph) -> Result<Vec<f64>> {
        self.check_graph(graph)?;
        Ok(self.forward(graph).att)
    }

    /// Mean squared error in normalised label units over `graphs`, and its
    /// gradient with respect to the flat parameter vector.
    pub fn loss_and_gradient(&self, graphs: &[&MaterialGraph], labels: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let b = graphs.len() as f64;
        for (g, &y) in graphs.iter().zip(labels) {
            let tr = self.forward(g);
            let r = tr.out - (y - self.y_mean) / self.y_scale;
            loss += r * r / b;
            self.backward(g, &tr, 2.0 * r / b, &mut grad);
        }
        (loss, grad)
    }

    pub fn loss(&self, graphs: &[&MaterialGraph], labels: &[f64]) -> f64 {
        let b = graphs.len() as f64;
        graphs
            .iter()
            .zip(labels)
            .map(|(g, &y)| {
                let r = self.forward(g).out - (y - self.y_mean) / self.y_scale;
                r * r / b
            })
            .sum()
    }

    pub fn mae(&self, graphs: &[MaterialGraph], labels: &[f64]) -> f64 {
        let total: f64 =
            graphs.iter().zip(labels).map(|(g, &y)| (self.y_mean + self.y_scale * self.forward(g).out - y).abs()).sum();
        total / graphs.len() as f64
    }

    /// Plain minibatch SGD with gradient clipping over `epochs` passes.
    fn sgd(&mut self, graphs: &[MaterialGraph], labels: &[f64], cfg: &TrainConfig, epochs: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch) {
                let batch: Vec<&MaterialGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
                let ys: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
                let (loss, mut grad) = self.loss_and_gradient(&batch, &ys);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::TrainingDiverged { epoch });
                }
                clip_norm(&mut grad, cfg.clip_norm);
                for (p, g) in self.params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
            if self.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
        }
        Ok(())
    }
}

/// Digest identifying a labelled dataset.
pub fn dataset_digest(dataset: &[(CrystalStructure, f64)]) -> String {
    let mut hasher = Sha256::new();
    for (s, y) in dataset {
        hasher.update(structure_hash(s, 1e-6).as_bytes());
        hasher.update(y.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

pub fn featurize_all(structures: &[&CrystalStructure], params: GraphParams) -> Result<Vec<MaterialGraph>> {
    structures.iter().map(|s| featurize(s, params)).collect()
}

pub fn train(dataset: &[(CrystalStructure, f64)], cfg: &TrainConfig) -> Result<SurrogateModel> {
    let graphs = featurize_all(&dataset.iter().map(|(s, _)| s).collect::<Vec<_>>(), cfg.graph)?;
    let labels: Vec<f64> = dataset.iter().map(|(_, y)| *y).collect();
    train_graphs(&graphs, &labels, cfg, dataset_digest(dataset))
}

/// Trains on pre-featurised graphs; `digest` is recorded as provenance.
pub fn train_graphs(
    graphs: &[MaterialGraph],
    labels: &[f64],
    cfg: &TrainConfig,
    digest: String,
) -> Result<SurrogateModel> {
    cfg.validate()?;
    if graphs.len() < 2 || graphs.len() != labels.len() {
        return Err(Error::usage("training needs at least two labelled structures"));
    }
    if labels.iter().any(|y| !y.is_finite()) {
        return Err(Error::usage("training labels must be finite"));
    }
    let n = labels.len() as f64;
    let y_mean = labels.iter().sum::<f64>() / n;
    let std = (labels.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let shape = ModelShape { h: KHOT_WIDTH, m: cfg.hidden, graph: cfg.graph };
    let mut model = SurrogateModel::init(shape, cfg.seed, y_mean, std);
    for g in graphs {
        model.check_graph(g)?;
    }
    if std > 1e-12 {
        model.sgd(graphs, labels, cfg, cfg.epochs)?;
    } else {
        // constant labels: the mean already fits exactly
        model.y_scale = 0.0;
    }
    model.meta.epochs = cfg.epochs;
    model.meta.dataset_digest = digest;
    model.meta.train_mae = model.mae(graphs, labels);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig { epochs: 30, learning_rate: 0.02, batch: 8, seed: 0, clip_norm: DEFAULT_CLIP_NORM }
    }
}

/// Continues training from the current weights on `buffer ∪ replay`. The
/// label normalisation of the original fit is kept.
pub fn fine_tune(
    model: &SurrogateModel,
    buffer: &[(CrystalStructure, f64)],
    replay: &[(CrystalStructure, f64)],
    cfg: &FineTuneConfig,
) -> Result<SurrogateModel> {
    if buffer.is_empty() {
        return Err(Error::usage("fine-tuning needs a non-empty buffer"));
    }
    let data: Vec<(CrystalStructure, f64)> = buffer.iter().chain(replay).cloned().collect();
    if data.iter().any(|(_, y)| !y.is_finite()) {
        return Err(Error::usage("fine-tuning labels must be finite"));
    }
    let graphs = featurize_all(&data.iter().map(|(s, _)| s).collect::<Vec<_>>(), model.shape.graph)?;
    let labels: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
    let mut tuned = model.clone();
    if tuned.y_scale == 0.0 {
        // give the head a usable scale without moving current predictions
        let lay = tuned.shape.layout();
        tuned.params[lay.w_out] = 0.0;
        tuned.params[lay.b_out] = 0.0;
        tuned.y_scale = 1.0;
    }
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch: cfg.batch.max(1),
        seed: cfg.seed,
        hidden: model.shape.m,
        graph: model.shape.graph,
        clip_norm: cfg.clip_norm,
    };
    tuned.sgd(&graphs, &labels, &train_cfg, cfg.epochs)?;
    tuned.meta.epochs += cfg.epochs;
    tuned.meta.fine_tune_generation += 1;
    Ok(tuned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{ElementId, Lattice};

    fn el(s: &str) -> ElementId {
        ElementId::from_symbol(s).unwrap()
    }

    fn sample() -> CrystalStructure {
        CrystalStructure::new(
            Lattice::new([[4.1, 0.0, 0.0], [0.4, 3.9, 0.0], [0.2, 0.3, 4.4]]).unwrap(),
            vec![el("Fe"), el("O"), el("O")],
            vec![[0.1, 0.2, 0.3], [0.6, 0.5, 0.1], [0.3, 0.9, 0.7]],
        )
        .unwrap()
    }

    fn shape(k: usize) -> ModelShape {
        ModelShape { h: KHOT_WIDTH, m: 4, graph: GraphParams { k, n_basis: 6, r_max: 8.0 } }
    }

    fn randomised(shape: ModelShape, seed: u64) -> SurrogateModel {
        let mut m = SurrogateModel::init(shape, seed, 0.3, 2.0);
        let lay = shape.layout();
        m.params[lay.w_out] = 0.7;
        m.params[lay.b_out] = -0.1;
        m
    }

    #[test]
    fn singleton_neighbourhood_has_unit_attention() {
        let m = randomised(shape(1), 1);
        let g = featurize(&sample(), m.shape.graph).unwrap();
        assert!(m.attention(&g).unwrap().iter().all(|&a| (a - 1.0).abs() < 1e-15));
    }

    #[test]
    fn identical_edges_share_attention() {
        // a single atom in a cubic cell: the six nearest images are equivalent
        let s = CrystalStructure::new(Lattice::cubic(3.0).unwrap(), vec![el("Cu")], vec![[0.0; 3]]).unwrap();
        let m = randomised(ModelShape { graph: GraphParams { k: 2, n_basis: 6, r_max: 4.0 }, ..shape(2) }, 2);
        let g = featurize(&s, m.shape.graph).unwrap();
        let att = m.attention(&g).unwrap();
        assert!((att[0] - 0.5).abs() < 1e-15 && (att[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = randomised(shape(3), 5);
        let g1 = featurize(&sample(), m.shape.graph).unwrap();
        let g2 = featurize(
            &sample()
                .translated([0.2, 0.0, 0.1])
                .with_frac_coords(vec![[0.0; 3], [0.5, 0.5, 0.5], [0.2, 0.7, 0.4]])
                .unwrap(),
            m.shape.graph,
        )
        .unwrap();
        let graphs = [&g1, &g2];
        let labels = [1.2, -0.4];
        let (_, grad) = m.loss_and_gradient(&graphs, &labels);
        let h = 1e-6;
        for (idx, &analytic) in grad.iter().enumerate() {
            let mut plus = m.clone();
            plus.params[idx] += h;
            let mut minus = m.clone();
            minus.params[idx] -= h;
            let fd = (plus.loss(&graphs, &labels) - minus.loss(&graphs, &labels)) / (2.0 * h);
            let scale = fd.abs().max(analytic.abs()).max(1e-4);
            assert!((fd - analytic).abs() / scale < 1e-5, "param {idx}: fd {fd} vs analytic {analytic}");
        }
    }

    #[test]
    fn shape_mismatch_is_a_usage_error() {
        let m = randomised(shape(3), 5);
        let g = featurize(&sample(), GraphParams { k: 2, n_basis: 6, r_max: 8.0 }).unwrap();
        assert!(matches!(m.predict(&g), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_epoch_fine_tune_keeps_weights() {
        let m = randomised(shape(3), 9);
        let cfg = FineTuneConfig { epochs: 0, ..Default::default() };
        let tuned = fine_tune(&m, &[(sample(), 0.5)], &[], &cfg).unwrap();
        assert_eq!(tuned.params, m.params);
        assert_eq!(tuned.meta.fine_tune_generation, 1);
        assert!(fine_tune(&m, &[], &[], &cfg).is_err());
    }
}
