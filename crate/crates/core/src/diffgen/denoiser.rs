//! Padded tensor encoding of crystals, the noise-prediction network and its
//! training loop.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schedule::{cosine_schedule, forward_diffuse, NoiseSchedule, DEFAULT_COSINE_OFFSET};
use crate::error::{Error, Result};
use crate::matcore::{structure_hash, wrap_unit, CrystalStructure, ElementId, Lattice, NUM_ELEMENTS};
use crate::nn::{clip_norm, silu, silu_grad, Adam, Dense, DenseGrad};

/// Width of the one-hot species channel.
pub const SPECIES_WIDTH: usize = NUM_ELEMENTS;
/// Lattice rows are divided by this before diffusion.
pub const LATTICE_SCALE: f64 = 5.0;
pub const TIME_EMBED_DIM: usize = 16;
/// Row-norm bounds applied when repairing a generated lattice, Å.
pub const MIN_ROW_NORM: f64 = 1.0;
pub const MAX_ROW_NORM: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMode {
    /// Species, lattice and coordinates are all generated.
    AbInitio,
    /// Species are fixed by the caller; only lattice and coordinates move.
    Csp,
}

/// Channel weights `(λ_L, λ_F, λ_A)` of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lattice: f64,
    pub coords: f64,
    pub species: f64,
}

impl LossWeights {
    /// Ab-initio default: the species channel is weighted up.
    pub const AB_INITIO: LossWeights = LossWeights { lattice: 1.0, coords: 1.0, species: 10.0 };
    /// CSP: species are held constant, so their loss carries no weight.
    pub const CSP: LossWeights = LossWeights { lattice: 1.0, coords: 1.0, species: 0.0 };

    pub fn for_mode(mode: DiffusionMode) -> Self {
        match mode {
            DiffusionMode::AbInitio => Self::AB_INITIO,
            DiffusionMode::Csp => Self::CSP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.lattice, self.coords, self.species].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelLosses {
    pub lattice: f64,
    pub coords: f64,
    pub species: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLoss {
    pub per_channel: ChannelLosses,
    pub combined: f64,
}

/// Mean squared error between true and predicted noise over the entries
/// where `mask` is set (all entries when `mask` is `None`).
pub fn noise_mse(eps: &[f64], eps_hat: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if eps.len() != eps_hat.len() || mask.is_some_and(|m| m.len() != eps.len()) {
        return Err(Error::usage("noise tensors differ in shape"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (k, (a, b)) in eps.iter().zip(eps_hat).enumerate() {
        if mask.is_none_or(|m| m[k]) {
            sum += (a - b).powi(2);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// `L_M = λ_L·L_L + λ_F·L_F + λ_A·L_A`.
pub fn combine_losses(per_channel: ChannelLosses, w: LossWeights) -> DiffusionLoss {
    let combined = w.lattice * per_channel.lattice + w.coords * per_channel.coords + w.species * per_channel.species;
    DiffusionLoss { per_channel, combined }
}

/// Species-channel loss combined with externally computed lattice and
/// coordinate losses.
pub fn diffusion_loss(
    eps: &[f64],
    eps_hat: &[f64],
    lattice: f64,
    coords: f64,
    w: LossWeights,
) -> Result<DiffusionLoss> {
    let species = noise_mse(eps, eps_hat, None)?;
    Ok(combine_losses(ChannelLosses { lattice, coords, species }, w))
}

/// Empirical distribution of atoms per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    /// `probs[n]` is the probability of `n` atoms; `probs[0] = 0`.
    probs: Vec<f64>,
}

impl SizeDistribution {
    pub fn from_corpus(corpus: &[CrystalStructure], max_n: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::usage("size distribution of an empty corpus"));
        }
        let mut counts = vec![0usize; max_n + 1];
        for s in corpus {
            let n = s.num_atoms();
            if n > max_n {
                return Err(Error::usage(format!("corpus structure with {n} atoms exceeds max_n = {max_n}")));
            }
            counts[n] += 1;
        }
        let total = corpus.len() as f64;
        Ok(SizeDistribution { probs: counts.iter().map(|&c| c as f64 / total).collect() })
    }

    pub fn point_mass(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        SizeDistribution { probs }
    }

    pub fn probability(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn max_n(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn support(&self) -> Vec<usize> {
        (1..self.probs.len()).filter(|&n| self.probs[n] > 0.0).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (n, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return n;
            }
        }
        self.support().last().copied().unwrap_or(1)
    }
}

/// How the atom count of each generated cell is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizePolicy {
    Empirical,
    UniformRandom,
    /// Empirical for the first `switch_after` batches, uniform afterwards.
    Hybrid {
        switch_after: usize,
    },
}

impl SizePolicy {
    pub fn choose<R: Rng + ?Sized>(&self, dist: &SizeDistribution, batch_index: usize, rng: &mut R) -> usize {
        let uniform = match *self {
            SizePolicy::Empirical => false,
            SizePolicy::UniformRandom => true,
            SizePolicy::Hybrid { switch_after } => batch_index >= switch_after,
        };
        if uniform {
            rng.random_range(1..=dist.max_n())
        } else {
            dist.sample(rng)
        }
    }
}

/// Fixed-size diffusion state: species one-hot (`max_n × h`), scaled
/// lattice (9), coordinates mapped to `[-1, 1)` (`max_n × 3`) and the atom
/// presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedState {
    pub species: Vec<f64>,
    pub lattice: Vec<f64>,
    pub coords: Vec<f64>,
    pub mask: Vec<bool>,
}

impl EncodedState {
    pub fn species_mask(&self) -> Vec<bool> {
        self.mask.iter().flat_map(|&m| std::iter::repeat_n(m, SPECIES_WIDTH)).collect()
    }

    pub fn coord_mask(&self) -> Vec<bool> {
        self.mask.iter().flat_map(|&m| [m, m, m]).collect()
    }
}

pub fn wrap_signed(x: f64) -> f64 {
    2.0 * wrap_unit((x + 1.0) / 2.0) - 1.0
}

pub fn encode(structure: &CrystalStructure, max_n: usize) -> Result<EncodedState> {
    let n = structure.num_atoms();
    if n > max_n {
        return Err(Error::usage(format!("{n} atoms exceeds max_n = {max_n}")));
    }
    let mut species = vec![0.0; max_n * SPECIES_WIDTH];
    let mut coords = vec![0.0; max_n * 3];
    for (i, (el, f)) in structure.species().iter().zip(structure.frac_coords()).enumerate() {
        species[i * SPECIES_WIDTH + el.index()] = 1.0;
        for k in 0..3 {
            coords[i * 3 + k] = 2.0 * f[k] - 1.0;
        }
    }
    let lattice = structure.lattice().rows().iter().flatten().map(|v| v / LATTICE_SCALE).collect();
    let mask = (0..max_n).map(|i| i < n).collect();
    Ok(EncodedState { species, lattice, coords, mask })
}

/// Makes a generated lattice usable: reflects it to a right-handed cell via
/// the SVD (flipping the smallest singular direction) and clamps each row
/// norm into `[1, 20]` Å.
pub fn repair_lattice(rows: [[f64; 3]; 3]) -> Result<Lattice> {
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Generation("non-finite lattice".into()));
    }
    let mut m = Matrix3::from_fn(|r, c| rows[r][c]);
    if m.determinant() <= 0.0 {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let mut sv = svd.singular_values;
        let smallest = sv.imin();
        sv[smallest] = -sv[smallest];
        let mut candidate = u * Matrix3::from_diagonal(&sv) * vt;
        if candidate.determinant() <= 0.0 {
            candidate = -candidate;
        }
        m = candidate;
    }
    for r in 0..3 {
        let norm = m.row(r).norm();
        if norm < 1e-12 {
            return Err(Error::Generation("lattice row collapsed to zero".into()));
        }
        let target = norm.clamp(MIN_ROW_NORM, MAX_ROW_NORM);
        let row = m.row(r) * (target / norm);
        m.set_row(r, &row);
    }
    if m.determinant() <= 1e-6 {
        return Err(Error::Generation("repaired lattice is degenerate".into()));
    }
    Lattice::from_matrix(m).map_err(|e| Error::Generation(e.to_string()))
}

/// Turns a final denoised state into a structure: per-atom argmax over the
/// species logits (or the given species), repaired lattice, wrapped coords.
pub fn decode(state: &EncodedState, fixed_species: Option<&[ElementId]>) -> Result<CrystalStructure> {
    let n = state.mask.iter().filter(|&&m| m).count();
    let species: Vec<ElementId> = match fixed_species {
        Some(sp) => sp.to_vec(),
        None => (0..n)
            .map(|i| {
                let row = &state.species[i * SPECIES_WIDTH..(i + 1) * SPECIES_WIDTH];
                let best = (0..SPECIES_WIDTH).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                ElementId::from_index(best)
            })
            .collect::<Result<_>>()?,
    };
    let rows = std::array::from_fn(|r| std::array::from_fn(|c| state.lattice[r * 3 + c] * LATTICE_SCALE));
    let lattice = repair_lattice(rows)?;
    let coords = (0..n).map(|i| [0, 1, 2].map(|k| (state.coords[i * 3 + k] + 1.0) / 2.0)).collect();
    CrystalStructure::with_max_atoms(lattice, species, coords, usize::MAX)
}

/// Sinusoidal embedding of an integer timestep.
pub fn time_embedding(t: usize) -> [f64; TIME_EMBED_DIM] {
    let mut out = [0.0; TIME_EMBED_DIM];
    let half = TIME_EMBED_DIM / 2;
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        out[i] = (t as f64 * freq).sin();
        out[half + i] = (t as f64 * freq).cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub timesteps: usize,
    pub cosine_offset: f64,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
    pub max_n: usize,
    pub mode: DiffusionMode,
    /// Defaults to the mode's weights when absent.
    pub weights: Option<LossWeights>,
    /// Fixed (structure, t, noise) draws used to report initial/final loss.
    pub eval_draws: usize,
    pub clip_norm: f64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            timesteps: 100,
            cosine_offset: DEFAULT_COSINE_OFFSET,
            epochs: 20,
            batch: 16,
            learning_rate: 1e-3,
            hidden: 64,
            seed: 0,
            max_n: 8,
            mode: DiffusionMode::AbInitio,
            weights: None,
            eval_draws: 64,
            clip_norm: 10.0,
        }
    }
}

impl DenoiserConfig {
    pub fn loss_weights(&self) -> LossWeights {
        self.weights.unwrap_or(LossWeights::for_mode(self.mode))
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 2 {
            return Err(Error::Config("diffgen.timesteps must be at least 2".into()));
        }
        if self.batch == 0 || self.hidden == 0 || self.max_n == 0 {
            return Err(Error::Config("diffgen batch, hidden and max_n must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("diffgen.learning_rate must be positive".into()));
        }
        self.loss_weights().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserMeta {
    pub seed: u64,
    pub epochs: usize,
    pub corpus_digest: String,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Two-hidden-layer SiLU network predicting the noise of every channel from
/// the noisy state, the presence mask and a timestep embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserModel {
    pub max_n: usize,
    pub mode: DiffusionMode,
    pub weights: LossWeights,
    pub schedule: NoiseSchedule,
    pub sizes: SizeDistribution,
    layers: [Dense; 3],
    pub meta: DenoiserMeta,
}

/// Noise predictions split per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrediction {
    pub species: Vec<f64>,
    pub lattice: Vec<f64>,
    pub coords: Vec<f64>,
}

struct NetTrace {
    input: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
}

fn state_width(max_n: usize) -> usize {
    max_n * SPECIES_WIDTH + 9 + max_n * 3
}

impl DenoiserModel {
    fn new(cfg: &DenoiserConfig, schedule: NoiseSchedule, sizes: SizeDistribution, rng: &mut ChaCha8Rng) -> Self {
        let width = state_width(cfg.max_n);
        let input = width + cfg.max_n + TIME_EMBED_DIM;
        let layers = [
            Dense::new(rng, input, cfg.hidden),
            Dense::new(rng, cfg.hidden, cfg.hidden),
            Dense::zeros(cfg.hidden, width),
        ];
        DenoiserModel {
            max_n: cfg.max_n,
            mode: cfg.mode,
            weights: cfg.loss_weights(),
            schedule,
            sizes,
            layers,
            meta: DenoiserMeta {
                seed: cfg.seed,
                epochs: 0,
                corpus_digest: String::new(),
                initial_loss: f64::NAN,
                final_loss: f64::NAN,
            },
        }
    }

    fn forward(&self, state: &EncodedState, t: usize) -> (NetTrace, Vec<f64>) {
        let mut input = Vec::with_capacity(self.layers[0].inputs);
        input.extend(state.species.iter().zip(state.species_mask()).map(|(v, m)| if m { *v } else { 0.0 }));
        input.extend_from_slice(&state.lattice);
        input.extend(state.coords.iter().zip(state.coord_mask()).map(|(v, m)| if m { *v } else { 0.0 }));
        input.extend(state.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        input.extend_from_slice(&time_embedding(t));
        let mut z1 = vec![0.0; self.layers[0].outputs];
        self.layers[0].forward(&input, &mut z1);
        let h1: Vec<f64> = z1.iter().map(|&v| silu(v)).collect();
        let mut z2 = vec![0.0; self.layers[1].outputs];
        self.layers[1].forward(&h1, &mut z2);
        let h2: Vec<f64> = z2.iter().map(|&v| silu(v)).collect();
        let mut out = vec![0.0; self.layers[2].outputs];
        self.layers[2].forward(&h2, &mut out);
        (NetTrace { input, z1, h1, z2, h2 }, out)
    }

    fn split(&self, out: Vec<f64>) -> NoisePrediction {
        let a = self.max_n * SPECIES_WIDTH;
        NoisePrediction { species: out[..a].to_vec(), lattice: out[a..a + 9].to_vec(), coords: out[a + 9..].to_vec() }
    }

    pub fn predict_noise(&self, state: &EncodedState, t: usize) -> NoisePrediction {
        self.split(self.forward(state, t).1)
    }

    /// Per-channel and combined loss of one noised sample; species noise is
    /// only scored when its weight is positive.
    fn sample_loss(&self, x0: &EncodedState, t: usize, noise: &EncodedState) -> Result<(DiffusionLoss, EncodedState)> {
        let xt = self.noised(x0, t, noise)?;
        let pred = self.predict_noise(&xt, t);
        let species = if self.weights.species > 0.0 {
            noise_mse(&noise.species, &pred.species, Some(&x0.species_mask()))?
        } else {
            0.0
        };
        let per_channel = ChannelLosses {
            lattice: noise_mse(&noise.lattice, &pred.lattice, None)?,
            coords: noise_mse(&noise.coords, &pred.coords, Some(&x0.coord_mask()))?,
            species,
        };
        Ok((combine_losses(per_channel, self.weights), xt))
    }

    fn noised(&self, x0: &EncodedState, t: usize, noise: &EncodedState) -> Result<EncodedState> {
        let species = if self.weights.species > 0.0 {
            forward_diffuse(&x0.species, t, &noise.species, &self.schedule)?
        } else {
            x0.species.clone()
        };
        Ok(EncodedState {
            species,
            lattice: forward_diffuse(&x0.lattice, t, &noise.lattice, &self.schedule)?,
            coords: forward_diffuse(&x0.coords, t, &noise.coords, &self.schedule)?,
            mask: x0.mask.clone(),
        })
    }

    /// Accumulates the gradient of the combined loss of one sample.
    fn accumulate(
        &self,
        x0: &EncodedState,
        t: usize,
        noise: &EncodedState,
        scale: f64,
        grads: &mut [DenseGrad; 3],
    ) -> Result<f64> {
        let xt = self.noised(x0, t, noise)?;
        let (tr, out) = self.forward(&xt, t);
        let pred = self.split(out);
        let mut d_out = Vec::with_capacity(self.layers[2].outputs);
        let n = x0.mask.iter().filter(|&&m| m).count() as f64;
        let w = self.weights;
        let species_mask = x0.species_mask();
        for (k, (p, e)) in pred.species.iter().zip(&noise.species).enumerate() {
            let on = w.species > 0.0 && species_mask[k];
            d_out.push(if on { scale * w.species * 2.0 * (p - e) / (n * SPECIES_WIDTH as f64) } else { 0.0 });
        }
        for (p, e) in pred.lattice.iter().zip(&noise.lattice) {
            d_out.push(scale * w.lattice * 2.0 * (p - e) / 9.0);
        }
        let coord_mask = x0.coord_mask();
        for (k, (p, e)) in pred.coords.iter().zip(&noise.coords).enumerate() {
            d_out.push(if coord_mask[k] { scale * w.coords * 2.0 * (p - e) / (n * 3.0) } else { 0.0 });
        }
        let mut d_h2 = vec![0.0; tr.h2.len()];
        let [g0, g1, g2] = grads;
        self.layers[2].backward(&tr.h2, &d_out, g2, Some(&mut d_h2));
        let d_z2: Vec<f64> = d_h2.iter().zip(&tr.z2).map(|(d, z)| d * silu_grad(*z)).collect();
        let mut d_h1 = vec![0.0; tr.h1.len()];
        self.layers[1].backward(&tr.h1, &d_z2, g1, Some(&mut d_h1));
        let d_z1: Vec<f64> = d_h1.iter().zip(&tr.z1).map(|(d, z)| d * silu_grad(*z)).collect();
        self.layers[0].backward(&tr.input, &d_z1, g0, None);

        let species =
            if w.species > 0.0 { noise_mse(&noise.species, &pred.species, Some(&species_mask))? } else { 0.0 };
        let loss = combine_losses(
            ChannelLosses {
                lattice: noise_mse(&noise.lattice, &pred.lattice, None)?,
                coords: noise_mse(&noise.coords, &pred.coords, Some(&coord_mask))?,
                species,
            },
            w,
        );
        Ok(loss.combined)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }
}

/// Gaussian noise with the state's shape; padded atoms get zero noise.
pub fn gaussian_like<R: Rng + ?Sized>(state: &EncodedState, rng: &mut R) -> EncodedState {
    let mut draw = |mask: &[bool]| -> Vec<f64> {
        mask.iter().map(|&m| if m { rng.sample(StandardNormal) } else { 0.0 }).collect()
    };
    let species = draw(&state.species_mask());
    let lattice = draw(&[true; 9]);
    let coords = draw(&state.coord_mask());
    EncodedState { species, lattice, coords, mask: state.mask.clone() }
}

fn corpus_digest(corpus: &[CrystalStructure]) -> String {
    let mut hasher = Sha256::new();
    for s in corpus {
        hasher.update(structure_hash(s, 1e-6).as_bytes());
    }
    hex::encode(hasher.finalize())
}

pub struct TrainedDenoiser {
    pub model: DenoiserModel,
    pub sizes: SizeDistribution,
}

/// Trains the noise predictor with Adam on uniformly drawn timesteps.
pub fn train_denoiser(corpus: &[CrystalStructure], cfg: &DenoiserConfig) -> Result<TrainedDenoiser> {
    cfg.validate()?;
    let sizes = SizeDistribution::from_corpus(corpus, cfg.max_n)?;
    let schedule = cosine_schedule(cfg.timesteps, cfg.cosine_offset)?;
    let encoded: Vec<EncodedState> = corpus.iter().map(|s| encode(s, cfg.max_n)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DenoiserModel::new(cfg, schedule, sizes.clone(), &mut rng);

    let eval: Vec<(usize, usize, EncodedState)> = (0..cfg.eval_draws.max(1))
        .map(|_| {
            let i = rng.random_range(0..encoded.len());
            let t = rng.random_range(1..=cfg.timesteps);
            (i, t, gaussian_like(&encoded[i], &mut rng))
        })
        .collect();
    let eval_loss = |m: &DenoiserModel| -> Result<f64> {
        let mut total = 0.0;
        for (i, t, noise) in &eval {
            total += m.sample_loss(&encoded[*i], *t, noise)?.0.combined;
        }
        Ok(total / eval.len() as f64)
    };
    model.meta.initial_loss = eval_loss(&model)?;

    let mut adam = Adam::new(model.num_params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for epoch in 0..cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for chunk in order.chunks(cfg.batch) {
            let mut grads = model.layers.clone().map(|l| DenseGrad::for_layer(&l));
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let t = rng.random_range(1..=cfg.timesteps);
                let noise = gaussian_like(&encoded[i], &mut rng);
                loss += model.accumulate(&encoded[i], t, &noise, scale, &mut grads)?;
            }
            let mut flat: Vec<f64> = grads.iter().flat_map(|g| g.weight.iter().chain(&g.bias).copied()).collect();
            if !loss.is_finite() || flat.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            clip_norm(&mut flat, cfg.clip_norm);
            let params = model.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()));
            adam.step(params, flat.into_iter());
        }
    }
    model.meta.epochs = cfg.epochs;
    model.meta.corpus_digest = corpus_digest(corpus);
    model.meta.final_loss = eval_loss(&model)?;
    if !model.meta.final_loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: cfg.epochs });
    }
    Ok(TrainedDenoiser { model, sizes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_weighting() {
        let csp = combine_losses(ChannelLosses { lattice: 0.25, coords: 0.5, species: 3.0 }, LossWeights::CSP);
        assert_eq!(csp.combined, 0.75);
        let only_a = LossWeights { lattice: 0.0, coords: 0.0, species: 1.0 };
        assert_eq!(combine_losses(ChannelLosses { lattice: 9.0, coords: 9.0, species: 0.5 }, only_a).combined, 0.5);
        let exact = diffusion_loss(&[0.1, -0.2], &[0.1, -0.2], 0.0, 0.0, LossWeights::AB_INITIO).unwrap();
        assert_eq!(exact.per_channel.species, 0.0);
        const { assert!(LossWeights::AB_INITIO.species > LossWeights::AB_INITIO.lattice) };
    }

    #[test]
    fn repair_flips_left_handed_cells() {
        let l = repair_lattice([[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, -4.0]]).unwrap();
        assert!(l.volume() > 0.0);
        let clamped = repair_lattice([[0.2, 0.0, 0.0], [0.0, 50.0, 0.0], [0.0, 0.0, 3.0]]).unwrap();
        assert_eq!(clamped.lengths(), [1.0, 20.0, 3.0]);
        assert!(repair_lattice([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 3.0]]).is_err());
        assert!(repair_lattice([[f64::NAN; 3]; 3]).is_err());
    }

    #[test]
    fn point_mass_sizes() {
        let d = SizeDistribution::point_mass(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..50).all(|_| d.sample(&mut rng) == 4));
        assert_eq!(d.support(), vec![4]);
    }

    #[test]
    fn signed_wrap() {
        assert_eq!(wrap_signed(1.0), -1.0);
        assert!((wrap_signed(1.25) - -0.75).abs() < 1e-12);
        assert!((wrap_signed(-0.5) - -0.5).abs() < 1e-12);
    }
}
