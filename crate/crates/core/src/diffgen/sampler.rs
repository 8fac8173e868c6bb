//! Reverse-chain sampling and the generator abstraction used by workflows.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::denoiser::{
    decode, wrap_signed, DenoiserModel, EncodedState, SizeDistribution, SizePolicy, LATTICE_SCALE, MAX_ROW_NORM,
    SPECIES_WIDTH,
};
use super::schedule::{reverse_step, NoiseSchedule};
use crate::error::{Error, Result};
use crate::matcore::{Composition, CrystalStructure, ElementId};
use crate::toy::random_structure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    AbInitio,
    Csp(Composition),
}

/// Outcome of a batch: item `i` of `items` came from per-item seed `(seed, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationBatch {
    pub items: Vec<Result<CrystalStructure, String>>,
}

impl GenerationBatch {
    pub fn structures(&self) -> Vec<CrystalStructure> {
        self.items.iter().filter_map(|r| r.as_ref().ok().cloned()).collect()
    }

    pub fn failures(&self) -> usize {
        self.items.iter().filter(|r| r.is_err()).count()
    }
}

/// Independent RNG for item `index` of a batch seeded with `seed`.
pub fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// A proposal engine: produces `count` candidate structures for a batch.
pub trait Generator: Send + Sync {
    fn generate(&self, mode: &SampleMode, count: usize, seed: u64, batch_index: usize) -> GenerationBatch;
}

fn species_one_hot(species: &[ElementId], max_n: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_n * SPECIES_WIDTH];
    for (i, el) in species.iter().enumerate() {
        out[i * SPECIES_WIDTH + el.index()] = 1.0;
    }
    out
}

/// Bounds of the implied clean state `x̂₀` per channel during sampling.
const LATTICE_X0_BOUND: f64 = MAX_ROW_NORM / LATTICE_SCALE;
const COORD_X0_BOUND: f64 = 1.0;
const SPECIES_X0_BOUND: f64 = 1.5;

/// Rewrites `eps` so that the implied `x̂₀ = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`
/// lies in `[-bound, bound]`. Near `t = T` the reverse step divides by a
/// tiny `√α_t`, so an unclipped noise estimate can throw the chain far out
/// of the data range.
fn clip_noise(x_t: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule, bound: f64) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.iter()
        .zip(eps)
        .map(|(x, e)| {
            let x0 = ((x - sb * e) / sa).clamp(-bound, bound);
            (x - sa * x0) / sb
        })
        .collect()
}

/// Runs the full reverse chain for one item.
fn sample_one(
    model: &DenoiserModel,
    mode: &SampleMode,
    policy: SizePolicy,
    batch_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CrystalStructure> {
    let max_n = model.max_n;
    let (n, fixed): (usize, Option<Vec<ElementId>>) = match mode {
        SampleMode::AbInitio => (policy.choose(&model.sizes, batch_index, rng), None),
        SampleMode::Csp(comp) => {
            let sp = comp.to_species();
            if sp.len() > max_n {
                return Err(Error::usage(format!("{comp} has more than max_n = {max_n} atoms")));
            }
            (sp.len(), Some(sp))
        }
    };
    let mask: Vec<bool> = (0..max_n).map(|i| i < n).collect();
    let mut normal = |len: usize, per_atom: usize| -> Vec<f64> {
        (0..len).map(|k| if k / per_atom < n { rng.sample(StandardNormal) } else { 0.0 }).collect()
    };
    let species = match &fixed {
        Some(sp) => species_one_hot(sp, max_n),
        None => normal(max_n * SPECIES_WIDTH, SPECIES_WIDTH),
    };
    let lattice = normal(9, 9);
    let coords: Vec<f64> = normal(max_n * 3, 3).into_iter().map(wrap_signed).collect();
    let mut state = EncodedState { species, lattice, coords, mask };

    for t in (1..=model.schedule.steps()).rev() {
        let eps = model.predict_noise(&state, t);
        let sched = &model.schedule;
        let z_l = normal(9, 9);
        let z_f = normal(max_n * 3, 3);
        let eps_l = clip_noise(&state.lattice, &eps.lattice, t, sched, LATTICE_X0_BOUND);
        state.lattice = reverse_step(&state.lattice, t, &eps_l, sched, &z_l)?;
        let eps_f = clip_noise(&state.coords, &eps.coords, t, sched, COORD_X0_BOUND);
        let coords = reverse_step(&state.coords, t, &eps_f, sched, &z_f)?;
        state.coords =
            coords.into_iter().enumerate().map(|(k, v)| if k / 3 < n { wrap_signed(v) } else { 0.0 }).collect();
        if fixed.is_none() {
            let z_a = normal(max_n * SPECIES_WIDTH, SPECIES_WIDTH);
            let eps_a = clip_noise(&state.species, &eps.species, t, sched, SPECIES_X0_BOUND);
            let species = reverse_step(&state.species, t, &eps_a, sched, &z_a)?;
            state.species =
                species.into_iter().enumerate().map(|(k, v)| if k / SPECIES_WIDTH < n { v } else { 0.0 }).collect();
        }
    }
    decode(&state, fixed.as_deref())
}

/// Draws `count` structures; item `i` uses its own RNG stream derived from
/// `(seed, i)`, so the output is independent of thread scheduling.
pub fn sample(model: &DenoiserModel, mode: &SampleMode, count: usize, seed: u64) -> GenerationBatch {
    sample_with_policy(model, mode, count, seed, SizePolicy::Empirical, 0)
}

pub fn sample_with_policy(
    model: &DenoiserModel,
    mode: &SampleMode,
    count: usize,
    seed: u64,
    policy: SizePolicy,
    batch_index: usize,
) -> GenerationBatch {
    let items = (0..count)
        .into_par_iter()
        .map(|i| sample_one(model, mode, policy, batch_index, &mut item_rng(seed, i)).map_err(|e| e.to_string()))
        .collect();
    GenerationBatch { items }
}

/// Diffusion-backed [`Generator`].
#[derive(Debug, Clone)]
pub struct DiffusionGenerator {
    pub model: DenoiserModel,
    pub policy: SizePolicy,
}

impl Generator for DiffusionGenerator {
    fn generate(&self, mode: &SampleMode, count: usize, seed: u64, batch_index: usize) -> GenerationBatch {
        sample_with_policy(&self.model, mode, count, seed, self.policy, batch_index)
    }
}

/// Degenerate generator that returns verbatim corpus entries. When the
/// chosen size (or requested composition) has no corpus entry it emits a
/// random cell with arbitrary species instead.
#[derive(Debug, Clone)]
pub struct MemorizingGenerator {
    pub corpus: Vec<CrystalStructure>,
    pub sizes: SizeDistribution,
    pub policy: SizePolicy,
}

impl MemorizingGenerator {
    pub fn new(corpus: Vec<CrystalStructure>, max_n: usize, policy: SizePolicy) -> Result<Self> {
        let sizes = SizeDistribution::from_corpus(&corpus, max_n)?;
        Ok(MemorizingGenerator { corpus, sizes, policy })
    }

    fn one(&self, mode: &SampleMode, batch_index: usize, rng: &mut ChaCha8Rng) -> Result<CrystalStructure> {
        match mode {
            SampleMode::AbInitio => {
                let n = self.policy.choose(&self.sizes, batch_index, rng);
                let pool: Vec<&CrystalStructure> = self.corpus.iter().filter(|s| s.num_atoms() == n).collect();
                match pool.choose(rng) {
                    Some(s) => Ok((*s).clone()),
                    None => {
                        let species: Vec<ElementId> = (0..n)
                            .map(|_| ElementId::from_index(rng.random_range(0..SPECIES_WIDTH)))
                            .collect::<Result<_>>()?;
                        random_structure(rng, &Composition::from_species(&species))
                    }
                }
            }
            SampleMode::Csp(comp) => {
                let pool: Vec<&CrystalStructure> = self.corpus.iter().filter(|s| &s.composition() == comp).collect();
                match pool.choose(rng) {
                    Some(s) => Ok((*s).clone()),
                    None => random_structure(rng, comp),
                }
            }
        }
    }
}

impl Generator for MemorizingGenerator {
    fn generate(&self, mode: &SampleMode, count: usize, seed: u64, batch_index: usize) -> GenerationBatch {
        let items = (0..count)
            .map(|i| self.one(mode, batch_index, &mut item_rng(seed, i)).map_err(|e| e.to_string()))
            .collect();
        GenerationBatch { items }
    }
}
