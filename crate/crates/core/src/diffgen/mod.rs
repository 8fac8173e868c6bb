//! DDPM structure generator: cosine schedule, forward/reverse steps, a
//! padded-tensor denoiser and batch sampling in ab-initio or CSP mode.
//!
//! Lattice and fractional-coordinate channels use the same plain Gaussian
//! equations as the species channel; coordinates are wrapped every step and
//! lattices are repaired after decoding.

mod denoiser;
mod sampler;
mod schedule;

pub use denoiser::{
    combine_losses, decode, diffusion_loss, encode, gaussian_like, noise_mse, repair_lattice, time_embedding,
    train_denoiser, wrap_signed, ChannelLosses, DenoiserConfig, DenoiserMeta, DenoiserModel, DiffusionLoss,
    DiffusionMode, EncodedState, LossWeights, NoisePrediction, SizeDistribution, SizePolicy, TrainedDenoiser,
    LATTICE_SCALE, MAX_ROW_NORM, MIN_ROW_NORM, SPECIES_WIDTH, TIME_EMBED_DIM,
};
pub use sampler::{
    item_rng, sample, sample_with_policy, DiffusionGenerator, GenerationBatch, Generator, MemorizingGenerator,
    SampleMode,
};
pub use schedule::{cosine_schedule, forward_diffuse, reverse_step, NoiseSchedule, DEFAULT_COSINE_OFFSET};
