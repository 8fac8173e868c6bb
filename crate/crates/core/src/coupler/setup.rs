//! Builds the model-backed tools of a coordinate run on the toy oracle:
//! an ensemble trained on a labelled corpus, a variance threshold
//! calibrated on a validation split, and a match discriminator trained on
//! perturbed copies of reference cells of the query composition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gate::{calibrate_tau, Calibration};
use super::sub_seed;
use super::tools::EnsembleModel;
use crate::error::{Error, Result};
use crate::matcore::{Composition, CrystalStructure, PropertyKind};
use crate::oracle::{evaluate, OracleConfig};
use crate::screen::{label_matches, train_md, MatchDiscriminator, MdConfig};
use crate::surrogate::{train_ensemble, FineTuneConfig, TrainConfig};
use crate::toy::{random_centrosymmetric, random_centrosymmetric_corpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinateSetup {
    pub corpus_size: usize,
    pub max_atoms: usize,
    /// Reference cells of the query composition added to the corpus.
    pub references: usize,
    pub ensemble_size: usize,
    pub validation_fraction: f64,
    /// Error bound (eV/atom) the variance threshold is calibrated to;
    /// `None` keeps the query's τ_pred.
    pub error_bound: Option<f64>,
    /// Perturbed copies per reference cell for discriminator training.
    pub md_samples_per_reference: usize,
    /// Cartesian displacement scales (Å) of the near and far copies.
    pub md_displacements: [f64; 2],
    pub train: TrainConfig,
    pub fine_tune: FineTuneConfig,
    pub md: MdConfig,
}

impl Default for CoordinateSetup {
    fn default() -> Self {
        CoordinateSetup {
            corpus_size: 200,
            max_atoms: 8,
            references: 6,
            ensemble_size: 5,
            validation_fraction: 0.25,
            error_bound: Some(0.12),
            md_samples_per_reference: 20,
            md_displacements: [0.05, 0.6],
            train: TrainConfig::default(),
            fine_tune: FineTuneConfig::default(),
            md: MdConfig::default(),
        }
    }
}

impl CoordinateSetup {
    pub fn validate(&self) -> Result<()> {
        if self.corpus_size < 4 || self.references == 0 || self.ensemble_size == 0 || self.md_samples_per_reference < 2
        {
            return Err(Error::Config("coordinate setup sizes are too small".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if self.error_bound.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("error_bound must be positive".into()));
        }
        if !self.md_displacements.iter().all(|d| *d >= 0.0) {
            return Err(Error::Config("md_displacements must be non-negative".into()));
        }
        self.train.validate()
    }
}

/// Everything a coordinate run needs besides the generator and oracle.
#[derive(Debug, Clone)]
pub struct CoordinateModels {
    /// Labelled corpus including the reference cells; usable as a
    /// memorizing generator's training set.
    pub corpus: Vec<CrystalStructure>,
    pub model: EnsembleModel,
    pub discriminator: MatchDiscriminator,
    pub calibration: Option<Calibration>,
}

/// Gaussian Cartesian displacement of every atom with standard deviation
/// `sigma` Å.
pub fn displace<R: Rng + ?Sized>(s: &CrystalStructure, sigma: f64, rng: &mut R) -> Result<CrystalStructure> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::usage(e.to_string()))?;
    let lattice = s.lattice();
    let coords = s
        .frac_coords()
        .iter()
        .map(|f| {
            let mut cart = lattice.to_cartesian(*f);
            for k in 0..3 {
                cart[k] += normal.sample(rng);
            }
            lattice.to_fractional(&cart)
        })
        .collect();
    s.with_frac_coords(coords)
}

pub fn build_coordinate_models(
    composition: &Composition,
    kind: PropertyKind,
    setup: &CoordinateSetup,
    oracle: &OracleConfig,
    seed: u64,
) -> Result<CoordinateModels> {
    setup.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 101));
    let random = random_centrosymmetric_corpus(&mut rng, setup.corpus_size, setup.max_atoms)?;
    let references: Vec<CrystalStructure> =
        (0..setup.references).map(|_| random_centrosymmetric(&mut rng, composition)).collect::<Result<_>>()?;

    let label = |s: &CrystalStructure| Ok((s.clone(), evaluate(s, kind, oracle)?.value));
    // validation is the tail of the random corpus; references always train
    let n_val = ((random.len() as f64 * setup.validation_fraction).round() as usize).clamp(1, random.len() - 1);
    let (fit, held) = random.split_at(random.len() - n_val);
    let train: Vec<(CrystalStructure, f64)> = fit.iter().chain(&references).map(label).collect::<Result<_>>()?;
    let validation: Vec<(CrystalStructure, f64)> = held.iter().map(label).collect::<Result<_>>()?;
    let mut corpus = random;
    corpus.extend(references.iter().cloned());
    let ensemble =
        train_ensemble(&train, &TrainConfig { seed: sub_seed(seed, 102), ..setup.train.clone() }, setup.ensemble_size)?;

    let calibration = match setup.error_bound {
        Some(bound) => {
            let (variances, errors): (Vec<f64>, Vec<f64>) = validation
                .iter()
                .map(|(s, y)| ensemble.confidence_structure(s).map(|c| (c.variance, (c.mean - y).abs())))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            Some(calibrate_tau(&variances, &errors, bound)?)
        }
        None => None,
    };

    let mut md_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 103));
    let mut labelled_md = Vec::new();
    for reference in &references {
        let copies: Vec<CrystalStructure> = (0..setup.md_samples_per_reference)
            .map(|k| displace(reference, setup.md_displacements[k % 2], &mut md_rng))
            .collect::<Result<_>>()?;
        let labels = label_matches(&copies, reference, setup.md.match_threshold)?;
        labelled_md.extend(copies.into_iter().zip(labels));
    }
    let discriminator = train_md(&labelled_md, &MdConfig { seed: sub_seed(seed, 104), ..setup.md })?;

    Ok(CoordinateModels {
        corpus,
        model: EnsembleModel {
            ensemble,
            replay: train,
            fine_tune: FineTuneConfig { seed: sub_seed(seed, 105), ..setup.fine_tune.clone() },
        },
        discriminator,
        calibration,
    })
}
