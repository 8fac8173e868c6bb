//! Property surrogate: periodic graph featurisation, an invariant attention
//! regressor, training and ensemble confidence.

mod ensemble;
mod graph;
mod model;

pub use ensemble::{mean_variance, member_seed, train_ensemble, Confidence, Ensemble};
pub use graph::{featurize, khot, khot_vector, rbf_expand, Edge, GraphParams, MaterialGraph, KHOT_WIDTH};
pub use model::{
    dataset_digest, featurize_all, fine_tune, train, train_graphs, FineTuneConfig, ModelShape, SurrogateModel,
    TrainConfig, TrainingMeta, DEFAULT_CLIP_NORM,
};
