//! Modality encoders, the multi-step latent chain, renderers and training.

mod checkpoint;
mod config;
mod conjugate;
mod episode;
mod gmn;
mod params;
mod train;

pub use checkpoint::{
    config_text, parse_model_config, read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use config::parse as config_parse;
pub use config::{Aggregate, FusionMode, KeyValues, ModelConfig, UniversalExpert};
pub use conjugate::LinearGaussian;
pub use episode::{random_subset, Episode, Part};
pub use gmn::{
    gaussian_ll, query_features, ChainStep, ElboTerms, Encoded, Fused, Gmn, LatentChain, LOG_PRECISION_BOUND,
};
pub use params::{param_count, Cell, Component, Dense, Layout, Mlp, ParamCount, ParameterStore, FEATURE_DIM};
pub use train::{beta_at, scene_subset, TrainConfig, TrainReport, Trainer};
