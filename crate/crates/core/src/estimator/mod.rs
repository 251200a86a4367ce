//! Individual direct effect estimation under heterogeneous peer influence.
//!
//! Node and edge attributes are embedded by an own-attribute MLP, a peer
//! graph convolution and an edge convolution. Peer treatments are summarised
//! as weighted fractions under several candidate weightings. Both embeddings
//! feed a shared batch-normalised layer and two outcome heads, one per
//! treatment arm.

mod config;
mod model;
mod train;

pub use config::{TrainConfig, Variant};
pub use model::{standardize, Forward, GraphInputs, Group, Mode, NamedTensor, Network};
pub use train::{
    fit, loss_and_gradients, predict, smoothed_loss, stratified_split, train, train_homogeneous, train_no_interference,
    train_variant, CandidateReport, EstimatorModel, History, IdeEstimate, Split,
};
