//! Learned measurement-error estimation and the heuristic weighting baselines.

mod features;
mod graph;
mod heuristics;
mod model_file;
mod network;
mod scaler;
mod train;


pub use features::{
    extract_features, initial_clock_bias, initial_state, FeatureVector, AVG_POWER, BIAS, CN0,
    COS_AZIMUTH, ELEVATION, FEATURE_DIM, INITIAL_RESIDUAL, PASSTHROUGH, SIN_AZIMUTH,
};
pub use graph::{build_graph, EpochGraph, GraphBatch, AGGREGATION_FLOOR};
pub use heuristics::{
    elevation_samples, fit_elevation_model, heuristic_weights, ElevationFit, HeuristicMethod,
};
pub use model_file::{Provenance, TrainedModel, MODEL_FORMAT, MODEL_VERSION};
pub use network::{
    batch_loss, loss_l2, BatchNorm, Dense, DenseBlock, Forward, ForwardCache, Gradients, Mode,
    ModelDims, ModelParams, SageLayer, BN_EPS,
};
pub use scaler::{fit_scaler, ScalerParams, STD_FLOOR};
pub use train::{train, train_on, Adam, TrainConfig, TrainOutcome, TrainingSet};
