//! Fitting a field to multi-view Stokes measurements, and scoring the
//! result.

mod loss;
mod metrics;
mod optim;
mod train;

pub use loss::{
    compute_loss_weights, element_std, ray_weight_variance, stokes_loss, stokes_loss_terms,
    weight_variance_regularizer, LossWeights,
};
pub use metrics::{
    evaluate, evaluate_cubes, psnr, ChannelMetric, ErrorMap, Metrics, RenderedView, Score,
    PSNR_CAP_DB,
};
pub use optim::{Adam, AdamConfig};
pub use train::{
    objective_and_gradient, trace_to_csv, train, LossWeighting, Objective, ObjectiveConfig,
    RayBatch, TraceRow, TrainConfig, TrainOutcome,
};
