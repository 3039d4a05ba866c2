//! Continuous normalizing flow over domain time.

mod checkpoint;
mod loss;
mod model;
mod solver;
mod train;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_flow, save_flow, CheckpointHeader, CHECKPOINT_MAGIC};
pub use loss::{
    fit_trajectory_line, flow_loss_and_grad, log_likelihood, log_likelihood_batch, penalty_from_states, standard_normal_logpdf,
    trajectory_penalty, LossBatch, RegularizerSample,
};
pub use model::{jacobian_trace, velocity, BlockNorm, FlowModel, FlowShape, MAX_DIM};
pub use solver::{transport, transport_batch, BatchTransport, TransportOptions, TransportResult};
pub use train::{
    train_flow, DomainRecord, EpochRecord, FlowConfig, FlowTrainFailure, TrainHistory, TrainedFlow, DEFAULT_GAMMA,
    DEFAULT_PENALTY_POINTS,
};
