//! Task losses, the full model with pretraining and fine-tuning, gradient
//! verification and the downstream predictor.

mod config;
mod downstream;
mod gradcheck;
mod losses;
mod model;

pub use crate::data::TaskKind;
pub use config::{DownstreamConfig, TrainConfig};
pub use downstream::{train_downstream, DownstreamData, DownstreamTask, Predictor};
pub use gradcheck::{
    directional_check, full_model_check, gradient_check, gradient_suite, randomize, relative_error,
    GradCheckReport, GRADCHECK_STEP,
};
pub use losses::{
    task_loss_classification, task_loss_regression, total_loss, LossSwitches, PROB_FLOOR,
};
pub use model::streams;
pub use model::{
    complete_series, fine_tune, forward_graph, predict, pretrain, write_loss_trace, x_is_complete,
    BatchTargets, EpochLoss, LossNodes, McDbn, McDbnVars, PreparedData, PretrainReport, TaskHead,
    TaskTargets,
};
