//! Dense networks: parameters, cross-entropy loss, backpropagation and local SGD.

mod dataset;
mod model;
mod train;

pub use dataset::Dataset;
pub use model::{
    accuracy, argmax, gradient, init_params, loss, loss_and_gradient, predict, softmax_rows, Layer, ModelSpec,
    ParamVector, PROB_FLOOR,
};
pub use train::{client_update, sgd_steps, DropoutMode, TrainConfig, Trained};
