//! Recurrent backbone, gradient tape, optimizer and training loop.

pub mod backbone;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

pub use backbone::{Architecture, Backbone, CellKind, RecurrentState};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{NeuralModel, NeuralState};
pub use optim::{adamw_step, AdamWConfig, Moments};
pub use params::{Gradients, ParamId, ParamStore, Tensor};
pub use tape::{NodeId, Tape};
pub use train::{batch_gradients, dataset_nll, sequence_nll, train, EpochMetrics, Example, TrainConfig, TrainOutcome};
