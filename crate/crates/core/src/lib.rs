//! DESMIL: a multi-interest sequential recommender trained with sample
//! re-weighting that de-correlates the extracted interests.
//!
//! The model extracts several interest vectors from a behavior sequence and
//! is trained with a sample-weighted sampled-softmax loss. After every
//! parameter step the batch's sample weights move to reduce the kernel
//! dependence (HSIC) between interests, so the model leans on interests that
//! predict the next item for their own sake rather than through a
//! correlation that may not survive a distribution shift.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod hsic;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};
pub use model::{Hyperparams, ModelParams};
pub use trainer::{fit, init_state, train_step, Checkpoint, TrainOptions, TrainState};
