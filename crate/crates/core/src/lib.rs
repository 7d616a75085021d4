//! A from-scratch convolutional network engine for binary MRI tumor
//! classification: preprocessing, a five-stage CNN with selectable hidden
//! topologies, focal-loss training with Adam, k-fold cross-validation and
//! the usual classification metrics.
//!
//! Numbers are generic over [`Real`]: `f32` for training, `f64` for
//! gradient checks.

pub mod arch;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod tensor;
pub mod train;

pub use arch::{build_model, hidden_sizes, Hidden, HiddenArch, Model, ModelSpec};
pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::{Real, Tensor};
pub use train::{evaluate, train_model, EpochLog, Precision, TrainConfig};
