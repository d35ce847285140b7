//! Minimal double-precision neural-network engine: dense and LSTM layers,
//! inverted dropout, exact gradients (including BPTT) and an adaptive-moment
//! optimizer.

pub mod dense;
pub mod dropout;
pub mod lstm;
mod math;
pub mod mlp;
pub mod optim;
pub mod params;
pub mod rng;
pub mod train;

pub use dense::{Activation, DenseLayer};
pub use dropout::{sample_mask, DropoutMask};
pub use lstm::LstmLayer;
pub use mlp::DenseStack;
pub use optim::{AdamConfig, OptimizerState};
pub use params::{Gradients, Parameterized};
pub use rng::SeededRng;
pub use train::{TrainConfig, TrainingReport};
