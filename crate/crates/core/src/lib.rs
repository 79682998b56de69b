//! Next-item recommendation with an LSTM intent encoder whose hidden state is
//! projected into soft-prompt vectors that condition a small causal
//! transformer scorer.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod optim;
pub mod prompt;
pub mod rng;
pub mod scorer;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
