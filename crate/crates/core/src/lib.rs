//! Conditional joint tuning of a miniature promptable segmenter.
//!
//! The crate is organized bottom-up: [`tape`] is a reverse-mode autodiff
//! engine over `f64` tensors, [`signal`] holds the FFT used for high-frequency
//! visual prompts, [`model`] is the frozen segmenter, [`tuning`] holds the
//! parameter-efficient tuning pieces, and [`train`] ties them together with
//! synthetic data from [`data`].

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod network;
pub mod optim;
pub mod param;
pub mod prompt;
pub mod signal;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod tuning;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
