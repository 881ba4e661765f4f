//! Monotonic latent-variable attention for sequence-to-sequence transduction.
//!
//! The crate implements a global soft attention encoder-decoder baseline and
//! three monotonic latent variants — hard attention, local windowed soft
//! attention, and segmental soft attention — where a discrete latent position
//! per output label is trained with the maximum approximation (on-the-fly
//! forced alignment) and searched jointly with the labels at decode time.
//!
//! Start with the `examples/` directory: each major capability has a small
//! runnable example. The `monatt` binary wires the same library calls into a
//! pipeline (`gen-data`, `train`, `align`, `decode`, `eval`, `plot-attention`).

pub mod attention;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nnet;
pub mod plot;
pub mod replay;
pub mod search;
pub mod tape;
pub mod training;
pub mod tensor;

pub use attention::{Monotonicity, Variant, VariantKind};
pub use error::{Error, Result};
pub use nnet::{Model, ModelConfig};
pub use tape::Tape;
pub use tensor::Tensor;
