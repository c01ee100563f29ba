//! Pairwise affinity and label-reassign losses for refining pseudo-labels.

pub mod affinity;
pub mod bench;
pub mod cli;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod metric;
pub mod model;
pub mod pairs;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, LabelMap, NEUTRAL};
