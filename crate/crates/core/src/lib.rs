//! Multi-action motion synthesis with a conditional VAE over recurrent
//! linear-attention transformers.

pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod params;
pub mod preprocess;
pub mod training;
pub mod util;

pub use error::{Error, Result};
