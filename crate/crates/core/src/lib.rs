//! Road-agent trajectory forecasting with horizon and neighbor interaction maps.
//!
//! Pipeline: [`ingest`] raw tracks → [`scene`] ego-centric state spaces →
//! [`model`] hybrid LSTM/ConvNet predictor → [`train`] / [`eval`].
//! [`synthgen`] produces seeded synthetic traffic for tests and benchmarks.

pub mod dataset;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod ingest;
pub mod model;
pub mod scene;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
pub use traphic_tensor as tensor;
