//! Multivariate time series forecasting with edge-enhanced dynamic graphs.
//!
//! The pipeline: decompose each series of a rolling window into intrinsic
//! mode functions ([`emd`]), assemble per-window dynamic graphs whose edge
//! tensor holds pairwise IMF similarities and whose adjacency thresholds
//! residual-trend correlations ([`graph`]), then train a graph-augmented
//! attention forecaster ([`model`], [`train`]) on the windows. All numerics
//! are 64-bit and run on a reverse-mode tape ([`tape`]).

pub mod data;
pub mod emd;
pub mod error;
pub mod graph;
pub mod graph_io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub mod checkpoint;

pub use error::{Result, TsatError};
pub use tensor::Tensor;
