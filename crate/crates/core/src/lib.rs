//! Convex training of shallow ReLU networks over wedge-product feature
//! dictionaries, plus closed-form polishing of trained networks.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod dict;
pub mod error;
pub mod ga;
pub mod lasso;
pub mod net;
pub mod polish;
pub mod rng;
pub mod svg;
pub mod trainer;

pub use data::DataMatrix;
pub use error::{Error, Result};
