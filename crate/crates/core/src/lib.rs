//! Component-based surrogate models for 2D indoor airflow.

pub mod aggregator;
mod binio;
pub mod bundle;
pub mod caer;
pub mod container;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod mlp;
pub mod ops;
pub mod optim;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
