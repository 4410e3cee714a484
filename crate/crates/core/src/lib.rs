//! Parameter-efficient fine-tuning by squared-gradient row/column selection,
//! masked Adam and pull-to-pretrained regularization, at desk scale.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix it to `f64`, which every pipeline and file format uses.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod masking;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod reference;

pub use error::{GrftError, Result};
pub use numeric::{finite_diff_grad, Rng, Scalar};

pub type Matrix = numeric::Matrix<f64>;
pub type Matrix32 = numeric::Matrix<f32>;
pub type ModelParams = model::ModelParams<f64>;
pub type Layer = model::Layer<f64>;
pub type GradientSet = model::GradientSet<f64>;
pub type AdamState = optim::AdamState<f64>;
pub type Dataset = data::Dataset<f64>;
pub type TaskPair = data::TaskPair<f64>;
pub type FineTuneOutcome = harness::FineTuneOutcome<f64>;
