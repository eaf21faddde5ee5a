//! TabularLIME for regression models, with closed-form expressions for the
//! coefficients the explainer converges to.

// coefficient tables are kept digit-for-digit as published; `!(x > 0.0)` rejects NaN
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod integrals;
pub mod models;
pub mod sampling;
pub mod special;
pub mod surrogate;
pub mod theory;

pub use error::{Error, Result};
pub use models::{BlackBox, Dataset, FnModel, KernelRidgeModel, LinearModel};
pub use sampling::{PerturbationSet, QuantileGrid, SamplingConfig};
pub use surrogate::{explain, Explanation};
