// `!(x > 0.0)` is used on purpose so that NaN is rejected along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod competing;
pub mod cox;
pub mod curves;
pub mod datamodel;
pub mod discretemodels;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod nonparam;
pub mod parametric;
pub mod registry;
pub mod simulate;
pub mod soden;
pub mod stacking;

pub use error::{Result, SurvError};
