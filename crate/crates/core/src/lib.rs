//! Estimation of corporate scope 1 and scope 2 greenhouse gas emissions
//! from financial and energy data with gradient-boosted trees.

pub mod cleaning;
pub mod compare;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod matrix;
pub mod par;
pub mod pipeline;
pub mod polish;
pub mod shap;
pub mod splits;
pub mod synth;

pub use error::{Error, Result};
