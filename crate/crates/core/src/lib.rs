//! Variance-based sensitivity analysis for models with scalar and
//! functional random inputs.
//!
//! The crate offers pick-freeze Monte-Carlo estimators of Sobol' indices and
//! a joint mean/dispersion metamodel route, built on GLM and GAM fitting.

pub mod data;
pub mod design;
pub mod estimators;
pub mod formula;
pub mod gam;
pub mod glm;
pub mod joint;
pub mod metamodel;
pub mod model;
pub mod report;
pub mod sampling;
pub mod stats;
