//! Proximal synthetic control: outcome-bridge, weighting and doubly robust
//! GMM estimators of the treatment effect on a single treated unit, with
//! HAC sandwich inference and a Monte Carlo harness.

pub mod bridges;
pub mod cli;
pub mod dgp;
pub mod error;
pub mod gmm;
pub mod mc;
pub mod moments;
pub mod normal;
pub mod panel;
pub mod rng;

pub use error::{Error, Result};
pub use gmm::{fit, GmmFit, GmmOptions, WeightMatrix};
pub use moments::{ImportanceWeights, Method, MomentSpec};
pub use panel::PanelData;
