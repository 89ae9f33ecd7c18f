//! Regression forests built from CART or median trees, with the two
//! complexity knobs studied here: per-tree subsampling (`a_n`) and tree size
//! (`maxnodes` for CART, depth `k_n` for median trees).
//!
//! - [`dataset`]: the eight synthetic benchmark models, splitting, CSV.
//! - [`sampling`]: counter-based random streams, bootstrap and subsampling.
//! - [`cart`] / [`median_tree`]: the two tree growers over [`tree::RegressionTree`].
//! - [`forest`]: ensembles, prediction and empirical L² risk.
//! - [`theory`]: the median-forest risk bound and its derived constants.
//! - [`tuning`]: parameter sweeps and the optimal-parameter rule.
//!
//! Data-parallel loops go through [`exec::Exec`]; results never depend on
//! the worker count.

pub mod cart;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod forest;
pub mod median_tree;
pub mod sampling;
pub mod theory;
pub mod tree;
pub mod tuning;

pub use error::{Error, Result};
pub use exec::Exec;
pub use forest::{train_forest, Forest, ForestConfig, Resample, TreeSpec};
