//! Regression-forest toolkit centred on variable importance.
//!
//! The crate grows CART regression trees (with surrogate splits and
//! cost-complexity pruning) and random forests, and ranks features with five
//! importance estimators:
//!
//! * `cart` — deviance-based CART importance with surrogate credit,
//! * `forest` — permutation importance (mean decrease accuracy) from
//!   out-of-bag errors,
//! * `condvi` — conditional permutation importance within a grid over
//!   correlated covariates,
//! * `projected` — Sobol-MDA via projected forests,
//! * `gsa` — Sobol' first/total-order indices (Jansen estimators) and the
//!   subset-space total-index importance computed from forest fit quality.
//!
//! `sim` generates the three structural-equation benchmarks and drives Monte
//! Carlo comparisons; `cli` exposes everything as the `forestvi` binary.

pub mod cart;
pub mod cli;
pub mod condvi;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod gsa;
pub mod projected;
pub mod sim;

pub use dataset::{make_folds, standard_normal, Dataset, FoldAssignment, RngSeed};
pub use error::{Error, Result};
