//! Cross-fitted doubly-robust evaluation of surrogate markers.
//!
//! The crate estimates the proportion of a treatment effect on an outcome
//! that is explained by a (possibly high-dimensional) vector of surrogate
//! markers, `R_S = 1 - Δ_S / Δ`, where `Δ` is the average treatment effect
//! and `Δ_S` the residual effect left once the surrogate distributions are
//! equalized across arms.
//!
//! Both effects are estimated with augmented inverse probability weighting
//! over cross-fitted nuisance functions, and inference comes from the
//! influence values of the two estimators (delta method) or from
//! multiplier perturbation resampling.
//!
//! Modules:
//! - [`learners`]: regression and classification learners used for the
//!   nuisance functions (lasso, relaxed lasso, ridge, OLS, logistic,
//!   k-NN and a stacking ensemble).
//! - [`crossfit`]: fold planning and out-of-fold nuisance estimation.
//! - [`estimators`]: AIPW point estimates, influence values, variance,
//!   confidence intervals, resampling and the MSE-based PTE.
//! - [`simulation`]: data generating mechanisms, truth oracles and a
//!   replication study runner.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod crossfit;
pub mod error;
pub mod estimators;
pub mod learners;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use crossfit::{cross_fit_nuisances, make_folds, truncate_scores, Dataset, FoldPlan, NuisanceEstimates};
pub use error::{PteError, Result};
pub use estimators::{estimate_pte, EstimatorConfig, PteEstimate};
pub use learners::{DesignMatrix, Family, FittedModel, LearnerSpec};
