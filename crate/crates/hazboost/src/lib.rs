//! Gradient-boosted nonparametric hazard estimation for survival data.
//!
//! The estimator works on counting-process data: each subject contributes a
//! sequence of epochs `(t_start, t_end]` during which its covariates are
//! constant and it is at risk, and an event indicator for whether the epoch
//! ends in an event. Gaps between epochs (the subject temporarily leaving the
//! risk set) and repeated events per subject are both allowed, so the same
//! pipeline covers plain right-censored survival data, time-dependent
//! covariates, and recurring events.
//!
//! The fitting pipeline has three stages:
//!
//! 1. [`quantiles`] builds a per-axis grid of split candidates (raw or
//!    exposure-weighted quantiles) from the data.
//! 2. [`preprocess`] splits epochs on the time grid and replaces values by
//!    grid-cell codes, after which the boosting likelihood reduces to finite
//!    weighted sums — no numerical integration is ever needed.
//! 3. [`boosting`] fits an ensemble of histogram-based regression trees by
//!    gradient boosting on the (exact) negative log-likelihood of the hazard.
//!
//! [`simulate`] generates ground-truth datasets from known hazards for
//! end-to-end testing, [`evaluate`] measures estimation error against such
//! ground truth and tunes hyperparameters by K-fold cross-validation, and
//! [`predict`] + [`model_file`] score and persist fitted models.
//!
//! Everything is deterministic: the same inputs, seeds, and configuration
//! produce bit-identical models regardless of thread count.

pub mod codes;
pub mod data;
pub mod evaluate;
pub mod manifest;
pub mod model_file;
pub mod boosting;
pub mod predict;
pub mod preprocess;
pub mod quantiles;
pub mod simulate;

pub use boosting::{fit, variable_importance, BoostConfig, BoostedModel};
pub use data::{load_csv, CsvSchema, Dataset, EpochRow};
pub use evaluate::{kfold_tune, rmse, TuneGrid, TuneOutcome};
pub use model_file::{load_model, save_model};
pub use predict::{predict_hazard, Predictions, QueryBatch};
pub use preprocess::{preprocess, PreprocessedData};
pub use quantiles::{build_grid, CandidateGrid, QuantileMode};
pub use simulate::{simulate_dataset, Hazard, SimConfig};
