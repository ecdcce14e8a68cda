//! Scoring against ground truth and hyperparameter search.
//!
//! Cross-validation is grouped by subject: folds partition subjects, never
//! rows, so one subject's epochs can never straddle the train/held-out
//! boundary. Each (depth, learning-rate, fold) cell is trained once with
//! held-out risk checkpoints at every candidate round count, which makes a
//! whole column of the search grid cost a single fit.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosting::{fit_with_eval, BoostConfig, BoostError, BoostedModel};
use crate::data::Dataset;
use crate::predict::{predict_hazard, PredictError, QueryBatch};
use crate::preprocess::{preprocess, PreprocessError};
use crate::quantiles::{build_grid, GridError, QuantileMode};
use crate::simulate::Hazard;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set has no rows")]
    EmptyTestSet,
    #[error("invalid tuning grid: {0}")]
    InvalidGrid(String),
    #[error("every cross-validation cell was excluded; no config can be selected")]
    NoValidConfig,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

/// Root-mean-square error between the fitted hazard and the true one,
/// evaluated at the time midpoint of every epoch of `test` with that
/// epoch's covariates. The oracle reads the first covariate.
pub fn rmse(model: &BoostedModel, test: &Dataset, oracle: &Hazard) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut batch = QueryBatch::new(test.num_covariates());
    for i in 0..test.len() {
        batch.push(midpoint(test, i), test.covariates_of(i))?;
    }
    let predicted = predict_hazard(model, &batch)?;
    let mut sum = 0.0;
    for i in 0..test.len() {
        let truth = oracle.eval(midpoint(test, i), test.covariate(i, 0));
        let err = predicted.hazards[i] - truth;
        sum += err * err;
    }
    Ok((sum / test.len() as f64).sqrt())
}

fn midpoint(data: &Dataset, i: usize) -> f64 {
    0.5 * (data.t_start(i) + data.t_end(i))
}

/// The cross-validation search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    pub depths: Vec<usize>,
    /// Candidate round counts; 0 is allowed and means the constant model.
    pub rounds: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TuneGrid {
    fn default() -> TuneGrid {
        TuneGrid {
            depths: vec![1, 2, 3, 4, 5],
            rounds: vec![50, 100, 150, 200, 250, 300],
            learning_rates: vec![0.1],
            folds: 5,
            seed: 0,
        }
    }
}

impl TuneGrid {
    fn validate(&self, num_subjects: usize) -> Result<(), EvalError> {
        let bad = |msg: String| Err(EvalError::InvalidGrid(msg));
        if self.depths.is_empty() || self.rounds.is_empty() || self.learning_rates.is_empty() {
            return bad("depths, rounds, and learning_rates must all be nonempty".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.folds > num_subjects {
            return bad(format!(
                "{} folds cannot partition {num_subjects} subjects",
                self.folds
            ));
        }
        if let Some(lr) = self
            .learning_rates
            .iter()
            .find(|lr| !(**lr > 0.0 && **lr <= 1.0))
        {
            return bad(format!("learning rate {lr} is outside (0, 1]"));
        }
        Ok(())
    }
}

/// One search-grid entry with its per-fold held-out risks. An excluded
/// fold is `None`; `mean_risk` averages the rest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub depth: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub fold_risks: Vec<Option<f64>>,
    pub mean_risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvTable {
    pub folds: usize,
    pub rows: Vec<CvRow>,
    /// Human-readable notes about excluded folds.
    pub warnings: Vec<String>,
}

impl CvTable {
    /// One CSV line per search-grid entry: the config, each fold's risk
    /// (blank when excluded), and the mean.
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let path_str = path.display().to_string();
        let csv_err = |source| EvalError::Csv { path: path_str.clone(), source };
        let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["depth".to_string(), "rounds".into(), "learning_rate".into()];
        header.extend((0..self.folds).map(|f| format!("fold_{f}_risk")));
        header.push("mean_risk".into());
        writer.write_record(&header).map_err(csv_err)?;
        let cell = |v: Option<f64>| v.map(|r| r.to_string()).unwrap_or_default();
        for row in &self.rows {
            let mut record = vec![
                row.depth.to_string(),
                row.rounds.to_string(),
                row.learning_rate.to_string(),
            ];
            record.extend(row.fold_risks.iter().map(|&r| cell(r)));
            record.push(cell(row.mean_risk));
            writer.write_record(&record).map_err(csv_err)?;
        }
        writer.flush().map_err(|source| EvalError::Io {
            action: "write",
            path: path_str.clone(),
            source,
        })
    }
}

/// What a tuning run produces: the winning config and the full table
/// behind the choice.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: BoostConfig,
    pub table: CvTable,
}

/// Deterministic subject-to-fold map: subjects are shuffled once by
/// `seed`, then dealt round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(num_subjects: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_subjects).collect();
    order.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; num_subjects];
    for (position, &subject) in order.iter().enumerate() {
        fold_of[subject] = position % folds;
    }
    fold_of
}

/// Grid search by K-fold cross-validation on the held-out likelihood
/// risk. Binning happens once on the full dataset; each fold trains on
/// the complement's rows only, so the held-out risk always scores a model
/// that never saw those subjects. Ties prefer smaller depth, then fewer
/// rounds, then a smaller learning rate.
pub fn kfold_tune(
    dataset: &Dataset,
    tune: &TuneGrid,
    max_bins: usize,
    mode: QuantileMode,
) -> Result<TuneOutcome, EvalError> {
    tune.validate(dataset.num_subjects())?;
    let grid = build_grid(dataset, max_bins, mode)?;
    let full = preprocess(dataset, &grid)?;
    let num_subjects = dataset.num_subjects();
    let fold_of = fold_assignment(num_subjects, tune.folds, tune.seed);

    // Checkpoints shared by every (depth, learning rate) group.
    let mut checkpoints = tune.rounds.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let max_rounds = *checkpoints.last().expect("validated nonempty");

    let mut warnings = Vec::new();
    let mut parts = Vec::with_capacity(tune.folds);
    for f in 0..tune.folds {
        let held_mask: Vec<bool> = (0..num_subjects).map(|s| fold_of[s] == f).collect();
        let train_mask: Vec<bool> = held_mask.iter().map(|&h| !h).collect();
        let train = full.subset_by_subjects(&train_mask);
        let held = full.subset_by_subjects(&held_mask);
        if train.total_events() == 0 {
            warnings.push(format!("fold {f} excluded: training subjects have no events"));
            parts.push(None);
        } else if held.total_events() == 0 {
            warnings.push(format!("fold {f} excluded: held-out subjects have no events"));
            parts.push(None);
        } else {
            parts.push(Some((train, held)));
        }
    }

    let config_for = |depth: usize, rounds: usize, lr: f64| BoostConfig {
        max_depth: depth,
        num_rounds: rounds,
        learning_rate: lr,
        mode,
        max_bins,
        seed: tune.seed,
        ..BoostConfig::default()
    };

    // risks[(depth, lr)][fold][checkpoint index]
    let mut cache: BTreeMap<(usize, u64), Vec<Option<Vec<f64>>>> = BTreeMap::new();
    for &depth in &tune.depths {
        for &lr in &tune.learning_rates {
            let key = (depth, lr.to_bits());
            if cache.contains_key(&key) {
                continue;
            }
            let config = config_for(depth, max_rounds, lr);
            config.validate()?;
            let mut per_fold = Vec::with_capacity(tune.folds);
            for part in &parts {
                match part {
                    None => per_fold.push(None),
                    Some((train, held)) => {
                        let (_, risks) =
                            fit_with_eval(train, &config, Some((held, &checkpoints)))?;
                        per_fold.push(Some(risks));
                    }
                }
            }
            cache.insert(key, per_fold);
        }
    }

    let mut rows = Vec::new();
    for &depth in &tune.depths {
        for &rounds in &tune.rounds {
            let at = checkpoints.binary_search(&rounds).expect("checkpoint exists");
            for &lr in &tune.learning_rates {
                let per_fold = &cache[&(depth, lr.to_bits())];
                let fold_risks: Vec<Option<f64>> =
                    per_fold.iter().map(|r| r.as_ref().map(|v| v[at])).collect();
                let valid: Vec<f64> = fold_risks.iter().flatten().copied().collect();
                let mean_risk = if valid.is_empty() {
                    None
                } else {
                    Some(valid.iter().sum::<f64>() / valid.len() as f64)
                };
                rows.push(CvRow { depth, rounds, learning_rate: lr, fold_risks, mean_risk });
            }
        }
    }

    let best_row = rows
        .iter()
        .filter(|r| r.mean_risk.is_some())
        .min_by(|a, b| {
            let ka = (a.mean_risk.unwrap(), a.depth, a.rounds, a.learning_rate);
            let kb = (b.mean_risk.unwrap(), b.depth, b.rounds, b.learning_rate);
            ka.0.total_cmp(&kb.0)
                .then(ka.1.cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
                .then(ka.3.total_cmp(&kb.3))
        })
        .ok_or(EvalError::NoValidConfig)?;
    let best = config_for(best_row.depth, best_row.rounds, best_row.learning_rate);

    Ok(TuneOutcome { best, table: CvTable { folds: tune.folds, rows, warnings } })
}
