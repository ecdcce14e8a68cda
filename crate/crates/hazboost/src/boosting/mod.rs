//! Tree-ensemble training by direct minimization of the likelihood risk.
//!
//! The model is `F_M = F0 - nu * sum_m g_m`, where each `g_m` is a
//! limited-depth tree over grid-cell codes and the fitted hazard is
//! `exp(F_M)`. Every quantity a split decision needs reduces to two sums per
//! bin — `U = sum(w * exp(F))` and `V = sum(delta)` — so trees are grown from
//! histograms with no gradient approximations and no line search: the
//! optimal leaf step has the closed form `gamma = ln(U / V)`, and the exact
//! risk change of a candidate split is computable from `(U, V)` of the two
//! children.
//!
//! Training is deterministic: row order is normalized upstream, histogram
//! accumulation is parallel over axes but sequential within each axis, and
//! score ties break by scan order (lowest axis, lowest threshold,
//! missing-left). Repeating a fit — at any thread count — produces a
//! bit-identical model.

mod histogram;
mod split;
mod tree;

pub use histogram::{accumulate_histograms, LeafHistograms};
pub use split::{best_split, leaf_value, split_score, SplitCandidate, SplitGuards};
pub use tree::{Node, Tree};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::PreprocessedData;
use crate::quantiles::{CandidateGrid, QuantileMode, MAX_BINS_LIMIT};
use histogram::{accumulate_from_z, INACTIVE};

/// Largest accepted tree depth. Deeper trees are almost always a
/// configuration mistake and would let histogram memory grow without bound.
pub const MAX_DEPTH_LIMIT: usize = 16;

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("no events: hazard MLE is identically zero, F0 undefined")]
    NoEvents,
    #[error("total at-risk time is zero: F0 undefined")]
    ZeroWeight,
    #[error("invalid boosting config: {0}")]
    InvalidConfig(String),
}

/// Training hyperparameters.
///
/// `mode`, `max_bins`, and `seed` do not affect [`fit`] itself — the grid is
/// already baked into the preprocessed data, and training is deterministic.
/// They ride along so that pipeline drivers (CLI, cross-validation) carry
/// one config, and they are echoed into [`ModelMeta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Maximum tree depth; 0 fits a single leaf per round.
    pub max_depth: usize,
    /// Number of boosting rounds `M`.
    pub num_rounds: usize,
    /// Shrinkage `nu` in `(0, 1]`.
    pub learning_rate: f64,
    /// Minimum events required in each child of a split (at least 1).
    pub min_child_events: u64,
    /// Minimum raw at-risk time required in each child of a split.
    pub min_child_weight: f64,
    /// Quantile rule used when building the candidate grid.
    pub mode: QuantileMode,
    /// Candidate-count cap per axis when building the grid.
    pub max_bins: usize,
    /// Seed for pipeline steps that randomize (fold assignment,
    /// simulation); training itself uses no randomness.
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            max_depth: 3,
            num_rounds: 150,
            learning_rate: 0.1,
            min_child_events: 1,
            min_child_weight: 0.0,
            mode: QuantileMode::Weighted,
            max_bins: 256,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<(), BoostError> {
        let bad = |msg: String| Err(BoostError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if self.max_depth > MAX_DEPTH_LIMIT {
            return bad(format!("max_depth must be at most {MAX_DEPTH_LIMIT}, got {}", self.max_depth));
        }
        if self.min_child_events == 0 {
            return bad("min_child_events must be at least 1".into());
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad(format!("min_child_weight must be finite and nonnegative, got {}", self.min_child_weight));
        }
        if self.max_bins == 0 || self.max_bins > MAX_BINS_LIMIT {
            return bad(format!("max_bins must be in 1..={MAX_BINS_LIMIT}, got {}", self.max_bins));
        }
        Ok(())
    }

    fn guards(&self) -> SplitGuards {
        SplitGuards {
            min_child_events: self.min_child_events,
            min_child_weight: self.min_child_weight,
        }
    }
}

/// The starting constant: the log of the best single hazard rate for the
/// whole dataset, `ln(total events / total at-risk time)`.
pub fn compute_f0(data: &PreprocessedData) -> Result<f64, BoostError> {
    if data.total_events() == 0 {
        return Err(BoostError::NoEvents);
    }
    if data.total_weight() <= 0.0 {
        return Err(BoostError::ZeroWeight);
    }
    Ok((data.total_events() as f64 / data.total_weight()).ln())
}

/// The likelihood risk of a per-row log-hazard assignment:
/// `(1/n) * sum(w * exp(F) - delta * F)`, with `n` the subject count.
pub fn likelihood_risk(data: &PreprocessedData, f_values: &[f64], n: usize) -> f64 {
    assert_eq!(f_values.len(), data.len());
    let mut acc = 0.0;
    for i in 0..data.len() {
        acc += data.weight(i) * f_values[i].exp() - data.delta(i) as f64 * f_values[i];
    }
    acc / n as f64
}

/// A fitted ensemble plus everything needed to reproduce and inspect it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    /// Starting log-hazard constant.
    pub f0: f64,
    /// Shrinkage the trees were applied with.
    pub nu: f64,
    pub trees: Vec<Tree>,
    /// The candidate grid queries must be binned against.
    pub grid: CandidateGrid,
    /// Per-axis accumulated `-d` over all splits (axis 0 = time).
    pub importance_raw: Vec<f64>,
    pub meta: ModelMeta,
}

/// Provenance and diagnostics recorded at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: BoostConfig,
    /// Training risk after 0, 1, .., M rounds (length = trees + 1);
    /// nonincreasing.
    pub risk_trace: Vec<f64>,
    /// Set when fitting stopped before `num_rounds` because the root could
    /// no longer split; the value is the number of trees actually grown.
    pub early_stop_round: Option<usize>,
    /// Covariate column names in axis order (axis `k + 1` = name `k`).
    pub covariate_names: Vec<String>,
    pub num_subjects: usize,
    pub num_rows: usize,
    pub total_events: u64,
    pub total_weight: f64,
}

impl BoostedModel {
    /// Ensemble log-hazard for a point given its per-axis shifted codes.
    pub fn log_hazard_codes(&self, mut code_of: impl FnMut(usize) -> u16) -> f64 {
        let mut f = self.f0;
        for tree in &self.trees {
            f -= self.nu * tree.route(&mut code_of);
        }
        f
    }

    /// Number of axes the model splits over (time plus covariates).
    pub fn num_axes(&self) -> usize {
        self.grid.num_axes()
    }
}

/// Relative variable importance: per-axis accumulated risk reduction scaled
/// by the largest axis, so the most informative axis scores 1. A model with
/// no splits returns all zeros. Axis 0 is time.
pub fn variable_importance(model: &BoostedModel) -> Vec<f64> {
    let max = model.importance_raw.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return vec![0.0; model.importance_raw.len()];
    }
    model.importance_raw.iter().map(|&x| x / max).collect()
}

/// One grown tree with the bookkeeping the boosting loop needs.
struct GrownTree {
    tree: Tree,
    /// Final leaf node index of every row.
    leaf_node_of_row: Vec<u32>,
    /// `(node index, U, V)` for every leaf, from direct re-accumulation.
    leaf_stats: Vec<(u32, f64, f64)>,
}

/// In-progress leaf during level-wise growth.
struct PendingLeaf {
    node: u32,
    u: f64,
    v: f64,
    w: f64,
}

enum Decision {
    /// Leaf could not split; its rows stop participating.
    Terminal,
    Split {
        axis: u32,
        threshold_idx: u16,
        missing_left: bool,
        left_node: u32,
        right_node: u32,
        left_slot: u32,
        right_slot: u32,
    },
}

/// Grows one tree against the current ensemble values. `f_current[i]` is the
/// ensemble log-hazard at row `i`.
///
/// Levels are grown breadth-first: every still-splittable leaf takes its
/// best admissible split, leaves with no admissible split become terminal,
/// and terminal leaves receive the closed-form value `ln(U / V)`. When the
/// root itself cannot split the result is a single leaf. Data without any
/// events (outside [`fit`]'s preconditions) yields a zero-valued stump.
pub fn grow_tree(data: &PreprocessedData, f_current: &[f64], config: &BoostConfig) -> Tree {
    assert_eq!(f_current.len(), data.len());
    let z: Vec<f64> = data
        .weights()
        .iter()
        .zip(f_current)
        .map(|(&w, &f)| w * f.exp())
        .collect();
    grow_from_z(data, &z, config).tree
}

fn grow_from_z(data: &PreprocessedData, z: &[f64], config: &BoostConfig) -> GrownTree {
    let n_rows = data.len();
    let n_subjects = data.num_subjects();
    let guards = config.guards();

    let mut nodes: Vec<Node> = vec![Node::Leaf { value: f64::NAN }];
    let mut leaf_node_of_row: Vec<u32> = vec![0; n_rows];
    let mut slot_of_row: Vec<u32> = vec![0; n_rows];
    let mut leaf_stats: Vec<(u32, f64, f64)> = Vec::new();

    let (mut u0, mut v0, mut w0) = (0.0, 0.0, 0.0);
    for i in 0..n_rows {
        u0 += z[i];
        v0 += data.delta(i) as f64;
        w0 += data.weight(i);
    }
    let mut pending = vec![PendingLeaf { node: 0, u: u0, v: v0, w: w0 }];

    let finalize = |leaf: &PendingLeaf, nodes: &mut Vec<Node>, stats: &mut Vec<(u32, f64, f64)>| {
        // A leaf reached through splits always has V >= min_child_events and
        // U > 0; the zero-event case can only be the root of an eventless
        // fit, where the only consistent step is "no change".
        let value = if leaf.v > 0.0 { leaf_value(leaf.u, leaf.v) } else { 0.0 };
        nodes[leaf.node as usize] = Node::Leaf { value };
        stats.push((leaf.node, leaf.u, leaf.v));
    };

    for _level in 0..config.max_depth {
        if pending.is_empty() {
            break;
        }
        let hist = accumulate_from_z(data, &slot_of_row, pending.len(), z);

        let mut decisions: Vec<Decision> = Vec::with_capacity(pending.len());
        let mut new_pending: Vec<PendingLeaf> = Vec::new();
        let mut any_split = false;
        for (slot, leaf) in pending.iter().enumerate() {
            match best_split(&hist, slot, n_subjects, &guards) {
                Some(cand) => {
                    let left_node = nodes.len() as u32;
                    let right_node = left_node + 1;
                    nodes.push(Node::Leaf { value: f64::NAN });
                    nodes.push(Node::Leaf { value: f64::NAN });
                    nodes[leaf.node as usize] = Node::Split {
                        axis: cand.axis,
                        threshold_idx: cand.threshold_idx,
                        missing_left: cand.missing_left,
                        score: cand.score,
                        left: left_node,
                        right: right_node,
                    };
                    let left_slot = new_pending.len() as u32;
                    new_pending.push(PendingLeaf { node: left_node, u: 0.0, v: 0.0, w: 0.0 });
                    new_pending.push(PendingLeaf { node: right_node, u: 0.0, v: 0.0, w: 0.0 });
                    decisions.push(Decision::Split {
                        axis: cand.axis,
                        threshold_idx: cand.threshold_idx,
                        missing_left: cand.missing_left,
                        left_node,
                        right_node,
                        left_slot,
                        right_slot: left_slot + 1,
                    });
                    any_split = true;
                }
                None => {
                    finalize(leaf, &mut nodes, &mut leaf_stats);
                    decisions.push(Decision::Terminal);
                }
            }
        }

        if !any_split {
            pending.clear();
            break;
        }

        // One pass over the rows: retire rows of terminal leaves, route the
        // rest to their child, and re-accumulate child statistics directly
        // (in row order, so results never depend on the split search).
        for i in 0..n_rows {
            let slot = slot_of_row[i];
            if slot == INACTIVE {
                continue;
            }
            match &decisions[slot as usize] {
                Decision::Terminal => slot_of_row[i] = INACTIVE,
                Decision::Split {
                    axis,
                    threshold_idx,
                    missing_left,
                    left_node,
                    right_node,
                    left_slot,
                    right_slot,
                } => {
                    let code = data.axis_codes(*axis as usize).get(i);
                    let go_left = if code == crate::codes::MISSING_CODE {
                        *missing_left
                    } else {
                        code <= *threshold_idx
                    };
                    let (node, slot) = if go_left {
                        (*left_node, *left_slot)
                    } else {
                        (*right_node, *right_slot)
                    };
                    leaf_node_of_row[i] = node;
                    slot_of_row[i] = slot;
                    let child = &mut new_pending[slot as usize];
                    child.u += z[i];
                    child.v += data.delta(i) as f64;
                    child.w += data.weight(i);
                }
            }
        }
        pending = new_pending;
    }

    for leaf in &pending {
        finalize(leaf, &mut nodes, &mut leaf_stats);
    }

    GrownTree { tree: Tree { nodes }, leaf_node_of_row, leaf_stats }
}

/// Fits a boosted hazard model.
///
/// Starting from the constant `F0`, each round grows one tree against the
/// current ensemble and shrinks it in: `F <- F - nu * g_m`. The training
/// risk after every round is recorded in the returned model's meta. When the
/// root cannot split, the round produces a single-leaf tree; since split
/// scores are invariant to constant shifts of `F`, no later round could
/// split either, so fitting stops there and the stop is recorded.
pub fn fit(data: &PreprocessedData, config: &BoostConfig) -> Result<BoostedModel, BoostError> {
    fit_with_eval(data, config, None).map(|(model, _)| model)
}

/// [`fit`], optionally scoring a held-out dataset as training progresses.
///
/// `eval` supplies the held-out data and a sorted list of checkpoint round
/// counts; the returned vector holds the held-out risk after exactly that
/// many rounds, in order. This makes one training pass serve a whole
/// column of round-count candidates during cross-validation, with each
/// checkpoint's model bit-identical to a separate fit at that `num_rounds`.
/// If training stops early, later checkpoints repeat the frozen model's
/// risk. Checkpoints beyond `num_rounds` are an error.
pub fn fit_with_eval(
    data: &PreprocessedData,
    config: &BoostConfig,
    eval: Option<(&PreprocessedData, &[usize])>,
) -> Result<(BoostedModel, Vec<f64>), BoostError> {
    config.validate()?;
    if let Some((_, checkpoints)) = eval {
        if checkpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(BoostError::InvalidConfig("eval checkpoints must be sorted".into()));
        }
        if checkpoints.last().is_some_and(|&m| m > config.num_rounds) {
            return Err(BoostError::InvalidConfig(
                "eval checkpoint beyond num_rounds".into(),
            ));
        }
    }
    let f0 = compute_f0(data)?;
    let n = data.num_subjects();
    let nu = config.learning_rate;
    let num_axes = data.num_axes();

    // z = w * exp(F) per row, maintained multiplicatively: applying a tree
    // multiplies each row's z by exp(-nu * gamma) of its leaf, so the only
    // exp calls per round are one per leaf.
    let ef0 = f0.exp();
    let mut z: Vec<f64> = data.weights().iter().map(|&w| w * ef0).collect();
    let z0: f64 = z.iter().sum();
    let events = data.total_events() as f64;
    let mut risk_trace = vec![(z0 - events * f0) / n as f64];

    let mut eval_state = eval.map(|(eval_data, checkpoints)| {
        let f = vec![f0; eval_data.len()];
        (eval_data, checkpoints, f, Vec::<f64>::with_capacity(checkpoints.len()))
    });
    let eval_risk = |eval_data: &PreprocessedData, f: &[f64]| {
        likelihood_risk(eval_data, f, eval_data.num_subjects())
    };

    let mut trees: Vec<Tree> = Vec::with_capacity(config.num_rounds);
    let mut importance_raw = vec![0.0; num_axes];
    let mut early_stop_round = None;

    for round in 0..config.num_rounds {
        if let Some((eval_data, checkpoints, f, risks)) = eval_state.as_mut() {
            while risks.len() < checkpoints.len() && checkpoints[risks.len()] == round {
                risks.push(eval_risk(eval_data, f));
            }
        }

        let grown = grow_from_z(data, &z, config);

        // Per-leaf update factors and the exact risk decrement of this
        // round. Each leaf's decrement U*(1 - e^{-nu*gamma}) - nu*gamma*V
        // is nonnegative in exact arithmetic (gamma is the region's
        // minimizer); clamping shields the trace from rounding at
        // convergence, keeping it nonincreasing by construction.
        let mut factor_of_node = vec![1.0f64; grown.tree.nodes.len()];
        let mut decrement = 0.0;
        for &(node, u, v) in &grown.leaf_stats {
            let gamma = match &grown.tree.nodes[node as usize] {
                Node::Leaf { value } => *value,
                Node::Split { .. } => unreachable!("leaf stats point at leaf nodes"),
            };
            let f = (-nu * gamma).exp();
            factor_of_node[node as usize] = f;
            decrement += (u * (1.0 - f) - nu * gamma * v).max(0.0);
        }
        risk_trace.push(risk_trace.last().unwrap() - decrement / n as f64);

        for i in 0..z.len() {
            z[i] *= factor_of_node[grown.leaf_node_of_row[i] as usize];
        }

        for node in grown.tree.splits() {
            if let Node::Split { axis, score, .. } = node {
                importance_raw[*axis as usize] += -score;
            }
        }

        if let Some((eval_data, _, f, _)) = eval_state.as_mut() {
            for i in 0..f.len() {
                let gamma = grown.tree.route(|axis| eval_data.axis_codes(axis).get(i));
                f[i] -= nu * gamma;
            }
        }

        let stump = grown.tree.is_stump();
        trees.push(grown.tree);
        if stump {
            early_stop_round = Some(round + 1);
            break;
        }
    }

    let eval_risks = match eval_state {
        None => Vec::new(),
        Some((eval_data, checkpoints, f, mut risks)) => {
            // Checkpoints at or past the final round count (including ones
            // unreached due to early stop: the model is frozen from there).
            while risks.len() < checkpoints.len() {
                risks.push(eval_risk(eval_data, &f));
            }
            risks
        }
    };

    let model = BoostedModel {
        f0,
        nu,
        trees,
        grid: data.grid().clone(),
        importance_raw,
        meta: ModelMeta {
            config: config.clone(),
            risk_trace,
            early_stop_round,
            covariate_names: data.covariate_names().to_vec(),
            num_subjects: n,
            num_rows: data.len(),
            total_events: data.total_events(),
            total_weight: data.total_weight(),
        },
    };
    Ok((model, eval_risks))
}
