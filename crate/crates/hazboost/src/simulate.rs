//! Ground-truth survival data generator.
//!
//! Subjects carry piecewise-constant covariates that refresh on a fixed
//! schedule of update intervals, may sit out individual intervals (at-risk
//! gaps), and experience events drawn exactly from a chosen hazard by
//! thinning: candidate times arrive at a constant dominating rate and are
//! accepted with probability `λ(t, x(t)) / bound`. Everything a subject
//! does is derived from `(seed, subject index)`, so histories are
//! reproducible one at a time and independent of generation order.
//!
//! The covariate path and at-risk pattern for an interval are always drawn
//! before any event inside it, so the generated intensity never peeks at
//! event outcomes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::{DataError, Dataset, RawEpoch};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("({t}, {x}) is outside the hazard's domain (0, {horizon}] x (0, 1]")]
    OutOfDomain { t: f64, x: f64, horizon: f64 },
    #[error("hazard evaluates to non-finite value {value} at ({t}, {x}); cannot bound it")]
    Unbounded { t: f64, x: f64, value: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("failed to {action} {path}: {source}")]
    Io { action: &'static str, path: String, source: std::io::Error },
    #[error("{path} is not a truth manifest: {reason}")]
    BadManifest { path: String, reason: String },
}

/// The true event intensity as a function of time and the one relevant
/// covariate. All variants are supported on `t ∈ (0, horizon]`,
/// `x ∈ (0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Hazard {
    /// `6t(1−t) · 6x(1−x)` on `(0,1]²`: one broad bump peaking at the
    /// center.
    SmoothBump,
    /// `140t³(1−t)³ · 140x³(1−x)³` on `(0,1]²`: the same center peak but
    /// much more concentrated.
    SharpBump,
    /// `φ(log t − x) / (t·Φ(x − log t))` on `t ∈ (0,5]`: the hazard of a
    /// log-normal event time whose location parameter is the covariate.
    LogNormal,
    /// `1.5·√t·exp(−cos(2πx)/2 − 3/2)` on `t ∈ (0,5]`: increasing in time,
    /// oscillating in the covariate.
    CosineSqrt,
    /// Flat rate, for closed-form law checks. `rate = 0` generates pure
    /// censoring.
    Constant { rate: f64, horizon: f64 },
}

impl Hazard {
    /// The four built-in study hazards by conventional number.
    pub fn from_id(id: u8) -> Option<Hazard> {
        match id {
            1 => Some(Hazard::SmoothBump),
            2 => Some(Hazard::SharpBump),
            3 => Some(Hazard::LogNormal),
            4 => Some(Hazard::CosineSqrt),
            _ => None,
        }
    }

    /// End of the observation window; subjects alive at this time are
    /// administratively censored.
    pub fn horizon(&self) -> f64 {
        match self {
            Hazard::SmoothBump | Hazard::SharpBump => 1.0,
            Hazard::LogNormal | Hazard::CosineSqrt => 5.0,
            Hazard::Constant { horizon, .. } => *horizon,
        }
    }

    /// Raw formula value; meaningful on the domain, unchecked outside it.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Hazard::SmoothBump => beta22(t) * beta22(x),
            Hazard::SharpBump => beta44(t) * beta44(x),
            Hazard::LogNormal => {
                let std = Normal::standard();
                std.pdf(t.ln() - x) / (t * std.cdf(x - t.ln()))
            }
            Hazard::CosineSqrt => {
                1.5 * t.sqrt() * (-0.5 * (std::f64::consts::TAU * x).cos() - 1.5).exp()
            }
            Hazard::Constant { rate, .. } => *rate,
        }
    }

    /// [`eval`](Self::eval) with the domain enforced.
    pub fn eval_checked(&self, t: f64, x: f64) -> Result<f64, SimError> {
        let horizon = self.horizon();
        let t_ok = t > 0.0 && t <= horizon;
        let x_ok = match self {
            // The flat hazard ignores the covariate entirely.
            Hazard::Constant { .. } => x.is_finite(),
            _ => x > 0.0 && x <= 1.0,
        };
        if t_ok && x_ok {
            Ok(self.eval(t, x))
        } else {
            Err(SimError::OutOfDomain { t, x, horizon })
        }
    }
}

/// Beta(2,2) density.
fn beta22(u: f64) -> f64 {
    6.0 * u * (1.0 - u)
}

/// Beta(4,4) density.
fn beta44(u: f64) -> f64 {
    let v = u * (1.0 - u);
    140.0 * v * v * v
}

/// Everything that determines a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hazard: Hazard,
    pub num_subjects: usize,
    /// Noise covariates appended after the relevant one, refreshed on the
    /// same schedule, never consulted by the hazard.
    pub num_irrelevant: usize,
    /// Per-interval probability of being out of the risk set. Skipped
    /// intervals leave observation gaps and can contain no events.
    pub p_drop: f64,
    /// When false, a subject's history ends at their first event.
    pub recurring: bool,
    /// In recurring mode, stop a subject after this many events
    /// (`None` = unlimited).
    pub max_events: Option<u32>,
    /// Number of equal covariate-update intervals the horizon is cut into.
    pub epochs_per_horizon: usize,
    pub seed: u64,
}

impl SimConfig {
    /// A single-event, no-gaps, no-noise configuration; override fields as
    /// needed.
    pub fn new(hazard: Hazard, num_subjects: usize, seed: u64) -> SimConfig {
        SimConfig {
            hazard,
            num_subjects,
            num_irrelevant: 0,
            p_drop: 0.0,
            recurring: false,
            max_events: None,
            epochs_per_horizon: 20,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.num_subjects == 0 {
            return bad("num_subjects must be at least 1".into());
        }
        if self.epochs_per_horizon == 0 {
            return bad("epochs_per_horizon must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return bad(format!("p_drop {} is outside [0, 1)", self.p_drop));
        }
        if self.max_events == Some(0) {
            return bad("max_events 0 would forbid events entirely".into());
        }
        if let Hazard::Constant { rate, horizon } = self.hazard {
            if !(rate.is_finite() && rate >= 0.0) {
                return bad(format!("constant rate {rate} must be finite and nonnegative"));
            }
            if !(horizon.is_finite() && horizon > 0.0) {
                return bad(format!("horizon {horizon} must be finite and positive"));
            }
        }
        Ok(())
    }
}

/// One observed interval of a simulated history: covariates constant over
/// `(t_start, t_end]`, `delta = 1` when an event lands at `t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedEpoch {
    pub t_start: f64,
    pub t_end: f64,
    pub covariates: Vec<f64>,
    pub delta: u8,
}

const BOUND_GRID_T: usize = 1024;
const BOUND_GRID_X: usize = 512;
const BOUND_MARGIN: f64 = 1.2;

/// A constant rate that dominates the hazard over its whole domain, found
/// by dense evaluation plus a safety margin and re-verified against every
/// probed value. Thinning against this rate is exact.
pub fn dominating_rate(hazard: &Hazard) -> Result<f64, SimError> {
    let horizon = hazard.horizon();
    let mut max = 0.0f64;
    for i in 1..=BOUND_GRID_T {
        let t = horizon * i as f64 / BOUND_GRID_T as f64;
        for j in 1..=BOUND_GRID_X {
            let x = j as f64 / BOUND_GRID_X as f64;
            let v = hazard.eval(t, x);
            if !v.is_finite() || v < 0.0 {
                return Err(SimError::Unbounded { t, x, value: v });
            }
            max = max.max(v);
        }
    }
    let bound = max * BOUND_MARGIN;
    debug_assert!(bound.is_finite());
    Ok(bound)
}

/// Generates one subject's observed epochs from scratch. `bound` must come
/// from [`dominating_rate`] for this config's hazard; `subject_index`
/// selects the subject's private random stream.
pub fn simulate_subject(
    config: &SimConfig,
    bound: f64,
    subject_index: u64,
) -> Vec<SimulatedEpoch> {
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    rng.set_stream(subject_index);

    let horizon = config.hazard.horizon();
    let num_epochs = config.epochs_per_horizon;
    let epoch_len = horizon / num_epochs as f64;

    // Draw the full covariate path and at-risk pattern before any event:
    // the intensity over an interval must be known at its start.
    let mut covariates = Vec::with_capacity(num_epochs);
    let mut at_risk = Vec::with_capacity(num_epochs);
    for _ in 0..num_epochs {
        let mut covs = Vec::with_capacity(1 + config.num_irrelevant);
        covs.push(open_unit(&mut rng));
        for _ in 0..config.num_irrelevant {
            covs.push(open_unit(&mut rng));
        }
        covariates.push(covs);
        at_risk.push(rng.random::<f64>() >= config.p_drop);
    }

    // Thinning: candidates at the dominating rate, accepted in proportion
    // to the true intensity (zero while out of the risk set).
    let max_events = if config.recurring { config.max_events.unwrap_or(u32::MAX) } else { 1 };
    let mut events_in: Vec<Vec<f64>> = vec![Vec::new(); num_epochs];
    let mut num_events = 0u32;
    let mut ended_at: Option<f64> = None;
    let mut t = 0.0f64;
    loop {
        // random::<f64>() ∈ [0,1): -ln maps 0 to +inf (harmless: censoring)
        // and never yields a zero gap.
        t += -rng.random::<f64>().ln() / bound;
        if !(t <= horizon) {
            break;
        }
        let k = epoch_index(t, epoch_len, num_epochs);
        if !at_risk[k] {
            continue;
        }
        let lambda = config.hazard.eval(t, covariates[k][0]);
        debug_assert!(lambda <= bound, "dominating rate violated: {lambda} > {bound}");
        if rng.random::<f64>() * bound < lambda {
            events_in[k].push(t);
            num_events += 1;
            if num_events >= max_events {
                ended_at = Some(t);
                break;
            }
        }
    }

    // Assemble observed rows: at-risk intervals, split at event times,
    // truncated where the history ended.
    let end = ended_at.unwrap_or(horizon);
    let mut rows = Vec::new();
    for k in 0..num_epochs {
        let a = k as f64 * epoch_len;
        if a >= end {
            break;
        }
        if !at_risk[k] {
            continue;
        }
        let b = if k + 1 == num_epochs { horizon } else { (k + 1) as f64 * epoch_len };
        let mut cur = a;
        for &s in &events_in[k] {
            if s <= cur {
                // Two candidates rounded to the same instant; the row
                // format cannot hold a zero-length interval.
                continue;
            }
            rows.push(SimulatedEpoch {
                t_start: cur,
                t_end: s,
                covariates: covariates[k].clone(),
                delta: 1,
            });
            cur = s;
        }
        let b = b.min(end);
        if cur < b {
            rows.push(SimulatedEpoch {
                t_start: cur,
                t_end: b,
                covariates: covariates[k].clone(),
                delta: 0,
            });
        }
    }
    rows
}

/// Index of the interval `(k·len, (k+1)·len]` containing `t`.
fn epoch_index(t: f64, epoch_len: f64, num_epochs: usize) -> usize {
    let mut k = (t / epoch_len) as usize;
    if k > 0 && t <= k as f64 * epoch_len {
        k -= 1;
    }
    k.min(num_epochs - 1)
}

/// `U(0, 1]`.
fn open_unit(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Simulates the full cohort and returns it with the oracle that scores
/// against it. Subject ids are zero-padded so lexicographic and numeric
/// order agree.
pub fn simulate_dataset(config: &SimConfig) -> Result<(Dataset, Hazard), SimError> {
    config.validate()?;
    let bound = dominating_rate(&config.hazard)?;
    let id_width = config.num_subjects.to_string().len();
    let mut rows = Vec::new();
    for i in 0..config.num_subjects {
        let subject = format!("s{:0id_width$}", i + 1);
        for e in simulate_subject(config, bound, i as u64) {
            rows.push(RawEpoch {
                subject: subject.clone(),
                t_start: e.t_start,
                t_end: e.t_end,
                covariates: e.covariates,
                delta: e.delta,
            });
        }
    }
    let dataset = Dataset::from_rows(rows, covariate_names(config.num_irrelevant))?;
    Ok((dataset, config.hazard.clone()))
}

/// Column names: the relevant covariate `x`, then zero-padded noise
/// columns `z01, z02, …`.
pub fn covariate_names(num_irrelevant: usize) -> Vec<String> {
    let mut names = vec!["x".to_string()];
    let width = num_irrelevant.to_string().len();
    for k in 1..=num_irrelevant {
        names.push(format!("z{k:0width$}"));
    }
    names
}

/// Sidecar file tying a simulated dataset to the exact process that
/// generated it, so scoring can reconstruct the true hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub format: String,
    pub config: SimConfig,
}

pub const TRUTH_FORMAT: &str = "hazboost-truth";

pub fn save_truth_manifest(config: &SimConfig, path: &Path) -> Result<(), SimError> {
    let manifest =
        TruthManifest { format: TRUTH_FORMAT.to_string(), config: config.clone() };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest is serializable");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|source| SimError::Io {
        action: "write",
        path: path.display().to_string(),
        source,
    })
}

pub fn load_truth_manifest(path: &Path) -> Result<SimConfig, SimError> {
    let path_str = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| SimError::Io {
        action: "read",
        path: path_str.clone(),
        source,
    })?;
    let manifest: TruthManifest = serde_json::from_slice(&bytes)
        .map_err(|e| SimError::BadManifest { path: path_str.clone(), reason: e.to_string() })?;
    if manifest.format != TRUTH_FORMAT {
        return Err(SimError::BadManifest {
            path: path_str,
            reason: format!("format field is {:?}", manifest.format),
        });
    }
    manifest.config.validate()?;
    Ok(manifest.config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{Beta, LogNormal as LogNormalDist};

    #[test]
    fn bump_hazards_match_reference_beta_densities() {
        let b22 = Beta::new(2.0, 2.0).unwrap();
        let b44 = Beta::new(4.0, 4.0).unwrap();
        for i in 1..=20 {
            let t = i as f64 / 20.0;
            for j in 1..=20 {
                let x = j as f64 / 20.0;
                assert_relative_eq!(
                    Hazard::SmoothBump.eval(t, x),
                    b22.pdf(t) * b22.pdf(x),
                    max_relative = 1e-12
                );
                assert_relative_eq!(
                    Hazard::SharpBump.eval(t, x),
                    b44.pdf(t) * b44.pdf(x),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn log_normal_hazard_matches_reference_distribution() {
        // pdf / survival of a log-normal with location x and scale 1.
        for &x in &[0.1, 0.5, 1.0] {
            let reference = LogNormalDist::new(x, 1.0).unwrap();
            for i in 1..=25 {
                let t = 5.0 * i as f64 / 25.0;
                let expected = reference.pdf(t) / (1.0 - reference.cdf(t));
                assert_relative_eq!(
                    Hazard::LogNormal.eval(t, x),
                    expected,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn hazard_point_values() {
        assert_relative_eq!(Hazard::SmoothBump.eval(0.5, 0.5), 2.25, max_relative = 1e-14);
        // cos(2π/4) kills the covariate term.
        for &t in &[0.3, 1.7, 4.2] {
            assert_relative_eq!(
                Hazard::CosineSqrt.eval(t, 0.25),
                1.5 * t.sqrt() * (-1.5f64).exp(),
                max_relative = 1e-12
            );
        }
        // φ(0)/Φ(0) at t = 1 (formula value; x = 0 sits on the domain edge).
        assert_relative_eq!(
            Hazard::LogNormal.eval(1.0, 0.0),
            (1.0 / std::f64::consts::TAU).sqrt() / 0.5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn domain_is_enforced() {
        assert!(Hazard::SmoothBump.eval_checked(0.5, 0.5).is_ok());
        assert!(Hazard::SmoothBump.eval_checked(0.0, 0.5).is_err());
        assert!(Hazard::SmoothBump.eval_checked(1.5, 0.5).is_err());
        assert!(Hazard::SmoothBump.eval_checked(0.5, 0.0).is_err());
        assert!(Hazard::LogNormal.eval_checked(4.9, 1.0).is_ok());
        assert!(Hazard::Constant { rate: 2.0, horizon: 3.0 }
            .eval_checked(2.5, 17.0)
            .is_ok());
    }

    #[test]
    fn dominating_rate_covers_the_peak() {
        // The smooth bump peaks at exactly 1.5 · 1.5 = 2.25.
        let bound = dominating_rate(&Hazard::SmoothBump).unwrap();
        assert!(bound >= 2.25 && bound <= 2.25 * 1.21);
        let flat = dominating_rate(&Hazard::Constant { rate: 3.0, horizon: 1.0 }).unwrap();
        assert_relative_eq!(flat, 3.6, max_relative = 1e-12);
    }

    #[test]
    fn zero_hazard_yields_one_censored_trajectory() {
        let config =
            SimConfig::new(Hazard::Constant { rate: 0.0, horizon: 2.0 }, 1, 7);
        let rows = simulate_subject(&config, 0.0, 0);
        assert_eq!(rows.len(), config.epochs_per_horizon);
        assert!(rows.iter().all(|r| r.delta == 0));
        // Contiguous cover of (0, horizon].
        assert_eq!(rows[0].t_start, 0.0);
        assert_eq!(rows.last().unwrap().t_end, 2.0);
        for pair in rows.windows(2) {
            assert_eq!(pair[0].t_end, pair[1].t_start);
        }
    }

    #[test]
    fn histories_are_internally_consistent() {
        let mut config = SimConfig::new(Hazard::SmoothBump, 300, 11);
        config.p_drop = 0.25;
        config.recurring = true;
        config.num_irrelevant = 2;
        let bound = dominating_rate(&config.hazard).unwrap();
        let epoch_len = 1.0 / config.epochs_per_horizon as f64;
        for i in 0..config.num_subjects {
            let rows = simulate_subject(&config, bound, i as u64);
            for row in &rows {
                assert!(row.t_start < row.t_end);
                assert_eq!(row.covariates.len(), 3);
                assert!(row.covariates.iter().all(|&v| v > 0.0 && v <= 1.0));
                // Each row stays inside one update interval.
                let k = epoch_index(row.t_end, epoch_len, config.epochs_per_horizon);
                assert!(row.t_start >= k as f64 * epoch_len - 1e-12);
            }
            for pair in rows.windows(2) {
                assert!(pair[0].t_end <= pair[1].t_start + 1e-12);
            }
        }
    }

    #[test]
    fn non_recurring_histories_stop_at_the_first_event() {
        let config = SimConfig::new(Hazard::SmoothBump, 500, 3);
        let bound = dominating_rate(&config.hazard).unwrap();
        for i in 0..config.num_subjects {
            let rows = simulate_subject(&config, bound, i as u64);
            let events: Vec<usize> =
                (0..rows.len()).filter(|&j| rows[j].delta == 1).collect();
            assert!(events.len() <= 1);
            if let Some(&j) = events.first() {
                assert_eq!(j, rows.len() - 1, "event row must be the last row");
            } else {
                assert_relative_eq!(rows.last().unwrap().t_end, 1.0);
            }
        }
    }

    #[test]
    fn recurring_event_count_obeys_the_flat_rate_law() {
        let rate = 1.6;
        let mut config =
            SimConfig::new(Hazard::Constant { rate, horizon: 4.0 }, 2500, 42);
        config.recurring = true;
        config.p_drop = 0.2;
        let (data, _) = simulate_dataset(&config).unwrap();
        // Conditional on the at-risk pattern, the total count is Poisson
        // with mean rate × observed time.
        let expected = rate * data.total_at_risk_time();
        let got = data.total_events() as f64;
        assert!(
            (got - expected).abs() <= 3.0 * expected.sqrt(),
            "count {got} vs Poisson mean {expected}"
        );
    }

    #[test]
    fn dropped_interval_fraction_matches_p_drop() {
        let mut config =
            SimConfig::new(Hazard::Constant { rate: 0.0, horizon: 1.0 }, 2000, 9);
        config.p_drop = 0.3;
        let (data, _) = simulate_dataset(&config).unwrap();
        // With a zero rate every retained interval is exactly one row.
        let trials = (2000 * config.epochs_per_horizon) as f64;
        let expected = 0.7 * trials;
        let sd = (trials * 0.7 * 0.3).sqrt();
        let got = data.len() as f64;
        assert!(
            (got - expected).abs() <= 3.0 * sd,
            "{got} retained intervals vs binomial mean {expected}"
        );
    }

    #[test]
    fn max_events_caps_recurring_histories() {
        let mut config =
            SimConfig::new(Hazard::Constant { rate: 8.0, horizon: 4.0 }, 200, 5);
        config.recurring = true;
        config.max_events = Some(3);
        let bound = dominating_rate(&config.hazard).unwrap();
        let mut capped = 0;
        for i in 0..config.num_subjects {
            let rows = simulate_subject(&config, bound, i as u64);
            let events = rows.iter().filter(|r| r.delta == 1).count();
            assert!(events <= 3);
            if events == 3 {
                capped += 1;
                assert_eq!(rows.last().unwrap().delta, 1);
            }
        }
        assert!(capped > 150, "rate 8 over 4 time units should usually cap");
    }

    #[test]
    fn datasets_are_reproducible_and_seed_sensitive() {
        let mut config = SimConfig::new(Hazard::SharpBump, 50, 123);
        config.num_irrelevant = 40;
        let (a, oracle) = simulate_dataset(&config).unwrap();
        let (b, _) = simulate_dataset(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(oracle, Hazard::SharpBump);
        assert_eq!(a.num_covariates(), 41);
        assert_eq!(a.covariate_names()[0], "x");
        assert_eq!(a.covariate_names()[1], "z01");
        assert_eq!(a.covariate_names()[40], "z40");

        config.seed = 124;
        let (c, _) = simulate_dataset(&config).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn truth_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        let mut config = SimConfig::new(Hazard::LogNormal, 10, 77);
        config.p_drop = 0.1;
        save_truth_manifest(&config, &path).unwrap();
        assert_eq!(load_truth_manifest(&path).unwrap(), config);

        std::fs::write(&path, "{\"format\":\"other\",\"config\":null}").unwrap();
        assert!(matches!(
            load_truth_manifest(&path),
            Err(SimError::BadManifest { .. })
        ));
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let ok = SimConfig::new(Hazard::SmoothBump, 10, 0);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.p_drop = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.num_subjects = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.max_events = Some(0);
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.hazard = Hazard::Constant { rate: -1.0, horizon: 1.0 };
        assert!(bad.validate().is_err());
    }
}
