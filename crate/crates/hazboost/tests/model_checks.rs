//! End-to-end statistical and structural checks on fitted models.
//!
//! These go beyond unit scope: they fit real ensembles on simulated data and
//! verify that the estimator recovers known ground truth, that the classic
//! right-censored setup reduces to time-binned exposure and event counts,
//! and that results are invariant to row order and to monotone rescaling of
//! a covariate.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use hazboost::boosting::{accumulate_histograms, compute_f0, fit, BoostConfig};
use hazboost::data::RawEpoch;
use hazboost::{
    build_grid, predict_hazard, preprocess, save_model, simulate_dataset, Dataset, Hazard,
    QuantileMode, QueryBatch, SimConfig,
};

/// With a flat true hazard, the fitted surface should be close to that
/// constant across the whole (time, covariate) domain — the trees have
/// nothing real to find, and shrinkage keeps what noise they do chase small.
#[test]
fn recovers_constant_hazard() {
    let rate = 1.3;
    let hazard = Hazard::Constant { rate, horizon: 2.0 };
    let (ds, _) = simulate_dataset(&SimConfig::new(hazard, 2000, 7)).unwrap();

    let grid = build_grid(&ds, 32, QuantileMode::Weighted).unwrap();
    let pre = preprocess(&ds, &grid).unwrap();
    let config = BoostConfig { max_depth: 1, num_rounds: 40, ..BoostConfig::default() };
    let model = fit(&pre, &config).unwrap();

    let mut batch = QueryBatch::new(1);
    for i in 0..20 {
        let t = 0.05 + 1.85 * i as f64 / 19.0;
        for j in 0..9 {
            let x = 0.1 + 0.1 * j as f64;
            batch.push(t, &[x]).unwrap();
        }
    }
    let out = predict_hazard(&model, &batch).unwrap();
    let within = out
        .hazards
        .iter()
        .filter(|&&h| h >= rate / 1.25 && h <= rate * 1.25)
        .count();
    let total = out.hazards.len();
    assert!(
        within * 20 >= total * 19,
        "only {within}/{total} predictions within 25% of the true rate {rate}"
    );
}

/// On plain right-censored data (one epoch per subject, starting at zero),
/// the root histogram of the time axis must equal the classic life-table
/// quantities: per time cell, `U` is the baseline hazard times the total
/// exposure in the cell and `V` is the number of events in it.
#[test]
fn right_censored_data_reduces_to_life_table_counts() {
    let horizon = 3.0;
    let mut rng = ChaCha12Rng::seed_from_u64(21);
    let mut rows = Vec::new();
    for i in 0..60 {
        let raw = -rng.random::<f64>().ln() / 0.9;
        let (t_end, delta) = if raw < horizon { (raw, 1) } else { (horizon, 0) };
        rows.push(RawEpoch {
            subject: format!("s{i:02}"),
            t_start: 0.0,
            t_end,
            covariates: vec![rng.random::<f64>()],
            delta,
        });
    }
    let ds = Dataset::from_rows(rows, vec!["x0".into()]).unwrap();

    let grid = build_grid(&ds, 8, QuantileMode::Weighted).unwrap();
    let pre = preprocess(&ds, &grid).unwrap();
    let f0 = compute_f0(&pre).unwrap();
    let hist = accumulate_histograms(&pre, &vec![0u32; pre.len()], &vec![f0; pre.len()]);

    let cands = grid.time_splits();
    let cells = hist.value_cells(0);
    let mut exposure = vec![0.0f64; cells];
    let mut events = vec![0.0f64; cells];
    for i in 0..ds.len() {
        let t_end = ds.t_end(i);
        // Walk the cell edges and accumulate this subject's overlap with
        // each cell (code j covers (cands[j-1], cands[j]], code 0 the
        // below-minimum piece, the last code everything above).
        let mut lo = 0.0;
        for code in 0..cells {
            let hi = if code < cands.len() { cands[code] } else { f64::INFINITY };
            if t_end > lo {
                exposure[code] += (t_end.min(hi) - lo) * f0.exp();
            }
            lo = hi;
        }
        if ds.delta(i) == 1 {
            events[grid.bin_time_query(t_end) as usize] += 1.0;
        }
    }

    for code in 0..cells {
        let (u, v, _) = hist.cell(0, 0, code);
        let err = (u - exposure[code]).abs();
        assert!(
            err <= 1e-12 * exposure[code].max(1e-300),
            "cell {code}: U {u} vs expected exposure {}",
            exposure[code]
        );
        assert_eq!(v, events[code], "cell {code}: event count");
    }
    let (u_missing, v_missing, _) = hist.missing(0, 0);
    assert_eq!((u_missing, v_missing), (0.0, 0.0), "time axis has no missing values");
}

/// Feeding the same epochs in any row order produces a byte-identical
/// model file: dataset construction normalizes order, and nothing
/// downstream depends on it.
#[test]
fn fitted_model_is_invariant_to_input_row_order() {
    let (ds, _) = simulate_dataset(&SimConfig::new(Hazard::SmoothBump, 150, 99)).unwrap();
    let mut rows: Vec<RawEpoch> = (0..ds.len())
        .map(|i| {
            let r = ds.row(i);
            RawEpoch {
                subject: r.subject.to_string(),
                t_start: r.t_start,
                t_end: r.t_end,
                covariates: r.covariates.to_vec(),
                delta: r.delta,
            }
        })
        .collect();
    rows.shuffle(&mut ChaCha12Rng::seed_from_u64(5));
    let shuffled = Dataset::from_rows(rows, ds.covariate_names().to_vec()).unwrap();

    let config = BoostConfig { max_depth: 3, num_rounds: 25, ..BoostConfig::default() };
    let fit_and_save = |data: &Dataset, path: &std::path::Path| {
        let grid = build_grid(data, 16, QuantileMode::Weighted).unwrap();
        let pre = preprocess(data, &grid).unwrap();
        save_model(&fit(&pre, &config).unwrap(), path).unwrap();
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    fit_and_save(&ds, &a);
    fit_and_save(&shuffled, &b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

/// Raw-quantile grids see only the ordering of covariate values, so
/// rescaling a covariate by any strictly increasing map and querying at
/// rescaled points gives bit-identical hazards.
#[test]
fn predictions_invariant_to_monotone_covariate_rescaling() {
    let phi = |x: f64| x * x * x + 2.0 * x;
    let (ds, _) = simulate_dataset(&SimConfig::new(Hazard::SmoothBump, 200, 31)).unwrap();
    let rows = (0..ds.len())
        .map(|i| {
            let r = ds.row(i);
            RawEpoch {
                subject: r.subject.to_string(),
                t_start: r.t_start,
                t_end: r.t_end,
                covariates: vec![phi(r.covariates[0])],
                delta: r.delta,
            }
        })
        .collect();
    let tds = Dataset::from_rows(rows, ds.covariate_names().to_vec()).unwrap();

    let config = BoostConfig { max_depth: 3, num_rounds: 30, ..BoostConfig::default() };
    let fit_on = |data: &Dataset| {
        let grid = build_grid(data, 64, QuantileMode::Raw).unwrap();
        fit(&preprocess(data, &grid).unwrap(), &config).unwrap()
    };
    let model = fit_on(&ds);
    let tmodel = fit_on(&tds);

    let mut batch = QueryBatch::new(1);
    let mut tbatch = QueryBatch::new(1);
    for i in 0..20 {
        let t = 0.025 + 0.95 * i as f64 / 19.0;
        for j in 0..20 {
            let x = 0.025 + 0.95 * j as f64 / 19.0;
            batch.push(t, &[x]).unwrap();
            tbatch.push(t, &[phi(x)]).unwrap();
        }
    }
    let out = predict_hazard(&model, &batch).unwrap().hazards;
    let tout = predict_hazard(&tmodel, &tbatch).unwrap().hazards;
    for (i, (a, b)) in out.iter().zip(&tout).enumerate() {
        assert_eq!(a.to_bits(), b.to_bits(), "query {i}: {a} vs {b}");
    }
}
