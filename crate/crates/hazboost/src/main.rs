//! Command-line front end: reproducible pipelines over the library.
//!
//! Every subcommand writes a JSON run manifest next to its primary output
//! (override with `--manifest`), so a whole simulate → preprocess → tune →
//! train → predict → evaluate pipeline can be replayed from its manifest
//! chain. Exit codes: 0 success, 1 usage, 2 input/data problem, 3 internal.

use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hazboost::boosting::{fit, variable_importance, BoostConfig};
use hazboost::data::{load_csv, write_csv, CsvSchema};
use hazboost::evaluate::{kfold_tune, rmse, TuneGrid};
use hazboost::manifest::ManifestBuilder;
use hazboost::model_file::{load_model, save_model};
use hazboost::predict::{load_query_csv, predict_hazard, write_hazard_csv};
use hazboost::preprocess::{load_preprocessed, preprocess, save_preprocessed};
use hazboost::quantiles::{build_grid, QuantileMode};
use hazboost::simulate::{
    load_truth_manifest, save_truth_manifest, simulate_dataset, Hazard, SimConfig,
};

#[derive(Parser)]
#[command(
    name = "hazboost",
    version,
    about = "Boosted nonparametric hazard estimation for survival data",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    /// Any thread count produces identical results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bin an epochs CSV onto a candidate grid for training.
    Preprocess(PreprocessArgs),
    /// Fit a boosted hazard model to preprocessed data.
    Train(TrainArgs),
    /// Pick hyperparameters by subject-grouped K-fold cross-validation.
    Tune(TuneArgs),
    /// Evaluate a model's hazard at query points.
    Predict(PredictArgs),
    /// Report each axis's share of the model's risk reduction.
    Importance(ImportanceArgs),
    /// Generate ground-truth survival data from a known hazard.
    Simulate(SimulateArgs),
    /// Score a model's RMSE against the simulator's true hazard.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    /// Duration-weighted quantiles.
    Weighted,
    /// Plain unique-value quantiles.
    Raw,
}

impl From<ModeArg> for QuantileMode {
    fn from(m: ModeArg) -> QuantileMode {
        match m {
            ModeArg::Weighted => QuantileMode::Weighted,
            ModeArg::Raw => QuantileMode::Raw,
        }
    }
}

#[derive(Args, Serialize)]
struct PreprocessArgs {
    /// Epochs CSV: subject, t_start, t_end, one column per covariate, delta.
    #[arg(long)]
    input: PathBuf,
    /// Binned training file to write.
    #[arg(long)]
    output: PathBuf,
    /// Maximum split candidates per axis (1-256).
    #[arg(long, default_value_t = 256)]
    max_bins: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Weighted)]
    quantile_mode: ModeArg,
    /// Run manifest path (default: <output>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Preprocessed file from `hazboost preprocess`.
    #[arg(long)]
    input: PathBuf,
    /// Model file to write.
    #[arg(long)]
    output: PathBuf,
    /// Starting config JSON, e.g. the file written by `hazboost tune`;
    /// explicit flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tree depth limit.
    #[arg(long)]
    depth: Option<usize>,
    /// Number of boosting rounds (trees).
    #[arg(long)]
    rounds: Option<usize>,
    /// Shrinkage applied to every tree, in (0, 1].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Minimum events on each side of a split.
    #[arg(long)]
    min_child_events: Option<u64>,
    /// Minimum at-risk time on each side of a split.
    #[arg(long)]
    min_child_weight: Option<f64>,
    /// Recorded in the model for provenance; training itself is
    /// deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Run manifest path (default: <output>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TuneArgs {
    /// Epochs CSV (same schema as `preprocess --input`).
    #[arg(long)]
    input: PathBuf,
    /// Selected-config JSON to write; feed it to `train --config`.
    #[arg(long)]
    output: PathBuf,
    /// Full cross-validation table CSV to write.
    #[arg(long)]
    cv_table: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 150, 200, 250, 300])]
    rounds: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1])]
    learning_rates: Vec<f64>,
    /// Number of cross-validation folds (subjects are partitioned, never
    /// rows).
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Drives fold assignment.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 256)]
    max_bins: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Weighted)]
    quantile_mode: ModeArg,
    /// Run manifest path (default: <output>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    /// Model file from `hazboost train`.
    #[arg(long)]
    model: PathBuf,
    /// Query CSV: a time column plus the model's covariate columns.
    #[arg(long)]
    queries: PathBuf,
    /// Copy of the queries with an appended `hazard` column.
    #[arg(long)]
    output: PathBuf,
    /// Name of the time column in the query CSV.
    #[arg(long, default_value = "t")]
    time_column: String,
    /// Run manifest path (default: <output>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ImportanceArgs {
    /// Model file from `hazboost train`.
    #[arg(long)]
    model: PathBuf,
    /// CSV of per-axis relative importances (also printed to stdout).
    #[arg(long, default_value = "importance.csv")]
    output: PathBuf,
    /// Run manifest path (default: <output>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Which built-in hazard generates events (1-4).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    hazard: u8,
    #[arg(long)]
    subjects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epochs CSV to write.
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth manifest to write; `evaluate --truth` reads it.
    #[arg(long)]
    truth: PathBuf,
    /// Noise covariates to append.
    #[arg(long, default_value_t = 0)]
    irrelevant: usize,
    /// Per-interval probability of leaving the risk set, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    p_drop: f64,
    /// Keep subjects under observation after events recur.
    #[arg(long)]
    recurring: bool,
    /// In recurring mode, stop a subject after this many events.
    #[arg(long)]
    max_events: Option<u32>,
    /// Covariate-update intervals per horizon.
    #[arg(long, default_value_t = 20)]
    epochs_per_horizon: usize,
    /// Run manifest path (default: <output>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// Model file from `hazboost train`.
    #[arg(long)]
    model: PathBuf,
    /// Test epochs CSV; hazards are compared at each epoch's time
    /// midpoint.
    #[arg(long)]
    data: PathBuf,
    /// Ground-truth manifest written by `hazboost simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Result JSON to write.
    #[arg(long, default_value = "evaluation.json")]
    output: PathBuf,
    /// Run manifest path (default: <output>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// An error already mapped to its exit code.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> CliError {
        CliError { code: 1, message: message.into() }
    }

    fn internal(message: impl Into<String>) -> CliError {
        CliError { code: 3, message: message.into() }
    }
}

/// Anything the library reports is a problem with the user's inputs.
impl<E: Error> From<E> for CliError {
    fn from(e: E) -> CliError {
        let mut message = e.to_string();
        // Append sources that aren't already part of the display text.
        let mut cause = e.source();
        while let Some(c) = cause {
            let text = c.to_string();
            if !message.contains(&text) {
                message.push_str(": ");
                message.push_str(&text);
            }
            cause = c.source();
        }
        CliError { code: 2, message }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::internal(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Importance(args) => cmd_importance(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn manifest_path(primary: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.manifest.json", primary.display())))
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    let mut b = ManifestBuilder::new("preprocess", &args);
    b.input(&args.input).output(&args.output);

    let dataset = b.time("load", || load_csv(&args.input, &CsvSchema::default()))?;
    let grid = b.time("grid", || {
        build_grid(&dataset, args.max_bins, args.quantile_mode.into())
    })?;
    let pre = b.time("bin", || preprocess(&dataset, &grid))?;
    b.time("save", || save_preprocessed(&pre, &args.output))?;

    if pre.clamped_above() > 0 {
        eprintln!(
            "warning: {} epoch values lie above their axis's top candidate and were clamped",
            pre.clamped_above()
        );
    }
    b.result("rows", pre.len());
    b.result("subjects", pre.num_subjects());
    b.result("events", pre.total_events());
    b.result("total_at_risk_time", pre.total_weight());
    b.result("clamped_above", pre.clamped_above());
    b.write(&manifest_path(&args.output, &args.manifest))?;
    println!(
        "preprocessed {} epochs from {} subjects ({} events) into {}",
        pre.len(),
        pre.num_subjects(),
        pre.total_events(),
        args.output.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut b = ManifestBuilder::new("train", &args);
    b.input(&args.input).output(&args.output);

    let pre = b.time("load", || load_preprocessed(&args.input))?;

    let mut config = match &args.config {
        Some(path) => {
            b.input(path);
            let bytes = std::fs::read(path)?;
            serde_json::from_slice::<BoostConfig>(&bytes)?
        }
        None => BoostConfig::default(),
    };
    // The preprocessed file's grid is authoritative for binning settings.
    config.max_bins = pre.grid().max_bins();
    config.mode = pre.grid().mode();
    if let Some(v) = args.depth {
        config.max_depth = v;
    }
    if let Some(v) = args.rounds {
        config.num_rounds = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.min_child_events {
        config.min_child_events = v;
    }
    if let Some(v) = args.min_child_weight {
        config.min_child_weight = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }

    let model = b.time("fit", || fit(&pre, &config))?;
    b.time("save", || save_model(&model, &args.output))?;

    b.result("config", &config);
    b.result("trees", model.trees.len());
    b.result("risk_trace", &model.meta.risk_trace);
    b.result("early_stop_round", model.meta.early_stop_round);
    b.write(&manifest_path(&args.output, &args.manifest))?;

    let trace = &model.meta.risk_trace;
    println!(
        "trained {} trees (risk {} -> {}) into {}",
        model.trees.len(),
        trace.first().copied().unwrap_or(f64::NAN),
        trace.last().copied().unwrap_or(f64::NAN),
        args.output.display()
    );
    if let Some(round) = model.meta.early_stop_round {
        println!("stopped early at round {round}: no further split can reduce the risk");
    }
    Ok(())
}

fn cmd_tune(args: TuneArgs) -> Result<(), CliError> {
    let mut b = ManifestBuilder::new("tune", &args);
    b.input(&args.input).output(&args.output);

    let dataset = b.time("load", || load_csv(&args.input, &CsvSchema::default()))?;
    let tune = TuneGrid {
        depths: args.depths.clone(),
        rounds: args.rounds.clone(),
        learning_rates: args.learning_rates.clone(),
        folds: args.folds,
        seed: args.seed,
    };
    let outcome = b.time("tune", || {
        kfold_tune(&dataset, &tune, args.max_bins, args.quantile_mode.into())
    })?;

    for warning in &outcome.table.warnings {
        eprintln!("warning: {warning}");
    }
    let mut bytes = serde_json::to_vec_pretty(&outcome.best).expect("config is serializable");
    bytes.push(b'\n');
    std::fs::write(&args.output, bytes)?;
    if let Some(path) = &args.cv_table {
        outcome.table.write_csv(path)?;
        b.output(path);
    }

    let best_row = outcome
        .table
        .rows
        .iter()
        .find(|r| {
            r.depth == outcome.best.max_depth
                && r.rounds == outcome.best.num_rounds
                && r.learning_rate == outcome.best.learning_rate
        })
        .expect("selected config has a table row");
    b.result("best", &outcome.best);
    b.result("best_mean_risk", best_row.mean_risk);
    b.result("warnings", &outcome.table.warnings);
    b.write(&manifest_path(&args.output, &args.manifest))?;

    println!(
        "selected depth={} rounds={} learning_rate={} (mean held-out risk {}) into {}",
        outcome.best.max_depth,
        outcome.best.num_rounds,
        outcome.best.learning_rate,
        best_row.mean_risk.unwrap_or(f64::NAN),
        args.output.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let mut b = ManifestBuilder::new("predict", &args);
    b.input(&args.model).input(&args.queries).output(&args.output);

    let model = b.time("load_model", || load_model(&args.model))?;
    let names = model.meta.covariate_names.clone();
    let batch = b.time("load_queries", || {
        load_query_csv(&args.queries, &args.time_column, &names)
    })?;
    let predictions = b.time("predict", || predict_hazard(&model, &batch))?;
    b.time("save", || {
        write_hazard_csv(&args.output, &batch, &predictions.hazards, &args.time_column, &names)
    })?;

    if predictions.out_of_range_queries > 0 {
        eprintln!(
            "warning: {} of {} queries lie outside the training range and were \
             clamped to the nearest boundary cell",
            predictions.out_of_range_queries,
            batch.len()
        );
    }
    b.result("queries", batch.len());
    b.result("out_of_range_queries", predictions.out_of_range_queries);
    b.write(&manifest_path(&args.output, &args.manifest))?;
    println!("wrote {} hazards to {}", batch.len(), args.output.display());
    Ok(())
}

fn cmd_importance(args: ImportanceArgs) -> Result<(), CliError> {
    let mut b = ManifestBuilder::new("importance", &args);
    b.input(&args.model).output(&args.output);

    let model = b.time("load", || load_model(&args.model))?;
    let importance = variable_importance(&model);
    let mut labels = vec!["time".to_string()];
    labels.extend(model.meta.covariate_names.iter().cloned());

    let mut writer = csv::Writer::from_path(&args.output).map_err(|e| CliError {
        code: 2,
        message: format!("{}: {e}", args.output.display()),
    })?;
    writer.write_record(["axis", "relative_importance"]).map_err(CliError::from)?;
    for (label, value) in labels.iter().zip(&importance) {
        writer
            .write_record([label.as_str(), &value.to_string()])
            .map_err(CliError::from)?;
        println!("{label}\t{value}");
    }
    writer.flush()?;

    b.result("importance", labels.iter().zip(&importance).collect::<Vec<_>>());
    b.write(&manifest_path(&args.output, &args.manifest))?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mut b = ManifestBuilder::new("simulate", &args);
    b.output(&args.output).output(&args.truth);

    let hazard = Hazard::from_id(args.hazard).expect("clap bounds the id");
    let config = SimConfig {
        hazard,
        num_subjects: args.subjects,
        num_irrelevant: args.irrelevant,
        p_drop: args.p_drop,
        recurring: args.recurring,
        max_events: args.max_events,
        epochs_per_horizon: args.epochs_per_horizon,
        seed: args.seed,
    };
    let (dataset, _) = b.time("simulate", || simulate_dataset(&config))?;
    b.time("save", || -> Result<(), CliError> {
        write_csv(&dataset, &args.output)?;
        save_truth_manifest(&config, &args.truth)?;
        Ok(())
    })?;

    b.result("rows", dataset.len());
    b.result("subjects", dataset.num_subjects());
    b.result("events", dataset.total_events());
    b.write(&manifest_path(&args.output, &args.manifest))?;
    println!(
        "simulated {} subjects ({} epochs, {} events) into {}",
        dataset.num_subjects(),
        dataset.len(),
        dataset.total_events(),
        args.output.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let mut b = ManifestBuilder::new("evaluate", &args);
    b.input(&args.model).input(&args.data).input(&args.truth).output(&args.output);

    let model = b.time("load_model", || load_model(&args.model))?;
    let test = b.time("load_data", || load_csv(&args.data, &CsvSchema::default()))?;
    let truth = load_truth_manifest(&args.truth)?;
    let value = b.time("score", || rmse(&model, &test, &truth.hazard))?;

    let mut bytes = serde_json::to_vec_pretty(&serde_json::json!({ "rmse": value }))
        .expect("result is serializable");
    bytes.push(b'\n');
    std::fs::write(&args.output, bytes)?;

    b.result("rmse", value);
    b.write(&manifest_path(&args.output, &args.manifest))?;
    println!("rmse {value}");
    Ok(())
}
