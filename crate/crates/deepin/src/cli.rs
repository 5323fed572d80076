//! The `deepin` command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepin_core::inference::covariate_test;
use deepin_core::trainer::{active_structure, TrainHistory, TuneResult};
use deepin_core::DeepInModel;
use serde::Serialize;

use crate::benchmark::{
    create_dir, fit, predict_scores, run_benchmark, write_artifacts, write_json, CovariateOutcome, CovariateRow,
    RepresentationOutcome,
};
use crate::config::{parse_index_set, DataSource, ExperimentConfig};
use crate::dataset::{read_dataset, write_dataset, Dataset};
use crate::error::{HarnessError, Result};
use crate::metrics::{prediction_metrics, prop_zero, PredictionMetrics};
use crate::model_file::{load_model, save_model, MatrixDoc};

#[derive(Debug, Parser)]
#[command(name = "deepin", version, about = "Self-interpretable representation networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset CSV.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Name of the response column.
    #[arg(long, global = true, default_value = "y")]
    pub response: String,
    /// Model file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Comma-separated 1-based representation indices, e.g. `1,3,5`.
    #[arg(long = "index-set", global = true)]
    pub index_set: Option<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset: `data.csv`, `test.csv` and `truth.json`.
    Simulate,
    /// Fit a model: `model.json` and `history.csv`.
    Train,
    /// Choose penalties by validation search, then fit on all rows.
    Tune,
    /// Prediction and structure metrics of a saved model.
    Evaluate,
    /// Per-covariate tests of a saved model.
    TestCovariates,
    /// Cross-fitted test that the representations in `--index-set` suffice.
    TestRepresentations,
    /// Monte Carlo replications of a configuration.
    Benchmark,
}

/// Parses `args`, runs the command and maps failures to exit codes:
/// 1 for contract violations and bad input, 2 for numerical failures.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("deepin-out"));
    match cli.command {
        Command::Simulate => simulate(&cfg, &out),
        Command::Train => train_cmd(cli, &cfg, &out, false),
        Command::Tune => train_cmd(cli, &cfg, &out, true),
        Command::Evaluate => evaluate(cli, &out),
        Command::TestCovariates => test_covariates(cli, &cfg, &out),
        Command::TestRepresentations => test_representations(cli, &cfg, &out),
        Command::Benchmark => {
            let report = run_benchmark(&cfg)?;
            write_artifacts(&report, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary).expect("summary serializes"));
            Ok(())
        }
    }
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| HarnessError::Contract(format!("this command needs --{flag}")))
}

#[derive(Serialize)]
struct TruthDoc {
    setting: u8,
    seed: u64,
    n: usize,
    n_test: usize,
    /// 1-based indices of the informative columns.
    support: Vec<usize>,
    b0: MatrixDoc,
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if cfg.data.source != DataSource::Synthetic {
        return Err(HarnessError::Contract("simulate needs data.source = \"synthetic\"".into()));
    }
    let spec = cfg.data.synthetic_spec(cfg.seed)?;
    let n = cfg.data.n_train();
    let (train, test) = deepin_core::datagen::gen_setting(&spec)?.split_at(n);
    create_dir(out)?;
    let response = &cfg.data.response;
    write_dataset(&out.join("data.csv"), &train.x, &train.y, response)?;
    if test.n() > 0 {
        write_dataset(&out.join("test.csv"), &test.x, &test.y, response)?;
    }
    let truth = TruthDoc {
        setting: cfg.data.setting,
        seed: cfg.seed,
        n,
        n_test: test.n(),
        support: train.truth.support.iter().map(|j| j + 1).collect(),
        b0: MatrixDoc::from_matrix(&train.truth.b0),
    };
    write_json(&out.join("truth.json"), &truth)?;
    println!("wrote {} training and {} test rows to {}", train.n(), test.n(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    learning_rate: f64,
    objective: f64,
    loss: f64,
    penalty: f64,
    dims: usize,
    n_vars: usize,
    nnz: usize,
    truncated: bool,
}

#[derive(Serialize)]
struct TuneRow {
    pass: usize,
    lambda: f64,
    score: Option<f64>,
    dims: Option<usize>,
    n_vars: Option<usize>,
    nnz: Option<usize>,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let err = |e: csv::Error| HarnessError::Contract(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    write_rows(
        path,
        h.records.iter().map(|r| HistoryRow {
            epoch: r.epoch,
            learning_rate: r.learning_rate,
            objective: r.objective,
            loss: r.loss,
            penalty: r.penalty.total,
            dims: r.structure.dims,
            n_vars: r.structure.n_vars,
            nnz: r.structure.nnz,
            truncated: r.truncated,
        }),
    )
}

fn write_tuning(path: &Path, t: &TuneResult) -> Result<()> {
    write_rows(
        path,
        t.cells.iter().map(|c| TuneRow {
            pass: c.pass,
            lambda: c.lambda,
            score: c.score,
            dims: c.structure.map(|s| s.dims),
            n_vars: c.structure.map(|s| s.n_vars),
            nnz: c.structure.map(|s| s.nnz),
        }),
    )
}

fn load_data(cli: &Cli) -> Result<Dataset> {
    read_dataset(require(&cli.data, "data")?, &cli.response)
}

fn train_cmd(cli: &Cli, cfg: &ExperimentConfig, out: &Path, tuned: bool) -> Result<()> {
    if tuned && cfg.tuning.is_none() {
        return Err(HarnessError::Contract("tune needs a [tuning] section in --config".into()));
    }
    let mut cfg = cfg.clone();
    if !tuned {
        cfg.tuning = None;
    }
    let ds = load_data(cli)?;
    let task = cfg.data.task()?;
    let f = fit(&cfg, &ds.x, &ds.y, task, cfg.seed)?;
    create_dir(out)?;
    save_model(&f.model, &f.penalty, cfg.seed, &out.join("model.json"))?;
    write_history(&out.join("history.csv"), &f.history)?;
    if let Some(t) = &f.tuning {
        write_tuning(&out.join("tuning.csv"), t)?;
        println!(
            "chosen lambdas: {} {} {} {}",
            f.penalty.lambda1, f.penalty.lambda2, f.penalty.lambda3, f.penalty.lambda4
        );
    }
    let s = active_structure(&f.model);
    println!("dims {} variables {} nonzero weights {}", s.dims, s.n_vars, s.nnz);
    Ok(())
}

#[derive(Serialize)]
struct EvaluationDoc {
    n: usize,
    #[serde(flatten)]
    prediction: PredictionMetrics,
    dims: usize,
    n_vars: usize,
    nnz: usize,
    prop0: f64,
    /// 1-based indices of the selected covariates.
    selected: Vec<usize>,
}

fn evaluate(cli: &Cli, out: &Path) -> Result<()> {
    let saved = load_model(require(&cli.model, "model")?)?;
    let ds = load_data(cli)?;
    let m = &saved.model;
    let pred = predict_scores(m, &ds.x)?;
    let prediction = prediction_metrics(&pred, &ds.y, None, m.task)?;
    let s = active_structure(m);
    let doc = EvaluationDoc {
        n: ds.y.len(),
        prediction,
        dims: s.dims,
        n_vars: s.n_vars,
        nnz: s.nnz,
        prop0: prop_zero(m),
        selected: m.rep.active_col_indices().iter().map(|j| j + 1).collect(),
    };
    if cli.out.is_some() {
        create_dir(out)?;
        write_json(&out.join("metrics.json"), &doc)?;
    }
    println!("{}", serde_json::to_string_pretty(&doc).expect("metrics serialize"));
    Ok(())
}

fn test_covariates(cli: &Cli, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let saved = load_model(require(&cli.model, "model")?)?;
    let ds = load_data(cli)?;
    let opts = cfg.tests.covariate.to_options(cfg.seed);
    let r = covariate_test(&saved.model, &ds.x, &ds.y, &opts)?;
    let doc = CovariateOutcome {
        rep: 0,
        seed: cfg.seed,
        n: r.n,
        dims: Some(r.dims),
        sigma1_sq: Some(r.sigma1_sq),
        results: r
            .results
            .iter()
            .map(|c| CovariateRow {
                variable: ds.features[c.column].clone(),
                statistic: c.statistic,
                df: c.df,
                p_value: c.p_value,
            })
            .collect(),
        degenerate: r.degenerate,
        error: None,
    };
    create_dir(&out.join("tests"))?;
    write_json(&out.join("tests").join("covariates.json"), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    Ok(())
}

fn test_representations(cli: &Cli, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let raw = require(&cli.index_set, "index-set")?;
    let index = parse_index_set(raw).map_err(HarnessError::Contract)?;
    let ds = load_data(cli)?;
    let (rows, power, task) = match &cli.model {
        Some(p) => {
            let m: DeepInModel = load_model(p)?.model;
            (m.rep.matrix().rows(), m.net.power(), m.task)
        }
        None => (
            cfg.model.rows.unwrap_or(ds.x.cols()),
            cfg.model.power,
            cfg.data.task()?,
        ),
    };
    let opts = cfg.tests.representation.to_options(rows, power, cfg.seed);
    let r = deepin_core::inference::representation_test(&ds.x, &ds.y, task, &index, &opts)?;
    let doc = RepresentationOutcome {
        rep: 0,
        seed: cfg.seed,
        n: ds.y.len(),
        index_set: index.iter().map(|k| k + 1).collect(),
        t_n: Some(r.t_n),
        sigma2: Some(r.sigma2),
        z: Some(r.z),
        p_value: Some(r.p_value),
        error: None,
    };
    create_dir(&out.join("tests"))?;
    write_json(&out.join("tests").join("representation.json"), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    Ok(())
}
