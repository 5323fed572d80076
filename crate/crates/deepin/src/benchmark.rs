//! Monte Carlo replications of one experiment configuration.
//!
//! Replication `i` uses seed `seed + i` for data, initialization and
//! training. Replications run on the rayon pool; results are collected in
//! index order and written by a single writer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use deepin_core::datagen::gen_setting;
use deepin_core::inference::{covariate_test, representation_test};
use deepin_core::trainer::{active_structure, train, tune, validation_split, TrainHistory, TuneResult};
use deepin_core::{DeepInModel, Matrix, PenaltyConfig, Rng, Task};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_index_set_values, DataSource, ExperimentConfig, Method};
use crate::dataset::{read_dataset, Dataset};
use crate::error::{HarnessError, Result};
use crate::metrics::{prediction_metrics, prop_zero, selection_metrics, summarize, Summary};
use crate::model_file::save_model;

/// One fitted model and how it was obtained.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: DeepInModel,
    pub penalty: PenaltyConfig,
    pub history: TrainHistory,
    pub tuning: Option<TuneResult>,
}

/// Initializes and trains the configured method on `(x, y)`.
///
/// `vanilla-dnn` freezes `B` at the identity with every penalty and
/// truncation off; `index-model(k)` uses a `k`-row `B` with the row penalty
/// off. With a `[tuning]` section the penalties of `deepin` and
/// `index-model` are chosen by validation search first.
pub fn fit(cfg: &ExperimentConfig, x: &Matrix, y: &[f64], task: Task, seed: u64) -> Result<Fit> {
    let d = x.cols();
    let mut init_rng = Rng::new(seed).fork(1);
    let hidden = &cfg.model.hidden;
    let power = cfg.model.power;
    let mut opts = cfg.train.to_options(seed);
    let (model, mut penalty) = match cfg.method {
        Method::DeepIn => {
            let rows = cfg.model.rows.unwrap_or(d);
            let m = DeepInModel::init(d, rows, hidden, power, task, &mut init_rng)?;
            (m, cfg.penalty.to_config())
        }
        Method::VanillaDnn => {
            let mut m = DeepInModel::init(d, d, hidden, power, task, &mut init_rng)?;
            *m.rep.matrix_mut() = Matrix::identity(d);
            opts.freeze_rep = true;
            (m, crate::config::PenaltySection::none().to_config())
        }
        Method::IndexModel(k) => {
            let m = DeepInModel::init(d, k, hidden, power, task, &mut init_rng)?;
            let mut p = cfg.penalty.to_config();
            p.lambda1 = 0.0;
            (m, p)
        }
    };
    let mut tuning = None;
    if let (Some(section), false) = (&cfg.tuning, cfg.method == Method::VanillaDnn) {
        let mut grids = section.to_grids();
        if matches!(cfg.method, Method::IndexModel(_)) {
            grids.lambda1 = vec![0.0];
        }
        let result = tune(&model, x, y, &grids, &penalty, &opts)?;
        penalty = result.config;
        tuning = Some(result);
    }
    let (model, history) = train(model, x, y, &penalty, &opts)?;
    Ok(Fit {
        model,
        penalty,
        history,
        tuning,
    })
}

/// Probabilities for classification, predictions for regression.
pub fn predict_scores(model: &DeepInModel, x: &Matrix) -> Result<Vec<f64>> {
    match model.task {
        Task::Regression => Ok(model.predict_rows(x)?),
        Task::Classification => (0..x.rows()).map(|i| Ok(model.predict_proba(x.row(i))?)).collect(),
    }
}

/// One line of `replications.csv`. Empty cells mark metrics that do not
/// apply or could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    pub status: String,
    pub pe: Option<f64>,
    pub mse: Option<f64>,
    pub acc: Option<f64>,
    pub auc: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub dims: Option<usize>,
    pub n_vars: Option<usize>,
    pub nnz: Option<usize>,
    pub prop0: Option<f64>,
    pub objective: Option<f64>,
    pub error: String,
}

impl ReplicationRow {
    fn failed(rep: usize, seed: u64, error: String) -> Self {
        ReplicationRow {
            rep,
            seed,
            status: "failed".into(),
            pe: None,
            mse: None,
            acc: None,
            auc: None,
            tpr: None,
            fpr: None,
            dims: None,
            n_vars: None,
            nnz: None,
            prop0: None,
            objective: None,
            error,
        }
    }

    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "pe" => self.pe,
            "mse" => self.mse,
            "acc" => self.acc,
            "auc" => self.auc,
            "tpr" => self.tpr,
            "fpr" => self.fpr,
            "dims" => self.dims.map(|v| v as f64),
            "n_vars" => self.n_vars.map(|v| v as f64),
            "nnz" => self.nnz.map(|v| v as f64),
            "prop0" => self.prop0,
            "objective" => self.objective,
            _ => None,
        }
    }
}

const METRICS: [&str; 11] = ["pe", "mse", "acc", "auc", "tpr", "fpr", "dims", "n_vars", "nnz", "prop0", "objective"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateRow {
    pub variable: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: Option<f64>,
}

/// Covariate test on one replication's training data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateOutcome {
    pub rep: usize,
    pub seed: u64,
    pub n: usize,
    pub dims: Option<usize>,
    pub sigma1_sq: Option<f64>,
    pub results: Vec<CovariateRow>,
    pub degenerate: Option<String>,
    pub error: Option<String>,
}

/// Representation test of one index set on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationOutcome {
    pub rep: usize,
    pub seed: u64,
    pub n: usize,
    /// 1-based.
    pub index_set: Vec<usize>,
    pub t_n: Option<f64>,
    pub sigma2: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub row: ReplicationRow,
    pub fit: Option<Fit>,
    pub covariate: Option<CovariateOutcome>,
    pub representation: Vec<RepresentationOutcome>,
}

/// One point of a rejection-rate curve, in long format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub test: String,
    pub target: String,
    pub n: usize,
    pub alpha: f64,
    pub replications: usize,
    pub rejections: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub method: String,
    pub seed: u64,
    pub replications: usize,
    pub failures: usize,
    /// Mean and SD over successful replications.
    pub metrics: BTreeMap<String, Summary>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub config: ExperimentConfig,
    pub replications: Vec<Replication>,
    pub summary: BenchmarkSummary,
    pub curves: Vec<CurvePoint>,
}

struct RepData {
    train_x: Matrix,
    train_y: Vec<f64>,
    test_x: Matrix,
    test_y: Vec<f64>,
    f0_test: Option<Vec<f64>>,
    support: Option<Vec<usize>>,
}

fn rep_data(cfg: &ExperimentConfig, csv: Option<&Dataset>, seed: u64) -> Result<RepData> {
    match csv {
        None => {
            let spec = cfg.data.synthetic_spec(seed)?;
            let (train_set, test_set) = gen_setting(&spec)?.split_at(cfg.data.n_train());
            Ok(RepData {
                support: Some(train_set.truth.support.clone()),
                f0_test: Some(test_set.truth.f0),
                train_x: train_set.x,
                train_y: train_set.y,
                test_x: test_set.x,
                test_y: test_set.y,
            })
        }
        Some(ds) => {
            let (train_idx, test_idx) = validation_split(ds.y.len(), cfg.data.test_fraction, seed);
            let take = |idx: &[usize]| {
                (
                    Matrix::from_fn(idx.len(), ds.x.cols(), |i, j| ds.x[(idx[i], j)]),
                    idx.iter().map(|&i| ds.y[i]).collect::<Vec<f64>>(),
                )
            };
            let (train_x, train_y) = take(&train_idx);
            let (test_x, test_y) = take(&test_idx);
            Ok(RepData {
                train_x,
                train_y,
                test_x,
                test_y,
                f0_test: None,
                support: None,
            })
        }
    }
}

fn run_replication(cfg: &ExperimentConfig, csv: Option<&Dataset>, task: Task, rep: usize) -> Replication {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let failed = |e: HarnessError| Replication {
        row: ReplicationRow::failed(rep, seed, e.to_string()),
        fit: None,
        covariate: None,
        representation: Vec::new(),
    };
    let data = match rep_data(cfg, csv, seed) {
        Ok(d) => d,
        Err(e) => return failed(e),
    };
    let fitted = match fit(cfg, &data.train_x, &data.train_y, task, seed) {
        Ok(f) => f,
        Err(e) => return failed(e),
    };
    let (eval_x, eval_y, f0) = if data.test_y.is_empty() {
        (&data.train_x, &data.train_y, None)
    } else {
        (&data.test_x, &data.test_y, data.f0_test.as_deref())
    };
    let pm = match predict_scores(&fitted.model, eval_x).and_then(|p| prediction_metrics(&p, eval_y, f0, task)) {
        Ok(m) => m,
        Err(e) => return failed(e),
    };
    let structure = active_structure(&fitted.model);
    let (tpr, fpr) = data
        .support
        .as_ref()
        .and_then(|s| selection_metrics(&fitted.model.rep.active_col_indices(), s, data.train_x.cols()).ok())
        .map_or((None, None), |(t, f)| (Some(t), Some(f)));
    let row = ReplicationRow {
        rep,
        seed,
        status: "ok".into(),
        pe: pm.pe,
        mse: pm.mse,
        acc: pm.acc,
        auc: pm.auc,
        tpr,
        fpr,
        dims: Some(structure.dims),
        n_vars: Some(structure.n_vars),
        nnz: Some(structure.nnz),
        prop0: Some(prop_zero(&fitted.model)),
        objective: fitted.history.last().map(|r| r.objective),
        error: pm.diagnostics.join("; "),
    };
    let covariate = cfg
        .tests
        .covariate
        .enabled
        .then(|| covariate_outcome(cfg, &fitted.model, &data, rep, seed));
    let representation = cfg
        .tests
        .representation
        .index_sets
        .iter()
        .map(|set| representation_outcome(cfg, &fitted.model, &data, task, set, rep, seed))
        .collect();
    Replication {
        row,
        fit: Some(fitted),
        covariate,
        representation,
    }
}

fn covariate_outcome(cfg: &ExperimentConfig, model: &DeepInModel, data: &RepData, rep: usize, seed: u64) -> CovariateOutcome {
    let opts = cfg.tests.covariate.to_options(seed);
    let mut out = CovariateOutcome {
        rep,
        seed,
        n: data.train_y.len(),
        dims: None,
        sigma1_sq: None,
        results: Vec::new(),
        degenerate: None,
        error: None,
    };
    match covariate_test(model, &data.train_x, &data.train_y, &opts) {
        Ok(r) => {
            out.dims = Some(r.dims);
            out.sigma1_sq = Some(r.sigma1_sq);
            out.degenerate = r.degenerate;
            out.results = r
                .results
                .iter()
                .map(|c| CovariateRow {
                    variable: format!("x{}", c.column + 1),
                    statistic: c.statistic,
                    df: c.df,
                    p_value: c.p_value,
                })
                .collect();
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

fn representation_outcome(
    cfg: &ExperimentConfig,
    model: &DeepInModel,
    data: &RepData,
    task: Task,
    set: &[usize],
    rep: usize,
    seed: u64,
) -> RepresentationOutcome {
    let mut out = RepresentationOutcome {
        rep,
        seed,
        n: data.train_y.len(),
        index_set: set.to_vec(),
        t_n: None,
        sigma2: None,
        z: None,
        p_value: None,
        error: None,
    };
    let index = match parse_index_set_values(set) {
        Ok(i) => i,
        Err(e) => {
            out.error = Some(e);
            return out;
        }
    };
    let rows = model.rep.matrix().rows();
    let opts = cfg.tests.representation.to_options(rows, cfg.model.power, seed);
    match representation_test(&data.train_x, &data.train_y, task, &index, &opts) {
        Ok(r) => {
            out.t_n = Some(r.t_n);
            out.sigma2 = Some(r.sigma2);
            out.z = Some(r.z);
            out.p_value = Some(r.p_value);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Runs every replication of `cfg`. Failures of single replications are
/// recorded in their rows; only setup errors abort the run.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkReport> {
    if cfg.replications == 0 {
        return Err(HarnessError::Contract("replications must be at least 1".into()));
    }
    let csv = match cfg.data.source {
        DataSource::Synthetic => {
            cfg.data.synthetic_spec(cfg.seed)?;
            None
        }
        DataSource::Csv => {
            let path = cfg.data.path.as_ref().ok_or_else(|| HarnessError::Contract("data.path is required".into()))?;
            Some(read_dataset(path, &cfg.data.response)?)
        }
    };
    let task = cfg.data.task()?;
    let replications: Vec<Replication> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, csv.as_ref(), task, rep))
        .collect();
    let summary = summarize_rows(cfg, replications.iter().map(|r| &r.row));
    let curves = rejection_curves(&replications, &cfg.tests.alphas);
    Ok(BenchmarkReport {
        config: cfg.clone(),
        replications,
        summary,
        curves,
    })
}

/// Mean and SD of each metric over the successful rows.
pub fn summarize_rows<'a>(cfg: &ExperimentConfig, rows: impl Iterator<Item = &'a ReplicationRow>) -> BenchmarkSummary {
    let rows: Vec<&ReplicationRow> = rows.collect();
    let ok: Vec<&&ReplicationRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let mut metrics = BTreeMap::new();
    for name in METRICS {
        let values: Vec<f64> = ok.iter().filter_map(|r| r.metric(name)).collect();
        if let Some(s) = summarize(&values) {
            metrics.insert(name.to_string(), s);
        }
    }
    BenchmarkSummary {
        method: cfg.method.to_string(),
        seed: cfg.seed,
        replications: rows.len(),
        failures: rows.len() - ok.len(),
        metrics,
    }
}

/// Rejection rates of every tested target at every level.
pub fn rejection_curves(reps: &[Replication], alphas: &[f64]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for r in reps {
        if let Some(c) = &r.covariate {
            for row in &c.results {
                if let Some(p) = row.p_value {
                    groups.entry(("covariate".into(), row.variable.clone(), c.n)).or_default().push(p);
                }
            }
        }
        for o in &r.representation {
            if let Some(p) = o.p_value {
                let target = o.index_set.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";");
                groups.entry(("representation".into(), target, o.n)).or_default().push(p);
            }
        }
    }
    let mut out = Vec::new();
    for ((test, target, n), ps) in groups {
        for &alpha in alphas {
            let rejections = ps.iter().filter(|p| **p < alpha).count();
            out.push(CurvePoint {
                test: test.clone(),
                target: target.clone(),
                n,
                alpha,
                replications: ps.len(),
                rejections,
                rate: rejections as f64 / ps.len() as f64,
            });
        }
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let io = |e: csv::Error| HarnessError::Contract(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Contract(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

/// Writes `replications.csv`, `summary.json`, `config.toml`,
/// `models/rep_<i>.json` and, when tests ran, `tests/*.json` and
/// `tests/curves.csv` under `out`.
pub fn write_artifacts(report: &BenchmarkReport, out: &Path) -> Result<()> {
    create_dir(&out.join("models"))?;
    let rows: Vec<&ReplicationRow> = report.replications.iter().map(|r| &r.row).collect();
    write_csv(&out.join("replications.csv"), &rows)?;
    write_json(&out.join("summary.json"), &report.summary)?;
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, report.config.to_toml()).map_err(|e| HarnessError::io(&cfg_path, e))?;
    for r in &report.replications {
        if let Some(f) = &r.fit {
            save_model(&f.model, &f.penalty, r.row.seed, &out.join("models").join(format!("rep_{}.json", r.row.rep)))?;
        }
    }
    let covariate: Vec<&CovariateOutcome> = report.replications.iter().filter_map(|r| r.covariate.as_ref()).collect();
    let representation: Vec<&RepresentationOutcome> = report.replications.iter().flat_map(|r| &r.representation).collect();
    if !covariate.is_empty() || !representation.is_empty() {
        create_dir(&out.join("tests"))?;
        if !covariate.is_empty() {
            write_json(&out.join("tests").join("covariate.json"), &covariate)?;
        }
        if !representation.is_empty() {
            write_json(&out.join("tests").join("representation.json"), &representation)?;
        }
        write_csv(&out.join("tests").join("curves.csv"), &report.curves)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PenaltySection;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            "replications = 3\nseed = 4\n[data]\nsetting = 1\nn = 200\nn_test = 100\nd = 6\ns0 = 3\nd0 = 2\n\
             [model]\nhidden = [6]\n[train]\nepochs = 15\n",
        )
        .unwrap()
    }

    #[test]
    fn summary_matches_recomputation_from_rows() {
        let report = run_benchmark(&tiny()).unwrap();
        assert_eq!(report.replications.len(), 3);
        for (i, r) in report.replications.iter().enumerate() {
            assert_eq!(r.row.rep, i);
            assert_eq!(r.row.seed, 4 + i as u64);
        }
        let pes: Vec<f64> = report.replications.iter().filter_map(|r| r.row.pe).collect();
        let s = report.summary.metrics["pe"];
        let mean = pes.iter().sum::<f64>() / pes.len() as f64;
        let sd = (pes.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (pes.len() as f64 - 1.0)).sqrt();
        assert!((s.mean - mean).abs() <= 1e-12);
        assert!((s.sd - sd).abs() <= 1e-12);
    }

    #[test]
    fn vanilla_fits_noiseless_linear_data() {
        let mut rng = Rng::new(2);
        let x = Matrix::from_fn(600, 3, |_, _| rng.normal());
        let y: Vec<f64> = (0..600).map(|i| x[(i, 0)] - 0.5 * x[(i, 2)] + 1.0).collect();
        let mut cfg = tiny();
        cfg.method = Method::VanillaDnn;
        cfg.model.hidden = vec![8];
        cfg.train.epochs = 60;
        let f = fit(&cfg, &x, &y, Task::Regression, 0).unwrap();
        assert_eq!(f.model.rep.matrix(), &Matrix::identity(3));
        let pred = f.model.predict_rows(&x).unwrap();
        let pe = prediction_metrics(&pred, &y, None, Task::Regression).unwrap().pe.unwrap();
        assert!(pe < 0.05, "pe {pe}");
    }

    #[test]
    fn index_model_has_k_rows_and_no_row_penalty() {
        let mut cfg = tiny();
        cfg.method = Method::IndexModel(2);
        let mut rng = Rng::new(1);
        let x = Matrix::from_fn(100, 6, |_, _| rng.normal());
        let y: Vec<f64> = (0..100).map(|i| x[(i, 0)]).collect();
        let f = fit(&cfg, &x, &y, Task::Regression, 0).unwrap();
        assert_eq!(f.model.rep.matrix().shape(), (2, 6));
        assert_eq!(f.penalty.lambda1, 0.0);
        assert_eq!(f.penalty.lambda2, PenaltySection::default().lambda2);
    }

    #[test]
    fn failures_are_recorded_and_the_run_continues() {
        let mut cfg = tiny();
        cfg.train.learning_rate = 1e6;
        cfg.train.clip_norm = 0.0;
        let report = run_benchmark(&cfg).unwrap();
        assert_eq!(report.summary.failures, 3);
        assert!(report.replications.iter().all(|r| r.row.status == "failed" && !r.row.error.is_empty()));
    }

    #[test]
    fn curves_count_rejections() {
        let rep = |p: f64| Replication {
            row: ReplicationRow::failed(0, 0, String::new()),
            fit: None,
            covariate: None,
            representation: vec![RepresentationOutcome {
                rep: 0,
                seed: 0,
                n: 10,
                index_set: vec![1, 2],
                t_n: None,
                sigma2: None,
                z: None,
                p_value: Some(p),
                error: None,
            }],
        };
        let reps = [rep(0.001), rep(0.03), rep(0.5), rep(0.07)];
        let c = rejection_curves(&reps, &[0.01, 0.05, 0.1]);
        let rates: Vec<f64> = c.iter().map(|p| p.rate).collect();
        assert_eq!(rates, vec![0.25, 0.5, 0.75]);
        assert_eq!(c[0].target, "1;2");
    }
}
