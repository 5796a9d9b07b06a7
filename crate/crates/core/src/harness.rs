//! Simulation study driver: generate, fit the grid, tune, score, emit.
//!
//! Each (setting, replicate) cell is computed independently from a seed
//! derived from the run seed, the setting id and the replicate index, and
//! cached as JSON under `cells/`. A rerun reuses cached cells whose run
//! fingerprint matches, so an interrupted run resumes where it stopped.
//! Tables are assembled from the cells in setting-then-replicate order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::{Dataset, ForestParams};
use crate::error::{Error, Result};
use crate::intervals::{
    qcl_pair_interval, res_oob_interval, res_sc_interval, Interval, IntervalSpec, Sided,
};
use crate::metrics::{interval_metrics, oracle_select, quantile_metrics, t_interval, OracleMetric, QuantileMetrics};
use crate::quantile::quantile_unchecked;
use crate::rng::derive_seed;
use crate::simgen::{generate_with, CovariateType, FlcConfig, FlcId, SnrLevel, TEST_SIZE};
use crate::tuning::{default_grid, fit_grid, grid, tune_fitted, FittedGrid, LossKind, LossSpec, Theta, TuneResult};

/// Ways of choosing `(mtry, nodesize)` for a quantile forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Qcl,
    QclC,
    QclIpcw,
    Mspe,
    Cindex,
    Default,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Qcl, Method::QclC, Method::QclIpcw, Method::Mspe, Method::Cindex, Method::Default, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Qcl => "qcl",
            Method::QclC => "qcl-c",
            Method::QclIpcw => "qcl-ipcw",
            Method::Mspe => "mspe",
            Method::Cindex => "cindex",
            Method::Default => "default",
            Method::Oracle => "oracle",
        }
    }

    fn loss_kind(self) -> Option<LossKind> {
        match self {
            Method::Qcl => Some(LossKind::Qcl),
            Method::QclC => Some(LossKind::QclC),
            Method::QclIpcw => Some(LossKind::QclIpcw),
            Method::Mspe => Some(LossKind::Mspe),
            Method::Cindex => Some(LossKind::Cindex),
            Method::Default | Method::Oracle => None,
        }
    }

    pub fn applies_to(self, survival: bool) -> bool {
        match self.loss_kind() {
            Some(k) => (k.task() == crate::forest::Task::Survival) == survival,
            None => true,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown method '{s}'")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub settings: Vec<FlcConfig>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub taus: Vec<f64>,
    /// Interval level; no intervals are computed when absent.
    pub alpha: Option<f64>,
    pub seed: u64,
    pub n_trees: usize,
    pub test_n: usize,
    /// Nodesize grid override; the task's default grid when absent.
    pub nodesizes: Option<Vec<usize>>,
    pub oracle_metric: OracleMetric,
}

impl ExperimentConfig {
    pub fn new(settings: Vec<FlcConfig>, replicates: usize, taus: Vec<f64>, seed: u64) -> Self {
        ExperimentConfig {
            settings,
            replicates,
            methods: Method::ALL.to_vec(),
            taus,
            alpha: None,
            seed,
            n_trees: crate::data::DEFAULT_N_TREES,
            test_n: TEST_SIZE,
            nodesizes: None,
            oracle_metric: OracleMetric::CoverageBias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() || self.replicates == 0 {
            return Err(Error::InvalidParams("need at least one setting and one replicate".into()));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidTau(*t));
        }
        if let Some(a) = self.alpha {
            IntervalSpec::new(a, Sided::Two)?;
        }
        if self.n_trees == 0 || self.test_n < 2 {
            return Err(Error::InvalidParams("n_trees must be positive and test_n at least 2".into()));
        }
        for s in &self.settings {
            s.validate()?;
        }
        Ok(())
    }

    /// Everything that determines cell contents, as a comparable string.
    fn fingerprint(&self, setting: &FlcConfig) -> String {
        serde_json::json!({
            "setting": setting,
            "methods": self.methods,
            "taus": self.taus,
            "alpha": self.alpha,
            "seed": self.seed,
            "n_trees": self.n_trees,
            "test_n": self.test_n,
            "nodesizes": self.nodesizes,
            "oracle_metric": self.oracle_metric,
        })
        .to_string()
    }
}

pub fn cell_seed(seed: u64, id: FlcId, replicate: usize) -> u64 {
    derive_seed(seed, &[id.censored as u64, id.number as u64, replicate as u64])
}

/// Setting descriptors repeated on every row so each table stands alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingTag {
    pub flc: FlcId,
    pub replicate: usize,
    pub n: usize,
    pub p: usize,
    pub covariates: CovariateType,
    pub snr: SnrLevel,
    pub censoring: f64,
}

/// One (setting, replicate, method, tau) quantile result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub flc: FlcId,
    pub replicate: usize,
    pub n: usize,
    pub p: usize,
    pub covariates: CovariateType,
    pub snr: SnrLevel,
    pub censoring: f64,
    pub method: Method,
    pub tau: f64,
    pub mtry: usize,
    pub nodesize: usize,
    pub coverage_bias: f64,
    pub coverage_mse: f64,
    pub quantile_bias: f64,
    pub quantile_mse: f64,
    pub n_defined: usize,
    pub n_undefined: usize,
    /// Training-set coverage estimate of the chosen forest.
    pub est_coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenRow {
    pub flc: FlcId,
    pub replicate: usize,
    pub method: Method,
    pub tau: Option<f64>,
    pub mtry: usize,
    pub nodesize: usize,
    /// Training loss of the chosen point (test metric for the Oracle).
    pub loss: Option<f64>,
    pub n_tied: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub flc: FlcId,
    pub replicate: usize,
    pub censoring: f64,
    pub method: String,
    pub alpha: f64,
    pub coverage: f64,
    pub width_mean: f64,
    pub width_median: f64,
    pub width_sd: f64,
    pub n_used: usize,
    pub n_dropped: usize,
    pub lower_theta: Option<String>,
    pub upper_theta: Option<String>,
    pub oob_coverage: Option<f64>,
    pub fallback: bool,
}

/// Training and test performance of every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub flc: FlcId,
    pub replicate: usize,
    pub tau: f64,
    pub mtry: usize,
    pub nodesize: usize,
    pub est_coverage: Option<f64>,
    pub coverage_bias: Option<f64>,
    pub coverage_mse: Option<f64>,
    pub quantile_bias: Option<f64>,
    pub quantile_mse: Option<f64>,
    pub n_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub fingerprint: String,
    pub metrics: Vec<MetricsRow>,
    pub chosen: Vec<ChosenRow>,
    pub intervals: Vec<IntervalRow>,
    pub grid: Vec<GridRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub flc: FlcId,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub metrics: Vec<MetricsRow>,
    pub chosen: Vec<ChosenRow>,
    pub intervals: Vec<IntervalRow>,
    pub grid: Vec<GridRow>,
    pub failures: Vec<FailureRow>,
}

/// Test-set quantiles of one grid forest at each requested level.
struct TestQuantiles {
    levels: Vec<f64>,
    values: Vec<Vec<Option<f64>>>,
}

impl TestQuantiles {
    fn at(&self, tau: f64) -> &[Option<f64>] {
        let k = self.levels.iter().position(|&l| l == tau).expect("level was precomputed");
        &self.values[k]
    }
}

fn test_quantiles(grid: &FittedGrid, test: &Dataset, levels: &[f64]) -> Vec<Option<TestQuantiles>> {
    grid.entries
        .iter()
        .map(|e| {
            let point = e.outcome.as_ref().ok()?;
            let cdfs = point.forest.predict_cdfs(test).ok()?;
            let values = levels.iter().map(|&t| cdfs.iter().map(|c| quantile_unchecked(c, t).value).collect()).collect();
            Some(TestQuantiles { levels: levels.to_vec(), values })
        })
        .collect()
}

fn intervals_from(lo: &[Option<f64>], hi: &[Option<f64>]) -> Vec<Interval> {
    lo.iter()
        .zip(hi)
        .map(|(&a, &b)| match (a, b) {
            (Some(a), Some(b)) => Interval { lower: Some(a.min(b)), upper: Some(a.max(b)) },
            _ => Interval { lower: a, upper: b },
        })
        .collect()
}

fn default_theta(data: &Dataset) -> Theta {
    let d = if data.is_survival() {
        ForestParams::survival_default(data.p())
    } else {
        ForestParams::regression_default(data.p())
    };
    Theta { mtry: d.mtry, nodesize: d.nodesize }
}

struct Choice {
    theta: Theta,
    loss: Option<f64>,
    n_tied: usize,
    fallback: bool,
}

impl From<&TuneResult> for Choice {
    fn from(r: &TuneResult) -> Self {
        Choice { theta: r.chosen, loss: Some(r.chosen_loss), n_tied: r.tied.len(), fallback: r.fallback }
    }
}

/// Runs one (setting, replicate) cell.
pub fn run_cell(config: &ExperimentConfig, setting: &FlcConfig, replicate: usize) -> Result<CellResult> {
    let seed = cell_seed(config.seed, setting.id, replicate);
    let sim = generate_with(setting, seed, config.test_n)?;
    let train = Arc::new(sim.train);
    let survival = train.is_survival();
    let thetas = match &config.nodesizes {
        Some(ns) => grid(train.p(), ns),
        None => default_grid(&train),
    };
    let fitted = fit_grid(train.clone(), &thetas, config.n_trees, derive_seed(seed, &[1]))?;
    let mut levels = config.taus.clone();
    if let Some(a) = config.alpha {
        levels.extend([a / 2.0, 1.0 - a / 2.0]);
    }
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let test_q = test_quantiles(&fitted, &sim.test, &levels);
    let truth = &sim.test_truth;
    let tag = SettingTag {
        flc: setting.id,
        replicate,
        n: setting.n,
        p: setting.p,
        covariates: setting.covariates,
        snr: setting.snr,
        censoring: setting.censoring_target(),
    };
    let index_of = |t: Theta| fitted.entries.iter().position(|e| e.theta == t);
    let coverage_kind = if survival { LossKind::QclC } else { LossKind::Qcl };

    // Test metrics of every grid point at every tau.
    let mut per_theta: BTreeMap<(usize, u64), QuantileMetrics> = BTreeMap::new();
    let mut out = CellResult { fingerprint: config.fingerprint(setting), ..empty_cell() };
    for &tau in &config.taus {
        for (k, e) in fitted.entries.iter().enumerate() {
            let m = test_q[k].as_ref().and_then(|q| quantile_metrics(q.at(tau), truth, tau).ok());
            let est = e.outcome.as_ref().ok().and_then(|p| fitted.coverage(p, coverage_kind, tau).ok());
            if let Some(m) = m {
                per_theta.insert((k, tau.to_bits()), m);
            }
            out.grid.push(GridRow {
                flc: tag.flc,
                replicate,
                tau,
                mtry: e.theta.mtry,
                nodesize: e.theta.nodesize,
                est_coverage: est.map(|c| c.tau_tilde_hat),
                coverage_bias: m.map(|m| m.coverage_bias),
                coverage_mse: m.map(|m| m.coverage_mse),
                quantile_bias: m.map(|m| m.quantile_bias),
                quantile_mse: m.map(|m| m.quantile_mse),
                n_defined: m.map_or(0, |m| m.n_defined),
            });
        }
    }

    // Tau-free choices are tuned once.
    let mut untargeted: BTreeMap<Method, Result<TuneResult>> = BTreeMap::new();
    let mut tune_untargeted = |m: Method| -> Result<TuneResult> {
        untargeted
            .entry(m)
            .or_insert_with(|| tune_fitted(&fitted, LossSpec::new(m.loss_kind().expect("loss method"), None)?))
            .as_ref()
            .map(Clone::clone)
            .map_err(|e| Error::AllCandidatesFailed(e.to_string()))
    };

    for &tau in &config.taus {
        for &method in config.methods.iter().filter(|m| m.applies_to(survival)) {
            let choice = match method {
                Method::Default => Choice { theta: default_theta(&train), loss: None, n_tied: 0, fallback: false },
                Method::Oracle => {
                    let scored: Vec<(Theta, QuantileMetrics)> = fitted
                        .entries
                        .iter()
                        .enumerate()
                        .filter_map(|(k, e)| per_theta.get(&(k, tau.to_bits())).map(|m| (e.theta, *m)))
                        .collect();
                    let Some((theta, v)) = oracle_select(&scored, config.oracle_metric) else { continue };
                    let n_tied = scored.iter().filter(|(t, m)| *t != theta && m.get(config.oracle_metric) == v).count();
                    Choice { theta, loss: Some(v), n_tied, fallback: false }
                }
                Method::Mspe | Method::Cindex => match tune_untargeted(method) {
                    Ok(r) => Choice::from(&r),
                    Err(e) => return Err(e),
                },
                _ => {
                    let spec = LossSpec::new(method.loss_kind().expect("loss method"), Some(tau))?;
                    Choice::from(&tune_fitted(&fitted, spec)?)
                }
            };
            let k = index_of(choice.theta).ok_or_else(|| Error::InvalidParams(format!("{} is not on the grid", choice.theta)))?;
            out.chosen.push(ChosenRow {
                flc: tag.flc,
                replicate,
                method,
                tau: Some(tau),
                mtry: choice.theta.mtry,
                nodesize: choice.theta.nodesize,
                loss: choice.loss,
                n_tied: choice.n_tied,
                fallback: choice.fallback,
            });
            let Some(m) = per_theta.get(&(k, tau.to_bits())) else { continue };
            let est_kind = match method.loss_kind() {
                Some(k @ (LossKind::Qcl | LossKind::QclC | LossKind::QclIpcw)) => k,
                _ => coverage_kind,
            };
            let est = fitted.entries[k].outcome.as_ref().ok().and_then(|p| fitted.coverage(p, est_kind, tau).ok());
            out.metrics.push(MetricsRow {
                flc: tag.flc,
                replicate,
                n: tag.n,
                p: tag.p,
                covariates: tag.covariates,
                snr: tag.snr,
                censoring: tag.censoring,
                method,
                tau,
                mtry: choice.theta.mtry,
                nodesize: choice.theta.nodesize,
                coverage_bias: m.coverage_bias,
                coverage_mse: m.coverage_mse,
                quantile_bias: m.quantile_bias,
                quantile_mse: m.quantile_mse,
                n_defined: m.n_defined,
                n_undefined: m.n_undefined,
                est_coverage: est.map(|c| c.tau_tilde_hat),
            });
        }
    }

    if let Some(alpha) = config.alpha {
        let (tl, tu) = (alpha / 2.0, 1.0 - alpha / 2.0);
        let row = |method: &str, iv: &[Interval], lo: Option<Theta>, hi: Option<Theta>, oob: Option<f64>, fallback: bool| {
            interval_metrics(iv, truth).map(|m| IntervalRow {
                flc: tag.flc,
                replicate,
                censoring: tag.censoring,
                method: method.to_owned(),
                alpha,
                coverage: m.coverage,
                width_mean: m.width_mean,
                width_median: m.width_median,
                width_sd: m.width_sd,
                n_used: m.n_used,
                n_dropped: m.n_dropped,
                lower_theta: lo.map(|t| t.to_string()),
                upper_theta: hi.map(|t| t.to_string()),
                oob_coverage: oob,
                fallback,
            })
        };
        let pair_kinds: &[LossKind] = if survival { &[LossKind::QclC, LossKind::QclIpcw] } else { &[LossKind::Qcl] };
        for &kind in pair_kinds {
            let model = qcl_pair_interval(&fitted, kind, alpha)?;
            let theta_of = |e: &crate::intervals::Endpoint| match e {
                crate::intervals::Endpoint::Quantile { theta, .. } => *theta,
                _ => unreachable!("pair endpoints are quantiles"),
            };
            let (lo, hi) = (theta_of(&model.lower), theta_of(&model.upper));
            let (ql, qu) = (index_of(lo).expect("on grid"), index_of(hi).expect("on grid"));
            if let (Some(a), Some(b)) = (&test_q[ql], &test_q[qu]) {
                let iv = intervals_from(a.at(tl), b.at(tu));
                let cal = model.calibration.expect("pair intervals are calibrated");
                out.intervals.push(row(kind.name(), &iv, Some(lo), Some(hi), Some(cal.coverage), cal.fallback)?);
            }
        }
        let d = default_theta(&train);
        if let Some(Some(q)) = index_of(d).map(|k| &test_q[k]) {
            out.intervals.push(row("qrf-default", &intervals_from(q.at(tl), q.at(tu)), Some(d), Some(d), None, false)?);
        }
        if !survival {
            let spec = IntervalSpec::new(alpha, Sided::Two)?;
            let mspe = tune_untargeted(Method::Mspe)?;
            let point = fitted.get(mspe.chosen).expect("chosen point was fitted");
            let oob = res_oob_interval(point.forest.clone(), spec, true)?;
            out.intervals.push(row("res-oob", &oob.predict(&sim.test)?, Some(mspe.chosen), Some(mspe.chosen), None, false)?);
            let params = ForestParams::new(d.mtry, d.nodesize).with_trees(config.n_trees).with_seed(derive_seed(seed, &[3]));
            let sc = res_sc_interval(&train, &params, spec, derive_seed(seed, &[2]))?;
            out.intervals.push(row("res-sc", &sc.predict(&sim.test)?, Some(d), Some(d), None, false)?);
        }
    }
    Ok(out)
}

fn empty_cell() -> CellResult {
    CellResult { fingerprint: String::new(), metrics: vec![], chosen: vec![], intervals: vec![], grid: vec![] }
}

fn cell_path(dir: &Path, id: FlcId, replicate: usize) -> PathBuf {
    dir.join("cells").join(format!("{id}-r{replicate}.json"))
}

fn load_cell(path: &Path, fingerprint: &str) -> Option<CellResult> {
    let cell: CellResult = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    (cell.fingerprint == fingerprint).then_some(cell)
}

fn store_cell(path: &Path, cell: &CellResult) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec(cell)?)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Runs every cell, in parallel, and returns the assembled report. With
/// `out_dir`, cells are cached there and the tables are written as
/// `metrics.csv`, `chosen_params.csv`, `intervals.csv`, `grid.csv` and
/// `failures.csv`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Report> {
    config.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir.join("cells"))?;
    }
    let cells: Vec<(&FlcConfig, usize)> =
        config.settings.iter().flat_map(|s| (0..config.replicates).map(move |r| (s, r))).collect();
    let results: Vec<std::result::Result<CellResult, String>> = cells
        .par_iter()
        .map(|&(s, r)| {
            let fp = config.fingerprint(s);
            let path = out_dir.map(|d| cell_path(d, s.id, r));
            if let Some(cell) = path.as_deref().and_then(|p| load_cell(p, &fp)) {
                return Ok(cell);
            }
            let cell = run_cell(config, s, r).map_err(|e| e.to_string())?;
            if let Some(p) = &path {
                store_cell(p, &cell).map_err(|e| e.to_string())?;
            }
            Ok(cell)
        })
        .collect();
    let mut report = Report::default();
    for ((s, r), res) in cells.iter().zip(results) {
        match res {
            Ok(c) => {
                report.metrics.extend(c.metrics);
                report.chosen.extend(c.chosen);
                report.intervals.extend(c.intervals);
                report.grid.extend(c.grid);
            }
            Err(error) => {
                eprintln!("cell {}-r{r} failed: {error}", s.id);
                report.failures.push(FailureRow { flc: s.id, replicate: *r, error });
            }
        }
    }
    if let Some(dir) = out_dir {
        write_rows(&dir.join("metrics.csv"), &report.metrics)?;
        write_rows(&dir.join("chosen_params.csv"), &report.chosen)?;
        write_rows(&dir.join("intervals.csv"), &report.intervals)?;
        write_rows(&dir.join("grid.csv"), &report.grid)?;
        write_rows(&dir.join("failures.csv"), &report.failures)?;
    }
    Ok(report)
}

/// Writes serializable rows as CSV with a header, even when empty.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Replicate summary of one (setting, method, tau) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub flc: FlcId,
    pub censoring: f64,
    pub method: Method,
    pub tau: f64,
    pub n: usize,
    pub mean: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub covers_zero: Option<bool>,
    pub mean_abs: f64,
}

/// Means over replicates of `value` with 95% t-intervals, in first-seen
/// group order.
pub fn summarize_groups(rows: &[MetricsRow], value: impl Fn(&MetricsRow) -> f64) -> Vec<GroupSummary> {
    let mut order: Vec<(FlcId, Method, u64)> = Vec::new();
    let mut groups: BTreeMap<(FlcId, Method, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let key = (r.flc, r.method, r.tau.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_insert((r.censoring, Vec::new())).1.push(value(r));
    }
    order
        .into_iter()
        .map(|key| {
            let (censoring, v) = &groups[&key];
            let ci = t_interval(v, 0.95);
            GroupSummary {
                flc: key.0,
                censoring: *censoring,
                method: key.1,
                tau: f64::from_bits(key.2),
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                ci_lower: ci.map(|c| c.lower),
                ci_upper: ci.map(|c| c.upper),
                covers_zero: ci.map(|c| c.covers(0.0)),
                mean_abs: v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub method: Method,
    pub tau: f64,
    pub snr: SnrLevel,
    pub covariates: CovariateType,
    pub p: usize,
    pub mean_mtry: f64,
    pub count: usize,
}

/// Mean chosen `mtry` grouped by method, tau, SNR, covariate type and `p`.
pub fn mtry_trend_summary(rows: &[MetricsRow]) -> Vec<TrendRow> {
    type Key = (Method, u64, SnrLevel, u8, usize);
    let mut groups: BTreeMap<Key, (CovariateType, usize, usize)> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.method, r.tau.to_bits(), r.snr, r.covariates as u8, r.p)).or_insert((r.covariates, 0, 0));
        g.1 += r.mtry;
        g.2 += 1;
    }
    groups
        .into_iter()
        .map(|((method, tau, snr, _, p), (covariates, sum, count))| TrendRow {
            method,
            tau: f64::from_bits(tau),
            snr,
            covariates,
            p,
            mean_mtry: sum as f64 / count as f64,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OrderedSummary {
    flc: FlcId,
    method: Method,
    tau: f64,
    n: usize,
    mean: f64,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
    /// Position of the setting when sorted by the MSPE mean, descending.
    order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PerDataset {
    flc: FlcId,
    replicate: usize,
    censoring: f64,
    method: Method,
    tau: f64,
    value: f64,
}

fn per_dataset(rows: &[&MetricsRow], value: impl Fn(&MetricsRow) -> f64) -> Vec<PerDataset> {
    rows.iter()
        .map(|r| PerDataset {
            flc: r.flc,
            replicate: r.replicate,
            censoring: r.censoring,
            method: r.method,
            tau: r.tau,
            value: value(r),
        })
        .collect()
}

/// Writes figure tables `fig1.csv` to `fig9.csv` into `dir/plots` from the
/// tables of a finished run in `dir`:
///
/// 1. per-setting mean coverage bias at tau 0.1 for MSPE and default forests,
///    with the MSPE-descending order;
/// 2. and 3. per-dataset coverage bias and coverage MSE, uncensored;
/// 4. per-setting mean coverage bias at tau 0.1, every method, uncensored;
/// 5. per-dataset interval coverage and width;
/// 6. and 7. per-dataset coverage bias and coverage MSE, censored;
/// 8. per-setting mean coverage bias, every method and tau, censored;
/// 9. mean chosen `mtry` trend table.
pub fn plotdata(dir: &Path) -> Result<Vec<PathBuf>> {
    let metrics: Vec<MetricsRow> = read_rows(&dir.join("metrics.csv"))?;
    let intervals: Vec<IntervalRow> = read_rows(&dir.join("intervals.csv"))?;
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let unc: Vec<&MetricsRow> = metrics.iter().filter(|r| r.censoring == 0.0).collect();
    let cen: Vec<&MetricsRow> = metrics.iter().filter(|r| r.censoring > 0.0).collect();
    let owned = |v: &[&MetricsRow], keep: &dyn Fn(&MetricsRow) -> bool| -> Vec<MetricsRow> {
        v.iter().filter(|r| keep(r)).map(|r| (*r).clone()).collect()
    };
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let p = plots.join(name);
        f(&p)?;
        written.push(p);
        Ok(())
    };

    let fig1 = owned(&unc, &|r| r.tau == 0.1 && matches!(r.method, Method::Mspe | Method::Default));
    let s1 = summarize_groups(&fig1, |r| r.coverage_bias);
    let mut mspe: Vec<(FlcId, f64)> = s1.iter().filter(|s| s.method == Method::Mspe).map(|s| (s.flc, s.mean)).collect();
    mspe.sort_by(|a, b| b.1.total_cmp(&a.1));
    let rank = |id: FlcId| mspe.iter().position(|(f, _)| *f == id).unwrap_or(mspe.len());
    let ordered: Vec<OrderedSummary> =
        s1.into_iter()
            .map(|s| OrderedSummary {
                order: rank(s.flc),
                flc: s.flc,
                method: s.method,
                tau: s.tau,
                n: s.n,
                mean: s.mean,
                ci_lower: s.ci_lower,
                ci_upper: s.ci_upper,
            })
            .collect();
    emit("fig1.csv", &|p| write_rows(p, &ordered))?;
    emit("fig2.csv", &|p| write_rows(p, &per_dataset(&unc, |r| r.coverage_bias)))?;
    emit("fig3.csv", &|p| write_rows(p, &per_dataset(&unc, |r| r.coverage_mse)))?;
    let fig4 = owned(&unc, &|r| r.tau == 0.1);
    emit("fig4.csv", &|p| write_rows(p, &summarize_groups(&fig4, |r| r.coverage_bias)))?;
    emit("fig5.csv", &|p| write_rows(p, &intervals))?;
    emit("fig6.csv", &|p| write_rows(p, &per_dataset(&cen, |r| r.coverage_bias)))?;
    emit("fig7.csv", &|p| write_rows(p, &per_dataset(&cen, |r| r.coverage_mse)))?;
    let fig8 = owned(&cen, &|_| true);
    emit("fig8.csv", &|p| write_rows(p, &summarize_groups(&fig8, |r| r.coverage_bias)))?;
    emit("fig9.csv", &|p| write_rows(p, &mtry_trend_summary(&metrics)))?;
    Ok(written)
}
