//! Out-of-bag losses and grid tuning of `(mtry, nodesize)`.
//!
//! Coverage estimators take the out-of-bag distribution estimates of the
//! training rows, so one fitted forest serves every quantile level.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ForestParams, StepCdf, PROB_EPS};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, Task};
use crate::quantile::{max_defined_quantile, quantile_from_cdf, quantile_unchecked};
use crate::rng::derive_seed;

/// Nodesize values searched for uncensored responses.
pub const REGRESSION_NODESIZES: [usize; 5] = [1, 5, 10, 25, 40];
/// Nodesize values searched for censored responses.
pub const SURVIVAL_NODESIZES: [usize; 4] = [3, 8, 15, 30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEstimate {
    pub tau: f64,
    /// Mean of `per_obs`, clipped to `[0, 1]`.
    pub tau_tilde_hat: f64,
    /// Per-row contributions. Weighted estimators may produce terms above 1.
    pub per_obs: Vec<f64>,
    /// Rows whose contribution is informative (all rows, except for the
    /// weighted estimator where only evaluable rows count).
    pub n_used: usize,
    /// Set when the raw mean fell outside `[0, 1]`.
    pub clipped: bool,
}

impl CoverageEstimate {
    fn from_terms(tau: f64, per_obs: Vec<f64>, n_used: usize) -> Self {
        let raw = per_obs.iter().sum::<f64>() / per_obs.len() as f64;
        let clipped = !(0.0..=1.0).contains(&raw);
        CoverageEstimate { tau, tau_tilde_hat: raw.clamp(0.0, 1.0), per_obs, n_used, clipped }
    }

    /// `tau_tilde_hat - tau`.
    pub fn bias(&self) -> f64 {
        self.tau_tilde_hat - self.tau
    }
}

/// Absolute distance between estimated marginal coverage and its target.
pub fn qcl_loss(cov: &CoverageEstimate) -> f64 {
    (cov.tau_tilde_hat - cov.tau).abs()
}

fn check_len(cdfs: &[StepCdf], data: &Dataset) -> Result<()> {
    if cdfs.len() != data.n() {
        return Err(Error::DimensionMismatch(format!("{} distribution estimates for {} rows", cdfs.len(), data.n())));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// Fraction of rows whose response lies at or below its estimated quantile.
/// Every row must be uncensored and every quantile defined.
pub fn coverage_uncensored_from_cdfs(cdfs: &[StepCdf], data: &Dataset, tau: f64) -> Result<CoverageEstimate> {
    check_tau(tau)?;
    check_len(cdfs, data)?;
    let y = data.response();
    let mut terms = Vec::with_capacity(data.n());
    for (i, cdf) in cdfs.iter().enumerate() {
        if !data.is_event(i) {
            return Err(Error::InvalidDataset(format!("row {i} is censored")));
        }
        let q = quantile_unchecked(cdf, tau)
            .value
            .ok_or_else(|| Error::InvalidDataset(format!("quantile {tau} undefined for row {i}")))?;
        terms.push(if y[i] <= q { 1.0 } else { 0.0 });
    }
    Ok(CoverageEstimate::from_terms(tau, terms, data.n()))
}

pub fn coverage_uncensored(forest: &Forest, tau: f64) -> Result<CoverageEstimate> {
    coverage_uncensored_from_cdfs(&forest.oob_cdfs()?, forest.training(), tau)
}

/// Which branch of the censored coverage table produced a contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QclcCase {
    /// Event, quantile defined: the indicator.
    EventDefined,
    /// Censored at or beyond the defined quantile: the indicator, which is 0.
    CensoredBeyond,
    /// Censored before the defined quantile: conditional probability.
    CensoredBefore,
    /// Event, quantile undefined: 1.
    EventUndefined,
    /// Censored at or before the largest defined quantile, quantile undefined.
    CensoredUndefinedBefore,
    /// Censored after the largest defined quantile, quantile undefined: bound.
    CensoredUndefinedAfter,
}

/// `1 - (1 - tau) / (1 - F(y))`, clipped to `[0, 1]`.
pub fn conditional_coverage(tau: f64, f_y: f64) -> f64 {
    let s = 1.0 - f_y;
    if s <= 0.0 {
        return 0.0;
    }
    (1.0 - (1.0 - tau) / s).clamp(0.0, 1.0)
}

/// `(tau - tau_star) / (1 - tau_star)`, clipped to `[0, 1]`.
pub fn plateau_bound(tau: f64, tau_star: f64) -> f64 {
    if tau_star >= 1.0 {
        return 0.0;
    }
    ((tau - tau_star) / (1.0 - tau_star)).clamp(0.0, 1.0)
}

/// Estimated probability that row `(y, event)` falls at or below its
/// estimated `tau` quantile, given its out-of-bag distribution estimate.
pub fn qclc_contribution_case(y: f64, event: bool, cdf: &StepCdf, tau: f64) -> (QclcCase, f64) {
    let q = quantile_unchecked(cdf, tau);
    match (q.value, event) {
        (Some(q), true) => (QclcCase::EventDefined, if y <= q { 1.0 } else { 0.0 }),
        (Some(q), false) if y >= q => (QclcCase::CensoredBeyond, 0.0),
        (Some(_), false) => (QclcCase::CensoredBefore, conditional_coverage(tau, cdf.eval(y))),
        (None, true) => (QclcCase::EventUndefined, 1.0),
        (None, false) => {
            debug_assert!(tau > q.tau_star + PROB_EPS);
            match max_defined_quantile(cdf) {
                Some(qmax) if y <= qmax => (QclcCase::CensoredUndefinedBefore, conditional_coverage(tau, cdf.eval(y))),
                _ => (QclcCase::CensoredUndefinedAfter, plateau_bound(tau, q.tau_star)),
            }
        }
    }
}

pub fn qclc_contribution(y: f64, event: bool, cdf: &StepCdf, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(qclc_contribution_case(y, event, cdf, tau).1)
}

pub fn coverage_qclc_from_cdfs(cdfs: &[StepCdf], data: &Dataset, tau: f64) -> Result<CoverageEstimate> {
    check_tau(tau)?;
    check_len(cdfs, data)?;
    let y = data.response();
    let terms = cdfs.iter().enumerate().map(|(i, c)| qclc_contribution_case(y[i], data.is_event(i), c, tau).1).collect();
    Ok(CoverageEstimate::from_terms(tau, terms, data.n()))
}

pub fn coverage_qclc(forest: &Forest, tau: f64) -> Result<CoverageEstimate> {
    require_survival(forest)?;
    coverage_qclc_from_cdfs(&forest.oob_cdfs()?, forest.training(), tau)
}

/// Product-limit estimate of the censoring survival function `P(C > t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoringSurvival {
    /// Distribution function `P(C <= t)`.
    cdf: StepCdf,
}

impl CensoringSurvival {
    /// `P(C > t)`.
    pub fn survival_at(&self, t: f64) -> f64 {
        1.0 - self.cdf.eval(t)
    }

    pub fn cdf(&self) -> &StepCdf {
        &self.cdf
    }

    /// Smallest positive value the survival function takes (1 if it never
    /// drops).
    pub fn min_positive(&self) -> f64 {
        self.cdf.prob().iter().map(|p| 1.0 - p).filter(|&s| s > PROB_EPS).fold(1.0, f64::min)
    }
}

/// Kaplan-Meier estimate with censorings as the events of interest. An event
/// and a censoring at the same time are ordered event first, so the failing
/// row is not at risk of censoring at that time. The result is independent
/// of row order.
pub fn km_censoring(data: &Dataset) -> Result<CensoringSurvival> {
    if !data.is_survival() {
        return Err(Error::TaskMismatch { expected: "survival" });
    }
    let y = data.response();
    let mut obs: Vec<(f64, bool)> = (0..data.n()).map(|i| (y[i], data.is_event(i))).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = obs.len();
    let mut support = Vec::new();
    let mut prob = Vec::new();
    let mut s = 1.0;
    let mut k = 0;
    while k < n {
        let t = obs[k].0;
        let end = k + obs[k..].partition_point(|o| o.0 <= t);
        let censored = obs[k..end].iter().filter(|o| !o.1).count();
        let events = end - k - censored;
        if censored > 0 {
            let at_risk = (n - k - events) as f64;
            s *= 1.0 - censored as f64 / at_risk;
            support.push(t);
            prob.push((1.0 - s).clamp(0.0, 1.0));
        }
        k = end;
    }
    Ok(CensoringSurvival { cdf: StepCdf::from_parts(support, prob) })
}

/// Inverse-probability-of-censoring weighted coverage. Row `i` is evaluable
/// when its quantile is defined and it is an event or censored strictly
/// after the quantile; evaluable rows contribute `1(y_i <= q_i) / G(y_i)`.
/// A zero `G(y_i)` is replaced by the smallest positive value of `G`.
pub fn coverage_ipcw_from_cdfs(
    cdfs: &[StepCdf],
    data: &Dataset,
    censoring: &CensoringSurvival,
    tau: f64,
) -> Result<CoverageEstimate> {
    check_tau(tau)?;
    check_len(cdfs, data)?;
    let y = data.response();
    let floor = censoring.min_positive();
    let mut used = 0;
    let terms = cdfs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let Some(q) = quantile_unchecked(c, tau).value else { return 0.0 };
            let event = data.is_event(i);
            if !(event || y[i] > q) {
                return 0.0;
            }
            used += 1;
            if event && y[i] <= q {
                let g = censoring.survival_at(y[i]);
                1.0 / if g > PROB_EPS { g } else { floor }
            } else {
                0.0
            }
        })
        .collect();
    Ok(CoverageEstimate::from_terms(tau, terms, used))
}

pub fn coverage_ipcw(forest: &Forest, tau: f64) -> Result<CoverageEstimate> {
    require_survival(forest)?;
    let data = forest.training();
    coverage_ipcw_from_cdfs(&forest.oob_cdfs()?, data, &km_censoring(data)?, tau)
}

fn require_survival(forest: &Forest) -> Result<()> {
    if forest.task() != Task::Survival {
        return Err(Error::TaskMismatch { expected: "survival" });
    }
    Ok(())
}

/// Mean squared out-of-bag prediction error.
pub fn mspe_oob(forest: &Forest) -> Result<f64> {
    let preds = forest.oob_mean_predictions()?;
    let y = forest.training().response();
    Ok(preds.iter().zip(y).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / y.len() as f64)
}

/// Harrell's concordance. Pair `(i, j)` is comparable when `y_i < y_j` and
/// row `i` is an event; it is concordant when `risk_i > risk_j`, and tied
/// risks count one half.
pub fn harrell_cindex(y: &[f64], events: &[bool], risk: &[f64]) -> Result<f64> {
    if y.len() != events.len() || y.len() != risk.len() {
        return Err(Error::DimensionMismatch("concordance inputs differ in length".into()));
    }
    // Sort by time so each event row is compared against the strictly later
    // suffix.
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let (mut num, mut den) = (0.0f64, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        if !events[i] {
            continue;
        }
        let start = pos + order[pos..].partition_point(|&j| y[j] <= y[i]);
        for &j in &order[start..] {
            den += 1;
            if risk[i] > risk[j] {
                num += 1.0;
            } else if risk[i] == risk[j] {
                num += 0.5;
            }
        }
    }
    if den == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(num / den as f64)
}

/// Median observed time, the horizon at which out-of-bag risk is read.
pub fn risk_horizon(data: &Dataset) -> f64 {
    let mut y = data.response().to_vec();
    y.sort_by(f64::total_cmp);
    let m = y.len();
    if m % 2 == 1 {
        y[m / 2]
    } else {
        0.5 * (y[m / 2 - 1] + y[m / 2])
    }
}

/// Concordance of out-of-bag risk with observed times. Risk is the
/// estimated probability of failure by the median observed time, a monotone
/// transform of the cumulative hazard there.
pub fn cindex_from_cdfs(cdfs: &[StepCdf], data: &Dataset) -> Result<f64> {
    check_len(cdfs, data)?;
    let h = risk_horizon(data);
    let risk: Vec<f64> = cdfs.iter().map(|c| c.eval(h)).collect();
    let events: Vec<bool> = (0..data.n()).map(|i| data.is_event(i)).collect();
    harrell_cindex(data.response(), &events, &risk)
}

pub fn cindex_oob(forest: &Forest) -> Result<f64> {
    require_survival(forest)?;
    cindex_from_cdfs(&forest.oob_cdfs()?, forest.training())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Theta {
    pub mtry: usize,
    pub nodesize: usize,
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.mtry, self.nodesize)
    }
}

/// Every `mtry` in `1..=p` crossed with `nodesizes`, ordered by `mtry` then
/// `nodesize`.
pub fn grid(p: usize, nodesizes: &[usize]) -> Vec<Theta> {
    let mut ns = nodesizes.to_vec();
    ns.sort_unstable();
    ns.dedup();
    (1..=p).flat_map(|mtry| ns.iter().map(move |&nodesize| Theta { mtry, nodesize })).collect()
}

/// The standard search grid for the task of `data`.
pub fn default_grid(data: &Dataset) -> Vec<Theta> {
    if data.is_survival() {
        grid(data.p(), &SURVIVAL_NODESIZES)
    } else {
        grid(data.p(), &REGRESSION_NODESIZES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Qcl,
    QclC,
    QclIpcw,
    Mspe,
    Cindex,
}

impl LossKind {
    pub fn needs_tau(self) -> bool {
        matches!(self, LossKind::Qcl | LossKind::QclC | LossKind::QclIpcw)
    }

    pub fn maximize(self) -> bool {
        self == LossKind::Cindex
    }

    pub fn task(self) -> Task {
        match self {
            LossKind::Qcl | LossKind::Mspe => Task::Regression,
            _ => Task::Survival,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Qcl => "qcl",
            LossKind::QclC => "qcl-c",
            LossKind::QclIpcw => "qcl-ipcw",
            LossKind::Mspe => "mspe",
            LossKind::Cindex => "cindex",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "qcl" => LossKind::Qcl,
            "qcl-c" => LossKind::QclC,
            "qcl-ipcw" => LossKind::QclIpcw,
            "mspe" => LossKind::Mspe,
            "cindex" => LossKind::Cindex,
            other => return Err(Error::InvalidParams(format!("unknown loss '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub tau: Option<f64>,
}

impl LossSpec {
    pub fn new(kind: LossKind, tau: Option<f64>) -> Result<Self> {
        match (kind.needs_tau(), tau) {
            (true, Some(t)) => check_tau(t)?,
            (true, None) => return Err(Error::InvalidParams(format!("loss {} needs tau", kind.name()))),
            (false, Some(_)) => return Err(Error::InvalidParams(format!("loss {} takes no tau", kind.name()))),
            (false, None) => {}
        }
        Ok(LossSpec { kind, tau })
    }
}

/// A forest fitted at one grid point, with its out-of-bag estimates.
#[derive(Debug, Clone)]
pub struct FittedPoint {
    pub forest: Arc<Forest>,
    pub oob: Vec<StepCdf>,
}

#[derive(Debug, Clone)]
pub struct GridEntry {
    pub theta: Theta,
    pub outcome: std::result::Result<FittedPoint, String>,
}

/// Forests for every grid point, all fitted to the same data.
#[derive(Debug, Clone)]
pub struct FittedGrid {
    pub data: Arc<Dataset>,
    pub entries: Vec<GridEntry>,
    censoring: Option<CensoringSurvival>,
}

/// Seed of grid point `index` under base seed `seed`.
pub fn grid_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// Fits one forest per grid point. Failures are kept per point rather than
/// aborting the search.
pub fn fit_grid(data: impl Into<Arc<Dataset>>, thetas: &[Theta], n_trees: usize, seed: u64) -> Result<FittedGrid> {
    let data = data.into();
    if thetas.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let censoring = if data.is_survival() { Some(km_censoring(&data)?) } else { None };
    let entries = thetas
        .iter()
        .enumerate()
        .map(|(k, &theta)| {
            let params = ForestParams::new(theta.mtry, theta.nodesize).with_trees(n_trees).with_seed(grid_seed(seed, k));
            let outcome = fit_forest(data.clone(), &params)
                .and_then(|forest| Ok(FittedPoint { oob: forest.oob_cdfs()?, forest: Arc::new(forest) }))
                .map_err(|e| e.to_string());
            GridEntry { theta, outcome }
        })
        .collect();
    Ok(FittedGrid { data, entries, censoring })
}

impl FittedGrid {
    pub fn censoring(&self) -> Option<&CensoringSurvival> {
        self.censoring.as_ref()
    }

    /// Coverage estimate of one fitted point; `kind` selects the estimator.
    pub fn coverage(&self, point: &FittedPoint, kind: LossKind, tau: f64) -> Result<CoverageEstimate> {
        match kind {
            LossKind::Qcl => coverage_uncensored_from_cdfs(&point.oob, &self.data, tau),
            LossKind::QclC => coverage_qclc_from_cdfs(&point.oob, &self.data, tau),
            LossKind::QclIpcw => {
                let g = self.censoring.as_ref().ok_or(Error::TaskMismatch { expected: "survival" })?;
                coverage_ipcw_from_cdfs(&point.oob, &self.data, g, tau)
            }
            _ => Err(Error::InvalidParams(format!("{} is not a coverage loss", kind.name()))),
        }
    }

    pub fn loss(&self, point: &FittedPoint, spec: LossSpec) -> Result<f64> {
        if spec.kind.task() != point.forest.task() {
            return Err(Error::TaskMismatch {
                expected: match spec.kind.task() {
                    Task::Regression => "regression",
                    Task::Survival => "survival",
                },
            });
        }
        match spec.kind {
            LossKind::Mspe => mspe_oob(&point.forest),
            LossKind::Cindex => cindex_from_cdfs(&point.oob, &self.data),
            kind => Ok(qcl_loss(&self.coverage(point, kind, spec.tau.ok_or(Error::InvalidTau(f64::NAN))?)?)),
        }
    }

    pub fn get(&self, theta: Theta) -> Option<&FittedPoint> {
        self.entries.iter().find(|e| e.theta == theta).and_then(|e| e.outcome.as_ref().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub theta: Theta,
    pub loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub loss_kind: LossKind,
    pub tau: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub chosen: Theta,
    pub chosen_loss: f64,
    /// Other candidates attaining the chosen loss, resolved by the tie-break.
    pub tied: Vec<Theta>,
    /// Set when a constrained search found no admissible candidate and fell
    /// back to the unconstrained optimum.
    pub fallback: bool,
}

/// Best of `(theta, loss)` pairs among those passing `admissible`: smallest
/// loss (largest when `maximize`), ties to the lowest `mtry` then the lowest
/// `nodesize`. Returns the winner, its loss and the tied runners-up.
pub fn select_best(
    scored: &[(Theta, f64)],
    maximize: bool,
    admissible: impl Fn(usize) -> bool,
) -> Option<(Theta, f64, Vec<Theta>)> {
    let mut idx: Vec<usize> = (0..scored.len()).filter(|&k| admissible(k) && !scored[k].1.is_nan()).collect();
    idx.sort_by_key(|&k| scored[k].0);
    let better = |a: f64, b: f64| if maximize { a > b } else { a < b };
    let mut best: Option<usize> = None;
    for &k in &idx {
        if best.is_none_or(|b| better(scored[k].1, scored[b].1)) {
            best = Some(k);
        }
    }
    let b = best?;
    let tied = idx.iter().filter(|&&k| k != b && scored[k].1 == scored[b].1).map(|&k| scored[k].0).collect();
    Some((scored[b].0, scored[b].1, tied))
}

/// Scores every fitted point and picks the best admissible one.
pub fn tune_fitted(grid: &FittedGrid, spec: LossSpec) -> Result<TuneResult> {
    let candidates: Vec<Candidate> = grid
        .entries
        .iter()
        .map(|e| match e.outcome.as_ref().map_err(Clone::clone).and_then(|p| grid.loss(p, spec).map_err(|x| x.to_string())) {
            Ok(l) => Candidate { theta: e.theta, loss: Some(l), error: None },
            Err(msg) => Candidate { theta: e.theta, loss: None, error: Some(msg) },
        })
        .collect();
    finish(spec, candidates)
}

pub(crate) fn finish(spec: LossSpec, candidates: Vec<Candidate>) -> Result<TuneResult> {
    let scored: Vec<(Theta, f64)> = candidates.iter().filter_map(|c| c.loss.map(|l| (c.theta, l))).collect();
    let (chosen, chosen_loss, tied) = select_best(&scored, spec.kind.maximize(), |_| true).ok_or_else(|| {
        let first = candidates.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        Error::AllCandidatesFailed(first)
    })?;
    Ok(TuneResult { loss_kind: spec.kind, tau: spec.tau, candidates, chosen, chosen_loss, tied, fallback: false })
}

/// Fits the grid and tunes it under `spec`.
pub fn grid_tune(
    data: impl Into<Arc<Dataset>>,
    thetas: &[Theta],
    spec: LossSpec,
    n_trees: usize,
    seed: u64,
) -> Result<TuneResult> {
    tune_fitted(&fit_grid(data, thetas, n_trees, seed)?, spec)
}

/// Estimated quantile of each row at level `tau`; `None` where undefined.
pub fn row_quantiles(cdfs: &[StepCdf], tau: f64) -> Result<Vec<Option<f64>>> {
    cdfs.iter().map(|c| quantile_from_cdf(c, tau).map(|q| q.value)).collect()
}
