//! Value types shared across the crate: datasets, forest parameters,
//! step distribution functions and quantile levels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of levels a categorical column may declare. Level subsets
/// are stored as 64-bit masks.
pub const MAX_LEVELS: u32 = 64;

/// Tolerance used when comparing accumulated probabilities against a level.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical { levels: u32 },
}

impl ColumnKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical { .. })
    }
}

/// Covariates plus a response block.
///
/// Covariates are stored column-major. Categorical columns hold integer level
/// codes in `0..levels`. When `events` is present the response is an observed
/// time `y_i = min(t_i, c_i)` and `events[i]` is the indicator `t_i <= c_i`;
/// this marks the censored-data (survival) task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    columns: Vec<Vec<f64>>,
    response: Vec<f64>,
    events: Option<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    columns: Vec<Vec<f64>>,
    response: Vec<f64>,
    #[serde(default)]
    events: Option<Vec<bool>>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        Dataset::new(r.names, r.kinds, r.columns, r.response, r.events)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            names: d.names,
            kinds: d.kinds,
            columns: d.columns,
            response: d.response,
            events: d.events,
        }
    }
}

impl Dataset {
    pub fn new(
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
        columns: Vec<Vec<f64>>,
        response: Vec<f64>,
        events: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = response.len();
        let p = columns.len();
        if names.len() != p || kinds.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} names and {} kinds for {} columns",
                names.len(),
                kinds.len(),
                p
            )));
        }
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 rows, got {n}")));
        }
        if p == 0 {
            return Err(Error::InvalidDataset("no covariate columns".into()));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column '{}' has {} rows, response has {}",
                    names[j],
                    col.len(),
                    n
                )));
            }
            for (i, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::MissingValue { column: names[j].clone(), row: i });
                }
                if let ColumnKind::Categorical { levels } = kinds[j] {
                    if levels == 0 || levels > MAX_LEVELS {
                        return Err(Error::InvalidDataset(format!(
                            "column '{}' declares {levels} levels (allowed 1..={MAX_LEVELS})",
                            names[j]
                        )));
                    }
                    if v < 0.0 || v.fract() != 0.0 || v >= levels as f64 {
                        return Err(Error::UnknownCategory {
                            column: names[j].clone(),
                            value: v,
                            levels,
                        });
                    }
                }
            }
        }
        for (i, &y) in response.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::MissingValue { column: "response".into(), row: i });
            }
        }
        if let Some(ev) = &events {
            if ev.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} event indicators for {} rows",
                    ev.len(),
                    n
                )));
            }
            if let Some((i, &y)) = response.iter().enumerate().find(|(_, &y)| y <= 0.0) {
                return Err(Error::NonpositiveTime { row: i, value: y });
            }
        }
        Ok(Dataset { names, kinds, columns, response, events })
    }

    /// Builds a dataset whose covariates are all continuous, named `x1..xp`.
    pub fn from_columns(columns: Vec<Vec<f64>>, response: Vec<f64>, events: Option<Vec<bool>>) -> Result<Self> {
        let p = columns.len();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Dataset::new(names, vec![ColumnKind::Continuous; p], columns, response, events)
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn kind(&self, j: usize) -> ColumnKind {
        self.kinds[j]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn events(&self) -> Option<&[bool]> {
        self.events.as_deref()
    }

    /// Event indicator for row `i`; rows of an uncensored dataset count as events.
    pub fn is_event(&self, i: usize) -> bool {
        self.events.as_ref().is_none_or(|e| e[i])
    }

    pub fn is_survival(&self) -> bool {
        self.events.is_some()
    }

    pub fn n_events(&self) -> usize {
        match &self.events {
            Some(e) => e.iter().filter(|&&d| d).count(),
            None => self.n(),
        }
    }

    /// Rows `idx` (in that order) as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect();
        let response = idx.iter().map(|&i| self.response[i]).collect();
        let events = self.events.as_ref().map(|e| idx.iter().map(|&i| e[i]).collect());
        Dataset::new(self.names.clone(), self.kinds.clone(), columns, response, events)
    }

    /// Checks that `x` is a valid covariate vector for this dataset's schema.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        check_point(&self.kinds, x)
    }
}

pub(crate) fn check_point(kinds: &[ColumnKind], x: &[f64]) -> Result<()> {
    if x.len() != kinds.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariate vector has {} entries, expected {}",
            x.len(),
            kinds.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DimensionMismatch("non-finite covariate value".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    /// `n` draws with replacement.
    #[default]
    Bootstrap,
}

/// Tuning parameters of one forest.
///
/// `nodesize` is the minimum (in-bag) node size eligible for splitting in
/// regression forests, and the minimum number of events per terminal node in
/// survival forests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub mtry: usize,
    pub nodesize: usize,
    pub n_trees: usize,
    #[serde(default)]
    pub resample: Resample,
    pub seed: u64,
    /// Drop covariates that are constant within a node from the candidate
    /// pool before drawing `mtry` of them.
    #[serde(default)]
    pub exclude_pure: bool,
}

pub const DEFAULT_N_TREES: usize = 500;

impl ForestParams {
    pub fn new(mtry: usize, nodesize: usize) -> Self {
        ForestParams {
            mtry,
            nodesize,
            n_trees: DEFAULT_N_TREES,
            resample: Resample::Bootstrap,
            seed: 0,
            exclude_pure: false,
        }
    }

    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Regression defaults: `mtry = ceil(p/3)`, `nodesize = 5`.
    pub fn regression_default(p: usize) -> Self {
        ForestParams::new(p.div_ceil(3).max(1), 5)
    }

    /// Survival defaults: `mtry = ceil(sqrt(p))`, `nodesize = 15`.
    pub fn survival_default(p: usize) -> Self {
        ForestParams::new(((p as f64).sqrt().ceil() as usize).max(1), 15)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.mtry == 0 || self.mtry > p {
            return Err(Error::InvalidParams(format!("mtry {} outside [1, {p}]", self.mtry)));
        }
        if self.nodesize == 0 {
            return Err(Error::InvalidParams("nodesize must be positive".into()));
        }
        if self.n_trees == 0 {
            return Err(Error::InvalidParams("n_trees must be positive".into()));
        }
        Ok(())
    }
}

/// Right-continuous step distribution function.
///
/// `prob[k]` is the value of the function on `[support[k], support[k+1])`; the
/// function is 0 below `support[0]`. Survival estimates may plateau below 1;
/// the plateau level is [`StepCdf::tau_star`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCdf {
    support: Vec<f64>,
    prob: Vec<f64>,
}

impl StepCdf {
    pub fn new(support: Vec<f64>, prob: Vec<f64>) -> Result<Self> {
        if support.len() != prob.len() {
            return Err(Error::DimensionMismatch("support and prob lengths differ".into()));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite support point".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("support must be strictly increasing".into()));
        }
        if prob.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Format("probabilities must lie in [0, 1]".into()));
        }
        if prob.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format("probabilities must be nondecreasing".into()));
        }
        Ok(StepCdf { support, prob })
    }

    /// Builds a CDF from jump masses at increasing points, dropping zero jumps
    /// and clamping accumulated rounding into `[0, 1]`. With `complete` the
    /// last value is set to exactly 1.
    pub(crate) fn from_jumps(points: impl IntoIterator<Item = (f64, f64)>, complete: bool) -> StepCdf {
        let mut support = Vec::new();
        let mut prob = Vec::new();
        let mut acc = 0.0f64;
        for (t, m) in points {
            if m <= 0.0 {
                continue;
            }
            acc += m;
            let v = acc.clamp(0.0, 1.0);
            support.push(t);
            prob.push(v);
        }
        if complete {
            if let Some(last) = prob.last_mut() {
                *last = 1.0;
            }
        }
        StepCdf { support, prob }
    }

    /// Trusted constructor for internally built, already valid functions.
    pub(crate) fn from_parts(support: Vec<f64>, prob: Vec<f64>) -> StepCdf {
        debug_assert!(support.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(prob.windows(2).all(|w| w[0] <= w[1]));
        StepCdf { support, prob }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Largest attained probability; 0 for an empty function.
    pub fn tau_star(&self) -> f64 {
        self.prob.last().copied().unwrap_or(0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.support.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.prob[k - 1]
        }
    }

    /// Mean of the distribution when it is complete (`tau_star == 1`).
    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        let mut m = 0.0;
        for (s, p) in self.support.iter().zip(&self.prob) {
            m += s * (p - prev);
            prev = *p;
        }
        m
    }
}

/// A probability level in the open unit interval.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct QuantileRequest {
    tau: f64,
}

impl QuantileRequest {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileRequest { tau })
        } else {
            Err(Error::InvalidTau(tau))
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}
