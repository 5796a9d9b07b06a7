//! Regression and survival forests with out-of-bag bookkeeping.
//!
//! Every tree stores, per terminal node, the in-bag training rows it holds
//! and the jumps of the node's distribution estimate on a shared grid: the
//! empirical distribution of node responses for regression trees, and the
//! Kaplan-Meier distribution `1 - S(t)` for survival trees. A survival node
//! whose last observation is censored keeps its final value beyond its last
//! event time. Forest estimates average node estimates with equal weight per
//! tree.

mod build;
pub mod split;
pub mod tree;

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_point, Dataset, ForestParams, StepCdf};
use crate::error::{Error, Result};

pub use tree::{Leaf, Node, SplitRule, Tree};

/// Version tag written into serialized forests.
pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Survival,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    task: Task,
    params: ForestParams,
    training: Arc<Dataset>,
    grid: Vec<f64>,
    trees: Vec<Tree>,
    /// Row-major `n_trees x n` bootstrap multiplicities.
    inbag: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    forest: Forest,
}

const FORMAT_NAME: &str = "qcl-forest";

/// Fits a forest; the task follows from the presence of event indicators.
/// Tree `b` draws from stream `b` of `params.seed`, so the result is
/// identical for any degree of parallelism.
pub fn fit_forest(data: impl Into<Arc<Dataset>>, params: &ForestParams) -> Result<Forest> {
    let data = data.into();
    params.validate(data.p())?;
    let task = if data.is_survival() { Task::Survival } else { Task::Regression };
    if task == Task::Survival && data.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let y = data.response();
    let mut grid: Vec<f64> = (0..data.n()).filter(|&i| data.is_event(i)).map(|i| y[i]).collect();
    grid.sort_unstable_by(f64::total_cmp);
    grid.dedup();

    let ctx = build::Context { data: &data, params, task, grid: &grid };
    let grown: Vec<(Tree, Vec<u32>)> = (0..params.n_trees).into_par_iter().map(|b| build::grow_tree(&ctx, b)).collect();
    let mut trees = Vec::with_capacity(grown.len());
    let mut inbag = Vec::with_capacity(grown.len() * data.n());
    for (t, c) in grown {
        trees.push(t);
        inbag.extend(c);
    }
    Ok(Forest { task, params: *params, training: data, grid, trees, inbag })
}

impl Forest {
    pub fn task(&self) -> Task {
        self.task
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn training(&self) -> &Arc<Dataset> {
        &self.training
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn tree(&self, b: usize) -> &Tree {
        &self.trees[b]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Bootstrap multiplicity of training row `i` in tree `b`.
    pub fn inbag(&self, b: usize, i: usize) -> u32 {
        self.inbag[b * self.training.n() + i]
    }

    pub fn is_oob(&self, b: usize, i: usize) -> bool {
        self.inbag(b, i) == 0
    }

    pub fn oob_trees(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.trees.len()).filter(move |&b| self.is_oob(b, i))
    }

    fn check_row(&self, i: usize) -> Result<()> {
        if i >= self.training.n() {
            return Err(Error::DimensionMismatch(format!("row {i} out of range")));
        }
        Ok(())
    }

    /// Leaf of tree `b` containing training row `i`.
    pub fn leaf_of_row(&self, b: usize, i: usize) -> usize {
        let data = &self.training;
        self.trees[b].find_leaf(|j| data.value(i, j))
    }

    pub fn leaf_of_point(&self, b: usize, x: &[f64]) -> usize {
        self.trees[b].find_leaf(|j| x[j])
    }

    /// Averages the node estimates of the given `(tree, leaf)` pairs.
    fn average_leaves(&self, leaves: impl Iterator<Item = (usize, usize)>) -> Option<StepCdf> {
        let mut acc = vec![0.0f64; self.grid.len()];
        let mut count = 0usize;
        for (b, leaf) in leaves {
            count += 1;
            for &(g, m) in self.trees[b].leaf_jumps(leaf) {
                acc[g as usize] += m;
            }
        }
        if count == 0 {
            return None;
        }
        let scale = 1.0 / count as f64;
        let jumps = self.grid.iter().zip(&acc).map(|(&t, &m)| (t, m * scale));
        Some(StepCdf::from_jumps(jumps, self.task == Task::Regression))
    }

    /// Out-of-bag distribution estimate for training row `i`.
    pub fn oob_cdf(&self, i: usize) -> Result<StepCdf> {
        self.check_row(i)?;
        self.average_leaves(self.oob_trees(i).map(|b| (b, self.leaf_of_row(b, i)))).ok_or(Error::NeverOob(i))
    }

    /// Out-of-bag distribution estimates for every training row.
    pub fn oob_cdfs(&self) -> Result<Vec<StepCdf>> {
        (0..self.training.n()).into_par_iter().map(|i| self.oob_cdf(i)).collect()
    }

    /// Distribution estimate at `x`, averaged over all trees.
    pub fn predict_cdf(&self, x: &[f64]) -> Result<StepCdf> {
        check_point(self.training.kinds(), x)?;
        Ok(self.average_leaves((0..self.trees.len()).map(|b| (b, self.leaf_of_point(b, x)))).expect("forest has trees"))
    }

    /// Distribution estimate at `x` averaged over a subset of trees.
    pub fn predict_cdf_with(&self, x: &[f64], trees: &[usize]) -> Result<StepCdf> {
        check_point(self.training.kinds(), x)?;
        if let Some(&b) = trees.iter().find(|&&b| b >= self.trees.len()) {
            return Err(Error::DimensionMismatch(format!("tree {b} out of range")));
        }
        self.average_leaves(trees.iter().map(|&b| (b, self.leaf_of_point(b, x))))
            .ok_or_else(|| Error::Empty("no trees selected".into()))
    }

    /// Distribution estimates for every row of `test` (responses ignored).
    pub fn predict_cdfs(&self, test: &Dataset) -> Result<Vec<StepCdf>> {
        self.check_schema(test)?;
        (0..test.n()).into_par_iter().map(|i| self.predict_cdf(&test.row(i))).collect()
    }

    fn check_schema(&self, test: &Dataset) -> Result<()> {
        if test.kinds() != self.training.kinds() {
            return Err(Error::DimensionMismatch("test covariates do not match the training schema".into()));
        }
        Ok(())
    }

    fn require_regression(&self) -> Result<()> {
        if self.task != Task::Regression {
            return Err(Error::TaskMismatch { expected: "regression" });
        }
        Ok(())
    }

    /// Mean of terminal-node means over the trees where row `i` is out of bag.
    pub fn oob_mean_prediction(&self, i: usize) -> Result<f64> {
        self.require_regression()?;
        self.check_row(i)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for b in self.oob_trees(i) {
            sum += self.trees[b].leaf(self.leaf_of_row(b, i)).mean;
            count += 1;
        }
        if count == 0 {
            return Err(Error::NeverOob(i));
        }
        Ok(sum / count as f64)
    }

    pub fn oob_mean_predictions(&self) -> Result<Vec<f64>> {
        (0..self.training.n()).into_par_iter().map(|i| self.oob_mean_prediction(i)).collect()
    }

    /// Mean of terminal-node means over all trees.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.require_regression()?;
        check_point(self.training.kinds(), x)?;
        let sum: f64 = (0..self.trees.len()).map(|b| self.trees[b].leaf(self.leaf_of_point(b, x)).mean).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_means(&self, test: &Dataset) -> Result<Vec<f64>> {
        self.check_schema(test)?;
        (0..test.n()).into_par_iter().map(|i| self.predict_mean(&test.row(i))).collect()
    }

    /// Serializes to the versioned JSON envelope
    /// `{"format": "qcl-forest", "version": 1, "forest": {...}}`.
    pub fn to_json(&self) -> Result<String> {
        let file = ForestFile { format: FORMAT_NAME.into(), version: FOREST_FORMAT_VERSION, forest: self.clone() };
        Ok(serde_json::to_string(&file)?)
    }

    /// Decodes and structurally validates a serialized forest.
    pub fn from_json(s: &str) -> Result<Forest> {
        let file: ForestFile = serde_json::from_str(s)?;
        if file.format != FORMAT_NAME {
            return Err(Error::Format(format!("unexpected format tag '{}'", file.format)));
        }
        if file.version != FOREST_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported forest version {}", file.version)));
        }
        file.forest.validate()?;
        Ok(file.forest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        Forest::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let data = &self.training;
        let (n, p) = (data.n(), data.p());
        self.params.validate(p)?;
        if self.trees.is_empty() || self.trees.len() != self.params.n_trees {
            return Err(Error::Format("tree count does not match parameters".into()));
        }
        if (self.task == Task::Survival) != data.is_survival() {
            return Err(Error::Format("task does not match training data".into()));
        }
        if self.grid.iter().any(|g| !g.is_finite()) || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("grid must be finite and strictly increasing".into()));
        }
        if self.inbag.len() != self.trees.len().checked_mul(n).unwrap_or(usize::MAX) {
            return Err(Error::Format("in-bag matrix has the wrong size".into()));
        }
        let categorical: Vec<bool> = data.kinds().iter().map(|k| k.is_categorical()).collect();
        for (b, t) in self.trees.iter().enumerate() {
            t.validate(p, n, self.grid.len(), &categorical).map_err(|e| Error::Format(format!("tree {b}: {e}")))?;
        }
        Ok(())
    }
}
