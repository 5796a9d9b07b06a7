//! Prediction intervals from quantile forests and from residuals.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ForestParams, StepCdf, PROB_EPS};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, Task};
use crate::quantile::quantile_unchecked;
use crate::rng::stream_rng;
use crate::tuning::{select_best, Candidate, FittedGrid, LossKind, Theta, TuneResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sided {
    Two,
    Upper,
    Lower,
}

impl std::str::FromStr for Sided {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" => Ok(Sided::Two),
            "upper" => Ok(Sided::Upper),
            "lower" => Ok(Sided::Lower),
            other => Err(Error::InvalidParams(format!("unknown sidedness '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub alpha: f64,
    pub sided: Sided,
}

impl IntervalSpec {
    pub fn new(alpha: f64, sided: Sided) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParams(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(IntervalSpec { alpha, sided })
    }

    /// Quantile levels of the lower and upper endpoints; `None` marks an
    /// unbounded side.
    pub fn levels(&self) -> (Option<f64>, Option<f64>) {
        match self.sided {
            Sided::Two => (Some(self.alpha / 2.0), Some(1.0 - self.alpha / 2.0)),
            Sided::Upper => (None, Some(1.0 - self.alpha)),
            Sided::Lower => (Some(self.alpha), None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMethod {
    Qcl,
    QrfDefault,
    ResOob,
    ResSc,
}

impl IntervalMethod {
    pub fn name(self) -> &'static str {
        match self {
            IntervalMethod::Qcl => "qcl",
            IntervalMethod::QrfDefault => "qrf-default",
            IntervalMethod::ResOob => "res-oob",
            IntervalMethod::ResSc => "res-sc",
        }
    }
}

impl std::str::FromStr for IntervalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qcl" => Ok(IntervalMethod::Qcl),
            "qrf-default" => Ok(IntervalMethod::QrfDefault),
            "res-oob" => Ok(IntervalMethod::ResOob),
            "res-sc" => Ok(IntervalMethod::ResSc),
            other => Err(Error::InvalidParams(format!("unknown interval method '{other}'"))),
        }
    }
}

/// Source of one interval endpoint.
#[derive(Debug, Clone)]
pub enum Endpoint {
    /// The `tau` quantile of a forest's distribution estimate.
    Quantile { forest: Arc<Forest>, theta: Theta, tau: f64 },
    /// A regression forest's mean prediction plus a fixed offset.
    MeanOffset { forest: Arc<Forest>, offset: f64 },
    /// No bound on this side.
    Unbounded,
}

/// Out-of-bag calibration of the chosen endpoints on the training rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub coverage: f64,
    pub mean_width: f64,
    pub n_used: usize,
    /// Set when no candidate met the coverage floor (or sign constraint).
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct IntervalModel {
    pub method: IntervalMethod,
    pub spec: IntervalSpec,
    pub lower: Endpoint,
    pub upper: Endpoint,
    pub calibration: Option<Calibration>,
}

/// One predicted interval; `None` marks an undefined endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Interval {
    pub fn width(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }
}

/// Orders two defined endpoints so that `lower <= upper`.
fn ordered(lo: Option<f64>, hi: Option<f64>) -> Interval {
    match (lo, hi) {
        (Some(a), Some(b)) if a > b => Interval { lower: Some(b), upper: Some(a) },
        _ => Interval { lower: lo, upper: hi },
    }
}

impl IntervalModel {
    /// Intervals for every row of `test`.
    pub fn predict(&self, test: &Dataset) -> Result<Vec<Interval>> {
        let mut cache: Vec<(Arc<Forest>, Vec<StepCdf>)> = Vec::new();
        let mut side = |e: &Endpoint, unbounded: f64| -> Result<Vec<Option<f64>>> {
            match e {
                Endpoint::Unbounded => Ok(vec![Some(unbounded); test.n()]),
                Endpoint::MeanOffset { forest, offset } => {
                    Ok(forest.predict_means(test)?.into_iter().map(|m| Some(m + offset)).collect())
                }
                Endpoint::Quantile { forest, tau, .. } => {
                    if !cache.iter().any(|(f, _)| Arc::ptr_eq(f, forest)) {
                        cache.push((forest.clone(), forest.predict_cdfs(test)?));
                    }
                    let cdfs = &cache.iter().find(|(f, _)| Arc::ptr_eq(f, forest)).expect("cached").1;
                    Ok(cdfs.iter().map(|c| quantile_unchecked(c, *tau).value).collect())
                }
            }
        };
        let lo = side(&self.lower, f64::NEG_INFINITY)?;
        let hi = side(&self.upper, f64::INFINITY)?;
        Ok(lo.into_iter().zip(hi).map(|(a, b)| ordered(a, b)).collect())
    }
}

/// Empirical quantile `inf { v : EDF(v) >= tau }` of `values`.
pub fn empirical_quantile(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let k = (1..=m).find(|&i| i as f64 / m as f64 >= tau - PROB_EPS).unwrap_or(m);
    Ok(v[k - 1])
}

/// Coverage and width of one `(lower theta, upper theta)` pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCalibration {
    pub lower: Theta,
    pub upper: Theta,
    pub coverage: f64,
    pub mean_width: f64,
    pub n_used: usize,
}

/// Index of the narrowest pair meeting the floor `1 - alpha`; without one,
/// the pair of highest coverage, flagged. Ties go to the earliest pair.
pub fn choose_pair(pairs: &[PairCalibration], alpha: f64) -> Option<(usize, bool)> {
    let floor = 1.0 - alpha - PROB_EPS;
    let mut best: Option<usize> = None;
    for (k, p) in pairs.iter().enumerate() {
        if p.coverage >= floor && best.is_none_or(|b| p.mean_width < pairs[b].mean_width) {
            best = Some(k);
        }
    }
    if let Some(b) = best {
        return Some((b, false));
    }
    let mut best: Option<usize> = None;
    for (k, p) in pairs.iter().enumerate() {
        if best.is_none_or(|b| p.coverage > pairs[b].coverage) {
            best = Some(k);
        }
    }
    best.map(|b| (b, true))
}

fn coverage_kind_for(grid: &FittedGrid, kind: LossKind) -> Result<LossKind> {
    let survival = grid.data.is_survival();
    match kind {
        LossKind::Qcl if !survival => Ok(kind),
        LossKind::QclC | LossKind::QclIpcw if survival => Ok(kind),
        _ => Err(Error::InvalidParams(format!("{} is not a coverage estimator for this data", kind.name()))),
    }
}

/// Every pairing of a lower-endpoint forest with an upper-endpoint forest
/// from `grid`, calibrated out of bag at `alpha / 2` and `1 - alpha / 2`.
///
/// Uncensored coverage is the fraction of rows inside their interval.
/// Censored coverage is the difference of the two endpoint coverage
/// estimates under `kind`. Widths average over rows with both endpoints
/// defined; a pairing is dropped when over half its rows lack an upper
/// endpoint.
pub fn evaluate_pairs(grid: &FittedGrid, kind: LossKind, alpha: f64) -> Result<Vec<PairCalibration>> {
    let kind = coverage_kind_for(grid, kind)?;
    let spec = IntervalSpec::new(alpha, Sided::Two)?;
    let (tl, tu) = spec.levels();
    let (tl, tu) = (tl.expect("two-sided"), tu.expect("two-sided"));
    let data = &grid.data;
    let n = data.n();
    let y = data.response();

    struct Side {
        theta: Theta,
        q: Vec<Option<f64>>,
        coverage: f64,
    }
    let side = |tau: f64| -> Result<Vec<Side>> {
        let mut out = Vec::new();
        for e in &grid.entries {
            let Ok(point) = &e.outcome else { continue };
            let q = point.oob.iter().map(|c| quantile_unchecked(c, tau).value).collect();
            let coverage = if kind == LossKind::Qcl { 0.0 } else { grid.coverage(point, kind, tau)?.tau_tilde_hat };
            out.push(Side { theta: e.theta, q, coverage });
        }
        Ok(out)
    };
    let lows = side(tl)?;
    let highs = side(tu)?;
    let mut pairs = Vec::with_capacity(lows.len() * highs.len());
    for lo in &lows {
        for hi in &highs {
            let undefined_upper = hi.q.iter().filter(|q| q.is_none()).count();
            if 2 * undefined_upper > n {
                continue;
            }
            let (mut width, mut used, mut inside) = (0.0, 0usize, 0usize);
            for i in 0..n {
                if let Interval { lower: Some(a), upper: Some(b) } = ordered(lo.q[i], hi.q[i]) {
                    width += b - a;
                    used += 1;
                    if a <= y[i] && y[i] <= b {
                        inside += 1;
                    }
                }
            }
            if used == 0 {
                continue;
            }
            let coverage = if kind == LossKind::Qcl {
                inside as f64 / used as f64
            } else {
                (hi.coverage - lo.coverage).max(0.0)
            };
            pairs.push(PairCalibration {
                lower: lo.theta,
                upper: hi.theta,
                coverage,
                mean_width: width / used as f64,
                n_used: used,
            });
        }
    }
    Ok(pairs)
}

/// Two-sided interval from the best pairing of grid forests.
pub fn qcl_pair_interval(grid: &FittedGrid, kind: LossKind, alpha: f64) -> Result<IntervalModel> {
    let pairs = evaluate_pairs(grid, kind, alpha)?;
    let (k, fallback) = choose_pair(&pairs, alpha).ok_or_else(|| Error::Empty("no usable interval pairing".into()))?;
    let p = pairs[k];
    let spec = IntervalSpec::new(alpha, Sided::Two)?;
    let (tl, tu) = spec.levels();
    let forest = |t: Theta| grid.get(t).map(|f| f.forest.clone()).expect("evaluated pairs come from fitted points");
    Ok(IntervalModel {
        method: IntervalMethod::Qcl,
        spec,
        lower: Endpoint::Quantile { forest: forest(p.lower), theta: p.lower, tau: tl.expect("two-sided") },
        upper: Endpoint::Quantile { forest: forest(p.upper), theta: p.upper, tau: tu.expect("two-sided") },
        calibration: Some(Calibration {
            coverage: p.coverage,
            mean_width: p.mean_width,
            n_used: p.n_used,
            fallback,
        }),
    })
}

/// Grid point minimizing `|coverage - tau|` among points whose bias has the
/// required sign: nonnegative for an upper endpoint, nonpositive for a lower
/// one. Without an admissible point the unconstrained optimum is returned
/// with `fallback` set.
pub fn one_sided_qcl_tune(grid: &FittedGrid, kind: LossKind, tau: f64, direction: Sided) -> Result<TuneResult> {
    let kind = coverage_kind_for(grid, kind)?;
    if direction == Sided::Two {
        return Err(Error::InvalidParams("direction must be upper or lower".into()));
    }
    let mut biases = Vec::new();
    let candidates: Vec<Candidate> = grid
        .entries
        .iter()
        .map(|e| {
            match e.outcome.as_ref().map_err(Clone::clone).and_then(|p| grid.coverage(p, kind, tau).map_err(|x| x.to_string())) {
                Ok(c) => {
                    biases.push((e.theta, c.bias()));
                    Candidate { theta: e.theta, loss: Some(c.bias().abs()), error: None }
                }
                Err(msg) => Candidate { theta: e.theta, loss: None, error: Some(msg) },
            }
        })
        .collect();
    if grid.entries.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let scored: Vec<(Theta, f64)> = biases.iter().map(|&(t, b)| (t, b.abs())).collect();
    let ok = |k: usize| match direction {
        Sided::Upper => biases[k].1 >= 0.0,
        _ => biases[k].1 <= 0.0,
    };
    let (best, fallback) = match select_best(&scored, false, ok) {
        Some(b) => (b, false),
        None => (
            select_best(&scored, false, |_| true).ok_or_else(|| Error::AllCandidatesFailed("no coverage estimates".into()))?,
            true,
        ),
    };
    Ok(TuneResult {
        loss_kind: kind,
        tau: Some(tau),
        candidates,
        chosen: best.0,
        chosen_loss: best.1,
        tied: best.2,
        fallback,
    })
}

/// One-sided interval whose finite endpoint is tuned with the sign
/// constraint of `one_sided_qcl_tune`.
pub fn qcl_one_sided_interval(grid: &FittedGrid, kind: LossKind, spec: IntervalSpec) -> Result<IntervalModel> {
    let (tl, tu) = spec.levels();
    let tau = match spec.sided {
        Sided::Upper => tu.expect("upper"),
        Sided::Lower => tl.expect("lower"),
        Sided::Two => return qcl_pair_interval(grid, kind, spec.alpha),
    };
    let tuned = one_sided_qcl_tune(grid, kind, tau, spec.sided)?;
    let point = grid.get(tuned.chosen).expect("chosen point was fitted");
    let end = Endpoint::Quantile { forest: point.forest.clone(), theta: tuned.chosen, tau };
    let coverage = grid.coverage(point, kind, tau)?.tau_tilde_hat;
    let cov = if spec.sided == Sided::Upper { coverage } else { 1.0 - coverage };
    let (lower, upper) = if spec.sided == Sided::Upper { (Endpoint::Unbounded, end) } else { (end, Endpoint::Unbounded) };
    Ok(IntervalModel {
        method: IntervalMethod::Qcl,
        spec,
        lower,
        upper,
        calibration: Some(Calibration { coverage: cov, mean_width: f64::INFINITY, n_used: grid.data.n(), fallback: tuned.fallback }),
    })
}

/// Interval from the quantiles of a single forest.
pub fn forest_quantile_interval(
    forest: Arc<Forest>,
    theta: Theta,
    oob: &[StepCdf],
    spec: IntervalSpec,
    method: IntervalMethod,
) -> Result<IntervalModel> {
    let (tl, tu) = spec.levels();
    let end = |t: Option<f64>| match t {
        Some(tau) => Endpoint::Quantile { forest: forest.clone(), theta, tau },
        None => Endpoint::Unbounded,
    };
    let y = forest.training().response();
    let (mut inside, mut used, mut width) = (0usize, 0usize, 0.0);
    for (i, c) in oob.iter().enumerate() {
        let lo = tl.map_or(Some(f64::NEG_INFINITY), |t| quantile_unchecked(c, t).value);
        let hi = tu.map_or(Some(f64::INFINITY), |t| quantile_unchecked(c, t).value);
        if let Interval { lower: Some(a), upper: Some(b) } = ordered(lo, hi) {
            used += 1;
            width += b - a;
            if a <= y[i] && y[i] <= b {
                inside += 1;
            }
        }
    }
    let calibration = (used > 0 && forest.task() == Task::Regression).then(|| Calibration {
        coverage: inside as f64 / used as f64,
        mean_width: width / used as f64,
        n_used: used,
        fallback: false,
    });
    Ok(IntervalModel { method, spec, lower: end(tl), upper: end(tu), calibration })
}

/// Untuned quantile forest interval at the default parameters for the task.
pub fn default_qrf_interval(data: impl Into<Arc<Dataset>>, spec: IntervalSpec, n_trees: usize, seed: u64) -> Result<IntervalModel> {
    let data = data.into();
    let params = if data.is_survival() {
        ForestParams::survival_default(data.p())
    } else {
        ForestParams::regression_default(data.p())
    }
    .with_trees(n_trees)
    .with_seed(seed);
    let theta = Theta { mtry: params.mtry, nodesize: params.nodesize };
    let forest = Arc::new(fit_forest(data, &params)?);
    let oob = forest.oob_cdfs()?;
    forest_quantile_interval(forest, theta, &oob, spec, IntervalMethod::QrfDefault)
}

fn residual_model(
    method: IntervalMethod,
    forest: Arc<Forest>,
    spec: IntervalSpec,
    lo_offset: Option<f64>,
    hi_offset: Option<f64>,
) -> IntervalModel {
    let end = |o: Option<f64>| match o {
        Some(offset) => Endpoint::MeanOffset { forest: forest.clone(), offset },
        None => Endpoint::Unbounded,
    };
    IntervalModel { method, spec, lower: end(lo_offset), upper: end(hi_offset), calibration: None }
}

/// Interval from out-of-bag residuals `r_i = t_i - t_(i)`. Symmetric:
/// `t ± R~`, with `R~` the `1 - alpha` empirical quantile of `|r_i|`.
/// Otherwise `t + R` at the endpoint levels, `R` the empirical quantiles of
/// `r_i`. Rows that are never out of bag are left out of the pool.
pub fn res_oob_interval(forest: Arc<Forest>, spec: IntervalSpec, symmetric: bool) -> Result<IntervalModel> {
    if forest.task() != Task::Regression {
        return Err(Error::TaskMismatch { expected: "regression" });
    }
    let y = forest.training().response();
    let resid: Vec<f64> =
        (0..y.len()).filter_map(|i| forest.oob_mean_prediction(i).ok().map(|p| y[i] - p)).collect();
    if resid.is_empty() {
        return Err(Error::Empty("no out-of-bag residuals".into()));
    }
    let (tl, tu) = spec.levels();
    let (lo, hi) = if symmetric {
        let abs: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        let level = if spec.sided == Sided::Two { 1.0 - spec.alpha } else { 1.0 - 2.0 * spec.alpha };
        let d = empirical_quantile(&abs, level.max(PROB_EPS))?;
        (tl.map(|_| -d), tu.map(|_| d))
    } else {
        (
            tl.map(|t| empirical_quantile(&resid, t)).transpose()?,
            tu.map(|t| empirical_quantile(&resid, t)).transpose()?,
        )
    };
    Ok(residual_model(IntervalMethod::ResOob, forest, spec, lo, hi))
}

/// Rank `ceil((m + 1)(1 - alpha))` of the conformal half-width among `m`
/// calibration residuals; beyond `m` the half-width is infinite.
pub fn conformal_rank(m: usize, alpha: f64) -> usize {
    (((m + 1) as f64) * (1.0 - alpha) - PROB_EPS).ceil().max(1.0) as usize
}

/// Split-conformal interval: a random half fits the forest, the other half
/// supplies absolute residuals `d_i`, and the interval is `t ± D` with `D`
/// the `conformal_rank`-th smallest `d_i`.
pub fn res_sc_interval(data: &Dataset, params: &ForestParams, spec: IntervalSpec, split_seed: u64) -> Result<IntervalModel> {
    if data.is_survival() {
        return Err(Error::TaskMismatch { expected: "regression" });
    }
    let n = data.n();
    if n < 4 {
        return Err(Error::InvalidDataset(format!("{n} rows are too few to split")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(split_seed, 0));
    let (fit_idx, cal_idx) = idx.split_at(n / 2);
    let mut fit_idx = fit_idx.to_vec();
    fit_idx.sort_unstable();
    let forest = Arc::new(fit_forest(data.subset(&fit_idx)?, params)?);
    let y = data.response();
    let mut d: Vec<f64> = cal_idx
        .iter()
        .map(|&i| forest.predict_mean(&data.row(i)).map(|p| (y[i] - p).abs()))
        .collect::<Result<_>>()?;
    d.sort_by(f64::total_cmp);
    let alpha = if spec.sided == Sided::Two { spec.alpha } else { 2.0 * spec.alpha };
    let k = conformal_rank(d.len(), alpha.min(1.0 - PROB_EPS));
    let half = if k > d.len() { f64::INFINITY } else { d[k - 1] };
    let (tl, tu) = spec.levels();
    Ok(residual_model(IntervalMethod::ResSc, forest, spec, tl.map(|_| -half), tu.map(|_| half)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuning::fit_grid;

    fn t(m: usize, n: usize) -> Theta {
        Theta { mtry: m, nodesize: n }
    }

    fn pair(c: f64, w: f64) -> PairCalibration {
        PairCalibration { lower: t(1, 1), upper: t(1, 1), coverage: c, mean_width: w, n_used: 10 }
    }

    #[test]
    fn pairing_respects_floor() {
        assert_eq!(choose_pair(&[pair(0.82, 3.0), pair(0.79, 2.5)], 0.2), Some((0, false)));
        assert_eq!(choose_pair(&[pair(0.7, 3.0), pair(0.75, 9.0)], 0.2), Some((1, true)));
        assert_eq!(choose_pair(&[pair(0.9, 3.0)], 0.2), Some((0, false)));
        assert_eq!(choose_pair(&[], 0.2), None);
    }

    #[test]
    fn edf_quantile_order_statistic() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.8).unwrap(), 8.0);
        assert_eq!(empirical_quantile(&v, 0.81).unwrap(), 9.0);
        assert_eq!(empirical_quantile(&v, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn conformal_rank_values() {
        assert_eq!(conformal_rank(9, 0.2), 8);
        assert_eq!(conformal_rank(150, 0.2), 121);
        assert_eq!(conformal_rank(3, 0.1), 4);
    }

    fn noisy(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| (i * 7 % n) as f64 / n as f64).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 2.0 * v + ((i * 13) % 7) as f64 / 7.0).collect();
        Dataset::from_columns(vec![x.clone(), x.iter().map(|v| v * v).collect()], y, None).unwrap()
    }

    #[test]
    fn residual_intervals_have_constant_width() {
        let d = Arc::new(noisy(80));
        let f = Arc::new(fit_forest(d.clone(), &ForestParams::new(1, 5).with_trees(50)).unwrap());
        let spec = IntervalSpec::new(0.2, Sided::Two).unwrap();
        for sym in [true, false] {
            let m = res_oob_interval(f.clone(), spec, sym).unwrap();
            let iv = m.predict(&d).unwrap();
            let w0 = iv[0].width().unwrap();
            assert!(iv.iter().all(|i| (i.width().unwrap() - w0).abs() < 1e-9));
        }
        let sc = res_sc_interval(&d, &ForestParams::new(1, 5).with_trees(30), spec, 4).unwrap();
        let again = res_sc_interval(&d, &ForestParams::new(1, 5).with_trees(30), spec, 4).unwrap();
        assert_eq!(sc.predict(&d).unwrap(), again.predict(&d).unwrap());
    }

    #[test]
    fn pair_interval_is_ordered_and_meets_floor_when_possible() {
        let d = Arc::new(noisy(60));
        let grid = fit_grid(d.clone(), &[t(1, 1), t(1, 10), t(2, 5)], 40, 3).unwrap();
        let pairs = evaluate_pairs(&grid, LossKind::Qcl, 0.2).unwrap();
        assert_eq!(pairs.len(), 9);
        let m = qcl_pair_interval(&grid, LossKind::Qcl, 0.2).unwrap();
        let cal = m.calibration.unwrap();
        if pairs.iter().any(|p| p.coverage >= 0.8) {
            assert!(cal.coverage >= 0.8 && !cal.fallback);
            let narrowest = pairs.iter().filter(|p| p.coverage >= 0.8).map(|p| p.mean_width).fold(f64::INFINITY, f64::min);
            assert_eq!(cal.mean_width, narrowest);
        }
        for iv in m.predict(&d).unwrap() {
            assert!(iv.lower.unwrap() <= iv.upper.unwrap());
        }
    }

    #[test]
    fn one_sided_respects_sign() {
        let d = Arc::new(noisy(60));
        let grid = fit_grid(d, &[t(1, 1), t(1, 10), t(2, 5), t(2, 25)], 40, 3).unwrap();
        let r = one_sided_qcl_tune(&grid, LossKind::Qcl, 0.9, Sided::Upper).unwrap();
        let cov = grid.coverage(grid.get(r.chosen).unwrap(), LossKind::Qcl, 0.9).unwrap();
        assert!(r.fallback || cov.bias() >= 0.0);
        assert!(one_sided_qcl_tune(&grid, LossKind::QclC, 0.9, Sided::Upper).is_err());
    }
}
