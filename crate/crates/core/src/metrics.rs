//! Error metrics against exact conditional truth.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::intervals::Interval;
use crate::simgen::TrueConditional;
use crate::tuning::{select_best, Theta};

/// Test-set errors of one set of quantile estimates. Rows with an undefined
/// estimate are omitted from every average and counted in `n_undefined`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileMetrics {
    pub tau: f64,
    /// `mean(F(q_hat | x)) - tau`.
    pub coverage_bias: f64,
    /// `mean((F(q_hat | x) - tau)^2)`.
    pub coverage_mse: f64,
    /// `mean(q_hat - q_tau(x))`.
    pub quantile_bias: f64,
    pub quantile_mse: f64,
    pub n_defined: usize,
    pub n_undefined: usize,
}

impl QuantileMetrics {
    pub fn get(&self, metric: OracleMetric) -> f64 {
        match metric {
            OracleMetric::CoverageBias => self.coverage_bias.abs(),
            OracleMetric::CoverageMse => self.coverage_mse,
            OracleMetric::QuantileBias => self.quantile_bias.abs(),
            OracleMetric::QuantileMse => self.quantile_mse,
        }
    }
}

pub fn quantile_metrics(estimates: &[Option<f64>], truth: &TrueConditional, tau: f64) -> Result<QuantileMetrics> {
    if estimates.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} estimates for {} rows", estimates.len(), truth.len())));
    }
    let (mut cb, mut cm, mut qb, mut qm, mut used) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (i, q) in estimates.iter().enumerate() {
        let Some(q) = *q else { continue };
        let c = truth.cdf(i, q) - tau;
        let d = q - truth.quantile(i, tau);
        cb += c;
        cm += c * c;
        qb += d;
        qm += d * d;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Empty("every quantile estimate is undefined".into()));
    }
    let k = used as f64;
    Ok(QuantileMetrics {
        tau,
        coverage_bias: cb / k,
        coverage_mse: cm / k,
        quantile_bias: qb / k,
        quantile_mse: qm / k,
        n_defined: used,
        n_undefined: estimates.len() - used,
    })
}

/// True coverage and width summary of a set of intervals. Rows with an
/// undefined endpoint are dropped and counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub coverage: f64,
    pub width_mean: f64,
    pub width_median: f64,
    pub width_sd: f64,
    pub n_used: usize,
    pub n_dropped: usize,
}

pub fn interval_metrics(intervals: &[Interval], truth: &TrueConditional) -> Result<IntervalMetrics> {
    if intervals.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} intervals for {} rows", intervals.len(), truth.len())));
    }
    let mut cov = 0.0;
    let mut widths = Vec::with_capacity(intervals.len());
    for (i, iv) in intervals.iter().enumerate() {
        let (Some(lo), Some(hi)) = (iv.lower, iv.upper) else { continue };
        cov += (truth.cdf(i, hi) - truth.cdf(i, lo)).clamp(0.0, 1.0);
        widths.push(hi - lo);
    }
    if widths.is_empty() {
        return Err(Error::Empty("every interval has an undefined endpoint".into()));
    }
    let s = summarize(&widths);
    Ok(IntervalMetrics {
        coverage: cov / widths.len() as f64,
        width_mean: s.mean,
        width_median: s.median,
        width_sd: s.sd,
        n_used: widths.len(),
        n_dropped: intervals.len() - widths.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let sd = if n > 1 { (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    Summary { mean, median, sd }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMetric {
    #[default]
    CoverageBias,
    CoverageMse,
    QuantileBias,
    QuantileMse,
}

/// Grid point minimizing `metric` on the test set, ties broken as in grid
/// tuning.
pub fn oracle_select(per_theta: &[(Theta, QuantileMetrics)], metric: OracleMetric) -> Option<(Theta, f64)> {
    let scored: Vec<(Theta, f64)> = per_theta.iter().map(|(t, m)| (*t, m.get(metric))).collect();
    select_best(&scored, false, |_| true).map(|(t, v, _)| (t, v))
}

/// Mean of `values` with its two-sided Student-t confidence interval at
/// `level`; `None` with fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

impl TInterval {
    pub fn covers(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

pub fn t_interval(values: &[f64], level: f64) -> Option<TInterval> {
    let n = values.len();
    if n < 2 || !(level > 0.0 && level < 1.0) {
        return None;
    }
    let s = summarize(values);
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.5 + level / 2.0);
    let half = t * s.sd / (n as f64).sqrt();
    Some(TInterval { mean: s.mean, lower: s.mean - half, upper: s.mean + half, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::Family;

    fn normal_truth(n: usize) -> TrueConditional {
        TrueConditional { family: Family::Normal, eta: (0..n).map(|i| i as f64 * 0.3).collect() }
    }

    // The normal inverse is accurate to about 1e-10 in probability.
    #[test]
    fn exact_quantiles_give_zero_error() {
        let tc = normal_truth(5);
        let q: Vec<Option<f64>> = (0..5).map(|i| Some(tc.quantile(i, 0.1))).collect();
        let m = quantile_metrics(&q, &tc, 0.1).unwrap();
        assert!(m.coverage_bias.abs() < 1e-9 && m.coverage_mse < 1e-16);
        assert!(m.quantile_bias.abs() < 1e-12 && m.quantile_mse < 1e-20);
    }

    #[test]
    fn coverage_arithmetic() {
        let tc = normal_truth(3);
        let q = vec![Some(tc.quantile(0, 0.12)), None, Some(tc.quantile(2, 0.08))];
        let m = quantile_metrics(&q, &tc, 0.1).unwrap();
        assert!(m.coverage_bias.abs() < 1e-9);
        assert!((m.coverage_mse - 0.0004).abs() < 1e-9);
        assert_eq!((m.n_defined, m.n_undefined), (2, 1));
        assert!(quantile_metrics(&[None, None, None], &tc, 0.1).is_err());
    }

    #[test]
    fn interval_extremes() {
        let tc = normal_truth(2);
        let zero = [Interval { lower: Some(1.0), upper: Some(1.0) }; 2];
        assert_eq!(interval_metrics(&zero, &tc).unwrap().coverage, 0.0);
        let all = [Interval { lower: Some(f64::NEG_INFINITY), upper: Some(f64::INFINITY) }; 2];
        assert_eq!(interval_metrics(&all, &tc).unwrap().coverage, 1.0);
        let some = [Interval { lower: Some(0.0), upper: None }, Interval { lower: Some(0.0), upper: Some(2.0) }];
        assert_eq!(interval_metrics(&some, &tc).unwrap().n_dropped, 1);
    }

    #[test]
    fn oracle_prefers_small_theta_on_ties() {
        let m = |b: f64| QuantileMetrics {
            tau: 0.1,
            coverage_bias: b,
            coverage_mse: 0.0,
            quantile_bias: 0.0,
            quantile_mse: 0.0,
            n_defined: 1,
            n_undefined: 0,
        };
        let t = |a, b| Theta { mtry: a, nodesize: b };
        let rows = [(t(2, 5), m(0.01)), (t(1, 10), m(-0.01)), (t(3, 1), m(0.02))];
        assert_eq!(oracle_select(&rows, OracleMetric::CoverageBias), Some((t(1, 10), 0.01)));
        assert_eq!(oracle_select(&rows[2..], OracleMetric::CoverageBias).unwrap().0, t(3, 1));
    }

    #[test]
    fn t_interval_known_value() {
        // mean 2, sd 1, n 3, t_{0.975, 2} = 4.302653
        let ci = t_interval(&[1.0, 2.0, 3.0], 0.95).unwrap();
        assert!((ci.upper - (2.0 + 4.302652729911275 / 3f64.sqrt())).abs() < 1e-6);
        assert!(t_interval(&[1.0], 0.95).is_none());
    }
}
