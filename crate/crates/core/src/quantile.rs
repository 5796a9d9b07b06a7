use serde::{Deserialize, Serialize};

use crate::data::{StepCdf, PROB_EPS};
use crate::error::{Error, Result};

/// A quantile read off a step distribution estimate. `value` is `None`
/// exactly when the requested level exceeds the plateau `tau_star`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub value: Option<f64>,
    pub tau_star: f64,
}

impl QuantileEstimate {
    pub fn defined(&self) -> bool {
        self.value.is_some()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// `inf { t : F(t) >= tau }` over the support of `cdf`. Probabilities within
/// `PROB_EPS` of `tau` count as reaching it, so averaged masses that should
/// sum to `tau` exactly are not pushed one step to the right by rounding.
pub fn quantile_from_cdf(cdf: &StepCdf, tau: f64) -> Result<QuantileEstimate> {
    check_tau(tau)?;
    Ok(quantile_unchecked(cdf, tau))
}

pub(crate) fn quantile_unchecked(cdf: &StepCdf, tau: f64) -> QuantileEstimate {
    let k = cdf.prob().partition_point(|&p| p < tau - PROB_EPS);
    QuantileEstimate { value: cdf.support().get(k).copied(), tau_star: cdf.tau_star() }
}

/// Largest defined quantile: the first support point attaining `tau_star`.
pub fn max_defined_quantile(cdf: &StepCdf) -> Option<f64> {
    if cdf.is_empty() {
        return None;
    }
    let k = cdf.prob().partition_point(|&p| p < cdf.tau_star() - PROB_EPS);
    cdf.support().get(k).copied()
}

/// Whether `q(tau1) <= q(tau2)`; `None` if either quantile is undefined.
pub fn quantile_monotone_check(cdf: &StepCdf, tau1: f64, tau2: f64) -> Result<Option<bool>> {
    if tau1 >= tau2 {
        return Err(Error::InvalidParams(format!("need tau1 < tau2, got {tau1} and {tau2}")));
    }
    let a = quantile_from_cdf(cdf, tau1)?.value;
    let b = quantile_from_cdf(cdf, tau2)?.value;
    Ok(a.zip(b).map(|(a, b)| a <= b))
}
