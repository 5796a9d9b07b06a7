//! Product-limit (Kaplan-Meier) estimation.
//!
//! At a time `t` the risk set is every observation with time `>= t`, so
//! censorings tied with events at `t` are still at risk when the events
//! occur. Input order never matters: observations are grouped by time.

use crate::data::StepCdf;

/// One weighted observation.
#[derive(Debug, Clone, Copy)]
pub struct Obs {
    pub time: f64,
    pub event: bool,
    pub weight: f64,
}

/// Survival factor jumps `(time, S(time))` at every event time.
pub fn survival_steps(obs: &[Obs]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<Obs> = obs.iter().copied().filter(|o| o.weight > 0.0).collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut at_risk: f64 = sorted.iter().map(|o| o.weight).sum();
    let mut surv = 1.0f64;
    let mut out = Vec::new();
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k].time;
        let mut deaths = 0.0;
        let mut leaving = 0.0;
        while k < sorted.len() && sorted[k].time == t {
            if sorted[k].event {
                deaths += sorted[k].weight;
            }
            leaving += sorted[k].weight;
            k += 1;
        }
        if deaths > 0.0 {
            surv *= 1.0 - deaths / at_risk;
            if surv < 0.0 {
                surv = 0.0;
            }
            out.push((t, surv));
        }
        at_risk -= leaving;
    }
    out
}

/// Distribution function `1 - S(t)` of the product-limit estimate.
pub fn product_limit_cdf(obs: &[Obs]) -> StepCdf {
    let (support, prob) = survival_steps(obs).into_iter().map(|(t, s)| (t, (1.0 - s).clamp(0.0, 1.0))).unzip();
    StepCdf::from_parts(support, prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(time: f64, event: bool) -> Obs {
        Obs { time, event, weight: 1.0 }
    }

    #[test]
    fn hand_computed_node() {
        let cdf = product_limit_cdf(&[o(1.0, true), o(2.0, false), o(3.0, true)]);
        assert_eq!(cdf.support(), &[1.0, 3.0]);
        assert!((cdf.prob()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cdf.prob()[1], 1.0);
    }

    #[test]
    fn censored_tail_plateaus() {
        let cdf = product_limit_cdf(&[o(1.0, true), o(2.0, true), o(3.0, false), o(4.0, false)]);
        assert!((cdf.tau_star() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ties_keep_censored_at_risk() {
        // At t=1: one event, one censoring, both at risk with the row at t=2.
        let s = survival_steps(&[o(1.0, true), o(1.0, false), o(2.0, true)]);
        assert!((s[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s[1].1, 0.0);
    }

    #[test]
    fn weights_act_as_multiplicities() {
        let w = survival_steps(&[Obs { time: 1.0, event: true, weight: 2.0 }, o(2.0, false)]);
        let d = survival_steps(&[o(1.0, true), o(1.0, true), o(2.0, false)]);
        assert_eq!(w, d);
    }
}
