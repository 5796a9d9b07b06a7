//! Shared strategies, property checks and brute-force oracles for the
//! integration suites. Every property takes its case count so the acceptance
//! run can ask for 1000 cases while the quick suites use fewer.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use qcl_forest::forest::split::{best_logrank_split, Scratch};
use qcl_forest::forest::SplitRule;
use qcl_forest::intervals::{res_oob_interval, IntervalSpec, Sided};
use qcl_forest::km::{product_limit_cdf, Obs};
use qcl_forest::quantile::quantile_from_cdf;
use qcl_forest::tuning::{
    conditional_coverage, grid, grid_tune, km_censoring, plateau_bound, qclc_contribution_case, select_best, LossKind,
    LossSpec, QclcCase, Theta,
};
use qcl_forest::{fit_forest, ColumnKind, Dataset, ForestParams, StepCdf};

pub type PropResult = Result<(), String>;

/// Runs `test` on `cases` inputs from `strategy` with a fixed-seed generator.
pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> PropResult {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn build_dataset(cols: Vec<Vec<u8>>, ys: Vec<u8>, evs: Option<Vec<bool>>, categorical: bool) -> Dataset {
    let p = cols.len();
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let kinds = (0..p)
        .map(|j| if categorical && j == 0 { ColumnKind::Categorical { levels: 3 } } else { ColumnKind::Continuous })
        .collect();
    let columns = cols
        .into_iter()
        .enumerate()
        .map(|(j, c)| c.into_iter().map(|v| if categorical && j == 0 { (v % 3) as f64 } else { v as f64 }).collect())
        .collect();
    let response = ys.into_iter().map(f64::from).collect();
    Dataset::new(names, kinds, columns, response, evs).expect("generated dataset is valid")
}

/// Small datasets with heavy ties; survival sets always hold an event.
pub fn small_dataset(survival: bool, min_n: usize, max_n: usize) -> impl Strategy<Value = Dataset> {
    (min_n..=max_n, 1usize..=3, any::<bool>())
        .prop_flat_map(|(n, p, cat)| (vec(vec(0u8..6, n), p), vec(1u8..12, n), vec(any::<bool>(), n), Just(cat)))
        .prop_map(move |(cols, ys, mut evs, cat)| {
            evs[0] = true;
            build_dataset(cols, ys, survival.then_some(evs), cat)
        })
}

fn small_forest(survival: bool) -> impl Strategy<Value = (Dataset, ForestParams)> {
    (small_dataset(survival, 3, 25), 1usize..=3, 1usize..=4, any::<u64>()).prop_map(|(d, m, ns, seed)| {
        let mtry = m.min(d.p());
        let params = ForestParams::new(mtry, ns).with_trees(8).with_seed(seed);
        (d, params)
    })
}

/// Step functions with integer support, arbitrary masses and, half of the
/// time, a plateau below 1.
pub fn step_cdf() -> impl Strategy<Value = StepCdf> {
    (1usize..8)
        .prop_flat_map(|k| (vec(1u32..4, k), vec(1u32..6, k), prop_oneof![Just(10u32), 1u32..=9]))
        .prop_map(|(gaps, masses, plateau)| {
            let total: u32 = masses.iter().sum();
            let top = plateau as f64 / 10.0;
            let mut support = Vec::new();
            let (mut t, mut acc) = (0u32, 0u32);
            let mut prob = Vec::new();
            for (g, m) in gaps.iter().zip(&masses) {
                t += g;
                acc += m;
                support.push(t as f64);
                prob.push(if acc == total { top } else { top * acc as f64 / total as f64 });
            }
            StepCdf::new(support, prob).expect("valid step function")
        })
}

fn check_cdf_shape(c: &StepCdf, complete: bool) -> Result<(), TestCaseError> {
    prop_assert!(c.prob().iter().all(|p| (0.0..=1.0).contains(p)), "value outside [0,1]");
    prop_assert!(c.prob().windows(2).all(|w| w[0] <= w[1]), "not monotone");
    prop_assert!(c.support().windows(2).all(|w| w[0] < w[1]), "support not increasing");
    prop_assert_eq!(c.tau_star(), c.prob().last().copied().unwrap_or(0.0));
    if complete {
        prop_assert_eq!(c.tau_star(), 1.0);
    }
    let mut probe: Vec<f64> = c.support().iter().flat_map(|&s| [s - 0.5, s, s + 0.5]).collect();
    probe.sort_by(f64::total_cmp);
    let vals: Vec<f64> = probe.iter().map(|&t| c.eval(t)).collect();
    prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]), "eval not monotone");
    Ok(())
}

/// Forest distribution estimates are monotone, within `[0, 1]`, and
/// complete for regression.
pub fn prop_stepcdf_shape(cases: u32) -> PropResult {
    run(cases, (any::<bool>(), any::<bool>()).prop_flat_map(|(s, _)| small_forest(s)), |(data, params)| {
        let survival = data.is_survival();
        let forest = fit_forest(data.clone(), &params).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for i in 0..data.n() {
            if let Ok(c) = forest.oob_cdf(i) {
                check_cdf_shape(&c, !survival)?;
            }
            let c = forest.predict_cdf(&data.row(i)).map_err(|e| TestCaseError::fail(e.to_string()))?;
            check_cdf_shape(&c, !survival)?;
        }
        Ok(())
    })
}

/// `q(tau1) <= q(tau2)` for `tau1 < tau2`, and definedness is inherited
/// downwards.
pub fn prop_quantile_monotone(cases: u32) -> PropResult {
    run(cases, (step_cdf(), 0.001f64..0.999, 0.001f64..0.999), |(c, a, b)| {
        let (t1, t2) = if a <= b { (a, b) } else { (b, a) };
        let q1 = quantile_from_cdf(&c, t1).unwrap().value;
        let q2 = quantile_from_cdf(&c, t2).unwrap().value;
        if let Some(v2) = q2 {
            let v1 = q1.ok_or_else(|| TestCaseError::fail("lower level undefined"))?;
            prop_assert!(v1 <= v2);
        }
        Ok(())
    })
}

/// Linear-scan quantile: first support point whose value reaches `tau`
/// (up to the 1e-12 rounding allowance).
pub fn scan_quantile(c: &StepCdf, tau: f64) -> Option<f64> {
    c.support().iter().zip(c.prob()).find(|(_, &p)| p >= tau - 1e-12).map(|(&s, _)| s)
}

fn scan_eval(c: &StepCdf, t: f64) -> f64 {
    c.support().iter().zip(c.prob()).filter(|(&s, _)| s <= t).map(|(_, &p)| p).fold(0.0, f64::max)
}

/// Contribution table written out case by case.
pub fn qclc_oracle(y: f64, event: bool, c: &StepCdf, tau: f64) -> (QclcCase, f64) {
    let direct = |f: f64| if 1.0 - f <= 0.0 { 0.0 } else { ((tau - f) / (1.0 - f)).clamp(0.0, 1.0) };
    let tau_star = c.prob().last().copied().unwrap_or(0.0);
    match scan_quantile(c, tau) {
        Some(q) if event => (QclcCase::EventDefined, if y <= q { 1.0 } else { 0.0 }),
        Some(q) if y >= q => (QclcCase::CensoredBeyond, 0.0),
        Some(_) => (QclcCase::CensoredBefore, direct(scan_eval(c, y))),
        None if event => (QclcCase::EventUndefined, 1.0),
        None => match scan_quantile(c, tau_star) {
            Some(qmax) if y <= qmax => (QclcCase::CensoredUndefinedBefore, direct(scan_eval(c, y))),
            _ => {
                let v = if tau_star >= 1.0 { 0.0 } else { ((tau - tau_star) / (1.0 - tau_star)).clamp(0.0, 1.0) };
                (QclcCase::CensoredUndefinedAfter, v)
            }
        },
    }
}

/// Censored contributions lie in `[0, 1]` and match the table branch by
/// branch. Levels are sometimes set exactly to an attained value.
pub fn prop_qclc_table(cases: u32) -> PropResult {
    let input = (step_cdf(), 0u32..40, any::<bool>(), 0.001f64..0.999, any::<prop::sample::Index>(), any::<bool>());
    run(cases, input, |(c, y2, event, tau_raw, pick, snap)| {
        let y = y2 as f64 / 2.0;
        let attained: Vec<f64> = c.prob().iter().copied().filter(|p| *p > 0.0 && *p < 1.0).collect();
        let tau = if snap && !attained.is_empty() { attained[pick.index(attained.len())] } else { tau_raw };
        let (case, v) = qclc_contribution_case(y, event, &c, tau);
        prop_assert!((0.0..=1.0).contains(&v), "contribution {} outside [0,1]", v);
        let (want_case, want) = qclc_oracle(y, event, &c, tau);
        prop_assert_eq!(case, want_case);
        prop_assert!((v - want).abs() <= 1e-12, "value {} vs {}", v, want);
        Ok(())
    })
}

/// Conditional-coverage and plateau-bound arithmetic against the
/// `(tau - F) / (1 - F)` form.
pub fn prop_coverage_arithmetic(cases: u32) -> PropResult {
    run(cases, (0.001f64..0.999, 0.0f64..0.999), |(tau, f)| {
        let want = ((tau - f) / (1.0 - f)).clamp(0.0, 1.0);
        prop_assert!((conditional_coverage(tau, f) - want).abs() <= 1e-12);
        prop_assert!((plateau_bound(tau, f) - want).abs() <= 1e-12);
        Ok(())
    })
}

/// Share of (tree, row) pairs left out of the bootstrap at n = 1000 and
/// B = 500, against `(1 - 1/n)^n`.
pub fn prop_oob_frequency(cases: u32) -> PropResult {
    let n = 1000usize;
    let expected = (1.0 - 1.0 / n as f64).powi(n as i32);
    run(cases, (any::<u64>(), vec(0u8..50, n)), move |(seed, ys)| {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let data = Dataset::from_columns(vec![x], ys.into_iter().map(f64::from).collect(), None).unwrap();
        // Nodesize n keeps every tree a single leaf; only the bootstrap matters.
        let params = ForestParams::new(1, n).with_trees(500).with_seed(seed);
        let forest = fit_forest(data, &params).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let oob = (0..500).map(|b| (0..n).filter(|&i| forest.is_oob(b, i)).count()).sum::<usize>();
        let frac = oob as f64 / (500 * n) as f64;
        prop_assert!((frac - expected).abs() <= 0.01, "oob share {} vs {}", frac, expected);
        Ok(())
    })
}

/// Residual intervals from out-of-bag residuals have one width for every
/// test point.
pub fn prop_res_oob_constant_width(cases: u32) -> PropResult {
    let input = (small_dataset(false, 8, 30), small_dataset(false, 3, 10), 1usize..=4, any::<u64>(), 0.05f64..0.5);
    run(cases, input, |(train, probe, ns, seed, alpha)| {
        let mtry = 1.min(train.p());
        let params = ForestParams::new(mtry, ns).with_trees(10).with_seed(seed);
        let forest = Arc::new(fit_forest(train.clone(), &params).map_err(|e| TestCaseError::fail(e.to_string()))?);
        let model = res_oob_interval(forest, IntervalSpec::new(alpha, Sided::Two).unwrap(), true)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut widths: Vec<f64> = model.predict(&train).unwrap().iter().map(|iv| iv.width().unwrap()).collect();
        if probe.p() == train.p() && probe.kinds() == train.kinds() {
            widths.extend(model.predict(&probe).unwrap().iter().map(|iv| iv.width().unwrap()));
        }
        let w0 = widths[0];
        prop_assert!(widths.iter().all(|w| (w - w0).abs() <= 1e-9 * w0.abs().max(1.0)), "widths differ");
        Ok(())
    })
}

fn lexicographic_best(scored: &[(Theta, f64)], maximize: bool) -> Option<(Theta, f64)> {
    let target = scored.iter().map(|s| s.1).fold(if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| {
        if maximize {
            a.max(b)
        } else {
            a.min(b)
        }
    });
    scored.iter().filter(|s| s.1 == target).map(|s| s.0).min().map(|t| (t, target))
}

/// The winner is the lexicographically smallest `(mtry, nodesize)` among
/// the optimal losses, whatever the input order; grid tuning is repeatable.
pub fn prop_tie_break(cases: u32) -> PropResult {
    let scored = vec(((1usize..5, 1usize..5), 1u8..4), 1..16).prop_map(|v| {
        let mut seen = BTreeSet::new();
        v.into_iter()
            .filter(|((m, n), _)| seen.insert((*m, *n)))
            .map(|((mtry, nodesize), l)| (Theta { mtry, nodesize }, l as f64 / 10.0))
            .collect::<Vec<_>>()
    });
    let input = scored.prop_flat_map(|s| (Just(s.clone()), Just(s).prop_shuffle(), any::<bool>()));
    run(cases, input, |(scored, shuffled, maximize)| {
        let a = select_best(&scored, maximize, |_| true).unwrap();
        let b = select_best(&shuffled, maximize, |_| true).unwrap();
        prop_assert_eq!((a.0, a.1), (b.0, b.1));
        let mut ta = a.2.clone();
        let mut tb = b.2.clone();
        ta.sort();
        tb.sort();
        prop_assert_eq!(ta, tb);
        prop_assert_eq!(Some((a.0, a.1)), lexicographic_best(&scored, maximize));
        Ok(())
    })?;
    let input = (small_dataset(false, 10, 20), any::<u64>(), 0.1f64..0.9);
    run(cases, input, |(data, seed, tau)| {
        let thetas = grid(data.p(), &[1, 3]);
        let spec = LossSpec::new(LossKind::Qcl, Some(tau)).unwrap();
        let r1 = grid_tune(data.clone(), &thetas, spec, 20, seed).map_err(|e| e.to_string());
        let r2 = grid_tune(data.clone(), &thetas, spec, 20, seed).map_err(|e| e.to_string());
        prop_assert_eq!(&r1, &r2);
        if let Ok(r) = r1 {
            let scored: Vec<(Theta, f64)> = r.candidates.iter().filter_map(|c| c.loss.map(|l| (c.theta, l))).collect();
            prop_assert_eq!(Some((r.chosen, r.chosen_loss)), lexicographic_best(&scored, false));
        }
        Ok(())
    })
}

// Exact rational arithmetic for the product-limit oracle.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    pub fn new(num: i128, den: i128) -> Frac {
        let g = gcd(num, den).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Frac { num: s * num / g, den: s * den / g }
    }

    pub fn zero() -> Frac {
        Frac { num: 0, den: 1 }
    }

    pub fn add(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }

    pub fn div_int(self, k: i128) -> Frac {
        Frac::new(self.num, self.den * k)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Distribution of the `target` observations by redistribution to the
/// right: each non-target observation hands its mass equally to every
/// observation after it. Non-targets tied with targets come after them when
/// `targets_first`, before them otherwise. Returns `(time, F(time))` at each
/// distinct target time.
pub fn redistribute_to_right(times: &[u32], target: &[bool], targets_first: bool) -> Vec<(u32, Frac)> {
    let n = times.len();
    let mut mass = vec![Frac::new(1, n as i128); n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (times[i], target[i] != targets_first));
    for (pos, &i) in order.iter().enumerate() {
        if target[i] {
            continue;
        }
        // Observations after `i` in the ordering, excluding tied non-targets
        // (they hand on their mass in turn, which is equivalent).
        let later: Vec<usize> = order[pos + 1..]
            .iter()
            .copied()
            .filter(|&j| times[j] > times[i] || (times[j] == times[i] && target[j]))
            .collect();
        if later.is_empty() {
            continue;
        }
        let share = mass[i].div_int(later.len() as i128);
        for j in later {
            mass[j] = mass[j].add(share);
        }
        mass[i] = Frac::zero();
    }
    let mut target_times: Vec<u32> = (0..n).filter(|&i| target[i]).map(|i| times[i]).collect();
    target_times.sort_unstable();
    target_times.dedup();
    target_times
        .into_iter()
        .map(|t| {
            let f = (0..n).filter(|&i| target[i] && times[i] <= t).fold(Frac::zero(), |a, i| a.add(mass[i]));
            (t, f)
        })
        .collect()
}

/// Every dataset of up to `max_n` observations with times in `1..=max_n`
/// and every event pattern, checked against the exact oracle for the
/// event distribution and the censoring distribution. Returns the number of
/// datasets checked and the largest absolute error.
pub fn km_exhaustive(max_n: usize, tol: f64) -> Result<(usize, f64), String> {
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for n in 1..=max_n {
        let combos = (max_n as u64).pow(n as u32);
        for code in 0..combos {
            let times: Vec<u32> = (0..n).map(|k| ((code / (max_n as u64).pow(k as u32)) % max_n as u64) as u32 + 1).collect();
            for pattern in 0..(1u32 << n) {
                let events: Vec<bool> = (0..n).map(|k| (pattern >> k) & 1 == 1).collect();
                let obs: Vec<Obs> = times
                    .iter()
                    .zip(&events)
                    .map(|(&t, &e)| Obs { time: t as f64, event: e, weight: 1.0 })
                    .collect();
                let got = product_limit_cdf(&obs);
                let want = redistribute_to_right(&times, &events, true);
                worst = worst.max(compare_steps(&got, &want, tol).map_err(|e| format!("{times:?} {events:?}: {e}"))?);

                if n < 2 {
                    checked += 1;
                    continue;
                }
                let data = Dataset::from_columns(
                    vec![vec![0.0; n]],
                    times.iter().map(|&t| t as f64).collect(),
                    Some(events.clone()),
                )
                .unwrap();
                let g = km_censoring(&data).unwrap();
                let censored: Vec<bool> = events.iter().map(|e| !e).collect();
                let want = redistribute_to_right(&times, &censored, false);
                worst = worst
                    .max(compare_steps(g.cdf(), &want, tol).map_err(|e| format!("censoring {times:?} {events:?}: {e}"))?);
                checked += 1;
            }
        }
    }
    Ok((checked, worst))
}

fn compare_steps(got: &StepCdf, want: &[(u32, Frac)], tol: f64) -> Result<f64, String> {
    if got.len() != want.len() {
        return Err(format!("support {:?} vs {:?}", got.support(), want.iter().map(|w| w.0).collect::<Vec<_>>()));
    }
    let mut worst = 0.0f64;
    for ((&s, &p), (t, f)) in got.support().iter().zip(got.prob()).zip(want) {
        if s != *t as f64 {
            return Err(format!("support point {s} vs {t}"));
        }
        let err = (p - f.to_f64()).abs();
        if err > tol {
            return Err(format!("F({s}) = {p} vs exact {}/{}", f.num, f.den));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Textbook two-sample log-rank `z²` for a left/right partition of a node,
/// computed over the expanded observations (weights are multiplicities).
/// `None` when the variance vanishes.
pub fn logrank_z2(times: &[f64], events: &[bool], left: &[bool]) -> Option<f64> {
    let mut event_times: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let (mut num, mut var) = (0.0, 0.0);
    for &t in &event_times {
        let at_risk = times.iter().filter(|&&s| s >= t).count() as f64;
        let at_risk_l = times.iter().zip(left).filter(|(&s, &l)| l && s >= t).count() as f64;
        let d = times.iter().zip(events).filter(|(&s, &e)| e && s == t).count() as f64;
        let d_l = (0..times.len()).filter(|&i| left[i] && events[i] && times[i] == t).count() as f64;
        num += d_l - at_risk_l * d / at_risk;
        if at_risk > 1.0 {
            var += at_risk_l * (at_risk - at_risk_l) * d * (at_risk - d) / (at_risk * at_risk * (at_risk - 1.0));
        }
    }
    (var > 0.0).then(|| num * num / var)
}

/// Exhaustive best admissible log-rank `z²` over thresholds and level
/// subsets of a node; each child needs `min_events` events.
pub fn logrank_enumerate(data: &Dataset, rows: &[u32], weights: &[f64], min_events: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for var in 0..data.p() {
        for rule in all_rules(data, var, rows) {
            if let Some(z2) = rule_z2(data, rows, weights, var, rule, min_events) {
                if z2 > 0.0 && best.is_none_or(|b| z2 > b) {
                    best = Some(z2);
                }
            }
        }
    }
    best
}

fn all_rules(data: &Dataset, var: usize, rows: &[u32]) -> Vec<SplitRule> {
    let col = data.column(var);
    let mut vals: Vec<f64> = rows.iter().map(|&r| col[r as usize]).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    match data.kind(var) {
        ColumnKind::Continuous => vals[..vals.len().saturating_sub(1)].iter().map(|&v| SplitRule::Threshold(v)).collect(),
        ColumnKind::Categorical { .. } => {
            let k = vals.len();
            (1u64..(1 << k) - 1)
                .map(|s| {
                    let mask = (0..k).filter(|b| (s >> b) & 1 == 1).fold(0u64, |m, b| m | 1 << vals[b] as u64);
                    SplitRule::Levels(mask)
                })
                .collect()
        }
    }
}

/// Oracle `z²` of one rule, `None` if inadmissible.
pub fn rule_z2(data: &Dataset, rows: &[u32], weights: &[f64], var: usize, rule: SplitRule, min_events: f64) -> Option<f64> {
    let (mut times, mut events, mut left) = (Vec::new(), Vec::new(), Vec::new());
    for &r in rows {
        let r = r as usize;
        for _ in 0..weights[r] as usize {
            times.push(data.response()[r]);
            events.push(data.is_event(r));
            left.push(rule.goes_left(data.value(r, var)));
        }
    }
    let ev_l = (0..times.len()).filter(|&i| left[i] && events[i]).count() as f64;
    let ev_r = (0..times.len()).filter(|&i| !left[i] && events[i]).count() as f64;
    if ev_l < min_events || ev_r < min_events {
        return None;
    }
    logrank_z2(&times, &events, &left)
}

/// Nodes of at most `max_rows` rows with multiplicities 1 or 2: the split
/// search returns the exhaustive optimum, and its own rule attains it.
pub fn prop_logrank_exhaustive(cases: u32, max_rows: usize) -> PropResult {
    let input = (small_dataset(true, 2, max_rows), vec(1u8..=2, max_rows), 1u8..=2);
    run(cases, input, |(data, mult, min_ev)| {
        let rows: Vec<u32> = (0..data.n() as u32).collect();
        let weights: Vec<f64> = (0..data.n()).map(|i| mult[i] as f64).collect();
        let candidates: Vec<usize> = (0..data.p()).collect();
        let min_events = min_ev as f64;
        let got = best_logrank_split(&data, &rows, &weights, &candidates, min_events, &mut Scratch::default());
        let want = logrank_enumerate(&data, &rows, &weights, min_events);
        // A statistic at rounding level carries no information either way.
        let negligible = |z2: f64| z2 <= 1e-12;
        let got = got.filter(|g| !negligible(g.score * g.score));
        let want = want.filter(|w| !negligible(*w));
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                let z2 = g.score * g.score;
                prop_assert!((z2 - w).abs() <= 1e-9 * w.max(1.0), "score² {} vs exhaustive {}", z2, w);
                let own = rule_z2(&data, &rows, &weights, g.var, g.rule, min_events)
                    .ok_or_else(|| TestCaseError::fail("chosen split inadmissible"))?;
                prop_assert!((own - w).abs() <= 1e-9 * w.max(1.0), "chosen split scores {} vs {}", own, w);
            }
            (g, w) => return Err(TestCaseError::fail(format!("search {g:?} vs exhaustive {w:?}"))),
        }
        Ok(())
    })
}

// Generator fidelity.

use qcl_forest::simgen::{builtin_flc_table, generate_with, verify_snr, Family, FlcConfig};
use qcl_forest::tuning::{coverage_ipcw_from_cdfs, coverage_uncensored_from_cdfs};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Level probabilities of the ten categorical covariates.
pub const CATEGORICAL_PROBS: [&[f64]; 10] = [
    &[0.5, 0.5],
    &[0.6, 0.4],
    &[0.3, 0.7],
    &[0.3, 0.7],
    &[0.2, 0.25, 0.55],
    &[0.2, 0.35, 0.45],
    &[0.6, 0.4],
    &[0.2, 0.35, 0.45],
    &[0.55, 0.45],
    &[0.45, 0.55],
];

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn uncensored_copy(cfg: &FlcConfig, n: usize) -> FlcConfig {
    FlcConfig { n, censoring: None, ..cfg.clone() }
}

/// Largest distance between the Monte Carlo R² of `verify_snr` and the SNR
/// target over every built-in setting, with the setting attaining it.
pub fn snr_worst_deviation(draws: usize) -> (String, f64) {
    let mut worst = (String::new(), 0.0f64);
    for cfg in builtin_flc_table() {
        let r = verify_snr(&cfg, draws, 11).unwrap();
        let dev = (r.r2 - cfg.snr.target_r2()).abs();
        if dev > worst.1 {
            worst = (cfg.id.to_string(), dev);
        }
    }
    worst
}

/// R² measured from simulated responses by the variance decomposition
/// `1 - E[Var(T|X)] / Var(T)`, using only the drawn responses and the
/// family's conditional variance.
pub fn empirical_r2(cfg: &FlcConfig, n: usize, seed: u64) -> f64 {
    let sim = generate_with(&uncensored_copy(cfg, n), seed, 2).unwrap();
    let y = sim.train.response();
    let within = match cfg.family {
        Family::Normal => 1.2f64 * 1.2,
        Family::Weibull => {
            let k = 2.7f64;
            let g1 = statrs::function::gamma::gamma(1.0 + 1.0 / k);
            let g2 = statrs::function::gamma::gamma(1.0 + 2.0 / k);
            let scales: Vec<f64> = sim.train_truth.eta.iter().map(|e| 0.8 * e.exp()).collect();
            scales.iter().map(|s| s * s * (g2 - g1 * g1)).sum::<f64>() / n as f64
        }
    };
    1.0 - within / variance(y)
}

/// Largest distance between the realized censoring share of a drawn
/// training set and its target over every censored setting.
pub fn censoring_worst_deviation(n: usize, seed: u64) -> (String, f64) {
    let mut worst = (String::new(), 0.0f64);
    for cfg in builtin_flc_table().into_iter().filter(|c| c.id.censored) {
        let target = cfg.censoring.unwrap();
        let sim = generate_with(&FlcConfig { n, ..cfg.clone() }, seed, 2).unwrap();
        let events = sim.train.events().unwrap();
        let share = events.iter().filter(|e| !**e).count() as f64 / n as f64;
        let dev = (share - target).abs();
        if dev > worst.1 {
            worst = (cfg.id.to_string(), dev);
        }
    }
    worst
}

/// Pearson chi-square p-values of the ten categorical columns of a drawn
/// categorical p = 10 design against the tabulated marginals.
pub fn categorical_pvalues(n: usize, seed: u64) -> Vec<f64> {
    let cfg = builtin_flc_table()
        .into_iter()
        .find(|c| !c.id.censored && c.covariates == qcl_forest::simgen::CovariateType::Categorical && c.p == 10)
        .unwrap();
    let sim = generate_with(&uncensored_copy(&cfg, n), seed, 2).unwrap();
    CATEGORICAL_PROBS
        .iter()
        .enumerate()
        .map(|(j, probs)| {
            let mut counts = vec![0u64; probs.len()];
            for &v in sim.train.column(j) {
                counts[v as usize] += 1;
            }
            let stat: f64 = counts
                .iter()
                .zip(probs.iter())
                .map(|(&o, &p)| (o as f64 - p * n as f64).powi(2) / (p * n as f64))
                .sum();
            1.0 - ChiSquared::new((probs.len() - 1) as f64).unwrap().cdf(stat)
        })
        .collect()
}

/// On censoring-free survival data the weighted coverage estimate and the
/// direct count agree. Returns the number of comparisons and the largest
/// absolute difference (both the estimate and each row term).
pub fn ipcw_degeneracy(seed: u64) -> Result<(usize, f64), String> {
    let mut compared = 0usize;
    let mut worst = 0.0f64;
    for id in ["c1", "c25", "c6", "c30"] {
        let cfg = qcl_forest::simgen::flc(id.parse().unwrap()).unwrap();
        let sim = generate_with(&FlcConfig { censoring: None, ..cfg }, seed, 2).map_err(|e| e.to_string())?;
        let data = sim.train;
        let params = ForestParams::survival_default(data.p()).with_trees(200).with_seed(seed);
        let forest = fit_forest(data.clone(), &params).map_err(|e| e.to_string())?;
        let cdfs = forest.oob_cdfs().map_err(|e| e.to_string())?;
        let g = km_censoring(&data).map_err(|e| e.to_string())?;
        for tau in [0.1, 0.25, 0.5, 0.75, 0.9] {
            if cdfs.iter().any(|c| quantile_from_cdf(c, tau).unwrap().value.is_none()) {
                return Err(format!("{id}: undefined quantile at {tau}"));
            }
            let w = coverage_ipcw_from_cdfs(&cdfs, &data, &g, tau).map_err(|e| e.to_string())?;
            let u = coverage_uncensored_from_cdfs(&cdfs, &data, tau).map_err(|e| e.to_string())?;
            let y = data.response();
            let direct = (0..data.n()).filter(|&i| y[i] <= scan_quantile(&cdfs[i], tau).unwrap()).count() as f64
                / data.n() as f64;
            worst = worst.max((w.tau_tilde_hat - u.tau_tilde_hat).abs());
            worst = worst.max((w.tau_tilde_hat - direct).abs());
            for (a, b) in w.per_obs.iter().zip(&u.per_obs) {
                worst = worst.max((a - b).abs());
            }
            compared += 1;
        }
    }
    Ok((compared, worst))
}
