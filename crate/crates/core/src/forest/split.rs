//! Split search for a single node.
//!
//! Nodes are described by the distinct in-bag rows they hold plus a dense
//! per-row weight (the bootstrap multiplicity). Candidates are scanned in the
//! order given and a split replaces the incumbent only when strictly better,
//! so ties go to the earliest covariate and then to the lowest threshold or
//! lowest-numbered level subset.

use crate::data::{ColumnKind, Dataset};

use super::tree::SplitRule;

/// Subsets are enumerated exhaustively up to this many present levels;
/// beyond it levels are ordered by mean response and split as a sequence.
const MAX_ENUMERATED_LEVELS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub var: usize,
    pub rule: SplitRule,
    /// Squared-error reduction (regression) or absolute standardized log-rank
    /// statistic (survival).
    pub score: f64,
}

/// Reusable buffers.
#[derive(Default)]
pub struct Scratch {
    pairs: Vec<(f64, u32)>,
    yl: Vec<f64>,
}

fn threshold_between(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

fn sorted_pairs(data: &Dataset, var: usize, rows: &[u32], buf: &mut Vec<(f64, u32)>) {
    let col = data.column(var);
    buf.clear();
    buf.extend(rows.iter().map(|&r| (col[r as usize], r)));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
}

/// Present levels of a categorical column in `rows`, ascending.
fn present_levels(data: &Dataset, var: usize, rows: &[u32], levels: u32) -> Vec<usize> {
    let col = data.column(var);
    let mut present = vec![false; levels as usize];
    for &r in rows {
        present[col[r as usize] as usize] = true;
    }
    (0..levels as usize).filter(|&l| present[l]).collect()
}

/// Level masks (over actual level codes) to try for the given present levels.
/// `order` supplies a level ranking used when too many levels are present.
fn level_masks(present: &[usize], order: impl FnOnce() -> Vec<usize>) -> Vec<u64> {
    let k = present.len();
    let mut out = Vec::new();
    if k < 2 {
        return out;
    }
    if k <= MAX_ENUMERATED_LEVELS {
        let full = (1u64 << k) - 1;
        // Subsets containing the lowest present level, excluding the full set.
        let mut s = 1u64;
        while s < full {
            if s & 1 == 1 {
                let mut mask = 0u64;
                for (b, &lvl) in present.iter().enumerate() {
                    if (s >> b) & 1 == 1 {
                        mask |= 1 << lvl;
                    }
                }
                out.push(mask);
            }
            s += 1;
        }
    } else {
        let ranked = order();
        let mut mask = 0u64;
        for &lvl in &ranked[..ranked.len() - 1] {
            mask |= 1 << lvl;
            out.push(mask);
        }
    }
    out
}

/// Best squared-error split of a regression node over `candidates`.
/// Returns `None` when no split reduces the pooled within-child sum of
/// squares.
pub fn best_regression_split(
    data: &Dataset,
    rows: &[u32],
    weights: &[f64],
    candidates: &[usize],
    scratch: &mut Scratch,
) -> Option<SplitCandidate> {
    let y = data.response();
    let total_w: f64 = rows.iter().map(|&r| weights[r as usize]).sum();
    if rows.len() < 2 || total_w <= 0.0 {
        return None;
    }
    let mean = rows.iter().map(|&r| weights[r as usize] * y[r as usize]).sum::<f64>() / total_w;
    let centered = |r: u32| y[r as usize] - mean;
    let total_s: f64 = rows.iter().map(|&r| weights[r as usize] * centered(r)).sum();
    let sst: f64 = rows.iter().map(|&r| weights[r as usize] * centered(r) * centered(r)).sum();
    if sst <= 0.0 {
        return None;
    }
    let base = total_s * total_s / total_w;
    let min_gain = sst * 1e-12;
    let gain = |sl: f64, wl: f64| {
        let sr = total_s - sl;
        let wr = total_w - wl;
        sl * sl / wl + sr * sr / wr - base
    };

    let mut best: Option<SplitCandidate> = None;
    let consider = |var: usize, rule: SplitRule, score: f64, best: &mut Option<SplitCandidate>| {
        if score > min_gain && best.is_none_or(|b| score > b.score) {
            *best = Some(SplitCandidate { var, rule, score });
        }
    };

    for &var in candidates {
        match data.kind(var) {
            ColumnKind::Continuous => {
                sorted_pairs(data, var, rows, &mut scratch.pairs);
                let pairs = &scratch.pairs;
                let (mut sl, mut wl) = (0.0, 0.0);
                for k in 0..pairs.len() - 1 {
                    let r = pairs[k].1;
                    let w = weights[r as usize];
                    sl += w * centered(r);
                    wl += w;
                    if pairs[k].0 < pairs[k + 1].0 {
                        let thr = threshold_between(pairs[k].0, pairs[k + 1].0);
                        consider(var, SplitRule::Threshold(thr), gain(sl, wl), &mut best);
                    }
                }
            }
            ColumnKind::Categorical { levels } => {
                let present = present_levels(data, var, rows, levels);
                let col = data.column(var);
                let mut lw = vec![0.0; levels as usize];
                let mut ls = vec![0.0; levels as usize];
                for &r in rows {
                    let l = col[r as usize] as usize;
                    lw[l] += weights[r as usize];
                    ls[l] += weights[r as usize] * centered(r);
                }
                let masks = level_masks(&present, || {
                    let mut o = present.clone();
                    o.sort_by(|&a, &b| (ls[a] / lw[a]).total_cmp(&(ls[b] / lw[b])).then(a.cmp(&b)));
                    o
                });
                for mask in masks {
                    let (mut sl, mut wl) = (0.0, 0.0);
                    for &l in &present {
                        if (mask >> l) & 1 == 1 {
                            sl += ls[l];
                            wl += lw[l];
                        }
                    }
                    consider(var, SplitRule::Levels(mask), gain(sl, wl), &mut best);
                }
            }
        }
    }
    best
}

/// Per-node event-time tables for the log-rank statistic.
struct RiskTable {
    /// Weighted events at each distinct event time.
    d: Vec<f64>,
    /// Weighted number at risk at each distinct event time.
    y: Vec<f64>,
    /// `d (Y - d) / ((Y - 1) Y^2)`: variance weight of the at-risk product.
    c: Vec<f64>,
    /// `prefix[q] = sum_{k < q} d_k / Y_k`.
    prefix: Vec<f64>,
    times: Vec<f64>,
    total_events: f64,
}

impl RiskTable {
    fn new(data: &Dataset, rows: &[u32], weights: &[f64]) -> Self {
        let y = data.response();
        let mut times: Vec<f64> = rows.iter().filter(|&&r| data.is_event(r as usize)).map(|&r| y[r as usize]).collect();
        times.sort_unstable_by(f64::total_cmp);
        times.dedup();
        let k = times.len();
        let mut d = vec![0.0; k];
        let mut at_risk_start = vec![0.0; k + 1];
        let mut total_events = 0.0;
        for &r in rows {
            let w = weights[r as usize];
            let t = y[r as usize];
            let pos = times.partition_point(|&s| s <= t);
            // Contributes to the risk set of event times 0..pos.
            at_risk_start[0] += w;
            at_risk_start[pos] -= w;
            if data.is_event(r as usize) {
                d[pos - 1] += w;
                total_events += w;
            }
        }
        let mut yv = vec![0.0; k];
        let mut acc = 0.0;
        for q in 0..k {
            acc += at_risk_start[q];
            yv[q] = acc;
        }
        let c = (0..k)
            .map(|q| {
                let (dq, yq) = (d[q], yv[q]);
                if yq > 1.0 {
                    dq * (yq - dq) / ((yq - 1.0) * yq * yq)
                } else {
                    0.0
                }
            })
            .collect();
        let mut prefix = vec![0.0; k + 1];
        for q in 0..k {
            prefix[q + 1] = prefix[q] + d[q] / yv[q];
        }
        RiskTable { d, y: yv, c, prefix, times, total_events }
    }

    fn position(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }
}

/// Best log-rank split of a survival node over `candidates`. A split is
/// admissible only if each child holds at least `min_events` (weighted)
/// events.
pub fn best_logrank_split(
    data: &Dataset,
    rows: &[u32],
    weights: &[f64],
    candidates: &[usize],
    min_events: f64,
    scratch: &mut Scratch,
) -> Option<SplitCandidate> {
    if rows.len() < 2 {
        return None;
    }
    let table = RiskTable::new(data, rows, weights);
    if table.d.is_empty() || table.total_events < 2.0 * min_events {
        return None;
    }
    let y = data.response();
    let k = table.d.len();
    let mut best: Option<(SplitCandidate, f64)> = None;
    let consider = |var: usize, rule: SplitRule, num: f64, var_: f64, best: &mut Option<(SplitCandidate, f64)>| {
        if var_ <= 0.0 {
            return;
        }
        let z2 = num * num / var_;
        if z2 > 0.0 && best.is_none_or(|b| z2 > b.1) {
            *best = Some((SplitCandidate { var, rule, score: z2.sqrt() }, z2));
        }
    };

    for &var in candidates {
        match data.kind(var) {
            ColumnKind::Continuous => {
                sorted_pairs(data, var, rows, &mut scratch.pairs);
                let pairs = &scratch.pairs;
                scratch.yl.clear();
                scratch.yl.resize(k, 0.0);
                let yl = &mut scratch.yl;
                let (mut num, mut v, mut ev_left) = (0.0, 0.0, 0.0);
                for idx in 0..pairs.len() - 1 {
                    let r = pairs[idx].1 as usize;
                    let w = weights[r];
                    let pos = table.position(y[r]);
                    for q in 0..pos {
                        v += table.c[q] * w * (table.y[q] - 2.0 * yl[q] - w);
                        yl[q] += w;
                    }
                    num -= w * table.prefix[pos];
                    if data.is_event(r) {
                        num += w;
                        ev_left += w;
                    }
                    if pairs[idx].0 < pairs[idx + 1].0
                        && ev_left >= min_events
                        && table.total_events - ev_left >= min_events
                    {
                        let thr = threshold_between(pairs[idx].0, pairs[idx + 1].0);
                        consider(var, SplitRule::Threshold(thr), num, v, &mut best);
                    }
                }
            }
            ColumnKind::Categorical { levels } => {
                let present = present_levels(data, var, rows, levels);
                let col = data.column(var);
                let nl = levels as usize;
                // Per level: events at each time and at-risk counts.
                let mut ld = vec![0.0; nl * k];
                let mut ly = vec![0.0; nl * (k + 1)];
                let mut lev = vec![0.0; nl];
                let mut lsum = vec![0.0; nl];
                let mut lw = vec![0.0; nl];
                for &r in rows {
                    let r = r as usize;
                    let l = col[r] as usize;
                    let w = weights[r];
                    let pos = table.position(y[r]);
                    ly[l * (k + 1)] += w;
                    ly[l * (k + 1) + pos] -= w;
                    lsum[l] += w * y[r];
                    lw[l] += w;
                    if data.is_event(r) {
                        ld[l * k + pos - 1] += w;
                        lev[l] += w;
                    }
                }
                for l in 0..nl {
                    let row = &mut ly[l * (k + 1)..(l + 1) * (k + 1)];
                    for q in 1..=k {
                        row[q] += row[q - 1];
                    }
                }
                let masks = level_masks(&present, || {
                    let mut o = present.clone();
                    o.sort_by(|&a, &b| (lsum[a] / lw[a]).total_cmp(&(lsum[b] / lw[b])).then(a.cmp(&b)));
                    o
                });
                for mask in masks {
                    let in_left = |l: usize| (mask >> l) & 1 == 1;
                    let ev_left: f64 = present.iter().filter(|&&l| in_left(l)).map(|&l| lev[l]).sum();
                    if ev_left < min_events || table.total_events - ev_left < min_events {
                        continue;
                    }
                    let (mut num, mut v) = (0.0, 0.0);
                    for q in 0..k {
                        let (mut ylq, mut dlq) = (0.0, 0.0);
                        for &l in present.iter().filter(|&&l| in_left(l)) {
                            ylq += ly[l * (k + 1) + q];
                            dlq += ld[l * k + q];
                        }
                        num += dlq - ylq * table.d[q] / table.y[q];
                        v += table.c[q] * ylq * (table.y[q] - ylq);
                    }
                    consider(var, SplitRule::Levels(mask), num, v, &mut best);
                }
            }
        }
    }
    best.map(|b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(x: Vec<f64>, y: Vec<f64>) -> Dataset {
        Dataset::from_columns(vec![x], y, None).unwrap()
    }

    #[test]
    fn picks_obvious_threshold() {
        let d = reg(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0, 10.0, 10.0]);
        let rows = [0, 1, 2, 3];
        let s = best_regression_split(&d, &rows, &[1.0; 4], &[0], &mut Scratch::default()).unwrap();
        assert_eq!(s.rule, SplitRule::Threshold(2.5));
        assert!((s.score - 100.0).abs() < 1e-9);
    }

    #[test]
    fn constant_response_never_splits() {
        let d = reg(vec![1.0, 2.0, 3.0], vec![0.3; 3]);
        assert!(best_regression_split(&d, &[0, 1, 2], &[1.0; 3], &[0], &mut Scratch::default()).is_none());
    }

    #[test]
    fn ties_prefer_lower_covariate_index() {
        let d = Dataset::from_columns(vec![vec![1.0, 2.0], vec![1.0, 2.0]], vec![0.0, 1.0], None).unwrap();
        let s = best_regression_split(&d, &[0, 1], &[1.0; 2], &[0, 1], &mut Scratch::default()).unwrap();
        assert_eq!(s.var, 0);
    }

    #[test]
    fn categorical_subset_split() {
        let d = Dataset::new(
            vec!["c".into()],
            vec![ColumnKind::Categorical { levels: 3 }],
            vec![vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0]],
            vec![5.0, 0.0, 5.0, 5.0, 0.0, 5.0],
            None,
        )
        .unwrap();
        let s = best_regression_split(&d, &[0, 1, 2, 3, 4, 5], &[1.0; 6], &[0], &mut Scratch::default()).unwrap();
        // Levels {0, 2} against {1}.
        assert_eq!(s.rule, SplitRule::Levels(0b101));
    }

    #[test]
    fn logrank_respects_min_events() {
        let d = Dataset::from_columns(
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec![1.0, 2.0, 3.0, 4.0],
            Some(vec![true, true, true, true]),
        )
        .unwrap();
        let rows = [0, 1, 2, 3];
        let s = best_logrank_split(&d, &rows, &[1.0; 4], &[0], 2.0, &mut Scratch::default()).unwrap();
        assert_eq!(s.rule, SplitRule::Threshold(2.5));
        assert!(best_logrank_split(&d, &rows, &[1.0; 4], &[0], 3.0, &mut Scratch::default()).is_none());
    }
}
