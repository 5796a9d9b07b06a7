//! Simulated training/test data for the factor-level study design.
//!
//! Covariates are independent. Categorical covariates follow a fixed list of
//! Bernoulli and three-level multinomial marginals; continuous covariates are
//! `U(0, 1)`. Three-level covariates enter the linear predictor through two
//! dummies (levels 1 and 2 against level 0). Responses are normal with
//! standard deviation 1.2 around `x'b`, or Weibull with shape 2.7 and scale
//! `0.8 exp(x'b)`, in which case training responses are censored by
//! independent exponential times.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Bernoulli, Distribution};
use rand::Rng;
use rand_distr::{Exp, Normal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as NormalDist};
use statrs::function::gamma::gamma;

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

pub const NORMAL_SD: f64 = 1.2;
pub const WEIBULL_SHAPE: f64 = 2.7;
pub const WEIBULL_LAMBDA: f64 = 0.8;
pub const TEST_SIZE: usize = 1000;
/// Draws used to calibrate censoring rates.
pub const CALIBRATION_DRAWS: usize = 100_000;

const N_UNCENSORED: usize = 108;
const N_CENSORED: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateType {
    Categorical,
    Continuous,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnrLevel {
    High,
    Medium,
    Low,
}

impl SnrLevel {
    pub fn target_r2(self) -> f64 {
        match self {
            SnrLevel::High => 0.75,
            SnrLevel::Medium => 0.50,
            SnrLevel::Low => 0.25,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            SnrLevel::High => "H",
            SnrLevel::Medium => "M",
            SnrLevel::Low => "L",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Even,
    Concentrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Normal,
    Weibull,
}

/// Identifier of a built-in setting: `1..=108` uncensored, `c1..=c96`
/// censored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FlcId {
    pub censored: bool,
    pub number: usize,
}

impl FlcId {
    pub fn uncensored(number: usize) -> Self {
        FlcId { censored: false, number }
    }

    pub fn censored(number: usize) -> Self {
        FlcId { censored: true, number }
    }
}

impl fmt::Display for FlcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.censored {
            write!(f, "c{}", self.number)
        } else {
            write!(f, "{}", self.number)
        }
    }
}

impl FromStr for FlcId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let (censored, digits) = match t.strip_prefix(['c', 'C']) {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let number: usize = digits.parse().map_err(|_| Error::InvalidParams(format!("bad setting id '{s}'")))?;
        let max = if censored { N_CENSORED } else { N_UNCENSORED };
        if number == 0 || number > max {
            return Err(Error::InvalidParams(format!("setting id '{s}' out of range")));
        }
        Ok(FlcId { censored, number })
    }
}

impl From<FlcId> for String {
    fn from(id: FlcId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for FlcId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlcConfig {
    pub id: FlcId,
    pub n: usize,
    pub p: usize,
    pub covariates: CovariateType,
    pub snr: SnrLevel,
    pub signal: Signal,
    pub family: Family,
    /// Target proportion of censored training rows (Weibull family only).
    #[serde(default)]
    pub censoring: Option<f64>,
    /// Coefficients over the design columns (dummy-encoded).
    pub beta: Vec<f64>,
}

/// Marginal law of one covariate.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    Bernoulli(f64),
    Multinomial(Vec<f64>),
    Uniform,
}

impl Marginal {
    /// Number of linear-predictor coefficients this covariate takes.
    pub fn width(&self) -> usize {
        match self {
            Marginal::Multinomial(p) => p.len() - 1,
            _ => 1,
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            Marginal::Bernoulli(_) => ColumnKind::Categorical { levels: 2 },
            Marginal::Multinomial(p) => ColumnKind::Categorical { levels: p.len() as u32 },
            Marginal::Uniform => ColumnKind::Continuous,
        }
    }

    /// Level probabilities of a categorical covariate.
    pub fn level_probs(&self) -> Option<Vec<f64>> {
        match self {
            Marginal::Bernoulli(p) => Some(vec![1.0 - p, *p]),
            Marginal::Multinomial(p) => Some(p.clone()),
            Marginal::Uniform => None,
        }
    }

    /// Contribution of value `x` to `x'b` given this covariate's coefficients.
    fn contribution(&self, x: f64, beta: &[f64]) -> f64 {
        match self {
            Marginal::Multinomial(_) => {
                let level = x as usize;
                if level == 0 {
                    0.0
                } else {
                    beta[level - 1]
                }
            }
            _ => beta[0] * x,
        }
    }

    /// `ln E[exp(c * contribution)]`.
    fn log_mgf(&self, c: f64, beta: &[f64]) -> f64 {
        match self {
            Marginal::Bernoulli(p) => ((1.0 - p) + p * (c * beta[0]).exp()).ln(),
            Marginal::Multinomial(p) => {
                let m: f64 = p[0] + p[1..].iter().zip(beta).map(|(pk, b)| pk * (c * b).exp()).sum::<f64>();
                m.ln()
            }
            Marginal::Uniform => {
                let a = c * beta[0];
                if a.abs() < 1e-12 {
                    0.0
                } else {
                    (a.exp_m1() / a).ln()
                }
            }
        }
    }

    /// `Var(contribution)`.
    fn variance(&self, beta: &[f64]) -> f64 {
        match self {
            Marginal::Bernoulli(p) => beta[0] * beta[0] * p * (1.0 - p),
            Marginal::Multinomial(p) => {
                let m: f64 = p[1..].iter().zip(beta).map(|(pk, b)| pk * b).sum();
                let m2: f64 = p[1..].iter().zip(beta).map(|(pk, b)| pk * b * b).sum();
                m2 - m * m
            }
            Marginal::Uniform => beta[0] * beta[0] / 12.0,
        }
    }
}

/// Marginals of the ten categorical covariates, in order.
pub fn categorical_marginals() -> Vec<Marginal> {
    use Marginal::*;
    vec![
        Bernoulli(0.5),
        Bernoulli(0.4),
        Bernoulli(0.7),
        Bernoulli(0.7),
        Multinomial(vec![0.2, 0.25, 0.55]),
        Multinomial(vec![0.2, 0.35, 0.45]),
        Bernoulli(0.4),
        Multinomial(vec![0.2, 0.35, 0.45]),
        Bernoulli(0.45),
        Bernoulli(0.55),
    ]
}

/// Covariate marginals for a covariate type and count. Mixed designs place
/// the `p / 2` categorical covariates first.
pub fn marginals(covariates: CovariateType, p: usize) -> Result<Vec<Marginal>> {
    let cats = categorical_marginals();
    let n_cat = match covariates {
        CovariateType::Categorical => p,
        CovariateType::Continuous => 0,
        CovariateType::Mixed => {
            if p % 2 != 0 {
                return Err(Error::InvalidParams("mixed designs need an even number of covariates".into()));
            }
            p / 2
        }
    };
    if n_cat > cats.len() {
        return Err(Error::InvalidParams(format!("at most {} categorical covariates are defined", cats.len())));
    }
    let mut out: Vec<Marginal> = cats.into_iter().take(n_cat).collect();
    out.resize(p, Marginal::Uniform);
    Ok(out)
}

/// High-SNR coefficient vectors.
fn base_beta(covariates: CovariateType, p: usize, signal: Signal) -> Vec<f64> {
    let scale = |k: f64, v: &[f64]| v.iter().map(|x| k * x).collect::<Vec<_>>();
    match (covariates, p, signal) {
        (CovariateType::Categorical, 4, Signal::Even) => scale(0.64, &[5.0, 4.0, -2.5, -2.3]),
        (CovariateType::Categorical, 10, Signal::Even) => {
            scale(0.445, &[5.0, 4.0, -2.5, -2.3, -3.0, 2.0, -1.5, 1.0, -2.0, -3.0, 2.2, -0.8, 2.5])
        }
        (CovariateType::Categorical, 4, Signal::Concentrated) => vec![4.5, 0.0, 0.0, 0.0],
        (CovariateType::Categorical, 10, Signal::Concentrated) => {
            let mut b = vec![0.0; 13];
            b[0] = 4.4;
            b[1] = 1.0;
            b
        }
        (CovariateType::Continuous, 4, Signal::Even) => vec![5.0, 4.0, -2.5, -3.7],
        (CovariateType::Continuous, 10, Signal::Even) => {
            scale(0.73, &[5.0, 4.0, -2.5, -4.0, -5.0, 0.5, 1.5, -3.0, 3.0, 2.5])
        }
        (CovariateType::Continuous, 4, Signal::Concentrated) => vec![7.8, 0.0, 0.0, 0.0],
        (CovariateType::Continuous, 10, Signal::Concentrated) => {
            let mut b = vec![0.0; 10];
            b[0] = 7.6;
            b[1] = 2.0;
            b
        }
        (CovariateType::Mixed, 4, Signal::Even) => scale(0.66, &[5.0, 4.0, -2.5, -3.7]),
        (CovariateType::Mixed, 10, Signal::Even) => {
            scale(0.515, &[5.0, 4.0, -2.5, -2.3, -3.0, 2.0, 0.5, 1.5, -3.0, 3.0, 2.5])
        }
        (CovariateType::Mixed, 4, Signal::Concentrated) => vec![4.5, 0.0, 0.0, 0.0],
        (CovariateType::Mixed, 10, Signal::Concentrated) => {
            let mut b = vec![0.0; 11];
            b[0] = 4.4;
            b[6] = 1.7;
            b
        }
        _ => unreachable!("only 4 and 10 covariates are tabulated"),
    }
}

/// Medium and low SNR multipliers of the high-SNR normal-response vectors.
fn snr_multiplier(covariates: CovariateType, signal: Signal, snr: SnrLevel) -> f64 {
    let (med, low) = match (covariates, signal) {
        (CovariateType::Categorical, Signal::Even) => (0.575, 0.33),
        (CovariateType::Categorical, Signal::Concentrated) => (0.58, 0.335),
        (CovariateType::Continuous, Signal::Even) => (0.58, 0.335),
        (CovariateType::Continuous, Signal::Concentrated) => (0.575, 0.335),
        (CovariateType::Mixed, _) => (0.575, 0.33),
    };
    match snr {
        SnrLevel::High => 1.0,
        SnrLevel::Medium => med,
        SnrLevel::Low => low,
    }
}

/// Splits design coefficients into per-covariate slices.
fn split_beta<'a>(m: &[Marginal], beta: &'a [f64]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(m.len());
    let mut k = 0;
    for mg in m {
        out.push(&beta[k..k + mg.width()]);
        k += mg.width();
    }
    out
}

fn weibull_moments() -> (f64, f64) {
    (gamma(1.0 + 1.0 / WEIBULL_SHAPE), gamma(1.0 + 2.0 / WEIBULL_SHAPE))
}

/// Pseudo-R² of Weibull responses from `E[exp(eta)]` and `E[exp(2 eta)]`
/// given through `ln r = ln E[e^{2 eta}] - 2 ln E[e^{eta}]`.
fn weibull_r2_from_log_ratio(log_r: f64) -> f64 {
    let (g1, g2) = weibull_moments();
    let between = g1 * g1 * log_r.exp_m1();
    let within = (g2 - g1 * g1) * log_r.exp();
    between / (between + within)
}

/// Exact population R² (normal) or pseudo-R² (Weibull) of a coefficient
/// vector under independent covariates.
pub fn exact_r2(family: Family, m: &[Marginal], beta: &[f64]) -> f64 {
    let parts = split_beta(m, beta);
    match family {
        Family::Normal => {
            let v: f64 = m.iter().zip(&parts).map(|(mg, b)| mg.variance(b)).sum();
            v / (v + NORMAL_SD * NORMAL_SD)
        }
        Family::Weibull => {
            let k = |c: f64| m.iter().zip(&parts).map(|(mg, b)| mg.log_mgf(c, b)).sum::<f64>();
            weibull_r2_from_log_ratio(k(2.0) - 2.0 * k(1.0))
        }
    }
}

/// Multiplier `c` such that `c * beta` attains pseudo-R² `target` for
/// Weibull responses. The pseudo-R² is strictly increasing in `c`.
pub fn weibull_scale_for(m: &[Marginal], beta: &[f64], target: f64) -> Result<f64> {
    let f = |c: f64| {
        let scaled: Vec<f64> = beta.iter().map(|b| c * b).collect();
        exact_r2(Family::Weibull, m, &scaled)
    };
    let (g1, g2) = weibull_moments();
    if !(target > 0.0 && target < g1 * g1 / g2) {
        return Err(Error::Search(format!("pseudo-R² {target} is not attainable")));
    }
    let mut hi = 1.0;
    while f(hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Search("no multiplier reaches the target".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl FlcConfig {
    /// Builds a tabulated setting. Normal responses use the tabulated
    /// coefficients and SNR multipliers; Weibull responses rescale the
    /// high-SNR direction to the target pseudo-R².
    pub fn tabulated(
        id: FlcId,
        n: usize,
        p: usize,
        covariates: CovariateType,
        snr: SnrLevel,
        signal: Signal,
        family: Family,
        censoring: Option<f64>,
    ) -> Result<Self> {
        let m = marginals(covariates, p)?;
        let base = base_beta(covariates, p, signal);
        let c = match family {
            Family::Normal => snr_multiplier(covariates, signal, snr),
            Family::Weibull => weibull_scale_for(&m, &base, snr.target_r2())?,
        };
        let beta = base.iter().map(|b| c * b).collect();
        let cfg = FlcConfig { id, n, p, covariates, snr, signal, family, censoring, beta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn marginals(&self) -> Result<Vec<Marginal>> {
        marginals(self.covariates, self.p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams("n must be at least 2".into()));
        }
        if self.p == 0 {
            return Err(Error::InvalidParams("p must be positive".into()));
        }
        let m = self.marginals()?;
        let width: usize = m.iter().map(Marginal::width).sum();
        if self.beta.len() != width {
            return Err(Error::InvalidParams(format!(
                "coefficient vector has length {}, design needs {width}",
                self.beta.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite() || b.abs() > 50.0) {
            return Err(Error::InvalidParams("coefficients must be finite and at most 50 in magnitude".into()));
        }
        match (self.family, self.censoring) {
            (Family::Normal, Some(c)) if c != 0.0 => {
                return Err(Error::InvalidParams("normal responses are never censored".into()))
            }
            (_, Some(c)) if !(0.0..0.95).contains(&c) => {
                return Err(Error::InvalidParams(format!("censoring target {c} outside [0, 0.95)")))
            }
            _ => {}
        }
        Ok(())
    }

    /// Censoring target, zero when absent.
    pub fn censoring_target(&self) -> f64 {
        self.censoring.unwrap_or(0.0)
    }

    /// Exact R² or pseudo-R² of this setting.
    pub fn exact_r2(&self) -> Result<f64> {
        Ok(exact_r2(self.family, &self.marginals()?, &self.beta))
    }
}

/// All built-in settings: 108 uncensored then 96 censored.
///
/// Uncensored numbering runs over covariate type (categorical, continuous,
/// mixed), then signal (even, concentrated), SNR (high, medium, low), `p`
/// (4, 10) and `n` (300, 1200, 2500), the last varying fastest. Censored
/// numbering runs over censoring (10%, 30%), covariate type (categorical,
/// continuous), signal, SNR, `p` and `n` (300, 1200).
pub fn builtin_flc_table() -> Vec<FlcConfig> {
    let signals = [Signal::Even, Signal::Concentrated];
    let snrs = [SnrLevel::High, SnrLevel::Medium, SnrLevel::Low];
    let mut out = Vec::with_capacity(N_UNCENSORED + N_CENSORED);
    let mut k = 0;
    for cov in [CovariateType::Categorical, CovariateType::Continuous, CovariateType::Mixed] {
        for signal in signals {
            for snr in snrs {
                for p in [4, 10] {
                    for n in [300, 1200, 2500] {
                        k += 1;
                        out.push(
                            FlcConfig::tabulated(FlcId::uncensored(k), n, p, cov, snr, signal, Family::Normal, None)
                                .expect("tabulated settings are valid"),
                        );
                    }
                }
            }
        }
    }
    k = 0;
    for cens in [0.10, 0.30] {
        for cov in [CovariateType::Categorical, CovariateType::Continuous] {
            for signal in signals {
                for snr in snrs {
                    for p in [4, 10] {
                        for n in [300, 1200] {
                            k += 1;
                            out.push(
                                FlcConfig::tabulated(
                                    FlcId::censored(k),
                                    n,
                                    p,
                                    cov,
                                    snr,
                                    signal,
                                    Family::Weibull,
                                    Some(cens),
                                )
                                .expect("tabulated settings are valid"),
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// The built-in setting with identifier `id`.
pub fn flc(id: FlcId) -> Result<FlcConfig> {
    builtin_flc_table()
        .into_iter()
        .find(|c| c.id == id)
        .ok_or_else(|| Error::InvalidParams(format!("unknown setting {id}")))
}

/// Exact conditional law of responses given covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueConditional {
    pub family: Family,
    /// Linear predictor `x'b` of each row.
    pub eta: Vec<f64>,
}

impl TrueConditional {
    /// `F_T(v | x_i)`.
    pub fn cdf(&self, i: usize, v: f64) -> f64 {
        true_cdf(self.family, self.eta[i], v)
    }

    /// `q_tau(x_i)`.
    pub fn quantile(&self, i: usize, tau: f64) -> f64 {
        true_quantile(self.family, self.eta[i], tau)
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }
}

fn std_normal() -> NormalDist {
    NormalDist::new(0.0, 1.0).expect("valid normal")
}

/// Weibull scale at linear predictor `eta`.
pub fn weibull_scale(eta: f64) -> f64 {
    WEIBULL_LAMBDA * eta.exp()
}

pub fn true_cdf(family: Family, eta: f64, v: f64) -> f64 {
    match family {
        Family::Normal => std_normal().cdf((v - eta) / NORMAL_SD),
        Family::Weibull => {
            if v <= 0.0 {
                0.0
            } else {
                -(-(v / weibull_scale(eta)).powf(WEIBULL_SHAPE)).exp_m1()
            }
        }
    }
}

pub fn true_quantile(family: Family, eta: f64, tau: f64) -> f64 {
    match family {
        Family::Normal => eta + NORMAL_SD * std_normal().inverse_cdf(tau),
        Family::Weibull => weibull_scale(eta) * (-(-tau).ln_1p()).powf(1.0 / WEIBULL_SHAPE),
    }
}

/// Probability that a row with linear predictor `eta` falls in `[lo, hi]`.
pub fn true_coverage(tc: &TrueConditional, i: usize, lo: f64, hi: f64) -> f64 {
    (tc.cdf(i, hi) - tc.cdf(i, lo)).max(0.0)
}

/// One simulated replicate.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub train: Dataset,
    pub test: Dataset,
    pub train_truth: TrueConditional,
    pub test_truth: TrueConditional,
    /// Exponential censoring rate used (0 when uncensored).
    pub censoring_rate: f64,
}

struct Draw {
    columns: Vec<Vec<f64>>,
    eta: Vec<f64>,
}

fn draw_covariates(m: &[Marginal], beta: &[f64], n: usize, rng: &mut impl Rng) -> Draw {
    let parts = split_beta(m, beta);
    let mut columns = Vec::with_capacity(m.len());
    let mut eta = vec![0.0; n];
    for (mg, b) in m.iter().zip(&parts) {
        let col: Vec<f64> = match mg {
            Marginal::Bernoulli(p) => {
                let d = Bernoulli::new(*p).expect("valid probability");
                (0..n).map(|_| if d.sample(rng) { 1.0 } else { 0.0 }).collect()
            }
            Marginal::Multinomial(p) => {
                let d = WeightedIndex::new(p).expect("valid weights");
                (0..n).map(|_| d.sample(rng) as f64).collect()
            }
            Marginal::Uniform => (0..n).map(|_| rng.random::<f64>()).collect(),
        };
        for (e, &x) in eta.iter_mut().zip(&col) {
            *e += mg.contribution(x, b);
        }
        columns.push(col);
    }
    Draw { columns, eta }
}

fn draw_responses(family: Family, eta: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    match family {
        Family::Normal => {
            let z = Normal::new(0.0, NORMAL_SD).expect("valid normal");
            eta.iter().map(|e| e + z.sample(rng)).collect()
        }
        Family::Weibull => eta
            .iter()
            .map(|&e| {
                let t: f64 = Weibull::new(weibull_scale(e), WEIBULL_SHAPE).expect("valid Weibull").sample(rng);
                t.max(f64::MIN_POSITIVE)
            })
            .collect(),
    }
}

fn dataset(m: &[Marginal], columns: Vec<Vec<f64>>, response: Vec<f64>, events: Option<Vec<bool>>) -> Result<Dataset> {
    let names = (1..=m.len()).map(|j| format!("x{j}")).collect();
    let kinds = m.iter().map(Marginal::kind).collect();
    Dataset::new(names, kinds, columns, response, events)
}

/// Draws a training set of size `config.n` and a test set of `test_n`
/// uncensored rows, with their exact conditional laws.
pub fn generate_with(config: &FlcConfig, seed: u64, test_n: usize) -> Result<Simulated> {
    config.validate()?;
    let m = config.marginals()?;
    let rate = match config.family {
        Family::Weibull => calibrate_censoring(config, config.censoring_target())?,
        Family::Normal => 0.0,
    };
    let mut rng = stream_rng(seed, 0);
    let train = draw_covariates(&m, &config.beta, config.n, &mut rng);
    let times = draw_responses(config.family, &train.eta, &mut rng);
    let (response, events) = match config.family {
        Family::Normal => (times, None),
        Family::Weibull => {
            let mut crng = stream_rng(seed, 2);
            let mut y = Vec::with_capacity(times.len());
            let mut d = Vec::with_capacity(times.len());
            for t in times {
                let c = if rate > 0.0 { Exp::new(rate).expect("valid rate").sample(&mut crng) } else { f64::INFINITY };
                y.push(t.min(c));
                d.push(t <= c);
            }
            (y, Some(d))
        }
    };
    let mut trng = stream_rng(seed, 1);
    let test = draw_covariates(&m, &config.beta, test_n, &mut trng);
    let test_y = draw_responses(config.family, &test.eta, &mut trng);
    let test_events = (config.family == Family::Weibull).then(|| vec![true; test_n]);
    Ok(Simulated {
        train: dataset(&m, train.columns, response, events)?,
        test: dataset(&m, test.columns, test_y, test_events)?,
        train_truth: TrueConditional { family: config.family, eta: train.eta },
        test_truth: TrueConditional { family: config.family, eta: test.eta },
        censoring_rate: rate,
    })
}

pub fn generate(config: &FlcConfig, seed: u64) -> Result<Simulated> {
    generate_with(config, seed, TEST_SIZE)
}

/// Seed shared by every calibration of a given setting, so the rate depends
/// only on the setting.
fn calibration_seed(config: &FlcConfig) -> u64 {
    let beta_bits = config.beta.iter().fold(0u64, |acc, b| acc.rotate_left(7) ^ b.to_bits());
    derive_seed(0x51AC_0FFE, &[config.p as u64, config.covariates as u64, beta_bits])
}

/// Exponential censoring rate whose censoring proportion `P(C < T)` matches
/// `target`. The proportion is averaged in closed form over the censoring
/// draw, `mean(1 - exp(-rate t_i))`, across `CALIBRATION_DRAWS` simulated
/// event times, and the root is found by bisection.
pub fn calibrate_censoring(config: &FlcConfig, target: f64) -> Result<f64> {
    if config.family != Family::Weibull {
        return Err(Error::InvalidParams("censoring applies to Weibull responses".into()));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    if !(0.0..0.95).contains(&target) {
        return Err(Error::InvalidParams(format!("censoring target {target} outside [0, 0.95)")));
    }
    let m = config.marginals()?;
    let mut rng = stream_rng(calibration_seed(config), 0);
    let draw = draw_covariates(&m, &config.beta, CALIBRATION_DRAWS, &mut rng);
    let times = draw_responses(Family::Weibull, &draw.eta, &mut rng);
    let prop = |rate: f64| times.iter().map(|t| -(-rate * t).exp_m1()).sum::<f64>() / times.len() as f64;
    let mut hi = 1.0;
    let mut steps = 0;
    while prop(hi) < target {
        hi *= 2.0;
        steps += 1;
        if steps > 60 {
            return Err(Error::Search("censoring rate bracket not found".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if prop(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fraction of `draws` simulated pairs with `C < T`, for independent checks
/// of a calibrated rate.
pub fn simulated_censoring_proportion(config: &FlcConfig, rate: f64, draws: usize, seed: u64) -> Result<f64> {
    let m = config.marginals()?;
    let mut rng = stream_rng(seed, 0);
    let draw = draw_covariates(&m, &config.beta, draws, &mut rng);
    let times = draw_responses(Family::Weibull, &draw.eta, &mut rng);
    if rate == 0.0 {
        return Ok(0.0);
    }
    let exp = Exp::new(rate).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let censored = times.iter().filter(|&&t| exp.sample(&mut rng) < t).count();
    Ok(censored as f64 / draws as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    /// Monte Carlo R² (normal) or pseudo-R² (Weibull).
    pub r2: f64,
    pub snr: f64,
    /// Closed-form counterpart of `r2`.
    pub exact_r2: f64,
}

/// Monte Carlo R² over `draws` covariate vectors: `Var(x'b) / (Var(x'b) +
/// sigma²)` for normal responses, and `Var(E[T|X]) / (Var(E[T|X]) +
/// E[Var(T|X)])` from Weibull moments otherwise.
pub fn verify_snr(config: &FlcConfig, draws: usize, seed: u64) -> Result<SnrReport> {
    let m = config.marginals()?;
    let mut rng = stream_rng(seed, 0);
    let eta = draw_covariates(&m, &config.beta, draws, &mut rng).eta;
    let nf = draws as f64;
    let var = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / nf;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf
    };
    let r2 = match config.family {
        Family::Normal => {
            let v = var(&eta);
            v / (v + NORMAL_SD * NORMAL_SD)
        }
        Family::Weibull => {
            let (g1, g2) = weibull_moments();
            let means: Vec<f64> = eta.iter().map(|&e| weibull_scale(e) * g1).collect();
            let within = eta.iter().map(|&e| weibull_scale(e).powi(2) * (g2 - g1 * g1)).sum::<f64>() / nf;
            let between = var(&means);
            between / (between + within)
        }
    };
    let snr = if r2 < 1.0 { r2 / (1.0 - r2) } else { f64::INFINITY };
    Ok(SnrReport { r2, snr, exact_r2: config.exact_r2()? })
}

/// Pearson chi-square goodness-of-fit p-value of level `counts` against
/// `probs`.
pub fn chi_square_pvalue(counts: &[u64], probs: &[f64]) -> Result<f64> {
    if counts.len() != probs.len() || counts.len() < 2 {
        return Err(Error::InvalidParams("need matching count and probability vectors of length >= 2".into()));
    }
    let total: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok(dist.sf(stat))
}

/// Writes a simulated replicate's truth sidecar: the family and per-row
/// linear predictors of the test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub setting: FlcConfig,
    pub seed: u64,
    pub censoring_rate: f64,
    pub train: TrueConditional,
    pub test: TrueConditional,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_counts_and_ids() {
        let t = builtin_flc_table();
        assert_eq!(t.iter().filter(|c| !c.id.censored).count(), 108);
        assert_eq!(t.iter().filter(|c| c.id.censored).count(), 96);
        let c40 = &t[39];
        assert_eq!(c40.id, FlcId::uncensored(40));
        assert_eq!(
            (c40.p, c40.n, c40.snr, c40.signal, c40.covariates),
            (10, 300, SnrLevel::High, Signal::Even, CovariateType::Continuous)
        );
    }

    #[test]
    fn tabulated_coefficients() {
        let b1 = flc(FlcId::uncensored(1)).unwrap().beta;
        let expect: Vec<f64> = [5.0, 4.0, -2.5, -2.3].iter().map(|x| 0.64 * x).collect();
        assert_eq!(b1, expect);
        let cont_conc = flc(FlcId::uncensored(55)).unwrap();
        assert_eq!((cont_conc.covariates, cont_conc.signal, cont_conc.p), (CovariateType::Continuous, Signal::Concentrated, 4));
        assert_eq!(cont_conc.beta, vec![7.8, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ids_parse_and_print() {
        assert_eq!("c5".parse::<FlcId>().unwrap(), FlcId::censored(5));
        assert_eq!("108".parse::<FlcId>().unwrap().to_string(), "108");
        assert!("0".parse::<FlcId>().is_err());
        assert!("c97".parse::<FlcId>().is_err());
        assert!("x".parse::<FlcId>().is_err());
    }

    #[test]
    fn truth_formulas() {
        assert!((true_cdf(Family::Normal, 1.3, 1.3) - 0.5).abs() < 1e-12);
        assert_eq!(true_cdf(Family::Normal, 0.0, f64::INFINITY), 1.0);
        let e = 0.4;
        assert!((true_cdf(Family::Weibull, e, weibull_scale(e)) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        for tau in [0.1, 0.5, 0.9] {
            for fam in [Family::Normal, Family::Weibull] {
                assert!((true_cdf(fam, e, true_quantile(fam, e, tau)) - tau).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_coefficients_have_zero_signal() {
        let mut c = flc(FlcId::uncensored(1)).unwrap();
        c.beta = vec![0.0; 4];
        assert_eq!(c.exact_r2().unwrap(), 0.0);
        assert_eq!(verify_snr(&c, 1000, 1).unwrap().snr, 0.0);
    }

    #[test]
    fn weibull_multiplier_hits_target() {
        for c in builtin_flc_table().iter().filter(|c| c.id.censored) {
            assert!((c.exact_r2().unwrap() - c.snr.target_r2()).abs() < 1e-9, "{}", c.id);
        }
    }

    #[test]
    fn generation_is_deterministic_and_shaped() {
        let c = flc(FlcId::censored(1)).unwrap();
        let a = generate_with(&c, 3, 50).unwrap();
        let b = generate_with(&c, 3, 50).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.train.n(), 300);
        assert_eq!(a.test.n(), 50);
        assert!(a.train.events().unwrap().iter().any(|e| !e));
        assert!(a.test.events().unwrap().iter().all(|&e| e));
        assert_eq!(a.train.kinds()[0], ColumnKind::Categorical { levels: 2 });
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let mut c = flc(FlcId::uncensored(4)).unwrap();
        c.beta.pop();
        assert!(c.validate().is_err());
        let mut c = flc(FlcId::uncensored(1)).unwrap();
        c.censoring = Some(0.1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn chi_square_accepts_exact_counts() {
        assert!(chi_square_pvalue(&[50, 50], &[0.5, 0.5]).unwrap() > 0.99);
        assert!(chi_square_pvalue(&[90, 10], &[0.5, 0.5]).unwrap() < 1e-6);
    }
}
