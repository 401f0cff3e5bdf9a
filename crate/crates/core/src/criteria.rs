//! Sufficient criteria for weak and strong disorder at a given `(β, h)`:
//! the second-moment (L²) condition through the return probability of the
//! difference walk, and the fractional-moment bound `r(θ) < 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disorder::WeightModel;
use crate::engine::{EngineError, FieldOptions, PolymerField, Support};
use crate::kernels::{
    argmax_set, conditional_entropy, difference_walk, lattice_basis, shannon_entropy, tilt, KernelError, LatticeBasis,
    StepKernel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriteriaError {
    #[error("return series needs d >= 3, got d = {0}")]
    DimensionTooLow(usize),
    #[error("difference kernel must be symmetric with the origin in its support")]
    NotSymmetric,
    #[error("return series needs at least one term")]
    NoTerms,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Safety factor on the calibrated local-CLT constant of the tail.
pub const TAIL_SAFETY: f64 = 1.5;
/// Terms used to calibrate the tail constant.
pub const TAIL_CALIBRATION_TERMS: usize = 10;
/// Default truncation of the return series.
pub const DEFAULT_RETURN_TERMS: u64 = 100;
/// `r_min` must fall below `1 − STRONG_MARGIN` to certify low temperature.
pub const STRONG_MARGIN: f64 = 1e-9;

/// `M₂(β) = M(2β) / M(β)²`.
pub fn second_moment_ratio(model: &WeightModel, beta: f64) -> f64 {
    model.second_moment_ratio(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    /// `P(T_n = 0)` for `n = 1..=N`.
    pub terms: Vec<f64>,
    /// `R̂_N = Σ_{n ≤ N} P(T_n = 0)`.
    pub r_hat: f64,
    /// Upper bound on `Σ_{n > N} P(T_n = 0)`.
    pub tail_bound: f64,
    /// Calibrated constant `C` in `P(T_n = 0) ≤ C n^{−d/2}`.
    pub tail_constant: f64,
}

impl ReturnSeries {
    /// `π̂ = R̂ / (1 + R̂)`.
    pub fn pi(&self) -> f64 {
        self.r_hat / (1.0 + self.r_hat)
    }

    /// Increase of `π` if the whole tail bound were added to `R̂`.
    pub fn pi_error(&self) -> f64 {
        let r = self.r_hat + self.tail_bound;
        r / (1.0 + r) - self.pi()
    }
}

/// `P(T_n = 0)` for `n = 1..=n_terms` of a symmetric kernel, by stepping it
/// to `⌈N/2⌉` and pairing slabs: `P(T_{2m} = 0) = Σ_x P(T_m = x)²` and
/// `P(T_{2m+1} = 0) = Σ_x P(T_m = x) P(T_{m+1} = x)`.
pub fn return_probabilities(dk: &StepKernel, n_terms: u64, memory_budget: u64) -> Result<Vec<f64>, CriteriaError> {
    let half = n_terms.div_ceil(2);
    let opts = FieldOptions {
        support: Support::Representable,
        memory_budget,
        ..FieldOptions::default()
    };
    let mut field = PolymerField::new(dk, 0.0, None, opts)?;
    field.reserve_for(half)?;
    let mut terms = Vec::with_capacity(n_terms as usize);
    for _ in 0..half {
        field.step()?;
        let odd = field.overlap_with_previous().expect("window reserved up front");
        terms.push(odd);
        terms.push(field.self_overlap());
    }
    terms.truncate(n_terms as usize);
    Ok(terms)
}

fn tail_from_terms(terms: &[f64], d: usize) -> (f64, f64) {
    let n_max = terms.len();
    let from = n_max.saturating_sub(TAIL_CALIBRATION_TERMS);
    let c = (from..n_max)
        .map(|i| ((i + 1) as f64).powf(d as f64 / 2.0) * terms[i])
        .fold(0.0, f64::max)
        * TAIL_SAFETY;
    // Σ_{n>N} n^{−d/2} ≤ ∫_N^∞ x^{−d/2} dx.
    let a = d as f64 / 2.0 - 1.0;
    (c, c * (n_max as f64).powf(-a) / a)
}

/// Truncated expected number of returns `R̂_N` of a symmetric, truly
/// `d`-dimensional difference kernel, with a local-CLT tail bound.
pub fn return_series(dk: &StepKernel, basis: &LatticeBasis, n_terms: u64) -> Result<ReturnSeries, CriteriaError> {
    return_series_with_budget(dk, basis, n_terms, crate::engine::DEFAULT_MEMORY_BUDGET)
}

pub fn return_series_with_budget(
    dk: &StepKernel,
    basis: &LatticeBasis,
    n_terms: u64,
    memory_budget: u64,
) -> Result<ReturnSeries, CriteriaError> {
    let d = dk.dim();
    if !dk.is_symmetric(1e-12) || !dk.contains_origin() {
        return Err(CriteriaError::NotSymmetric);
    }
    if d <= 2 {
        return Err(CriteriaError::DimensionTooLow(d));
    }
    if basis.dim() != d {
        return Err(KernelError::DimensionMismatch {
            expected: d,
            got: basis.dim(),
        }
        .into());
    }
    if n_terms == 0 {
        return Err(CriteriaError::NoTerms);
    }
    let terms = return_probabilities(dk, n_terms, memory_budget)?;
    Ok(series_from_terms(terms, d))
}

fn series_from_terms(terms: Vec<f64>, d: usize) -> ReturnSeries {
    let r_hat = crate::stats::neumaier_sum(terms.iter().copied());
    let (tail_constant, tail_bound) = tail_from_terms(&terms, d);
    ReturnSeries {
        terms,
        r_hat,
        tail_bound,
        tail_constant,
    }
}

/// Return series of the difference walk of `q`. Product kernels (the
/// discrete Gaussian) are handled one axis at a time.
pub fn return_series_for(q: &StepKernel, n_terms: u64, memory_budget: u64) -> Result<ReturnSeries, CriteriaError> {
    let d = q.dim();
    if d <= 2 {
        return Err(CriteriaError::DimensionTooLow(d));
    }
    if n_terms == 0 {
        return Err(CriteriaError::NoTerms);
    }
    if q.gaussian_center().is_some() {
        let mut terms = vec![1.0; n_terms as usize];
        for axis in 0..d {
            let marginal = axis_marginal(q, axis)?;
            let t = return_probabilities(&difference_walk(&marginal), n_terms, memory_budget)?;
            terms.iter_mut().zip(t).for_each(|(a, b)| *a *= b);
        }
        return Ok(series_from_terms(terms, d));
    }
    let dk = difference_walk(q);
    let basis = lattice_basis(&dk)?;
    return_series_with_budget(&dk, &basis, n_terms, memory_budget)
}

fn axis_marginal(q: &StepKernel, axis: usize) -> Result<StepKernel, KernelError> {
    let mut acc: std::collections::BTreeMap<i64, f64> = Default::default();
    for (s, p) in q.iter() {
        *acc.entry(s[axis]).or_insert(0.0) += p;
    }
    let total: f64 = acc.values().sum();
    StepKernel::from_table(1, acc.into_iter().map(|(k, p)| (vec![k], p / total)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Verdict {
    pub certified: bool,
    /// `1/(π̂ + err) − M₂(β)`; `−∞` when `π = 1`.
    pub margin: f64,
    pub m2: f64,
    pub pi: f64,
    pub pi_err: f64,
}

/// `M₂(β) < 1/(π̂ + err)` for the difference walk of `q(h)`.
pub fn l2_criterion(
    model: &WeightModel,
    p: &StepKernel,
    beta: f64,
    h: &[f64],
    n_terms: u64,
) -> Result<L2Verdict, CriteriaError> {
    let q = tilt(p, beta, h)?;
    let series = return_series_for(q.kernel(), n_terms, crate::engine::memory_budget_from_env()?)?;
    Ok(l2_from_series(model, beta, &series))
}

fn l2_from_series(model: &WeightModel, beta: f64, series: &ReturnSeries) -> L2Verdict {
    let m2 = second_moment_ratio(model, beta);
    let pi = series.pi();
    let pi_err = series.pi_error();
    let margin = 1.0 / (pi + pi_err) - m2;
    L2Verdict {
        certified: margin > 0.0,
        margin,
        m2,
        pi,
        pi_err,
    }
}

/// `log r(θ) = Λ(θβ) − θΛ(β) + log Σ_x q(x)^θ`.
pub fn log_fractional_moment(model: &WeightModel, q: &StepKernel, beta: f64, theta: f64) -> f64 {
    let terms: Vec<f64> = q.log_probs().iter().map(|lp| theta * lp).collect();
    model.log_mgf(theta * beta) - theta * model.log_mgf(beta) + crate::kernels::log_sum_exp(&terms)
}

/// `r(θ) = M(θβ)/M(β)^θ · Σ_x q(x)^θ`.
pub fn fractional_moment(model: &WeightModel, q: &StepKernel, beta: f64, theta: f64) -> f64 {
    log_fractional_moment(model, q, beta, theta).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongVerdict {
    pub certified: bool,
    pub theta_star: f64,
    pub r_min: f64,
    /// `H(Q_β | P)`.
    pub entropy_weights: f64,
    /// `H(q(h))`.
    pub entropy_walk: f64,
    /// The sufficient comparison `H(Q_β | P) > H(q(h))`.
    pub entropy_comparison: bool,
}

const GOLDEN_TOL: f64 = 1e-8;

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Minimize `log r(θ)` over `θ ∈ (0, 1]` and test `r_min < 1 − 1e-9`.
pub fn strong_disorder_test(
    model: &WeightModel,
    p: &StepKernel,
    beta: f64,
    h: &[f64],
) -> Result<StrongVerdict, CriteriaError> {
    let q = tilt(p, beta, h)?;
    Ok(strong_for_tilted(model, q.kernel(), beta))
}

fn strong_for_tilted(model: &WeightModel, q: &StepKernel, beta: f64) -> StrongVerdict {
    let f = |t: f64| log_fractional_moment(model, q, beta, t);
    let (mut theta, mut log_r) = golden_section(f, 1e-9, 1.0);
    // Degenerate bracket: confirm against a coarse scan.
    if !(1e-6..=1.0 - 1e-6).contains(&theta) || !log_r.is_finite() {
        for i in 1..=1000 {
            let t = i as f64 * 1e-3;
            let v = f(t);
            if v < log_r {
                theta = t;
                log_r = v;
            }
        }
    }
    // r(1) = 1 exactly; never report a minimum above it.
    if log_r > 0.0 {
        theta = 1.0;
        log_r = 0.0;
    }
    let r_min = log_r.exp();
    let entropy_weights = model.relative_entropy(beta);
    let entropy_walk = shannon_entropy(q);
    StrongVerdict {
        certified: r_min < 1.0 - STRONG_MARGIN,
        theta_star: theta,
        r_min,
        entropy_weights,
        entropy_walk,
        entropy_comparison: entropy_weights > entropy_walk,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhaseClass {
    L2Weak,
    EntropyLowTemp,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub beta: f64,
    pub h: Vec<f64>,
    #[serde(rename = "M2")]
    pub m2: f64,
    pub pi: f64,
    pub pi_err: f64,
    pub r_min: f64,
    pub theta_star: f64,
    #[serde(rename = "H_weights")]
    pub h_weights: f64,
    #[serde(rename = "H_walk")]
    pub h_walk: f64,
    #[serde(rename = "H_K")]
    pub h_k: Option<f64>,
    pub class: PhaseClass,
    pub l2_margin: f64,
    pub r_margin: f64,
    /// `|K(h)| > 1`: the field may lie in the exceptional set.
    pub k_tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub return_terms: u64,
    pub memory_budget: u64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            return_terms: DEFAULT_RETURN_TERMS,
            memory_budget: crate::engine::DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// All criteria at `(β, h)`. In `d ≤ 2` the walk is recurrent, `π = 1`, and
/// no L² certificate exists.
pub fn classify(
    model: &WeightModel,
    p: &StepKernel,
    beta: f64,
    h: &[f64],
    opts: &ClassifyOptions,
) -> Result<PhaseReport, CriteriaError> {
    let q = tilt(p, beta, h)?;
    let l2 = if p.dim() >= 3 {
        let series = return_series_for(q.kernel(), opts.return_terms, opts.memory_budget)?;
        l2_from_series(model, beta, &series)
    } else {
        L2Verdict {
            certified: false,
            margin: f64::NEG_INFINITY,
            m2: second_moment_ratio(model, beta),
            pi: 1.0,
            pi_err: 0.0,
        }
    };
    let strong = strong_for_tilted(model, q.kernel(), beta);
    let (h_k, k_tie) = if p.is_finite_range() {
        let k = argmax_set(p, h)?;
        (Some(conditional_entropy(p, &k.points)?), !k.is_singleton())
    } else {
        (None, false)
    };
    let class = match (l2.certified, strong.certified) {
        (true, false) => PhaseClass::L2Weak,
        (false, true) => PhaseClass::EntropyLowTemp,
        _ => PhaseClass::Undetermined,
    };
    Ok(PhaseReport {
        beta,
        h: h.to_vec(),
        m2: l2.m2,
        pi: l2.pi,
        pi_err: l2.pi_err,
        r_min: strong.r_min,
        theta_star: strong.theta_star,
        h_weights: strong.entropy_weights,
        h_walk: strong.entropy_walk,
        h_k,
        class,
        l2_margin: l2.margin,
        r_margin: 1.0 - strong.r_min,
        k_tie,
    })
}
