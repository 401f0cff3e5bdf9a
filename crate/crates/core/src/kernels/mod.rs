//! Random-walk step kernels on ℤ^d and their exponential tilts.
//!
//! A [`StepKernel`] is always stored as an explicit table of
//! `(step, probability)` pairs with log-probabilities kept alongside. The
//! discrete Gaussian kernel is additionally tagged with its analytic centre,
//! so that tilting it re-derives a truncated table around the new centre
//! instead of tilting a fixed truncation.

pub mod gaussian;
pub mod lattice;

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gaussian::gaussian_entropy_exact;
pub use lattice::{lattice_basis, local_clt_density, LatticeBasis};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel has an empty support")]
    EmptySupport,
    #[error("kernel has infinite range; argmax of h·x over its support is undefined")]
    InfiniteRange,
    #[error("conditioning set is empty")]
    EmptyK,
    #[error("step {0:?} is not in the kernel support")]
    NotInSupport(Vec<i64>),
    #[error("kernel is not symmetric with the origin in its support")]
    NotSymmetric,
    #[error("support spans a rank-{rank} lattice in dimension {dim}")]
    RankDeficient { rank: usize, dim: usize },
    #[error("covariance matrix is singular")]
    SingularCovariance,
    #[error("site {0:?} is not on the kernel lattice")]
    OffLattice(Vec<i64>),
    #[error("discrete Gaussian truncation does not reach 1e-12 tail mass within radius {0}")]
    TruncationTooWide(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Discarded tail mass allowed when a discrete Gaussian is truncated.
pub const GAUSSIAN_TAIL_TOLERANCE: f64 = 1e-12;
const MAX_GAUSSIAN_RADIUS: u32 = 64;
const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Table,
    /// `p(x) ∝ exp(−|x − center|²/2)`, truncated to `|x_i − center_i| ≤ radius`.
    DiscreteGaussian {
        center: Vec<f64>,
        radius: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepKernel {
    dim: usize,
    /// Flattened steps, `dim` entries per support point.
    steps: Vec<i64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    shape: Shape,
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl StepKernel {
    /// Nearest-neighbour simple random walk: `±e_i` with probability `1/2d`.
    pub fn simple(dim: usize) -> Self {
        let mut table = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for s in [1i64, -1] {
                let mut v = vec![0i64; dim];
                v[i] = s;
                table.push((v, 1.0 / (2 * dim) as f64));
            }
        }
        Self::from_table(dim, table).expect("simple walk table is valid")
    }

    /// Finite table of `(step, probability)` pairs. Probabilities must be
    /// positive and sum to one within `1e-9`; they are renormalized exactly.
    pub fn from_table(dim: usize, table: Vec<(Vec<i64>, f64)>) -> Result<Self, KernelError> {
        if dim == 0 {
            return Err(KernelError::InvalidArgument("dimension must be >= 1".into()));
        }
        if table.is_empty() {
            return Err(KernelError::EmptySupport);
        }
        let mut seen = HashMap::new();
        let mut total = 0.0;
        for (step, prob) in &table {
            if step.len() != dim {
                return Err(KernelError::DimensionMismatch {
                    expected: dim,
                    got: step.len(),
                });
            }
            if !(*prob > 0.0) || !prob.is_finite() {
                return Err(KernelError::InvalidArgument(format!(
                    "step {step:?} has probability {prob}; kernel probabilities must be > 0"
                )));
            }
            if seen.insert(step.clone(), ()).is_some() {
                return Err(KernelError::InvalidArgument(format!("duplicate step {step:?}")));
            }
            total += prob;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(KernelError::InvalidArgument(format!(
                "kernel probabilities sum to {total}, expected 1"
            )));
        }
        let steps = table.iter().flat_map(|(s, _)| s.iter().copied()).collect();
        let log_weights: Vec<f64> = table.iter().map(|(_, p)| p.ln()).collect();
        Ok(Self::from_log_weights(dim, steps, log_weights, Shape::Table))
    }

    fn from_log_weights(dim: usize, steps: Vec<i64>, log_weights: Vec<f64>, shape: Shape) -> Self {
        let log_norm = log_sum_exp(&log_weights);
        let log_probs: Vec<f64> = log_weights.iter().map(|w| w - log_norm).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        StepKernel {
            dim,
            steps,
            probs,
            log_probs,
            shape,
        }
    }

    /// Discrete Gaussian `p(x) = C e^{−|x|²/2}` on ℤ^d.
    pub fn discrete_gaussian(dim: usize) -> Result<Self, KernelError> {
        Self::discrete_gaussian_centered(vec![0.0; dim])
    }

    fn discrete_gaussian_centered(center: Vec<f64>) -> Result<Self, KernelError> {
        let dim = center.len();
        if dim == 0 {
            return Err(KernelError::InvalidArgument("dimension must be >= 1".into()));
        }
        let mut radius = 1u32;
        loop {
            let kept: f64 = center
                .iter()
                .map(|&c| 1.0 - gaussian::tail_mass(c, radius as f64))
                .product();
            if 1.0 - kept < GAUSSIAN_TAIL_TOLERANCE {
                break;
            }
            radius += 1;
            if radius > MAX_GAUSSIAN_RADIUS {
                return Err(KernelError::TruncationTooWide(MAX_GAUSSIAN_RADIUS));
            }
        }
        let axes: Vec<Vec<i64>> = center
            .iter()
            .map(|&c| {
                let lo = (c - radius as f64).ceil() as i64;
                let hi = (c + radius as f64).floor() as i64;
                (lo..=hi).collect()
            })
            .collect();
        let mut steps = Vec::new();
        let mut log_weights = Vec::new();
        let mut idx = vec![0usize; dim];
        'outer: loop {
            let mut lw = 0.0;
            for (i, &k) in idx.iter().enumerate() {
                let x = axes[i][k];
                steps.push(x);
                let y = x as f64 - center[i];
                lw -= 0.5 * y * y;
            }
            log_weights.push(lw);
            for i in (0..dim).rev() {
                idx[i] += 1;
                if idx[i] < axes[i].len() {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
        Ok(Self::from_log_weights(
            dim,
            steps,
            log_weights,
            Shape::DiscreteGaussian { center, radius },
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_finite_range(&self) -> bool {
        matches!(self.shape, Shape::Table)
    }

    /// Truncation radius of a discrete Gaussian kernel.
    pub fn truncation_radius(&self) -> Option<u32> {
        match self.shape {
            Shape::DiscreteGaussian { radius, .. } => Some(radius),
            Shape::Table => None,
        }
    }

    pub fn gaussian_center(&self) -> Option<&[f64]> {
        match &self.shape {
            Shape::DiscreteGaussian { center, .. } => Some(center),
            Shape::Table => None,
        }
    }

    pub fn step(&self, i: usize) -> &[i64] {
        &self.steps[i * self.dim..(i + 1) * self.dim]
    }

    pub fn steps(&self) -> impl Iterator<Item = &[i64]> {
        self.steps.chunks_exact(self.dim)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[i64], f64)> {
        self.steps().zip(self.probs.iter().copied())
    }

    pub fn prob_of(&self, x: &[i64]) -> f64 {
        self.iter().find(|(s, _)| *s == x).map_or(0.0, |(_, p)| p)
    }

    pub fn contains_origin(&self) -> bool {
        self.steps().any(|s| s.iter().all(|&v| v == 0))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let table: HashMap<&[i64], f64> = self.iter().collect();
        self.iter().all(|(s, p)| {
            let neg: Vec<i64> = s.iter().map(|v| -v).collect();
            table
                .get(neg.as_slice())
                .is_some_and(|&q| (p - q).abs() <= tol * p.max(q))
        })
    }

    /// Per-axis `(min, max)` of the support.
    pub fn extent(&self) -> Vec<(i64, i64)> {
        (0..self.dim)
            .map(|i| {
                self.steps()
                    .fold((i64::MAX, i64::MIN), |(lo, hi), s| (lo.min(s[i]), hi.max(s[i])))
            })
            .collect()
    }

    pub fn normalization_error(&self) -> f64 {
        (self.probs.iter().sum::<f64>() - 1.0).abs()
    }

    /// `Λ_p(t) = log Σ_x p(x) e^{t·x}`. Exact (untruncated) for the
    /// discrete Gaussian.
    pub fn log_mgf(&self, t: &[f64]) -> f64 {
        match &self.shape {
            Shape::DiscreteGaussian { center, .. } => {
                center.iter().zip(t).map(|(&c, &ti)| gaussian::log_mgf_1d(c, ti)).sum()
            }
            Shape::Table => {
                let terms: Vec<f64> = self
                    .steps()
                    .zip(&self.log_probs)
                    .map(|(s, lp)| lp + dot_i(t, s))
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }

    /// Mean vector and row-major covariance of one step.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for (s, p) in self.iter() {
            for i in 0..d {
                mean[i] += p * s[i] as f64;
            }
        }
        let mut cov = vec![0.0; d * d];
        for (s, p) in self.iter() {
            for i in 0..d {
                let di = s[i] as f64 - mean[i];
                for j in 0..d {
                    cov[i * d + j] += p * di * (s[j] as f64 - mean[j]);
                }
            }
        }
        (mean, cov)
    }

    /// Exponential tilt `q(h, x) = e^{β x·h} p(x) / M_p(βh)`.
    pub fn tilt(&self, beta: f64, h: &[f64]) -> Result<TiltedKernel, KernelError> {
        tilt(self, beta, h)
    }
}

fn dot_i(t: &[f64], s: &[i64]) -> f64 {
    t.iter().zip(s).map(|(a, &b)| a * b as f64).sum()
}

/// Config-file form of a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Simple { d: usize },
    Table { d: usize, steps: Vec<(Vec<i64>, f64)> },
    DiscreteGaussian { d: usize },
}

impl KernelSpec {
    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::Simple { d } | KernelSpec::Table { d, .. } | KernelSpec::DiscreteGaussian { d } => *d,
        }
    }

    pub fn build(&self) -> Result<StepKernel, KernelError> {
        match self {
            KernelSpec::Simple { d } => {
                if *d == 0 {
                    return Err(KernelError::InvalidArgument("dimension must be >= 1".into()));
                }
                Ok(StepKernel::simple(*d))
            }
            KernelSpec::Table { d, steps } => StepKernel::from_table(*d, steps.clone()),
            KernelSpec::DiscreteGaussian { d } => StepKernel::discrete_gaussian(*d),
        }
    }
}

/// A kernel tilted by the external field, with its drift and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedKernel {
    base: StepKernel,
    beta: f64,
    field: Vec<f64>,
    q: StepKernel,
    log_mgf: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl TiltedKernel {
    pub fn base(&self) -> &StepKernel {
        &self.base
    }

    /// The tilted step distribution `q(h)` itself.
    pub fn kernel(&self) -> &StepKernel {
        &self.q
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.q.dim
    }

    /// `Λ_p(βh)`.
    pub fn log_mgf(&self) -> f64 {
        self.log_mgf
    }

    /// `m_q = E_q[X₁]`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `Σ_q`.
    pub fn covariance(&self) -> &[f64] {
        &self.cov
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

/// Tilt `p` by the field `h` at inverse temperature `beta`. All arithmetic
/// is carried out on log-probabilities; `h = 0` returns `p` unchanged.
pub fn tilt(p: &StepKernel, beta: f64, h: &[f64]) -> Result<TiltedKernel, KernelError> {
    if h.len() != p.dim {
        return Err(KernelError::DimensionMismatch {
            expected: p.dim,
            got: h.len(),
        });
    }
    if !beta.is_finite() || beta < 0.0 || h.iter().any(|v| !v.is_finite()) {
        return Err(KernelError::InvalidArgument(format!(
            "tilt needs finite beta >= 0 and finite h, got beta = {beta}, h = {h:?}"
        )));
    }
    let t: Vec<f64> = h.iter().map(|v| beta * v).collect();
    let log_mgf = p.log_mgf(&t);
    let q = if t.iter().all(|&v| v == 0.0) {
        p.clone()
    } else {
        match &p.shape {
            Shape::Table => {
                let log_weights = p.steps().zip(&p.log_probs).map(|(s, lp)| lp + dot_i(&t, s)).collect();
                StepKernel::from_log_weights(p.dim, p.steps.clone(), log_weights, Shape::Table)
            }
            Shape::DiscreteGaussian { center, .. } => {
                let shifted = center.iter().zip(&t).map(|(c, ti)| c + ti).collect();
                StepKernel::discrete_gaussian_centered(shifted)?
            }
        }
    };
    let (mean, cov) = q.moments();
    Ok(TiltedKernel {
        base: p.clone(),
        beta,
        field: h.to_vec(),
        q,
        log_mgf,
        mean,
        cov,
    })
}

/// `−Σ q(x) log q(x)`.
pub fn shannon_entropy(k: &StepKernel) -> f64 {
    let h: f64 = -k.probs.iter().zip(&k.log_probs).map(|(p, lp)| p * lp).sum::<f64>();
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxSet {
    pub points: Vec<Vec<i64>>,
    pub max_value: f64,
}

impl ArgmaxSet {
    pub fn is_singleton(&self) -> bool {
        self.points.len() == 1
    }
}

/// `K(h) = argmax_{x ∈ supp p} h·x`, with ties resolved up to
/// `1e-9 · (1 + |h|)`.
pub fn argmax_set(p: &StepKernel, h: &[f64]) -> Result<ArgmaxSet, KernelError> {
    if !p.is_finite_range() {
        return Err(KernelError::InfiniteRange);
    }
    if p.is_empty() {
        return Err(KernelError::EmptySupport);
    }
    if h.len() != p.dim {
        return Err(KernelError::DimensionMismatch {
            expected: p.dim,
            got: h.len(),
        });
    }
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-9 * (1.0 + norm);
    let max_value = p.steps().map(|s| dot_i(h, s)).fold(f64::NEG_INFINITY, f64::max);
    let points = p
        .steps()
        .filter(|s| dot_i(h, s) >= max_value - tol)
        .map(|s| s.to_vec())
        .collect();
    Ok(ArgmaxSet { points, max_value })
}

/// Entropy of `p` conditioned on stepping inside `k_set`.
pub fn conditional_entropy(p: &StepKernel, k_set: &[Vec<i64>]) -> Result<f64, KernelError> {
    if k_set.is_empty() {
        return Err(KernelError::EmptyK);
    }
    let mut probs = Vec::with_capacity(k_set.len());
    for x in k_set {
        let px = p.prob_of(x);
        if px <= 0.0 {
            return Err(KernelError::NotInSupport(x.clone()));
        }
        probs.push(px);
    }
    let total: f64 = probs.iter().sum();
    let h = -probs
        .iter()
        .map(|&px| {
            let r = px / total;
            r * r.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyLimit {
    /// `H(q(λh))` for each requested `λ`.
    pub entropies: Vec<f64>,
    /// `H_{K(h)}(p)` for finite-range kernels.
    pub limit: Option<f64>,
}

/// Entropies of the kernel tilted by `λh` (unit inverse temperature) along a
/// ray, together with their `λ → ∞` limit when it is known.
pub fn entropy_limit_check(p: &StepKernel, h: &[f64], lambdas: &[f64]) -> Result<EntropyLimit, KernelError> {
    let limit = if p.is_finite_range() {
        let k = argmax_set(p, h)?;
        Some(conditional_entropy(p, &k.points)?)
    } else {
        None
    };
    let entropies = lambdas
        .iter()
        .map(|&l| {
            let scaled: Vec<f64> = h.iter().map(|v| l * v).collect();
            tilt(p, 1.0, &scaled).map(|q| shannon_entropy(q.kernel()))
        })
        .collect::<Result<_, _>>()?;
    Ok(EntropyLimit { entropies, limit })
}

/// Kernel of `X − X'` for independent `X, X' ~ q`.
pub fn difference_walk(q: &StepKernel) -> StepKernel {
    let d = q.dim;
    let mut acc: HashMap<Vec<i64>, f64> = HashMap::new();
    for (a, pa) in q.iter() {
        for (b, pb) in q.iter() {
            let z: Vec<i64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            *acc.entry(z).or_insert(0.0) += pa * pb;
        }
    }
    let mut table: Vec<(Vec<i64>, f64)> = acc.into_iter().collect();
    table.sort_by(|a, b| a.0.cmp(&b.0));
    // Symmetrize so mirror-image steps carry bitwise equal mass.
    let lookup: HashMap<Vec<i64>, f64> = table.iter().cloned().collect();
    let table: Vec<(Vec<i64>, f64)> = table
        .into_iter()
        .map(|(z, p)| {
            let neg: Vec<i64> = z.iter().map(|v| -v).collect();
            let pm = lookup[&neg];
            (z, 0.5 * (p + pm))
        })
        .filter(|(_, p)| *p > 0.0)
        .collect();
    let steps = table.iter().flat_map(|(s, _)| s.iter().copied()).collect();
    let log_weights = table.iter().map(|(_, p)| p.ln()).collect();
    StepKernel::from_log_weights(d, steps, log_weights, Shape::Table)
}

/// `|Σp − 1|` tolerance that every constructed kernel satisfies.
pub fn normalization_tolerance() -> f64 {
    NORMALIZATION_TOLERANCE
}
