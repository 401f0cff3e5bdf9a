//! Site-weight distributions and reproducible random environments.
//!
//! A [`WeightModel`] carries the law of a single weight together with its
//! exact cumulant function `Λ(β) = log E[e^{βω}]`. An [`Environment`] is a
//! random-access field of iid weights: every `ω(t, x)` is a pure function of
//! `(seed, sample, t, x)`, so two runs that differ only in `β` or `h` read
//! exactly the same numbers.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisorderError {
    #[error("weights live at times t >= 1, got t = {0}")]
    TimeOutOfRange(i64),
    #[error("weight model `{family}` expects {expected} parameter(s), got {got}")]
    ParamCount {
        family: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid weight model parameter: {0}")]
    InvalidParam(String),
    #[error("unknown weight family `{0}`")]
    UnknownFamily(String),
}

/// Law of a single site weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightSpec", into = "WeightSpec")]
pub enum WeightModel {
    /// Uniform on `[0, 1)`.
    Uniform01,
    Gaussian {
        mean: f64,
        stdev: f64,
    },
    /// Takes the value 1 with probability `p_success`, else 0.
    Bernoulli {
        p_success: f64,
    },
    /// Deterministic weight; the polymer then carries no disorder at all.
    PointMass(f64),
}

/// Config-file form of a weight model: `{"family": ..., "params": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl TryFrom<WeightSpec> for WeightModel {
    type Error = DisorderError;

    fn try_from(spec: WeightSpec) -> Result<Self, Self::Error> {
        let want = |n: usize| {
            if spec.params.len() == n {
                Ok(())
            } else {
                Err(DisorderError::ParamCount {
                    family: spec.family.clone(),
                    expected: n,
                    got: spec.params.len(),
                })
            }
        };
        let model = match spec.family.as_str() {
            "uniform01" => {
                want(0)?;
                WeightModel::Uniform01
            }
            "gaussian" => {
                want(2)?;
                WeightModel::Gaussian {
                    mean: spec.params[0],
                    stdev: spec.params[1],
                }
            }
            "bernoulli" => {
                want(1)?;
                WeightModel::Bernoulli {
                    p_success: spec.params[0],
                }
            }
            "pointmass" => {
                want(1)?;
                WeightModel::PointMass(spec.params[0])
            }
            other => return Err(DisorderError::UnknownFamily(other.to_string())),
        };
        model.validate()?;
        Ok(model)
    }
}

impl From<WeightModel> for WeightSpec {
    fn from(model: WeightModel) -> Self {
        let (family, params) = match model {
            WeightModel::Uniform01 => ("uniform01", vec![]),
            WeightModel::Gaussian { mean, stdev } => ("gaussian", vec![mean, stdev]),
            WeightModel::Bernoulli { p_success } => ("bernoulli", vec![p_success]),
            WeightModel::PointMass(c) => ("pointmass", vec![c]),
        };
        WeightSpec {
            family: family.to_string(),
            params,
        }
    }
}

const SERIES_CUTOFF: f64 = 1e-4;

impl WeightModel {
    pub fn validate(&self) -> Result<(), DisorderError> {
        match *self {
            WeightModel::Uniform01 => Ok(()),
            WeightModel::Gaussian { mean, stdev } => {
                if !mean.is_finite() || !stdev.is_finite() || stdev < 0.0 {
                    Err(DisorderError::InvalidParam(format!(
                        "gaussian needs finite mean and stdev >= 0, got ({mean}, {stdev})"
                    )))
                } else {
                    Ok(())
                }
            }
            WeightModel::Bernoulli { p_success } => {
                if p_success > 0.0 && p_success < 1.0 {
                    Ok(())
                } else {
                    Err(DisorderError::InvalidParam(format!(
                        "bernoulli success probability must lie in (0, 1), got {p_success}"
                    )))
                }
            }
            WeightModel::PointMass(c) => {
                if c.is_finite() {
                    Ok(())
                } else {
                    Err(DisorderError::InvalidParam("point mass must be finite".into()))
                }
            }
        }
    }

    /// `true` when the weight is almost surely constant.
    pub fn is_degenerate(&self) -> bool {
        match *self {
            WeightModel::PointMass(_) => true,
            WeightModel::Gaussian { stdev, .. } => stdev == 0.0,
            _ => false,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            WeightModel::Uniform01 => 0.5,
            WeightModel::Gaussian { mean, .. } => mean,
            WeightModel::Bernoulli { p_success } => p_success,
            WeightModel::PointMass(c) => c,
        }
    }

    /// `Λ(β) = log E[e^{βω}]`.
    pub fn log_mgf(&self, beta: f64) -> f64 {
        match *self {
            WeightModel::Uniform01 => uniform_log_mgf(beta),
            WeightModel::Gaussian { mean, stdev } => mean * beta + 0.5 * stdev * stdev * beta * beta,
            WeightModel::Bernoulli { p_success: p } => {
                if beta > 0.0 {
                    beta + (p + (1.0 - p) * (-beta).exp()).ln()
                } else {
                    (p * beta.exp_m1()).ln_1p()
                }
            }
            WeightModel::PointMass(c) => c * beta,
        }
    }

    /// `Λ'(β)`, the mean of the weight under the tilted law `Q_β`.
    pub fn log_mgf_derivative(&self, beta: f64) -> f64 {
        match *self {
            WeightModel::Uniform01 => uniform_log_mgf_derivative(beta),
            WeightModel::Gaussian { mean, stdev } => mean + stdev * stdev * beta,
            WeightModel::Bernoulli { p_success: p } => {
                if beta > 0.0 {
                    p / (p + (1.0 - p) * (-beta).exp())
                } else {
                    let e = beta.exp();
                    p * e / (1.0 - p + p * e)
                }
            }
            WeightModel::PointMass(c) => c,
        }
    }

    /// Relative entropy `H(Q_β | P) = βΛ'(β) − Λ(β)` of the Gibbs-biased
    /// single-site law with respect to the weight law.
    pub fn relative_entropy(&self, beta: f64) -> f64 {
        if beta == 0.0 || self.is_degenerate() {
            return 0.0;
        }
        if let WeightModel::Uniform01 = self {
            if beta.abs() < SERIES_CUTOFF {
                // β²/24 − β⁴/960 + ...
                let b2 = beta * beta;
                return b2 / 24.0 - b2 * b2 / 960.0;
            }
        }
        let h = beta * self.log_mgf_derivative(beta) - self.log_mgf(beta);
        h.max(0.0)
    }

    /// `M(2β) / M(β)²`.
    pub fn second_moment_ratio(&self, beta: f64) -> f64 {
        (self.log_mgf(2.0 * beta) - 2.0 * self.log_mgf(beta)).exp()
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            WeightModel::Uniform01 => rng.random::<f64>(),
            WeightModel::Gaussian { mean, stdev } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + stdev * z
            }
            WeightModel::Bernoulli { p_success } => {
                if rng.random::<f64>() < p_success {
                    1.0
                } else {
                    0.0
                }
            }
            WeightModel::PointMass(c) => c,
        }
    }
}

fn uniform_log_mgf(beta: f64) -> f64 {
    if beta.abs() < SERIES_CUTOFF {
        let b2 = beta * beta;
        return beta / 2.0 + b2 / 24.0 - b2 * b2 / 2880.0;
    }
    if beta > 0.0 {
        // log((e^β − 1)/β) = β + log(1 − e^{−β}) − log β
        beta + (-(-beta).exp_m1()).ln() - beta.ln()
    } else {
        (-beta.exp_m1()).ln() - (-beta).ln()
    }
}

fn uniform_log_mgf_derivative(beta: f64) -> f64 {
    if beta.abs() < SERIES_CUTOFF {
        return 0.5 + beta / 12.0 - beta * beta * beta / 720.0;
    }
    // e^β/(e^β − 1) − 1/β
    -1.0 / (-beta).exp_m1() - 1.0 / beta
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline(always)]
fn absorb(key: u64, word: u64) -> u64 {
    mix64(key ^ word.wrapping_mul(GOLDEN).rotate_left(17) ^ GOLDEN)
}

/// SplitMix64 stream seeded from a site key. Only a handful of draws are
/// taken per site, so the generator is created fresh for every weight.
#[derive(Debug, Clone)]
pub struct SiteRng {
    state: u64,
}

impl SiteRng {
    #[inline(always)]
    pub fn new(key: u64) -> Self {
        SiteRng { state: key }
    }
}

impl RngCore for SiteRng {
    #[inline(always)]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline(always)]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// A reproducible iid weight field `ω(t, x)` for one disorder sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub sample_index: u64,
    pub model: WeightModel,
}

impl Environment {
    pub fn new(seed: u64, sample_index: u64, model: WeightModel) -> Self {
        Environment {
            seed,
            sample_index,
            model,
        }
    }

    /// Key for the time slice `t`; extend it one coordinate at a time with
    /// [`Environment::extend_key`], then draw with [`Environment::weight_at_key`].
    #[inline]
    pub fn time_key(&self, t: i64) -> u64 {
        let k = mix64(self.seed ^ 0x5851_F42D_4C95_7F2D);
        let k = absorb(k, self.sample_index);
        absorb(k, t as u64)
    }

    #[inline(always)]
    pub fn extend_key(key: u64, coord: i64) -> u64 {
        absorb(key, coord as u64)
    }

    #[inline(always)]
    pub fn weight_at_key(&self, key: u64) -> f64 {
        match self.model {
            WeightModel::PointMass(c) => c,
            model => model.sample(&mut SiteRng::new(key)),
        }
    }

    /// The weight at time `t >= 1` and site `x`.
    pub fn sample_weight(&self, t: i64, x: &[i64]) -> Result<f64, DisorderError> {
        if t < 1 {
            return Err(DisorderError::TimeOutOfRange(t));
        }
        let key = x.iter().fold(self.time_key(t), |k, &xi| Environment::extend_key(k, xi));
        Ok(self.weight_at_key(key))
    }
}
