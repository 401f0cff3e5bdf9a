//! Empirical check of the Gaussian limit of the endpoint in weak disorder.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EngineError, FieldOptions, PolymerField};
use crate::criteria::{self, ClassifyOptions};
use crate::disorder::{Environment, WeightModel};
use crate::kernels::{tilt, KernelError, StepKernel};
use crate::stats::Moments;

#[derive(Debug, Clone, PartialEq)]
pub struct CltConfig {
    pub model: WeightModel,
    pub kernel: StepKernel,
    pub beta: f64,
    pub h: Vec<f64>,
    pub n: u64,
    pub samples: u64,
    pub seed: u64,
    pub field: FieldOptions,
    pub classify: ClassifyOptions,
}

/// Moments of `Y = (X_n − n m_q)/√n` under one Gibbs measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltSample {
    pub sample: u64,
    /// `⟨Y_i⟩`.
    pub first: Vec<f64>,
    /// Row-major `⟨Y_i Y_j⟩`.
    pub second: Vec<f64>,
    /// `⟨|Y|²⟩`.
    pub sq_norm: f64,
    /// `⟨X_n⟩ / n`.
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub n: u64,
    pub samples: u64,
    pub drift: Vec<f64>,
    pub covariance: Vec<f64>,
    pub trace_covariance: f64,
    /// Sample averages of the per-environment moments, with standard errors.
    pub first: Vec<f64>,
    pub first_se: Vec<f64>,
    pub second: Vec<f64>,
    pub second_se: Vec<f64>,
    pub sq_norm: f64,
    pub sq_norm_se: f64,
    pub velocity: Vec<f64>,
    pub velocity_se: Vec<f64>,
    /// `|⟨|Y|²⟩ − tr Σ_q| / tr Σ_q`.
    pub sq_norm_rel_dev: f64,
    pub l2_certified: bool,
    pub warning: Option<String>,
    pub per_sample: Vec<CltSample>,
}

#[derive(Debug, thiserror::Error)]
pub enum CltError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Criteria(#[from] criteria::CriteriaError),
}

/// Compare `⟨f((X_n − n m_q)/√n)⟩` for `f ∈ {x_i, x_i x_j, |x|²}` with the
/// moments of the centred Gaussian with covariance `Σ_q`.
pub fn endpoint_clt_check(cfg: &CltConfig) -> Result<CltReport, CltError> {
    let d = cfg.kernel.dim();
    let q = tilt(&cfg.kernel, cfg.beta, &cfg.h)?;
    let m = q.mean().to_vec();
    let cov = q.covariance().to_vec();
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let (l2_certified, warning) = if d >= 3 {
        let report = criteria::classify(&cfg.model, &cfg.kernel, cfg.beta, &cfg.h, &cfg.classify)?;
        let ok = report.class == criteria::PhaseClass::L2Weak;
        (
            ok,
            (!ok).then(|| "PhaseMismatch: the L2 criterion does not certify this (beta, h)".to_string()),
        )
    } else {
        (false, Some("PhaseMismatch: no L2 certificate in d <= 2".to_string()))
    };

    // Fail on the window before any sample runs.
    PolymerField::with_tilted(&q, cfg.beta, None, cfg.field)?.reserve_for(cfg.n)?;

    let nf = cfg.n as f64;
    let per_sample: Vec<CltSample> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| -> Result<CltSample, EngineError> {
            let env = Environment::new(cfg.seed, s, cfg.model);
            let mut field = PolymerField::with_tilted(&q, cfg.beta, Some(env), cfg.field)?;
            field.advance_to(cfg.n)?;
            let e = field.endpoint();
            let first: Vec<f64> = (0..d).map(|i| (e.mean[i] - nf * m[i]) / nf.sqrt()).collect();
            let mut second = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let xij = e.second_moment[i * d + j];
                    second[i * d + j] =
                        (xij - nf * m[i] * e.mean[j] - nf * m[j] * e.mean[i] + nf * nf * m[i] * m[j]) / nf;
                }
            }
            let sq_norm = (0..d).map(|i| second[i * d + i]).sum();
            Ok(CltSample {
                sample: s,
                first,
                second,
                sq_norm,
                velocity: e.mean.iter().map(|v| v / nf).collect(),
            })
        })
        .collect::<Result<_, _>>()?;

    let summarize = |get: &dyn Fn(&CltSample) -> f64| {
        let mut acc = Moments::new();
        per_sample.iter().for_each(|s| acc.push(get(s)));
        (acc.mean(), acc.std_error())
    };
    let (first, first_se): (Vec<f64>, Vec<f64>) = (0..d).map(|i| summarize(&|s| s.first[i])).unzip();
    let (second, second_se): (Vec<f64>, Vec<f64>) = (0..d * d).map(|i| summarize(&|s| s.second[i])).unzip();
    let (velocity, velocity_se): (Vec<f64>, Vec<f64>) = (0..d).map(|i| summarize(&|s| s.velocity[i])).unzip();
    let (sq_norm, sq_norm_se) = summarize(&|s| s.sq_norm);
    Ok(CltReport {
        n: cfg.n,
        samples: cfg.samples,
        drift: m,
        covariance: cov,
        trace_covariance: trace,
        first,
        first_se,
        second,
        second_se,
        sq_norm,
        sq_norm_se,
        velocity,
        velocity_se,
        sq_norm_rel_dev: (sq_norm - trace).abs() / trace,
        l2_certified,
        warning,
        per_sample,
    })
}
