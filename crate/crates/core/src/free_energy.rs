//! Free-energy estimates: point-to-level `g_n(β, h)`, the annealed bound,
//! point-to-point surfaces and their Legendre transform, and the paired
//! monotonicity sweep in `β`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disorder::{Environment, WeightModel};
use crate::engine::{EngineError, FieldOptions, PolymerField, SampleRecord};
use crate::kernels::{tilt, KernelError, StepKernel};
use crate::stats::{mean_se, Moments, Neumaier};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FreeEnergyError {
    #[error("surface has no finite site")]
    EmptySurface,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Samples per sequential aggregation chunk; bounds memory for surfaces
/// while keeping the reduction order fixed.
const CHUNK: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyEstimate {
    pub beta: f64,
    pub h: Vec<f64>,
    pub n: u64,
    pub samples: u64,
    pub g_mean: f64,
    pub g_se: f64,
    /// `(Λ(β) + Λ_p(βh)) / β`.
    pub annealed: f64,
    /// `annealed − g_mean`; the bound is exact so its SE is `g_se`.
    pub gap: f64,
    pub gap_se: f64,
}

pub fn annealed_bound(model: &WeightModel, p: &StepKernel, beta: f64, h: &[f64]) -> f64 {
    let t: Vec<f64> = h.iter().map(|v| beta * v).collect();
    (model.log_mgf(beta) + p.log_mgf(&t)) / beta
}

fn check_beta(beta: f64) -> Result<(), FreeEnergyError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(FreeEnergyError::InvalidArgument(format!(
            "beta must be > 0, got {beta}"
        )));
    }
    Ok(())
}

/// Mean over samples of `(1/βn) log Z_{n,β,q(h)} + Λ_p(βh)/β`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_gpl(
    model: &WeightModel,
    p: &StepKernel,
    beta: f64,
    h: &[f64],
    n: u64,
    samples: u64,
    seed: u64,
    opts: FieldOptions,
) -> Result<FreeEnergyEstimate, FreeEnergyError> {
    gpl_with_records(model, p, beta, h, n, samples, seed, opts).map(|(e, _)| e)
}

/// [`estimate_gpl`] together with the endpoint record of every sample.
#[allow(clippy::too_many_arguments)]
pub fn gpl_with_records(
    model: &WeightModel,
    p: &StepKernel,
    beta: f64,
    h: &[f64],
    n: u64,
    samples: u64,
    seed: u64,
    opts: FieldOptions,
) -> Result<(FreeEnergyEstimate, Vec<SampleRecord>), FreeEnergyError> {
    check_beta(beta)?;
    if n == 0 || samples == 0 {
        return Err(FreeEnergyError::InvalidArgument("n and samples must be >= 1".into()));
    }
    let q = tilt(p, beta, h)?;
    PolymerField::with_tilted(&q, beta, None, opts)?.reserve_for(n)?;
    let shift = q.log_mgf() / beta;
    let records: Vec<SampleRecord> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<SampleRecord, EngineError> {
            let env = Environment::new(seed, s, *model);
            let mut f = PolymerField::with_tilted(&q, beta, Some(env), opts)?;
            f.advance_to(n)?;
            Ok(f.record(s))
        })
        .collect::<Result<_, _>>()?;
    let values: Vec<f64> = records.iter().map(|r| r.log_z_pl / (beta * n as f64) + shift).collect();
    let (g_mean, g_se) = mean_se(&values);
    let annealed = annealed_bound(model, p, beta, h);
    let est = FreeEnergyEstimate {
        beta,
        h: h.to_vec(),
        n,
        samples,
        g_mean,
        g_se,
        annealed,
        gap: annealed - g_mean,
        gap_se: g_se,
    };
    Ok((est, records))
}

/// Sample-averaged `(1/βn) log Z_n(0, x)` over the reachable sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P2PSurface {
    pub n: u64,
    pub beta: f64,
    pub samples: u64,
    pub sites: Vec<Vec<i64>>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl P2PSurface {
    pub fn value_at(&self, x: &[i64]) -> f64 {
        match self.sites.binary_search_by(|s| s.as_slice().cmp(x)) {
            Ok(i) => self.values[i],
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// CSV rows `x1..xd,value`.
    pub fn to_csv(&self) -> String {
        let d = self.sites.first().map_or(0, |s| s.len());
        let mut out: String = (1..=d).map(|i| format!("x{i},")).collect();
        out.push_str("value\n");
        for (x, v) in self.sites.iter().zip(&self.values) {
            for c in x {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{v}\n"));
        }
        out
    }
}

/// `p2p_surface` under the untilted kernel `p`; `log p` factors are part of
/// `Z_n(0, x)`.
pub fn p2p_surface(
    model: &WeightModel,
    p: &StepKernel,
    beta: f64,
    n: u64,
    samples: u64,
    seed: u64,
    opts: FieldOptions,
) -> Result<P2PSurface, FreeEnergyError> {
    check_beta(beta)?;
    if n == 0 || samples == 0 {
        return Err(FreeEnergyError::InvalidArgument("n and samples must be >= 1".into()));
    }
    PolymerField::new(p, beta, None, opts)?.reserve_for(n)?;
    let scale = 1.0 / (beta * n as f64);
    let mut sites: Vec<Vec<i64>> = Vec::new();
    let mut acc: Vec<Moments> = Vec::new();
    let mut start = 0;
    while start < samples {
        let end = (start + CHUNK).min(samples);
        let chunk: Vec<(Vec<Vec<i64>>, Vec<f64>)> = (start..end)
            .into_par_iter()
            .map(|s| -> Result<_, EngineError> {
                let env = Environment::new(seed, s, *model);
                let mut f = PolymerField::new(p, beta, Some(env), opts)?;
                f.advance_to(n)?;
                let mut xs = Vec::new();
                let mut vs = Vec::new();
                f.for_each_site(|x, l| {
                    if s == 0 {
                        xs.push(x.to_vec());
                    }
                    vs.push(l * scale);
                });
                Ok((xs, vs))
            })
            .collect::<Result<_, _>>()?;
        for (xs, vs) in chunk {
            if sites.is_empty() {
                sites = xs;
                acc = vec![Moments::new(); sites.len()];
            }
            // The reachable set does not depend on the environment.
            assert_eq!(vs.len(), acc.len(), "reachable set changed between samples");
            acc.iter_mut().zip(vs).for_each(|(a, v)| a.push(v));
        }
        start = end;
    }
    Ok(P2PSurface {
        n,
        beta,
        samples,
        sites,
        values: acc.iter().map(Moments::mean).collect(),
        std_errors: acc.iter().map(Moments::std_error).collect(),
    })
}

/// Discrete supremum `max_x [g_pp(x/n) + h·x/n]` over the surface grid.
pub fn legendre(surface: &P2PSurface, h: &[f64]) -> Result<f64, FreeEnergyError> {
    let nf = surface.n as f64;
    let best = surface
        .sites
        .iter()
        .zip(&surface.values)
        .filter(|(_, v)| v.is_finite())
        .map(|(x, v)| v + x.iter().zip(h).map(|(&a, b)| a as f64 * b).sum::<f64>() / nf)
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Err(FreeEnergyError::EmptySurface);
    }
    Ok(best)
}

/// Finite-`n` transform `(1/βn) log Σ_x exp(βn [g_pp(x/n) + h·x/n])`. It
/// tends to [`legendre`] as `n → ∞` but keeps the entropy of the
/// maximizing shell, which the discrete supremum drops at order `log n / n`.
pub fn legendre_finite_n(surface: &P2PSurface, h: &[f64]) -> Result<f64, FreeEnergyError> {
    let nf = surface.n as f64;
    let bn = surface.beta * nf;
    let terms: Vec<f64> = surface
        .sites
        .iter()
        .zip(&surface.values)
        .filter(|(_, v)| v.is_finite())
        .map(|(x, v)| bn * (v + x.iter().zip(h).map(|(&a, b)| a as f64 * b).sum::<f64>() / nf))
        .collect();
    if terms.is_empty() {
        return Err(FreeEnergyError::EmptySurface);
    }
    Ok(crate::kernels::log_sum_exp(&terms) / bn)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityTable {
    pub h0: Vec<f64>,
    pub n: u64,
    pub samples: u64,
    pub betas: Vec<f64>,
    /// Mean over samples of `(1/n) log Z_{n,β,q(h0)} − Λ(β)`.
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Paired first differences between consecutive `β`.
    pub diffs: Vec<f64>,
    pub diff_se: Vec<f64>,
    /// Fraction of samples whose own difference is positive.
    pub violation_rate: Vec<f64>,
}

/// `ĝ_n(β, h0) − Λ(β) − Λ_p(h0)` on a `β` grid, with one set of environments
/// shared by every `β`. The tilt `h0` is held fixed, so only `βH` changes.
#[allow(clippy::too_many_arguments)]
pub fn monotonicity_sweep(
    model: &WeightModel,
    p: &StepKernel,
    h0: &[f64],
    betas: &[f64],
    n: u64,
    samples: u64,
    seed: u64,
    opts: FieldOptions,
) -> Result<MonotonicityTable, FreeEnergyError> {
    if betas.is_empty() || betas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FreeEnergyError::InvalidArgument(
            "betas must be strictly ascending".into(),
        ));
    }
    if n == 0 || samples == 0 {
        return Err(FreeEnergyError::InvalidArgument("n and samples must be >= 1".into()));
    }
    let q = tilt(p, 1.0, h0)?;
    PolymerField::with_tilted(&q, 1.0, None, opts)?.reserve_for(n)?;
    let rows: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>, EngineError> {
            let env = Environment::new(seed, s, *model);
            betas
                .iter()
                .map(|&b| {
                    let mut f = PolymerField::with_tilted(&q, b, Some(env), opts)?;
                    f.advance_to(n)?;
                    Ok(f.log_normalized_martingale() / n as f64)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let k = betas.len();
    let column = |f: &dyn Fn(&Vec<f64>) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let mut mean = Vec::with_capacity(k);
    let mut se = Vec::with_capacity(k);
    for j in 0..k {
        let (m, e) = mean_se(&column(&|r| r[j]));
        mean.push(m);
        se.push(e);
    }
    let mut diffs = Vec::new();
    let mut diff_se = Vec::new();
    let mut violation_rate = Vec::new();
    for j in 1..k {
        let d = column(&|r| r[j] - r[j - 1]);
        let (m, e) = mean_se(&d);
        diffs.push(m);
        diff_se.push(e);
        let mut pos = Neumaier::new();
        d.iter().for_each(|&v| pos.add((v > 0.0) as u8 as f64));
        violation_rate.push(pos.value() / samples as f64);
    }
    Ok(MonotonicityTable {
        h0: h0.to_vec(),
        n,
        samples,
        betas: betas.to_vec(),
        mean,
        se,
        diffs,
        diff_se,
        violation_rate,
    })
}
