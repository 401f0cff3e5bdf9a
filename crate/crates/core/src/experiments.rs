//! Drivers for the numerical studies: fluctuation exponents, free-energy
//! curves against the annealed bound, phase grids and localization runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{classify, ClassifyOptions, CriteriaError, PhaseReport};
use crate::disorder::{Environment, WeightModel};
use crate::engine::{localization_average, EngineError, FieldOptions, PolymerField};
use crate::free_energy::{annealed_bound, legendre, p2p_surface, FreeEnergyError, P2PSurface};
use crate::kernels::{log_sum_exp, tilt, KernelError, StepKernel};
use crate::stats::{mean_se, ols, Moments, Neumaier};

pub const DEFAULT_BURN_IN: f64 = 0.1;
const CHUNK: u64 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("non-positive value {value} at k = {k} inside the fit window")]
    NonPositiveValues { k: usize, value: f64 },
    #[error("fit window holds {0} points, need at least 2")]
    TooFewPoints(usize),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    FreeEnergy(#[from] FreeEnergyError),
    #[error(transparent)]
    Criteria(#[from] CriteriaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub statistic: String,
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub burn_in: f64,
    pub points: usize,
}

/// Least-squares slope of `log t(k)` against `log k` over `k > burn_in·n`,
/// where `series[k − 1] = t(k)`.
pub fn fit_exponent(statistic: &str, series: &[f64], burn_in: f64) -> Result<ExponentFit, ExperimentError> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(ExperimentError::InvalidArgument(format!(
            "burn_in must be in [0, 1), got {burn_in}"
        )));
    }
    let n = series.len();
    let cut = burn_in * n as f64;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, &v) in series.iter().enumerate() {
        let k = i + 1;
        if (k as f64) <= cut {
            continue;
        }
        if !(v > 0.0) {
            return Err(ExperimentError::NonPositiveValues { k, value: v });
        }
        x.push((k as f64).ln());
        y.push(v.ln());
    }
    if x.len() < 2 {
        return Err(ExperimentError::TooFewPoints(x.len()));
    }
    let f = ols(&x, &y);
    Ok(ExponentFit {
        statistic: statistic.to_string(),
        slope: f.slope,
        stderr: f.slope_stderr,
        intercept: f.intercept,
        r_squared: f.r_squared,
        burn_in,
        points: x.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Config {
    pub model: WeightModel,
    pub kernel: StepKernel,
    pub beta: f64,
    pub h: Vec<f64>,
    pub n: u64,
    pub samples: u64,
    pub seed: u64,
    pub burn_in: f64,
    pub field: FieldOptions,
}

pub const TABLE1_STATISTICS: [&str; 4] = [
    "log_partition_stdev",
    "gibbs_endpoint_stdev",
    "annealed_endpoint_stdev",
    "argmax_stdev",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Result {
    pub d: usize,
    pub h: Vec<f64>,
    pub n: u64,
    pub samples: u64,
    /// One series per entry of [`TABLE1_STATISTICS`], indexed by `k − 1`.
    pub series: Vec<Vec<f64>>,
    pub fits: Vec<ExponentFit>,
    /// Statistics whose series could not be fitted, with the reason.
    pub unfitted: Vec<(String, String)>,
}

impl Table1Result {
    pub fn summary(&self) -> Vec<serde_json::Value> {
        self.fits
            .iter()
            .map(|f| {
                serde_json::json!({
                    "statistic": f.statistic,
                    "d": self.d,
                    "h": self.h,
                    "exponent": f.slope,
                    "stderr": f.stderr,
                })
            })
            .collect()
    }

    pub fn series_csv(&self, stat: usize) -> String {
        let mut out = String::from("k,value\n");
        for (i, v) in self.series[stat].iter().enumerate() {
            out.push_str(&format!("{},{v}\n", i + 1));
        }
        out
    }
}

struct PerK {
    log_z: Moments,
    gibbs_var: Neumaier,
    sq_norm: Neumaier,
    mean: Vec<Neumaier>,
    argmax_norm: Moments,
}

/// Per `k ≤ n`, across samples:
/// 1. stdev of `log Z_k`;
/// 2. `√E[⟨|X_k|²⟩ − |⟨X_k⟩|²]`, the quenched endpoint spread;
/// 3. `√(E⟨|X_k|²⟩ − |E⟨X_k⟩|²)`, the spread under the annealed Gibbs law;
/// 4. stdev of `|A_k|`.
pub fn table1_statistics(cfg: &Table1Config) -> Result<Table1Result, ExperimentError> {
    if cfg.n == 0 || cfg.samples < 2 {
        return Err(ExperimentError::InvalidArgument("need n >= 1 and samples >= 2".into()));
    }
    let d = cfg.kernel.dim();
    let q = tilt(&cfg.kernel, cfg.beta, &cfg.h)?;
    PolymerField::with_tilted(&q, cfg.beta, None, cfg.field)?.reserve_for(cfg.n)?;
    let n = cfg.n as usize;
    let mut acc: Vec<PerK> = (0..n)
        .map(|_| PerK {
            log_z: Moments::new(),
            gibbs_var: Neumaier::new(),
            sq_norm: Neumaier::new(),
            mean: vec![Neumaier::new(); d],
            argmax_norm: Moments::new(),
        })
        .collect();

    // Per sample and k: log Z, quenched variance, ⟨|X|²⟩, ⟨X⟩, |A|.
    let width = 4 + d;
    let mut start = 0;
    while start < cfg.samples {
        let end = (start + CHUNK).min(cfg.samples);
        let rows: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|s| -> Result<Vec<f64>, EngineError> {
                let env = Environment::new(cfg.seed, s, cfg.model);
                let mut f = PolymerField::with_tilted(&q, cfg.beta, Some(env), cfg.field)?;
                let mut row = Vec::with_capacity(n * width);
                for _ in 0..n {
                    f.step()?;
                    let e = f.endpoint();
                    let m2: f64 = e.mean.iter().map(|m| m * m).sum();
                    row.push(f.log_partition());
                    row.push(e.mean_sq_norm - m2);
                    row.push(e.mean_sq_norm);
                    row.push(e.argmax.iter().map(|&a| (a * a) as f64).sum::<f64>().sqrt());
                    row.extend_from_slice(&e.mean);
                }
                Ok(row)
            })
            .collect::<Result<_, _>>()?;
        for row in rows {
            for (k, a) in acc.iter_mut().enumerate() {
                let r = &row[k * width..(k + 1) * width];
                a.log_z.push(r[0]);
                a.gibbs_var.add(r[1]);
                a.sq_norm.add(r[2]);
                a.argmax_norm.push(r[3]);
                a.mean.iter_mut().zip(&r[4..]).for_each(|(m, v)| m.add(*v));
            }
        }
        start = end;
    }

    let s = cfg.samples as f64;
    let mut series: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    for a in &acc {
        let mean_sq: f64 = a.mean.iter().map(|m| (m.value() / s).powi(2)).sum();
        series[0].push(a.log_z.stdev());
        series[1].push((a.gibbs_var.value() / s).max(0.0).sqrt());
        series[2].push((a.sq_norm.value() / s - mean_sq).max(0.0).sqrt());
        series[3].push(a.argmax_norm.stdev());
    }
    let mut fits = Vec::new();
    let mut unfitted = Vec::new();
    for (name, v) in TABLE1_STATISTICS.iter().zip(&series) {
        match fit_exponent(name, v, cfg.burn_in) {
            Ok(f) => fits.push(f),
            Err(e @ (ExperimentError::NonPositiveValues { .. } | ExperimentError::TooFewPoints(_))) => {
                unfitted.push((name.to_string(), e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Table1Result {
        d,
        h: cfg.h.clone(),
        n: cfg.n,
        samples: cfg.samples,
        series,
        fits,
        unfitted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Figure2Config {
    pub model: WeightModel,
    pub kernel: StepKernel,
    pub betas: Vec<f64>,
    /// Field strengths `t`; the field is `t·e_axis`.
    pub ts: Vec<f64>,
    pub axis: usize,
    pub n: u64,
    pub samples: u64,
    pub seed: u64,
    pub field: FieldOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure2Row {
    pub beta: f64,
    pub t: f64,
    /// Discrete supremum over the velocity grid.
    pub g_sup: f64,
    /// Finite-`n` log-sum-exp transform of the same surface.
    pub g_pl: f64,
    /// Weighted standard error of `g_pl`; an upper bound by the triangle
    /// inequality.
    pub g_se: f64,
    pub annealed: f64,
    pub gap: f64,
}

/// Transform of one surface at field `h`, with its standard error.
pub fn legendre_with_se(surface: &P2PSurface, h: &[f64]) -> Result<(f64, f64, f64), ExperimentError> {
    let g_sup = legendre(surface, h)?;
    let nf = surface.n as f64;
    let bn = surface.beta * nf;
    let mut terms = Vec::with_capacity(surface.values.len());
    let mut ses = Vec::with_capacity(surface.values.len());
    for ((x, v), se) in surface.sites.iter().zip(&surface.values).zip(&surface.std_errors) {
        if v.is_finite() {
            terms.push(bn * (v + x.iter().zip(h).map(|(&a, b)| a as f64 * b).sum::<f64>() / nf));
            ses.push(*se);
        }
    }
    let lse = log_sum_exp(&terms);
    let se = neumaier_weighted(&terms, &ses, lse);
    Ok((g_sup, lse / bn, se))
}

fn neumaier_weighted(terms: &[f64], ses: &[f64], lse: f64) -> f64 {
    let mut acc = Neumaier::new();
    terms.iter().zip(ses).for_each(|(t, s)| acc.add((t - lse).exp() * s));
    acc.value()
}

pub fn figure2_curve(cfg: &Figure2Config) -> Result<Vec<Figure2Row>, ExperimentError> {
    let d = cfg.kernel.dim();
    if cfg.axis >= d {
        return Err(ExperimentError::InvalidArgument(format!(
            "axis {} out of range for d = {d}",
            cfg.axis
        )));
    }
    let mut rows = Vec::new();
    for &beta in &cfg.betas {
        let surface = p2p_surface(&cfg.model, &cfg.kernel, beta, cfg.n, cfg.samples, cfg.seed, cfg.field)?;
        for &t in &cfg.ts {
            let mut h = vec![0.0; d];
            h[cfg.axis] = t;
            let (g_sup, g_pl, g_se) = legendre_with_se(&surface, &h)?;
            let annealed = annealed_bound(&cfg.model, &cfg.kernel, beta, &h);
            rows.push(Figure2Row {
                beta,
                t,
                g_sup,
                g_pl,
                g_se,
                annealed,
                gap: annealed - g_pl,
            });
        }
    }
    Ok(rows)
}

pub fn figure2_csv(rows: &[Figure2Row]) -> String {
    let mut out = String::from("beta,t,g_sup,g_pl,g_se,annealed,gap\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.beta, r.t, r.g_sup, r.g_pl, r.g_se, r.annealed, r.gap
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGridConfig {
    pub model: WeightModel,
    pub kernel: StepKernel,
    pub beta: f64,
    /// Grid centre; the slice spans `axes` over `[-extent, extent]²`.
    pub base: Vec<f64>,
    pub axes: (usize, usize),
    pub extent: f64,
    pub points: usize,
    pub classify: ClassifyOptions,
}

/// Classification of every point of a planar field grid, row-major in the
/// first axis. Points with `|K(h)| > 1` carry `k_tie`.
pub fn phase_grid(cfg: &PhaseGridConfig) -> Result<Vec<PhaseReport>, ExperimentError> {
    let d = cfg.kernel.dim();
    let (a, b) = cfg.axes;
    if cfg.base.len() != d || a >= d || b >= d || a == b {
        return Err(ExperimentError::InvalidArgument(
            "grid axes or base do not match the dimension".into(),
        ));
    }
    if cfg.points < 1 || !(cfg.extent >= 0.0) {
        return Err(ExperimentError::InvalidArgument(
            "need points >= 1 and extent >= 0".into(),
        ));
    }
    let coord = |i: usize| {
        if cfg.points == 1 {
            0.0
        } else {
            -cfg.extent + 2.0 * cfg.extent * i as f64 / (cfg.points - 1) as f64
        }
    };
    let mut fields = Vec::with_capacity(cfg.points * cfg.points);
    for i in 0..cfg.points {
        for j in 0..cfg.points {
            let mut h = cfg.base.clone();
            h[a] += coord(i);
            h[b] += coord(j);
            fields.push(h);
        }
    }
    fields
        .par_iter()
        .map(|h| classify(&cfg.model, &cfg.kernel, cfg.beta, h, &cfg.classify).map_err(ExperimentError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub n: u64,
    pub samples: u64,
    /// Sample mean of `J_t`, `t = 1..n`.
    pub mean_j: Vec<f64>,
    /// Per-sample Cesàro averages `(1/n) Σ_t J_t`.
    pub cesaro: Vec<f64>,
    pub cesaro_mean: f64,
    pub cesaro_se: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn localization_run(
    model: &WeightModel,
    p: &StepKernel,
    beta: f64,
    h: &[f64],
    n: u64,
    samples: u64,
    seed: u64,
    field: FieldOptions,
) -> Result<LocalizationReport, ExperimentError> {
    if n == 0 || samples == 0 {
        return Err(ExperimentError::InvalidArgument("n and samples must be >= 1".into()));
    }
    let q = tilt(p, beta, h)?;
    PolymerField::with_tilted(&q, beta, None, field)?.reserve_for(n)?;
    let series: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>, EngineError> {
            let env = Environment::new(seed, s, *model);
            let mut f = PolymerField::with_tilted(&q, beta, Some(env), field)?;
            let mut j = Vec::with_capacity(n as usize);
            for _ in 0..n {
                f.step()?;
                j.push(f.j_fold().unwrap_or(0.0));
            }
            Ok(j)
        })
        .collect::<Result<_, _>>()?;
    let cesaro: Vec<f64> = series
        .iter()
        .map(|j| localization_average(j))
        .collect::<Result<_, _>>()?;
    let mean_j = (0..n as usize)
        .map(|t| {
            let mut a = Neumaier::new();
            series.iter().for_each(|j| a.add(j[t]));
            a.value() / samples as f64
        })
        .collect();
    let (cesaro_mean, cesaro_se) = mean_se(&cesaro);
    Ok(LocalizationReport {
        n,
        samples,
        mean_j,
        cesaro,
        cesaro_mean,
        cesaro_se,
    })
}
