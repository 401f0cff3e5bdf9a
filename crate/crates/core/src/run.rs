//! Command dispatch, result files and provenance.
//!
//! Every command computes all of its results before the first byte is
//! written, so a failed run leaves no partial output behind.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, ConfigError, RunConfig};
use crate::criteria::{classify, ClassifyOptions, CriteriaError};
use crate::engine::clt::{endpoint_clt_check, CltConfig, CltError};
use crate::engine::{memory_budget_from_env, EngineError, FieldOptions};
use crate::experiments::{
    figure2_csv, figure2_curve, localization_run, phase_grid, table1_statistics, ExperimentError, Figure2Config,
    PhaseGridConfig, Table1Config, TABLE1_STATISTICS,
};
use crate::free_energy::{gpl_with_records, monotonicity_sweep, p2p_surface, FreeEnergyError};
use crate::kernels::{KernelError, StepKernel};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("ConfigError: {0}")]
    Config(String),
    #[error("ResourceError: {0}")]
    Resource(String),
    #[error("NumericError: {0}")]
    Numeric(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Resource(_) => 3,
            RunError::Numeric(_) => 4,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<EngineError> for RunError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::WindowOverflow { .. } => RunError::Resource(e.to_string()),
            EngineError::InvalidArgument(_) | EngineError::DimensionMismatch(_) => RunError::Config(e.to_string()),
            EngineError::EmptySeries => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<KernelError> for RunError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::InvalidArgument(_) | KernelError::DimensionMismatch { .. } => RunError::Config(e.to_string()),
            _ => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<CriteriaError> for RunError {
    fn from(e: CriteriaError) -> Self {
        match e {
            CriteriaError::Engine(e) => e.into(),
            CriteriaError::Kernel(e) => e.into(),
            other => RunError::Numeric(other.to_string()),
        }
    }
}

impl From<FreeEnergyError> for RunError {
    fn from(e: FreeEnergyError) -> Self {
        match e {
            FreeEnergyError::Engine(e) => e.into(),
            FreeEnergyError::Kernel(e) => e.into(),
            FreeEnergyError::InvalidArgument(m) => RunError::Config(m),
            FreeEnergyError::EmptySurface => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<ExperimentError> for RunError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Engine(e) => e.into(),
            ExperimentError::Kernel(e) => e.into(),
            ExperimentError::FreeEnergy(e) => e.into(),
            ExperimentError::Criteria(e) => e.into(),
            ExperimentError::InvalidArgument(m) => RunError::Config(m),
            other => RunError::Numeric(other.to_string()),
        }
    }
}

impl From<CltError> for RunError {
    fn from(e: CltError) -> Self {
        match e {
            CltError::Engine(e) => e.into(),
            CltError::Kernel(e) => e.into(),
            CltError::Criteria(e) => e.into(),
        }
    }
}

/// Result of a run: the summary and every file to be written, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: Value,
    pub files: Vec<(String, String)>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("results serialize");
    s.push('\n');
    s
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}

fn fields(cfg: &RunConfig) -> Vec<Vec<f64>> {
    let base = cfg.field();
    let Some(g) = &cfg.h_grid else {
        return vec![base];
    };
    let c = g.coords();
    let mut out = Vec::new();
    match g.axes[..] {
        [a] => {
            for &u in &c {
                let mut h = base.clone();
                h[a] += u;
                out.push(h);
            }
        }
        [a, b] => {
            for &u in &c {
                for &v in &c {
                    let mut h = base.clone();
                    h[a] += u;
                    h[b] += v;
                    out.push(h);
                }
            }
        }
        _ => unreachable!("validated"),
    }
    out
}

fn field_options(cfg: &RunConfig) -> Result<FieldOptions, RunError> {
    let memory_budget = match cfg.memory_budget_bytes {
        Some(b) => b,
        None => memory_budget_from_env().map_err(|e| RunError::Config(e.to_string()))?,
    };
    Ok(FieldOptions {
        precision: cfg.precision,
        support: cfg.support,
        audit: false,
        memory_budget,
    })
}

/// Run the command on a pool of `cfg.threads` workers (all cores when unset).
pub fn execute(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| RunError::Resource(e.to_string()))?;
    pool.install(|| dispatch(cfg))
}

fn dispatch(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let model = cfg.weights;
    let p = cfg.kernel.build()?;
    let opts = field_options(cfg)?;
    let seed = cfg.seed.unwrap_or(0);
    let d = p.dim();
    let copts = ClassifyOptions {
        return_terms: cfg.return_terms,
        memory_budget: opts.memory_budget,
    };
    let mut files = Vec::new();
    let summary = match cfg.command {
        Command::Gpl => {
            let mut csv = String::from("beta,");
            (1..=d).for_each(|i| csv.push_str(&format!("h{i},")));
            csv.push_str("n,samples,g_mean,g_se,annealed,gap\n");
            let mut estimates = Vec::new();
            let mut records = String::new();
            for beta in cfg.betas() {
                for h in fields(cfg) {
                    let (e, recs) = gpl_with_records(&model, &p, beta, &h, cfg.n, cfg.samples, seed, opts)?;
                    csv.push_str(&format!("{beta},"));
                    h.iter().for_each(|v| csv.push_str(&format!("{v},")));
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        e.n, e.samples, e.g_mean, e.g_se, e.annealed, e.gap
                    ));
                    records.push_str(&jsonl(recs.iter().map(|r| {
                        let mut v = serde_json::to_value(r).unwrap();
                        v["beta"] = json!(beta);
                        v["h"] = json!(h);
                        v
                    })));
                    estimates.push(e);
                }
            }
            files.push(("gpl_curve.csv".into(), csv));
            files.push(("records.jsonl".into(), records));
            json!(estimates)
        }
        Command::P2p => {
            let axis = cfg.h_grid.as_ref().map_or(0, |g| g.axes[0]);
            let ts = cfg
                .h_grid
                .as_ref()
                .map_or_else(|| vec![cfg.field()[axis]], |g| g.coords());
            for (i, &beta) in cfg.betas().iter().enumerate() {
                let s = p2p_surface(&model, &p, beta, cfg.n, cfg.samples, seed, opts)?;
                files.push((format!("surface_{i}.csv"), s.to_csv()));
            }
            let rows = figure2_curve(&Figure2Config {
                model,
                kernel: p.clone(),
                betas: cfg.betas(),
                ts,
                axis,
                n: cfg.n,
                samples: cfg.samples,
                seed,
                field: opts,
            })?;
            files.push(("figure2.csv".into(), figure2_csv(&rows)));
            json!({"betas": cfg.betas(), "axis": axis, "curve": rows})
        }
        Command::PhaseGrid => {
            let g = cfg.h_grid.as_ref().expect("validated");
            let reports = phase_grid(&PhaseGridConfig {
                model,
                kernel: p.clone(),
                beta: cfg.beta,
                base: cfg.field(),
                axes: (g.axes[0], g.axes[1]),
                extent: g.extent,
                points: g.points,
                classify: copts,
            })?;
            let mut csv = String::new();
            (1..=d).for_each(|i| csv.push_str(&format!("h{i},")));
            csv.push_str("class,l2_margin,r_margin,k_tie\n");
            for r in &reports {
                r.h.iter().for_each(|v| csv.push_str(&format!("{v},")));
                let class = serde_json::to_value(r.class).unwrap();
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    class.as_str().unwrap(),
                    r.l2_margin,
                    r.r_margin,
                    r.k_tie
                ));
            }
            files.push(("phase_grid.csv".into(), csv));
            json!(reports)
        }
        Command::Table1 => {
            let r = table1_statistics(&Table1Config {
                model,
                kernel: p.clone(),
                beta: cfg.beta,
                h: cfg.field(),
                n: cfg.n,
                samples: cfg.samples,
                seed,
                burn_in: cfg.burn_in,
                field: opts,
            })?;
            for (i, name) in TABLE1_STATISTICS.iter().enumerate() {
                files.push((format!("table1_{name}.csv"), r.series_csv(i)));
            }
            json!({"rows": r.summary(), "unfitted": r.unfitted, "burn_in": cfg.burn_in, "beta": cfg.beta})
        }
        Command::Classify => json!(classify(&model, &p, cfg.beta, &cfg.field(), &copts)?),
        Command::CltCheck => {
            let mut r = endpoint_clt_check(&CltConfig {
                model,
                kernel: p.clone(),
                beta: cfg.beta,
                h: cfg.field(),
                n: cfg.n,
                samples: cfg.samples,
                seed,
                field: opts,
                classify: copts,
            })?;
            files.push(("records.jsonl".into(), jsonl(&r.per_sample)));
            r.per_sample.clear();
            json!(r)
        }
        Command::Monotonicity => {
            let betas = cfg.betas.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0, 4.0]);
            let t = monotonicity_sweep(&model, &p, &cfg.field(), &betas, cfg.n, cfg.samples, seed, opts)?;
            let mut csv = String::from("beta,mean,se,diff,diff_se,violation_rate\n");
            for i in 0..betas.len() {
                let (df, dse, vr) = match i {
                    0 => (String::new(), String::new(), String::new()),
                    _ => (
                        t.diffs[i - 1].to_string(),
                        t.diff_se[i - 1].to_string(),
                        t.violation_rate[i - 1].to_string(),
                    ),
                };
                csv.push_str(&format!("{},{},{},{df},{dse},{vr}\n", betas[i], t.mean[i], t.se[i]));
            }
            files.push(("monotonicity.csv".into(), csv));
            json!(t)
        }
        Command::Localize => {
            let r = localization_run(&model, &p, cfg.beta, &cfg.field(), cfg.n, cfg.samples, seed, opts)?;
            let mut csv = String::from("t,mean_J\n");
            r.mean_j
                .iter()
                .enumerate()
                .for_each(|(t, j)| csv.push_str(&format!("{},{j}\n", t + 1)));
            files.push(("j_series.csv".into(), csv));
            files.push((
                "records.jsonl".into(),
                jsonl(
                    r.cesaro
                        .iter()
                        .enumerate()
                        .map(|(s, c)| json!({"sample": s, "cesaro_J": c})),
                ),
            ));
            json!({"n": r.n, "samples": r.samples, "cesaro_mean": r.cesaro_mean, "cesaro_se": r.cesaro_se})
        }
    };
    files.push(("summary.json".into(), to_json(&summary)));
    Ok(RunOutput { summary, files })
}

/// Every approximation that shapes the numbers, for the provenance record.
fn approximations(cfg: &RunConfig, p: &StepKernel, opts: &FieldOptions) -> Value {
    json!({
        "kernel_truncation_radius": p.truncation_radius(),
        "return_series_terms": cfg.return_terms,
        "return_series_tail_safety": crate::criteria::TAIL_SAFETY,
        "fit_burn_in": cfg.burn_in,
        "limit_slack": cfg.slack,
        "support": opts.support,
        "precision": opts.precision,
        "memory_budget_bytes": opts.memory_budget,
    })
}

/// Execute and, when `cfg.out` is set, write the results and a provenance
/// record into that directory.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let start = Instant::now();
    let out = execute(cfg)?;
    if let Some(dir) = &cfg.out {
        let p = cfg.kernel.build()?;
        let opts = field_options(cfg)?;
        let provenance = json!({
            "config": cfg,
            "seed": cfg.seed,
            "threads": cfg.threads.unwrap_or_else(rayon::current_num_threads),
            "build_version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": start.elapsed().as_secs_f64(),
            "approximations": approximations(cfg, &p, &opts),
        });
        write_all(dir, &out.files, &to_json(&provenance))?;
    }
    Ok(out)
}

fn write_all(dir: &Path, files: &[(String, String)], provenance: &str) -> Result<(), RunError> {
    let io = |path: &PathBuf, e: std::io::Error| RunError::Resource(format!("{}: {e}", path.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(&dir.to_path_buf(), e))?;
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| io(&path, e))?;
    }
    let path = dir.join("provenance.json");
    std::fs::write(&path, provenance).map_err(|e| io(&path, e))
}
