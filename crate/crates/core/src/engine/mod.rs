//! Transfer-matrix evaluation of point-to-point and point-to-level partition
//! functions, the normalized martingale, and Gibbs endpoint statistics.

pub mod slab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disorder::Environment;
use crate::kernels::{StepKernel, TiltedKernel};
use slab::{Cell, Layout, LayoutStep, Live, WeightCtx};

pub const DEFAULT_MEMORY_BUDGET: u64 = 4 << 30;
pub const MEMORY_BUDGET_ENV: &str = "POLYMERLAB_MEM_BUDGET";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("window for n = {n} needs {needed} bytes, over the memory budget of {budget} bytes")]
    WindowOverflow { n: u64, needed: u64, budget: u64 },
    #[error("site {0:?} has wrong dimension")]
    DimensionMismatch(Vec<i64>),
    #[error("empty series")]
    EmptySeries,
    #[error("{0}")]
    InvalidArgument(String),
}

/// Budget from `POLYMERLAB_MEM_BUDGET` (bytes, optional K/M/G suffix, binary
/// units), falling back to 4 GiB.
pub fn memory_budget_from_env() -> Result<u64, EngineError> {
    match std::env::var(MEMORY_BUDGET_ENV) {
        Ok(s) => parse_bytes(&s)
            .ok_or_else(|| EngineError::InvalidArgument(format!("{MEMORY_BUDGET_ENV}={s:?} is not a byte count"))),
        Err(_) => Ok(DEFAULT_MEMORY_BUDGET),
    }
}

pub fn parse_bytes(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mult) = match s.char_indices().find(|(_, c)| c.is_ascii_alphabetic()) {
        Some((i, _)) => {
            let mult = match s[i..].to_ascii_lowercase().as_str() {
                "k" | "kb" | "kib" => 1u64 << 10,
                "m" | "mb" | "mib" => 1 << 20,
                "g" | "gb" | "gib" => 1 << 30,
                "b" => 1,
                _ => return None,
            };
            (&s[..i], mult)
        }
        None => (s, 1),
    };
    num.trim().parse::<u64>().ok()?.checked_mul(mult)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    /// Every reachable site stays finite, however small its mass.
    #[default]
    Exact,
    /// Sites whose mass underflows relative to the slab maximum are dropped.
    Representable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOptions {
    pub precision: Precision,
    pub support: Support,
    /// Accumulate a checksum of every weight read.
    pub audit: bool,
    pub memory_budget: u64,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions {
            precision: Precision::Double,
            support: Support::Exact,
            audit: false,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

enum Slabs {
    F64 { cur: Vec<f64>, next: Vec<f64> },
    F32 { cur: Vec<f32>, next: Vec<f32> },
}

/// `Z_n(x)` for one environment sample, advanced one time step at a time.
pub struct PolymerField {
    dim: usize,
    kernel: StepKernel,
    beta: f64,
    env: Option<Environment>,
    log_mgf_weight: f64,
    opts: FieldOptions,
    extent: Vec<(i64, i64)>,
    horizon: u64,
    layout: Layout,
    steps: Vec<LayoutStep>,
    slabs: Slabs,
    live: Live,
    next_live: Live,
    has_tail: bool,
    n: u64,
    scale: f64,
    log_total: f64,
    log_j_fold: Option<f64>,
    argmax: Option<usize>,
    checksum: u64,
    prev_scale: f64,
    prev_log_total: f64,
    prev_valid: bool,
}

impl std::fmt::Debug for PolymerField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PolymerField")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("beta", &self.beta)
            .field("log_total", &self.log_total)
            .finish()
    }
}

fn cell_bytes(p: Precision) -> u64 {
    match p {
        Precision::Double => 8,
        Precision::Single => 4,
    }
}

fn layout_for(extent: &[(i64, i64)], horizon: u64) -> Layout {
    let h = horizon as i64;
    let lo: Vec<i64> = extent.iter().map(|&(a, _)| (a * h).min(0)).collect();
    let hi: Vec<i64> = extent.iter().map(|&(_, b)| (b * h).max(0)).collect();
    let shape = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1) as usize).collect();
    Layout::new(lo, shape)
}

/// Bytes needed to hold a field of `horizon` steps.
pub fn window_bytes(kernel: &StepKernel, horizon: u64, precision: Precision) -> u64 {
    let extent = kernel.extent();
    let mut cells = 1u64;
    let mut rows = 1u64;
    for (i, &(a, b)) in extent.iter().enumerate() {
        let len = ((b * horizon as i64).max(0) - (a * horizon as i64).min(0) + 1) as u64;
        cells = cells.saturating_mul(len);
        if i + 1 < extent.len() {
            rows = rows.saturating_mul(len);
        }
    }
    cells
        .saturating_mul(2 * cell_bytes(precision))
        .saturating_add(rows.saturating_mul(16))
}

impl PolymerField {
    /// Field at `n = 0`: `Z_0 = 1` at the origin. With `env = None` or
    /// `beta = 0` no weights are read and `Z_n` is the kernel's own law.
    pub fn new(
        kernel: &StepKernel,
        beta: f64,
        env: Option<Environment>,
        opts: FieldOptions,
    ) -> Result<Self, EngineError> {
        if !beta.is_finite() {
            return Err(EngineError::InvalidArgument(format!("beta = {beta} is not finite")));
        }
        let extent = kernel.extent();
        let dim = kernel.dim();
        let horizon = 0;
        let layout = layout_for(&extent, horizon);
        let table: Vec<(Vec<i64>, f64, f64)> = kernel
            .steps()
            .zip(kernel.probs().iter().zip(kernel.log_probs()))
            .map(|(s, (&p, &lp))| (s.to_vec(), p, lp))
            .collect();
        let steps = slab::layout_steps(&layout, &table);
        let log_mgf_weight = match env {
            Some(e) if beta != 0.0 => e.model.log_mgf(beta),
            _ => 0.0,
        };
        let mut field = PolymerField {
            dim,
            kernel: kernel.clone(),
            beta,
            env,
            log_mgf_weight,
            opts,
            extent,
            horizon,
            layout,
            steps,
            slabs: match opts.precision {
                Precision::Double => Slabs::F64 {
                    cur: vec![1.0],
                    next: vec![0.0],
                },
                Precision::Single => Slabs::F32 {
                    cur: vec![1.0],
                    next: vec![0.0],
                },
            },
            live: Live::new(1, dim - 1),
            next_live: Live::new(1, dim - 1),
            has_tail: false,
            n: 0,
            scale: 0.0,
            log_total: 0.0,
            log_j_fold: None,
            argmax: Some(0),
            checksum: 0,
            prev_scale: 0.0,
            prev_log_total: 0.0,
            prev_valid: false,
        };
        field.live.ranges[0] = (0, 1);
        field.live.empty = false;
        Ok(field)
    }

    /// Field driven by a tilted kernel `q(h)`.
    pub fn with_tilted(
        q: &TiltedKernel,
        beta: f64,
        env: Option<Environment>,
        opts: FieldOptions,
    ) -> Result<Self, EngineError> {
        Self::new(q.kernel(), beta, env, opts)
    }

    /// Size the window for `n_target` steps up front, failing before any
    /// work if it would exceed the memory budget.
    pub fn reserve_for(&mut self, n_target: u64) -> Result<(), EngineError> {
        if n_target > self.horizon {
            self.relayout(n_target)?;
        }
        Ok(())
    }

    fn relayout(&mut self, horizon: u64) -> Result<(), EngineError> {
        let needed = window_bytes(&self.kernel, horizon, self.opts.precision);
        if needed > self.opts.memory_budget {
            return Err(EngineError::WindowOverflow {
                n: horizon,
                needed,
                budget: self.opts.memory_budget,
            });
        }
        let new_layout = layout_for(&self.extent, horizon);
        let heads = self.dim - 1;
        let mut new_live = Live::new(new_layout.n_rows, heads);
        let old = &self.layout;
        let shift: Vec<usize> = (0..self.dim).map(|i| (old.lo[i] - new_layout.lo[i]) as usize).collect();
        let mut moves = Vec::new();
        for (row, &(a, b)) in self.live.ranges.iter().enumerate() {
            if a >= b {
                continue;
            }
            let mut nrow = 0usize;
            let mut rem = row;
            for i in 0..heads {
                let k = rem / old.row_strides[i];
                rem %= old.row_strides[i];
                nrow += (k + shift[i]) * new_layout.row_strides[i];
            }
            let last = shift[self.dim - 1];
            new_live.ranges[nrow] = (a + last as u32, b + last as u32);
            moves.push((
                row * old.row_len + a as usize,
                nrow * new_layout.row_len + a as usize + last,
                (b - a) as usize,
            ));
        }
        for i in 0..heads {
            new_live.box_lo[i] = self.live.box_lo[i] + shift[i];
            new_live.box_hi[i] = self.live.box_hi[i] + shift[i];
        }
        new_live.empty = self.live.empty;
        fn remap<T: Cell>(cur: &[T], cells: usize, moves: &[(usize, usize, usize)]) -> (Vec<T>, Vec<T>) {
            let mut fresh = vec![T::default(); cells];
            for &(from, to, len) in moves {
                fresh[to..to + len].copy_from_slice(&cur[from..from + len]);
            }
            (fresh, vec![T::default(); cells])
        }
        let cells = new_layout.cells();
        self.slabs = match &self.slabs {
            Slabs::F64 { cur, .. } => {
                let (c, n) = remap(cur, cells, &moves);
                Slabs::F64 { cur: c, next: n }
            }
            Slabs::F32 { cur, .. } => {
                let (c, n) = remap(cur, cells, &moves);
                Slabs::F32 { cur: c, next: n }
            }
        };
        if let Some(a) = self.argmax {
            self.argmax = self.remap_index(a, &new_layout);
        }
        self.next_live = Live::new(new_layout.n_rows, heads);
        self.live = new_live;
        let table: Vec<(Vec<i64>, f64, f64)> = self
            .kernel
            .steps()
            .zip(self.kernel.probs().iter().zip(self.kernel.log_probs()))
            .map(|(s, (&p, &lp))| (s.to_vec(), p, lp))
            .collect();
        self.steps = slab::layout_steps(&new_layout, &table);
        self.layout = new_layout;
        self.horizon = horizon;
        self.prev_valid = false;
        Ok(())
    }

    fn remap_index(&self, idx: usize, new_layout: &Layout) -> Option<usize> {
        new_layout.index_of(&self.site_of(idx))
    }

    fn site_of(&self, idx: usize) -> Vec<i64> {
        let lay = &self.layout;
        let row = idx / lay.row_len;
        let col = idx % lay.row_len;
        let mut x = vec![0i64; self.dim];
        let mut rem = row;
        for i in 0..self.dim - 1 {
            x[i] = lay.lo[i] + (rem / lay.row_strides[i]) as i64;
            rem %= lay.row_strides[i];
        }
        x[self.dim - 1] = lay.lo[self.dim - 1] + col as i64;
        x
    }

    /// Advance from time `n` to `n + 1`.
    pub fn step(&mut self) -> Result<(), EngineError> {
        if self.n + 1 > self.horizon {
            let grow = (self.horizon * 2).max(self.n + 1).max(8);
            match self.relayout(grow) {
                Ok(()) => {}
                Err(_) => self.relayout(self.n + 1)?,
            }
        }
        let t = self.n as i64 + 1;
        let ctx = WeightCtx {
            beta: self.beta,
            env: self.env.as_ref(),
            t,
            audit: self.opts.audit,
        };
        let keep = self.opts.support == Support::Exact;
        let res = match &mut self.slabs {
            Slabs::F64 { cur, next } => {
                let r = slab::transfer(
                    &self.layout,
                    &self.steps,
                    cur,
                    &self.live,
                    self.has_tail,
                    next,
                    &mut self.next_live,
                    &ctx,
                    keep,
                );
                std::mem::swap(cur, next);
                r
            }
            Slabs::F32 { cur, next } => {
                let r = slab::transfer(
                    &self.layout,
                    &self.steps,
                    cur,
                    &self.live,
                    self.has_tail,
                    next,
                    &mut self.next_live,
                    &ctx,
                    keep,
                );
                std::mem::swap(cur, next);
                r
            }
        };
        std::mem::swap(&mut self.live, &mut self.next_live);
        self.prev_scale = self.scale;
        self.prev_log_total = self.log_total;
        self.prev_valid = true;
        self.has_tail = res.has_tail;
        self.checksum = self.checksum.wrapping_add(res.checksum);
        self.log_j_fold = Some(self.scale + res.log_pre_max - self.log_total);
        self.log_total = self.scale + res.log_sum;
        self.argmax = res.argmax;
        self.n += 1;

        let bound = match self.opts.precision {
            Precision::Double => <f64 as Cell>::RESCALE_BOUND,
            Precision::Single => <f32 as Cell>::RESCALE_BOUND,
        };
        if res.log_max.is_finite() && res.log_max.abs() > bound {
            let shift = res.log_max;
            self.has_tail = match &mut self.slabs {
                Slabs::F64 { cur, .. } => slab::rescale(&self.layout, cur, &self.live, shift, keep),
                Slabs::F32 { cur, .. } => slab::rescale(&self.layout, cur, &self.live, shift, keep),
            };
            self.scale += shift;
        }
        Ok(())
    }

    /// Step until time `n`.
    pub fn advance_to(&mut self, n: u64) -> Result<(), EngineError> {
        self.reserve_for(n)?;
        while self.n < n {
            self.step()?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self) -> u64 {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kernel(&self) -> &StepKernel {
        &self.kernel
    }

    pub fn environment(&self) -> Option<&Environment> {
        self.env.as_ref()
    }

    /// Lattice box currently allocated, as per-axis `(lo, hi)`.
    pub fn window(&self) -> Vec<(i64, i64)> {
        self.layout
            .lo
            .iter()
            .zip(&self.layout.shape)
            .map(|(&l, &s)| (l, l + s as i64 - 1))
            .collect()
    }

    /// Point-to-level `log Z_n`.
    pub fn log_partition(&self) -> f64 {
        self.log_total
    }

    /// `W_n = Z_n / M(β)^n`.
    pub fn normalized_martingale(&self) -> f64 {
        self.log_normalized_martingale().exp()
    }

    pub fn log_normalized_martingale(&self) -> f64 {
        self.log_total - self.n as f64 * self.log_mgf_weight
    }

    /// `J_n = max_z μ_{n−1}(X_n = z)`: the previous Gibbs measure pushed
    /// one free step forward, before the final weight. `None` at `n = 0`.
    pub fn j_fold(&self) -> Option<f64> {
        self.log_j_fold.map(f64::exp)
    }

    /// Wrapping sum of hashed `(site key, weight)` pairs read so far;
    /// zero unless the field was built with `audit`.
    pub fn weight_checksum(&self) -> u64 {
        self.checksum
    }

    fn cell(&self, idx: usize) -> f64 {
        match &self.slabs {
            Slabs::F64 { cur, .. } => cur[idx],
            Slabs::F32 { cur, .. } => cur[idx] as f64,
        }
    }

    fn is_live(&self, idx: usize) -> bool {
        let row = idx / self.layout.row_len;
        let col = (idx % self.layout.row_len) as u32;
        let (a, b) = self.live.ranges[row];
        col >= a && col < b
    }

    /// Point-to-point `log Z_n(0, x)`; `−∞` off the reachable set.
    pub fn log_z_at(&self, x: &[i64]) -> Result<f64, EngineError> {
        if x.len() != self.dim {
            return Err(EngineError::DimensionMismatch(x.to_vec()));
        }
        Ok(match self.layout.index_of(x) {
            Some(i) if self.is_live(i) => {
                let v = self.cell(i);
                if v == f64::NEG_INFINITY {
                    v
                } else {
                    self.scale + slab::cell_log(v)
                }
            }
            _ => f64::NEG_INFINITY,
        })
    }

    /// Visit every finite site as `(x, log Z_n(0, x))` in lexicographic order.
    pub fn for_each_site(&self, mut f: impl FnMut(&[i64], f64)) {
        let lay = &self.layout;
        let mut x = vec![0i64; self.dim];
        for (row, &(a, b)) in self.live.ranges.iter().enumerate() {
            if a >= b {
                continue;
            }
            let mut rem = row;
            for i in 0..self.dim - 1 {
                x[i] = lay.lo[i] + (rem / lay.row_strides[i]) as i64;
                rem %= lay.row_strides[i];
            }
            let base = row * lay.row_len;
            for j in a..b {
                let v = self.cell(base + j as usize);
                if v == f64::NEG_INFINITY {
                    continue;
                }
                x[self.dim - 1] = lay.lo[self.dim - 1] + j as i64;
                f(&x, self.scale + slab::cell_log(v));
            }
        }
    }

    /// Sites and Gibbs probabilities `μ_n(x)`, lexicographic order.
    pub fn histogram(&self) -> Vec<(Vec<i64>, f64)> {
        let mut out = Vec::new();
        let lt = self.log_total;
        self.for_each_site(|x, l| out.push((x.to_vec(), (l - lt).exp())));
        out
    }

    fn linear_overlap(&self, other: &Live, other_slab: Option<bool>) -> f64 {
        let lay = &self.layout;
        let mut total = 0.0;
        for (row, (&(a, b), &(c, e))) in self.live.ranges.iter().zip(&other.ranges).enumerate() {
            let (lo, hi) = (a.max(c), b.min(e));
            let base = row * lay.row_len;
            for j in lo..hi {
                let i = base + j as usize;
                let (u, v) = match (&self.slabs, other_slab) {
                    (Slabs::F64 { cur, .. }, None) => (cur[i], cur[i]),
                    (Slabs::F64 { cur, next }, Some(_)) => (cur[i], next[i]),
                    (Slabs::F32 { cur, .. }, None) => (cur[i] as f64, cur[i] as f64),
                    (Slabs::F32 { cur, next }, Some(_)) => (cur[i] as f64, next[i] as f64),
                };
                if u > 0.0 && v > 0.0 {
                    total += u * v;
                }
            }
        }
        total
    }

    /// `Σ_x μ_n(x)²`, the probability two independent endpoints meet.
    /// Log-encoded cells are negligible here and skipped.
    pub fn self_overlap(&self) -> f64 {
        let s = self.linear_overlap(&self.live, None);
        s * (2.0 * (self.scale - self.log_total)).exp()
    }

    /// `Σ_x μ_n(x) μ_{n−1}(x)`; `None` if the previous slab is no longer held
    /// (at `n = 0` or right after the window was re-laid out).
    pub fn overlap_with_previous(&self) -> Option<f64> {
        if !self.prev_valid {
            return None;
        }
        let s = self.linear_overlap(&self.next_live, Some(true));
        Some(s * (self.scale - self.log_total + self.prev_scale - self.prev_log_total).exp())
    }

    /// Gibbs endpoint law `μ_n` with its moments.
    pub fn endpoint(&self) -> EndpointMeasure {
        let d = self.dim;
        let lay = &self.layout;
        let mut mass = 0.0;
        let mut first = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        let mut norm1 = 0.0;
        let mut norm2 = 0.0;
        let mut x = vec![0i64; d];
        let mut xf = vec![0.0; d];
        // Mass is accumulated relative to the slab scale; log-encoded cells
        // lie below 1e-300 of the maximum and are left out of the moments.
        for (row, &(a, b)) in self.live.ranges.iter().enumerate() {
            if a >= b {
                continue;
            }
            let mut rem = row;
            for i in 0..d - 1 {
                x[i] = lay.lo[i] + (rem / lay.row_strides[i]) as i64;
                rem %= lay.row_strides[i];
            }
            let base = row * lay.row_len;
            for j in a..b {
                let v = self.cell(base + j as usize);
                if !(v > 0.0) {
                    continue;
                }
                x[d - 1] = lay.lo[d - 1] + j as i64;
                let mut sq = 0.0;
                for i in 0..d {
                    xf[i] = x[i] as f64;
                    sq += xf[i] * xf[i];
                }
                mass += v;
                norm1 += v * sq.sqrt();
                norm2 += v * sq;
                for i in 0..d {
                    first[i] += v * xf[i];
                    for k in i..d {
                        second[i * d + k] += v * xf[i] * xf[k];
                    }
                }
            }
        }
        for i in 0..d {
            for k in 0..i {
                second[i * d + k] = second[k * d + i];
            }
        }
        let mean: Vec<f64> = first.iter().map(|v| v / mass).collect();
        let second: Vec<f64> = second.iter().map(|v| v / mass).collect();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                cov[i * d + k] = second[i * d + k] - mean[i] * mean[k];
            }
        }
        let (max_prob, argmax) = match self.argmax {
            Some(idx) => (
                (self.scale + slab::cell_log(self.cell(idx)) - self.log_total).exp(),
                self.site_of(idx),
            ),
            None => (0.0, vec![0; d]),
        };
        EndpointMeasure {
            n: self.n,
            mass_error: (self.scale + mass.ln() - self.log_total).exp() - 1.0,
            mean,
            second_moment: second,
            covariance: cov,
            mean_norm: norm1 / mass,
            mean_sq_norm: norm2 / mass,
            max_prob,
            argmax,
            j_fold: self.j_fold(),
        }
    }

    pub fn record(&self, sample: u64) -> SampleRecord {
        let e = self.endpoint();
        SampleRecord {
            sample,
            n: self.n,
            log_z_pl: self.log_total,
            w_n: self.normalized_martingale(),
            mean: e.mean,
            cov: e.covariance,
            j_n: e.j_fold,
            a_n: e.argmax,
        }
    }
}

/// Summary of the Gibbs endpoint law `μ_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointMeasure {
    pub n: u64,
    /// `Σμ − 1` as seen by the moment pass.
    pub mass_error: f64,
    pub mean: Vec<f64>,
    /// Row-major `⟨X_i X_j⟩`.
    pub second_moment: Vec<f64>,
    pub covariance: Vec<f64>,
    /// `⟨|X|⟩` with the Euclidean norm.
    pub mean_norm: f64,
    pub mean_sq_norm: f64,
    /// `max_x μ_n(x)` and its lexicographically smallest maximizer `A_n`.
    pub max_prob: f64,
    pub argmax: Vec<i64>,
    pub j_fold: Option<f64>,
}

/// One line of the per-sample record stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: u64,
    pub n: u64,
    #[serde(rename = "logZ_pl")]
    pub log_z_pl: f64,
    #[serde(rename = "W_n")]
    pub w_n: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    #[serde(rename = "J_n")]
    pub j_n: Option<f64>,
    #[serde(rename = "A_n")]
    pub a_n: Vec<i64>,
}

/// Cesàro average `(1/n) Σ_t J_t`.
pub fn localization_average(j_series: &[f64]) -> Result<f64, EngineError> {
    if j_series.is_empty() {
        return Err(EngineError::EmptySeries);
    }
    Ok(crate::stats::neumaier_sum(j_series.iter().copied()) / j_series.len() as f64)
}

pub mod clt;
pub use clt::{endpoint_clt_check, CltReport};
