//! Dense storage of `log Z_n(x)` over a fixed lattice box and the transfer
//! step between two such slabs.
//!
//! Cells hold `Z_n(x) / e^m` for a slab-wide scale `m`. A positive cell is a
//! linear value; a finite negative cell at or below the storage floor is the
//! logarithm of a value too small to keep linearly; `−∞` marks a site that
//! is unreachable (or was dropped when only representable mass is kept).

use crate::disorder::Environment;

/// Numeric type of a slab cell.
pub trait Cell: Copy + Send + Sync + Default + 'static {
    /// Relative values below `e^{LOG_FLOOR}` are stored as logarithms.
    const LOG_FLOOR: f64;
    /// Rescale once the slab maximum drifts beyond `e^{±RESCALE_BOUND}`.
    const RESCALE_BOUND: f64;
    fn load(self) -> f64;
    fn store(v: f64) -> Self;
}

impl Cell for f64 {
    const LOG_FLOOR: f64 = -700.0;
    const RESCALE_BOUND: f64 = 200.0;
    #[inline(always)]
    fn load(self) -> f64 {
        self
    }
    #[inline(always)]
    fn store(v: f64) -> Self {
        v
    }
}

impl Cell for f32 {
    const LOG_FLOOR: f64 = -80.0;
    const RESCALE_BOUND: f64 = 20.0;
    #[inline(always)]
    fn load(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn store(v: f64) -> Self {
        v as f32
    }
}

/// Linear accumulations at or below `e^{LOG_FLOOR + 50}` fall back to an
/// exact log-sum-exp, so log-encoded neighbours are never lost.
#[inline(always)]
fn acc_floor<T: Cell>() -> f64 {
    (T::LOG_FLOOR + 50.0).exp()
}

#[inline(always)]
fn encode<T: Cell>(log_rel: f64, keep_tails: bool) -> T {
    if log_rel > T::LOG_FLOOR {
        T::store(log_rel.exp())
    } else if keep_tails {
        T::store(log_rel)
    } else {
        T::store(f64::NEG_INFINITY)
    }
}

#[inline(always)]
fn encode_linear<T: Cell>(v: f64, keep_tails: bool) -> T {
    if v >= T::LOG_FLOOR.exp() {
        T::store(v)
    } else if v > 0.0 && keep_tails {
        T::store(v.ln())
    } else {
        T::store(f64::NEG_INFINITY)
    }
}

/// Log of the value a cell encodes, relative to the slab scale.
#[inline(always)]
pub fn cell_log(v: f64) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        v
    }
}

/// The fixed lattice box `lo ≤ x ≤ lo + shape − 1`, stored as rows along the
/// last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub dim: usize,
    pub lo: Vec<i64>,
    pub shape: Vec<usize>,
    pub row_len: usize,
    pub n_rows: usize,
    /// Row-index strides of the leading `dim − 1` axes.
    pub row_strides: Vec<usize>,
}

impl Layout {
    pub fn new(lo: Vec<i64>, shape: Vec<usize>) -> Self {
        let dim = lo.len();
        let row_len = shape[dim - 1];
        let mut row_strides = vec![0usize; dim - 1];
        let mut acc = 1usize;
        for i in (0..dim - 1).rev() {
            row_strides[i] = acc;
            acc *= shape[i];
        }
        Layout {
            dim,
            lo,
            shape,
            row_len,
            n_rows: acc,
            row_strides,
        }
    }

    pub fn cells(&self) -> usize {
        self.n_rows * self.row_len
    }

    /// Flat index of `x`, if it lies in the box.
    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        let mut row = 0usize;
        for i in 0..self.dim {
            let k = x[i] - self.lo[i];
            if k < 0 || k as usize >= self.shape[i] {
                return None;
            }
            if i + 1 < self.dim {
                row += k as usize * self.row_strides[i];
            }
        }
        Some(row * self.row_len + (x[self.dim - 1] - self.lo[self.dim - 1]) as usize)
    }
}

/// Half-open live column range `[start, end)` of each row, plus the
/// inclusive bounding box of live rows in head-axis index units.
#[derive(Debug, Clone)]
pub struct Live {
    pub ranges: Vec<(u32, u32)>,
    pub box_lo: Vec<usize>,
    pub box_hi: Vec<usize>,
    pub empty: bool,
}

impl Live {
    pub fn new(n_rows: usize, heads: usize) -> Self {
        Live {
            ranges: vec![(0, 0); n_rows],
            box_lo: vec![0; heads],
            box_hi: vec![0; heads],
            empty: true,
        }
    }
}

/// A kernel step expressed in layout units.
#[derive(Debug, Clone)]
pub struct LayoutStep {
    pub head: Vec<i64>,
    pub row_delta: isize,
    pub col: isize,
    pub prob: f64,
    pub log_prob: f64,
}

pub fn layout_steps(layout: &Layout, steps: &[(Vec<i64>, f64, f64)]) -> Vec<LayoutStep> {
    let d = layout.dim;
    steps
        .iter()
        .map(|(s, p, lp)| {
            let head = s[..d - 1].to_vec();
            let row_delta = head
                .iter()
                .zip(&layout.row_strides)
                .map(|(&h, &st)| h as isize * st as isize)
                .sum();
            LayoutStep {
                head,
                row_delta,
                col: s[d - 1] as isize,
                prob: *p,
                log_prob: *lp,
            }
        })
        .collect()
}

/// Weight source for one transfer step into time `t`.
pub struct WeightCtx<'a> {
    pub beta: f64,
    pub env: Option<&'a Environment>,
    pub t: i64,
    pub audit: bool,
}

#[derive(Debug, Clone, Default)]
pub struct StepResult {
    /// `ln Σ_x Z_n(x) / e^m` over linearly stored cells.
    pub log_sum: f64,
    /// Log of the largest pre-weight accumulation, `max_y Σ_s q(s) Z_{n−1}(y − s) / e^m`.
    pub log_pre_max: f64,
    /// Log of the largest cell and its flat index.
    pub log_max: f64,
    pub argmax: Option<usize>,
    pub has_tail: bool,
    pub checksum: u64,
}

#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One transfer step `Z_n(y) = e^{βω(n,y)} Σ_s q(s) Z_{n−1}(y − s)`.
///
/// Both slabs share `layout`; the caller guarantees the destination box is
/// large enough to hold every reachable site.
#[allow(clippy::too_many_arguments)]
pub fn transfer<T: Cell>(
    layout: &Layout,
    steps: &[LayoutStep],
    src: &[T],
    src_live: &Live,
    src_has_tail: bool,
    dst: &mut [T],
    dst_live: &mut Live,
    weights: &WeightCtx<'_>,
    keep_tails: bool,
) -> StepResult {
    let d = layout.dim;
    let heads = d - 1;
    let row_len = layout.row_len as isize;
    let floor = acc_floor::<T>();
    let mut out = StepResult {
        log_sum: f64::NEG_INFINITY,
        log_pre_max: f64::NEG_INFINITY,
        log_max: f64::NEG_INFINITY,
        argmax: None,
        has_tail: false,
        checksum: 0,
    };
    for r in dst_live.ranges.iter_mut() {
        *r = (0, 0);
    }
    dst_live.empty = true;
    if src_live.empty {
        return out;
    }

    // Destination row box: source box grown by the step extents.
    let mut box_lo = vec![0usize; heads];
    let mut box_hi = vec![0usize; heads];
    for i in 0..heads {
        let smin = steps.iter().map(|s| s.head[i]).min().unwrap();
        let smax = steps.iter().map(|s| s.head[i]).max().unwrap();
        box_lo[i] = (src_live.box_lo[i] as i64 + smin).max(0) as usize;
        box_hi[i] = ((src_live.box_hi[i] as i64 + smax).max(0) as usize).min(layout.shape[i] - 1);
    }

    let mut acc = vec![0.0f64; layout.row_len];
    let mut tail = if src_has_tail {
        vec![f64::NEG_INFINITY; layout.row_len]
    } else {
        Vec::new()
    };
    let mut head_idx = box_lo.clone();
    let mut head_coord = vec![0i64; heads];
    let mut sum = 0.0f64;
    let mut max_lin = 0.0f64;
    let mut pre_max = 0.0f64;
    let mut tail_pre_max = f64::NEG_INFINITY;
    let mut new_lo = vec![usize::MAX; heads];
    let mut new_hi = vec![0usize; heads];
    let lo_last = layout.lo[d - 1];
    let time_key = weights.env.map(|e| e.time_key(weights.t));
    let use_weights = weights.beta != 0.0 && weights.env.is_some();
    let mut row_ok = vec![false; steps.len()];

    loop {
        let row: usize = head_idx.iter().zip(&layout.row_strides).map(|(&k, &st)| k * st).sum();

        // Live column range of this destination row.
        let mut start = isize::MAX;
        let mut end = isize::MIN;
        for (ok, s) in row_ok.iter_mut().zip(steps) {
            *ok = source_row_ok(&head_idx, &s.head, src_live);
            if !*ok {
                continue;
            }
            let srow = (row as isize - s.row_delta) as usize;
            let (a, b) = src_live.ranges[srow];
            if a < b {
                start = start.min(a as isize + s.col);
                end = end.max(b as isize + s.col);
            }
        }
        let start = start.max(0);
        let end = end.min(row_len);
        if start < end {
            let (start, end) = (start as usize, end as usize);
            let width = end - start;
            acc[..width].iter_mut().for_each(|v| *v = 0.0);
            if src_has_tail {
                tail[..width].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
            }
            for (_, s) in row_ok.iter().zip(steps).filter(|(ok, _)| **ok) {
                let srow = (row as isize - s.row_delta) as usize;
                let (a, b) = src_live.ranges[srow];
                if a >= b {
                    continue;
                }
                // Destination columns j with source column j − col in [a, b).
                let j0 = (a as isize + s.col).max(start as isize) as usize;
                let j1 = (b as isize + s.col).min(end as isize) as usize;
                if j0 >= j1 {
                    continue;
                }
                let sbase = srow * layout.row_len;
                let s0 = (j0 as isize - s.col) as usize;
                let src_row = &src[sbase + s0..sbase + s0 + (j1 - j0)];
                let acc_row = &mut acc[j0 - start..j1 - start];
                let q = s.prob;
                for (o, v) in acc_row.iter_mut().zip(src_row) {
                    let v = v.load();
                    *o += if v > 0.0 { q * v } else { 0.0 };
                }
                if src_has_tail {
                    let lq = s.log_prob;
                    for (o, v) in tail[j0 - start..j1 - start].iter_mut().zip(src_row) {
                        let v = v.load();
                        if v < 0.0 {
                            *o = o.max(lq + v);
                        }
                    }
                }
            }

            for i in 0..heads {
                head_coord[i] = layout.lo[i] + head_idx[i] as i64;
            }
            let row_key = time_key.map(|k| head_coord.iter().fold(k, |k, &c| Environment::extend_key(k, c)));
            let base = row * layout.row_len;
            let mut first = usize::MAX;
            let mut last = 0usize;
            let dst_row = &mut dst[base + start..base + end];
            let tail_row: &[f64] = if src_has_tail { &tail[..width] } else { &[] };
            let env = weights.env;
            for (jj, (cell_out, &a)) in dst_row.iter_mut().zip(&acc[..width]).enumerate() {
                let has_tail_in = src_has_tail && tail_row[jj] > f64::NEG_INFINITY;
                if a <= 0.0 && !has_tail_in {
                    *cell_out = T::store(f64::NEG_INFINITY);
                    continue;
                }
                let j = start + jj;
                let bw = match (use_weights, env, row_key) {
                    (true, Some(env), Some(rk)) => {
                        let key = Environment::extend_key(rk, lo_last + j as i64);
                        let w = env.weight_at_key(key);
                        if weights.audit {
                            out.checksum = out.checksum.wrapping_add(mix(key ^ w.to_bits()));
                        }
                        weights.beta * w
                    }
                    _ => 0.0,
                };
                let cell: T = if a > floor && bw < 600.0 {
                    if a > pre_max {
                        pre_max = a;
                    }
                    encode_linear(if bw == 0.0 { a } else { a * bw.exp() }, keep_tails)
                } else {
                    let pre = exact_log_in(layout, steps, src, src_live, row, &head_idx, j);
                    if pre > tail_pre_max {
                        tail_pre_max = pre;
                    }
                    encode(pre + bw, keep_tails)
                };
                *cell_out = cell;
                let v = cell.load();
                if v > 0.0 {
                    sum += v;
                    if v > max_lin {
                        max_lin = v;
                        out.argmax = Some(base + j);
                    }
                } else if v > f64::NEG_INFINITY {
                    out.has_tail = true;
                    if max_lin == 0.0 && v > out.log_max {
                        out.log_max = v;
                        out.argmax = Some(base + j);
                    }
                } else {
                    continue;
                }
                first = first.min(j);
                last = j;
            }
            if first <= last {
                dst_live.ranges[row] = (first as u32, last as u32 + 1);
                dst_live.empty = false;
                for i in 0..heads {
                    new_lo[i] = new_lo[i].min(head_idx[i]);
                    new_hi[i] = new_hi[i].max(head_idx[i]);
                }
            }
        }

        // Advance the head odometer, last head axis fastest.
        let mut done = true;
        let mut i = heads;
        while i > 0 {
            i -= 1;
            if head_idx[i] < box_hi[i] {
                head_idx[i] += 1;
                done = false;
                break;
            }
            head_idx[i] = box_lo[i];
        }
        if done {
            break;
        }
    }

    dst_live.box_lo = new_lo;
    dst_live.box_hi = new_hi;
    if max_lin > 0.0 {
        out.log_max = max_lin.ln();
        out.log_sum = sum.ln();
    } else if out.log_max > f64::NEG_INFINITY {
        out.log_sum = out.log_max;
    }
    out.log_pre_max = if pre_max > 0.0 {
        pre_max.ln().max(tail_pre_max)
    } else {
        tail_pre_max
    };
    out
}

#[inline(always)]
fn source_row_ok(head_idx: &[usize], step_head: &[i64], live: &Live) -> bool {
    for i in 0..head_idx.len() {
        let k = head_idx[i] as i64 - step_head[i];
        if k < live.box_lo[i] as i64 || k > live.box_hi[i] as i64 {
            return false;
        }
    }
    true
}

/// Exact `ln Σ_s q(s) Z_{n−1}(y − s) / e^m` for one destination cell,
/// mixing linear and log-encoded neighbours.
fn exact_log_in<T: Cell>(
    layout: &Layout,
    steps: &[LayoutStep],
    src: &[T],
    src_live: &Live,
    row: usize,
    head_idx: &[usize],
    j: usize,
) -> f64 {
    let mut m = f64::NEG_INFINITY;
    let mut total = 0.0f64;
    for s in steps {
        if !source_row_ok(head_idx, &s.head, src_live) {
            continue;
        }
        let srow = (row as isize - s.row_delta) as usize;
        let (a, b) = src_live.ranges[srow];
        let col = j as isize - s.col;
        if col < a as isize || col >= b as isize {
            continue;
        }
        let v = src[srow * layout.row_len + col as usize].load();
        if v > f64::NEG_INFINITY {
            let t = s.log_prob + cell_log(v);
            if t > m {
                total = total * (m - t).exp() + 1.0;
                m = t;
            } else {
                total += (t - m).exp();
            }
        }
    }
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + total.ln()
    }
}

/// Multiply every live cell by `e^{-shift}`, re-encoding across the floor.
pub fn rescale<T: Cell>(layout: &Layout, data: &mut [T], live: &Live, shift: f64, keep_tails: bool) -> bool {
    let factor = (-shift).exp();
    let mut has_tail = false;
    for (row, &(a, b)) in live.ranges.iter().enumerate() {
        let base = row * layout.row_len;
        for c in &mut data[base + a as usize..base + b as usize] {
            let v = c.load();
            let nv: T = if v > 0.0 {
                encode_linear(v * factor, keep_tails)
            } else if v > f64::NEG_INFINITY {
                encode(v - shift, keep_tails)
            } else {
                continue;
            };
            if nv.load() < 0.0 && nv.load() > f64::NEG_INFINITY {
                has_tail = true;
            }
            *c = nv;
        }
    }
    has_tail
}
