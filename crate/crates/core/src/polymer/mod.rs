//! Exact transfer-matrix evaluation of the polymer partition function.
//!
//! `W_{n,x} = E[exp(Σ_{t<=n} (βω_{t,X_t} - λ(β))); X_n = x]` obeys
//! `W_{n+1,x} = e^{βω_{n+1,x} - λ} · (2d)^{-1} Σ_{|y-x|_1 = 1} W_{n,y}`
//! and `W_n = Σ_x W_{n,x}`. Weights are stored as mantissas in `[0, 1]`
//! with a carried log-scale, renormalised every step.

mod enumeration;
mod second_moment;

pub use enumeration::{enumerate_paths, PathEnumeration};
pub use second_moment::{collision_log_probabilities, log_second_moment_from_gamma, second_moment_exact};

use crate::cone::{l1, Cone, Site, MAX_DIM};
use crate::env::{EnvField, EnvSampler, EnvironmentSpec, Family, DEFAULT_SITE_BUDGET};
use crate::error::{LabError, Result};
use crate::special::log_sum_exp;
use serde::Serialize;

/// A positive number `exp(log_scale) · mantissa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogValue {
    pub log_scale: f64,
    pub mantissa: f64,
}

impl LogValue {
    pub const ONE: LogValue = LogValue {
        log_scale: 0.0,
        mantissa: 1.0,
    };

    pub fn from_ln(ln: f64) -> Self {
        Self {
            log_scale: ln,
            mantissa: 1.0,
        }
    }

    pub fn ln(&self) -> f64 {
        self.log_scale + self.mantissa.ln()
    }

    pub fn value(&self) -> f64 {
        self.mantissa * self.log_scale.exp()
    }
}

/// Pinned partition function `(W_{n,x})_x` over the time-`n` cone.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionState {
    time: usize,
    dim: usize,
    log_scale: f64,
    weights: Vec<f64>,
}

fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl PartitionState {
    /// `W_{0,x} = 1{x = 0}`.
    pub fn initial(dim: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(LabError::UnsupportedDimension(dim));
        }
        Ok(Self {
            time: 0,
            dim,
            log_scale: 0.0,
            weights: vec![1.0],
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Mantissas in cone rank order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ln W_{n,x}` for the site of rank `i`.
    pub fn log_pinned(&self, i: usize) -> f64 {
        self.log_scale + self.weights[i].ln()
    }

    /// `W_n` as `(log_scale, Σ mantissas)`.
    pub fn total(&self) -> LogValue {
        LogValue {
            log_scale: self.log_scale,
            mantissa: neumaier_sum(&self.weights),
        }
    }

    /// Endpoint law of the polymer measure, `W_{n,x} / W_n`.
    pub fn endpoint_measure(&self) -> Result<Vec<f64>> {
        let s = neumaier_sum(&self.weights);
        if !(s > 0.0) {
            return Err(LabError::DegenerateState);
        }
        Ok(self.weights.iter().map(|w| w / s).collect())
    }

    /// One transfer step with the environment row of time `n+1`.
    pub fn evolve(&self, cone: &Cone, env_row: &[f64], beta: f64, lambda: f64) -> Result<Self> {
        let mut next = self.clone();
        let mut buf = Vec::new();
        next.advance(cone, env_row, beta, lambda, &mut buf)?;
        Ok(next)
    }

    /// In-place version of [`evolve`](Self::evolve); `buf` is scratch space.
    pub fn advance(&mut self, cone: &Cone, env_row: &[f64], beta: f64, lambda: f64, buf: &mut Vec<f64>) -> Result<()> {
        let n = self.time;
        if cone.dim() != self.dim || cone.max_time() < n + 1 {
            return Err(LabError::OutOfRange(format!(
                "cone (dim {}, max time {}) cannot hold time {}",
                cone.dim(),
                cone.max_time(),
                n + 1
            )));
        }
        let expected = cone.site_count(n + 1);
        if env_row.len() != expected {
            return Err(LabError::ShapeMismatch {
                expected,
                found: env_row.len(),
            });
        }
        if self.weights.len() != cone.site_count(n) {
            return Err(LabError::ShapeMismatch {
                expected: cone.site_count(n),
                found: self.weights.len(),
            });
        }
        let plan = StepPlan::new(cone, n);
        self.apply(&plan, env_row, beta, lambda, buf, None)
    }

    /// Transfer step along a precomputed gather plan for times `n -> n+1`.
    pub fn advance_planned(&mut self, plan: &StepPlan, env_row: &[f64], beta: f64, lambda: f64, buf: &mut Vec<f64>) -> Result<()> {
        self.advance_with_atoms(plan, env_row, beta, lambda, buf, None)
    }

    fn advance_with_atoms(
        &mut self,
        plan: &StepPlan,
        env_row: &[f64],
        beta: f64,
        lambda: f64,
        buf: &mut Vec<f64>,
        atoms: Option<[f64; 2]>,
    ) -> Result<()> {
        if plan.from != self.time || plan.dim != self.dim {
            return Err(LabError::OutOfRange(format!(
                "plan for time {} cannot advance time {}",
                plan.from, self.time
            )));
        }
        if env_row.len() != plan.sites {
            return Err(LabError::ShapeMismatch {
                expected: plan.sites,
                found: env_row.len(),
            });
        }
        if self.weights.len() != plan.source_sites {
            return Err(LabError::ShapeMismatch {
                expected: plan.source_sites,
                found: self.weights.len(),
            });
        }
        self.apply(plan, env_row, beta, lambda, buf, atoms)
    }

    // `atoms`: the row only takes these two values, so the site factors can
    // be looked up instead of recomputed (same bits either way).
    fn apply(
        &mut self,
        plan: &StepPlan,
        env_row: &[f64],
        beta: f64,
        lambda: f64,
        buf: &mut Vec<f64>,
        atoms: Option<[f64; 2]>,
    ) -> Result<()> {
        let d = self.dim;
        let top = env_row.iter().fold(f64::NEG_INFINITY, |m, &w| if w > m { w } else { m });
        if let Some(idx) = &plan.gather {
            // trailing zero stands in for absent neighbours
            self.weights.push(0.0);
            let old = &self.weights;
            let max = match atoms {
                Some([a, b]) => {
                    let (fa, fb) = ((beta * (a - top)).exp(), (beta * (b - top)).exp());
                    let factor = |w: f64| if w == a { fa } else { fb };
                    gather_dim(d, idx, old, env_row, factor, buf)
                }
                None => gather_dim(d, idx, old, env_row, |w| (beta * (w - top)).exp(), buf),
            };
            self.weights.pop();
            return self.finish(max, top, beta, lambda, buf);
        }
        buf.clear();
        buf.resize(plan.sites, 0.0);
        let old = &self.weights;
        for seg in &plan.segments {
            let (dst, src, len) = (seg.dst as usize, seg.src as usize, seg.len as usize);
            let out = &mut buf[dst..dst + len];
            let src = &old[src..src + len];
            for m in 0..len {
                out[m] += src[m];
            }
        }
        let mut max = 0.0f64;
        for (b, &w) in buf.iter_mut().zip(env_row) {
            *b *= (beta * (w - top)).exp();
            if *b > max {
                max = *b;
            }
        }
        self.finish(max, top, beta, lambda, buf)
    }

    // `buf` holds the new weights up to the factor `exp(βtop - λ) / 2d`
    fn finish(&mut self, max: f64, top: f64, beta: f64, lambda: f64, buf: &mut Vec<f64>) -> Result<()> {
        if !(max > 0.0) {
            return Err(LabError::DegenerateState);
        }
        // divide rather than multiply by 1/max so the largest entry is exactly 1
        buf.iter_mut().for_each(|b| *b /= max);
        let shift = beta * top - lambda - ((2 * self.dim) as f64).ln();
        std::mem::swap(&mut self.weights, buf);
        self.log_scale += shift + max.ln();
        self.time += 1;
        Ok(())
    }
}

// Same summation order as the segment loop, so both paths agree bitwise.
#[inline(always)]
fn gather<const K: usize, F: Fn(f64) -> f64>(idx: &[u32], old: &[f64], env_row: &[f64], factor: F, out: &mut Vec<f64>) -> f64 {
    out.clear();
    out.resize(env_row.len(), 0.0);
    let mut max = 0.0f64;
    for ((o, nb), &w) in out.iter_mut().zip(idx.chunks_exact(K)).zip(env_row) {
        let nb: &[u32; K] = nb.try_into().expect("chunk of K");
        let mut sum = 0.0;
        for &j in nb {
            sum += old[j as usize];
        }
        let v = sum * factor(w);
        max = if v > max { v } else { max };
        *o = v;
    }
    max
}

#[inline(always)]
fn gather_dim<F: Fn(f64) -> f64>(d: usize, idx: &[u32], old: &[f64], env_row: &[f64], factor: F, out: &mut Vec<f64>) -> f64 {
    match d {
        1 => gather::<2, F>(idx, old, env_row, factor, out),
        2 => gather::<4, F>(idx, old, env_row, factor, out),
        3 => gather::<6, F>(idx, old, env_row, factor, out),
        _ => gather::<8, F>(idx, old, env_row, factor, out),
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    dst: u32,
    src: u32,
    len: u32,
}

/// Gather pattern of one transfer step: every time-`n+1` row receives
/// shifted copies of the time-`n` rows of its neighbours, which only
/// depends on the cone.
#[derive(Debug, Clone)]
pub struct StepPlan {
    dim: usize,
    from: usize,
    source_sites: usize,
    sites: usize,
    segments: Vec<Segment>,
    // per target site, the 2d source indices in segment order
    gather: Option<Vec<u32>>,
}

impl StepPlan {
    pub fn new(cone: &Cone, n: usize) -> Self {
        let d = cone.dim();
        let last = d - 1;
        let index = RowIndex::new(d, n);
        let mut table = vec![usize::MAX; index.size];
        cone.for_each_row(n, |row| table[index.code(&row.prefix)] = row.offset);
        // offset and half of the time-n row with this prefix, if any
        let lookup = |q: &Site| -> Option<(usize, usize)> {
            let used = l1(q, last) as usize;
            if used > n {
                return None;
            }
            Some((table[index.code(q)], n - used))
        };
        let mut segments = Vec::new();
        let mut push = |dst: usize, src: usize, len: usize| {
            segments.push(Segment {
                dst: dst as u32,
                src: src as u32,
                len: len as u32,
            })
        };
        cone.for_each_row(n + 1, |row| {
            let r = row.half as usize;
            if r >= 1 {
                let (s, h) = lookup(&row.prefix).expect("own row");
                push(row.offset, s, h + 1);
                push(row.offset + 1, s, h + 1);
            }
            let mut q: Site = row.prefix;
            for i in 0..last {
                for step in [-1, 1] {
                    q[i] = row.prefix[i] + step;
                    if let Some((s, h)) = lookup(&q) {
                        push(row.offset + (r - h) / 2, s, h + 1);
                    }
                }
                q[i] = row.prefix[i];
            }
        });
        Self {
            dim: d,
            from: n,
            source_sites: cone.site_count(n),
            sites: cone.site_count(n + 1),
            segments,
            gather: None,
        }
    }

    /// Adds the per-site neighbour table used by the fast path.
    pub fn with_neighbour_table(mut self) -> Self {
        self.build_gather();
        self
    }

    fn build_gather(&mut self) {
        let k = 2 * self.dim;
        let absent = self.source_sites as u32;
        let mut idx = vec![absent; self.sites * k];
        let mut filled = vec![0u8; self.sites];
        for seg in &self.segments {
            for m in 0..seg.len {
                let site = (seg.dst + m) as usize;
                idx[site * k + filled[site] as usize] = seg.src + m;
                filled[site] += 1;
            }
        }
        self.gather = Some(idx);
    }

    fn footprint(&self) -> usize {
        self.segments.len()
    }
}

// Dense code of a row prefix in `[-n, n]^(d-1)`.
struct RowIndex {
    dim: usize,
    n: i32,
    size: usize,
}

impl RowIndex {
    fn new(dim: usize, n: usize) -> Self {
        let size = (2 * n + 1).pow(dim as u32 - 1);
        Self { dim, n: n as i32, size }
    }

    #[inline]
    fn code(&self, prefix: &Site) -> usize {
        let width = (2 * self.n + 1) as usize;
        prefix[..self.dim - 1]
            .iter()
            .fold(0usize, |acc, &c| acc * width + (c + self.n) as usize)
    }
}

/// `μ_{ω,n}(X_{n+1} = ·)`: the time-`n` endpoint law pushed through one
/// simple-random-walk step, as a probability vector on the time-`n+1` cone.
pub fn one_step_marginal(cone: &Cone, state: &PartitionState) -> Result<Vec<f64>> {
    let alpha = state.endpoint_measure()?;
    let n = state.time();
    let d = state.dim();
    let mut out = vec![0.0; cone.site_count(n + 1)];
    let p = 1.0 / (2 * d) as f64;
    cone.for_each_site(n, |i, y| {
        let mut x = *y;
        for axis in 0..d {
            for step in [-1, 1] {
                x[axis] = y[axis] + step;
                let j = cone.rank(n + 1, &x).expect("neighbour lies in the next cone");
                out[j] += p * alpha[i];
            }
            x[axis] = y[axis];
        }
    });
    Ok(out)
}

/// Environment and temperature of a polymer run.
#[derive(Debug, Clone)]
pub struct Polymer<'a> {
    spec: &'a EnvironmentSpec,
    beta: f64,
    lambda: f64,
    cone: Cone,
    // gather plans for steps 0->1, 1->2, ... when they fit PLAN_BUDGET
    plans: Option<Vec<StepPlan>>,
    atoms: Option<[f64; 2]>,
}

/// Segments kept in memory across replicas (about 12 bytes each).
const PLAN_BUDGET: usize = 4 << 20;
/// Neighbour-table entries kept in memory (4 bytes each).
const GATHER_BUDGET: usize = 8 << 20;

impl<'a> Polymer<'a> {
    pub fn new(spec: &'a EnvironmentSpec, beta: f64, dim: usize, horizon: usize) -> Result<Self> {
        let lambda = spec.log_mgf(beta)?;
        let cone = Cone::new(dim, horizon.max(1))?;
        let widest = cone.site_count(horizon) as u128;
        if widest > DEFAULT_SITE_BUDGET {
            return Err(LabError::ConeTooLarge {
                sites: widest,
                budget: DEFAULT_SITE_BUDGET,
            });
        }
        let mut plans = Vec::with_capacity(horizon);
        let mut footprint = 0;
        for n in 0..horizon {
            let plan = StepPlan::new(&cone, n);
            footprint += plan.footprint();
            if footprint > PLAN_BUDGET {
                break;
            }
            plans.push(plan);
        }
        let mut plans = (footprint <= PLAN_BUDGET).then_some(plans);
        if let Some(plans) = plans.as_mut() {
            let entries: usize = plans.iter().map(|p| p.sites * 2 * dim).sum();
            if entries <= GATHER_BUDGET {
                plans.iter_mut().for_each(StepPlan::build_gather);
            }
        }
        Ok(Self {
            spec,
            beta,
            lambda,
            cone,
            plans,
            atoms: match *spec.family() {
                Family::TwoPoint { low, high, .. } => Some([low, high]),
                _ => None,
            },
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cone(&self) -> &Cone {
        &self.cone
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        self.spec
    }

    /// Streams the environment keyed by `field_seed` row by row, calling
    /// `visit` at time 0 and after every step. Stops early when `visit`
    /// returns `false`.
    pub fn walk<F>(&self, field_seed: u64, horizon: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(&Step<'_>) -> bool,
    {
        if horizon > self.cone.max_time() {
            return Err(LabError::OutOfRange(format!("horizon {horizon} beyond the cone")));
        }
        let sampler = EnvSampler::new(self.spec, field_seed);
        let mut state = PartitionState::initial(self.cone.dim())?;
        let mut row = Vec::new();
        let mut buf = Vec::new();
        let mut prev_log_scale = 0.0;
        let step = Step {
            state: &state,
            prev_weights: &buf,
            prev_log_scale,
            row: &row,
        };
        if !visit(&step) {
            return Ok(());
        }
        for t in 1..=horizon {
            sampler.fill_row(&self.cone, t, &mut row);
            prev_log_scale = state.log_scale;
            // after `advance`, `buf` holds the time t-1 mantissas
            match &self.plans {
                Some(plans) => state.advance_with_atoms(&plans[t - 1], &row, self.beta, self.lambda, &mut buf, self.atoms)?,
                None => state.advance(&self.cone, &row, self.beta, self.lambda, &mut buf)?,
            }
            let step = Step {
                state: &state,
                prev_weights: &buf,
                prev_log_scale,
                row: &row,
            };
            if !visit(&step) {
                break;
            }
        }
        Ok(())
    }

    /// `(W_0, …, W_horizon)` for the field keyed by `field_seed`.
    pub fn trace(&self, field_seed: u64, horizon: usize) -> Result<MartingaleTrace> {
        let mut values = Vec::with_capacity(horizon + 1);
        self.walk(field_seed, horizon, |s| {
            values.push(if s.state.time() == 0 {
                LogValue::ONE
            } else {
                s.state.total()
            });
            true
        })?;
        Ok(MartingaleTrace {
            beta: self.beta,
            values,
            field_seed,
        })
    }
}

/// What a [`Polymer::walk`] visitor sees after each step.
pub struct Step<'s> {
    /// State at the current time `n`.
    pub state: &'s PartitionState,
    /// Mantissas at time `n - 1` (empty at time 0).
    pub prev_weights: &'s [f64],
    pub prev_log_scale: f64,
    /// Environment row of time `n` (empty at time 0).
    pub row: &'s [f64],
}

impl Step<'_> {
    /// The time `n - 1` state, rebuilt from the retained mantissas.
    pub fn previous(&self) -> Option<PartitionState> {
        let n = self.state.time.checked_sub(1)?;
        Some(PartitionState {
            time: n,
            dim: self.state.dim,
            log_scale: self.prev_log_scale,
            weights: self.prev_weights.to_vec(),
        })
    }

    /// `ln W_{n-1}`.
    pub fn prev_ln_total(&self) -> Option<f64> {
        self.state.time.checked_sub(1)?;
        Some(self.prev_log_scale + neumaier_sum(self.prev_weights).ln())
    }
}

/// The sequence `(W_0, …, W_n)` for one environment realisation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleTrace {
    pub beta: f64,
    pub values: Vec<LogValue>,
    pub field_seed: u64,
}

impl MartingaleTrace {
    /// Trace from plain values, `values[0]` must be 1.
    pub fn from_values(beta: f64, values: &[f64]) -> Self {
        Self {
            beta,
            values: values
                .iter()
                .map(|&v| LogValue {
                    log_scale: 0.0,
                    mantissa: v,
                })
                .collect(),
            field_seed: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn ln_values(&self) -> Vec<f64> {
        self.values.iter().map(LogValue::ln).collect()
    }

    /// `τ(t) = inf{n >= 1 : W_n >= t}`; `None` when it exceeds the horizon.
    pub fn stopping_time(&self, t: f64) -> Result<Option<usize>> {
        stopping_time(self, t)
    }
}

/// Applies the transfer step for `t = 1..=horizon` on the field keyed by `seed`.
pub fn run_trace(spec: &EnvironmentSpec, beta: f64, dim: usize, horizon: usize, seed: u64) -> Result<MartingaleTrace> {
    Polymer::new(spec, beta, dim, horizon)?.trace(seed, horizon)
}

/// `τ(t) = inf{n >= 1 : W_n >= t}`; `None` when no such `n <= horizon`.
pub fn stopping_time(trace: &MartingaleTrace, t: f64) -> Result<Option<usize>> {
    if !(t > 1.0) {
        return Err(LabError::InvalidThreshold(t));
    }
    let lt = t.ln();
    Ok(trace.values.iter().skip(1).position(|v| v.ln() >= lt).map(|i| i + 1))
}

/// Pinned partition functions at time `n` of a materialised field.
pub fn pinned_on_field(field: &EnvField, n: usize, beta: f64, lambda: f64) -> Result<PartitionState> {
    if n > field.horizon() {
        return Err(LabError::OutOfRange(format!("time {n} beyond horizon {}", field.horizon())));
    }
    let mut state = PartitionState::initial(field.dim())?;
    let mut buf = Vec::new();
    for t in 1..=n {
        state.advance(field.cone(), field.row(t), beta, lambda, &mut buf)?;
    }
    Ok(state)
}

/// Both sides of the Markov decomposition
/// `W_n = Σ_x W_{k,x} · (W_{n-k} ∘ θ_{k,x})` on one realisation.
pub fn decompose_at(field: &EnvField, k: usize, n: usize, beta: f64, lambda: f64) -> Result<(LogValue, LogValue)> {
    if k > n || n > field.horizon() {
        return Err(LabError::OutOfRange(format!(
            "need 0 <= k <= n <= horizon, got k={k}, n={n}, horizon={}",
            field.horizon()
        )));
    }
    let lhs = pinned_on_field(field, n, beta, lambda)?.total();
    let at_k = pinned_on_field(field, k, beta, lambda)?;
    let cone = field.cone();
    let d = field.dim();
    let rest = n - k;
    let sites_k = cone.sites(k);
    let mut terms = Vec::with_capacity(sites_k.len());
    let mut buf = Vec::new();
    let mut row = Vec::new();
    for (i, x) in sites_k.iter().enumerate() {
        if at_k.weights()[i] == 0.0 {
            continue;
        }
        // Restart from (k, x) in the shifted environment ω'_{s,y} = ω_{k+s, x+y}.
        let mut shifted = PartitionState::initial(d)?;
        for s in 1..=rest {
            row.clear();
            let mut missing = false;
            cone.for_each_site(s, |_, y| {
                let mut z: Site = [0; MAX_DIM];
                for a in 0..d {
                    z[a] = x[a] + y[a];
                }
                match field.value(k + s, &z) {
                    Some(v) => row.push(v),
                    None => missing = true,
                }
            });
            if missing {
                return Err(LabError::OutOfRange("shifted site outside the field".into()));
            }
            shifted.advance(cone, &row, beta, lambda, &mut buf)?;
        }
        terms.push(at_k.log_pinned(i) + shifted.total().ln());
    }
    let rhs = LogValue::from_ln(log_sum_exp(&terms));
    debug_assert!(sites_k.iter().all(|x| l1(x, d) <= k as i32));
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbour_table_matches_segments_bitwise() {
        let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
        for dim in 1..=4 {
            let cone = Cone::new(dim, 6).unwrap();
            let sampler = EnvSampler::new(&spec, 5);
            let mut a = PartitionState::initial(dim).unwrap();
            let mut b = a.clone();
            let mut buf = Vec::new();
            for n in 0..6 {
                let row = sampler.row(&cone, n + 1);
                let plan = StepPlan::new(&cone, n);
                a.advance_planned(&plan, &row, 0.7, 0.245, &mut buf).unwrap();
                b.advance_planned(&plan.with_neighbour_table(), &row, 0.7, 0.245, &mut buf).unwrap();
                assert_eq!(a.log_scale().to_bits(), b.log_scale().to_bits());
                assert!(a.weights().iter().zip(b.weights()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }
    use crate::env::sample_field;

    #[test]
    fn zero_temperature_keeps_w_at_one() {
        let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
        for dim in 1..=3 {
            let tr = run_trace(&spec, 0.0, dim, 15, 3).unwrap();
            assert_eq!(tr.values[0], LogValue::ONE);
            for v in &tr.values {
                assert!((v.value() - 1.0).abs() < 1e-13, "{v:?}");
            }
        }
        let tr = run_trace(&spec, 0.4, 2, 0, 3).unwrap();
        assert_eq!(tr.values, vec![LogValue::ONE]);
    }

    #[test]
    fn single_step_two_point() {
        // both length-1 paths see the same value v
        let spec = EnvironmentSpec::two_point(-1.0, 2.0, 0.3).unwrap();
        let beta = 0.7;
        let lambda = spec.log_mgf(beta).unwrap();
        let cone = Cone::new(1, 1).unwrap();
        let s = PartitionState::initial(1).unwrap();
        let next = s.evolve(&cone, &[2.0, 2.0], beta, lambda).unwrap();
        let expected = (beta * 2.0 - lambda).exp();
        assert!((next.total().value() - expected).abs() < 1e-14 * expected);
    }

    #[test]
    fn flat_environment_two_steps() {
        let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
        let beta = 0.8;
        let lambda = spec.log_mgf(beta).unwrap();
        let cone = Cone::new(1, 2).unwrap();
        let s = PartitionState::initial(1).unwrap();
        let s = s.evolve(&cone, &[0.0; 2], beta, lambda).unwrap();
        let s = s.evolve(&cone, &[0.0; 3], beta, lambda).unwrap();
        assert!((s.total().value() - (-beta * beta).exp()).abs() < 1e-15);
    }

    #[test]
    fn endpoint_measure_basics() {
        let s = PartitionState::initial(1).unwrap();
        assert_eq!(s.endpoint_measure().unwrap(), vec![1.0]);
        let cone = Cone::new(1, 1).unwrap();
        let s = s.evolve(&cone, &[0.3, -0.2], 0.0, 0.0).unwrap();
        assert_eq!(s.endpoint_measure().unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cone = Cone::new(2, 3).unwrap();
        let s = PartitionState::initial(2).unwrap();
        assert!(matches!(
            s.evolve(&cone, &[0.0; 3], 0.5, 0.1),
            Err(LabError::ShapeMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn stopping_time_examples() {
        let tr = MartingaleTrace::from_values(0.1, &[1.0, 0.8, 1.3, 2.1]);
        assert_eq!(stopping_time(&tr, 2.0).unwrap(), Some(3));
        assert_eq!(stopping_time(&tr, 1.2).unwrap(), Some(2));
        let tr = MartingaleTrace::from_values(0.1, &[1.0, 0.9, 0.95]);
        assert_eq!(stopping_time(&tr, 1.5).unwrap(), None);
        assert!(matches!(stopping_time(&tr, 1.0), Err(LabError::InvalidThreshold(_))));
    }

    #[test]
    fn decomposition_edges() {
        let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
        let beta = 0.6;
        let lambda = spec.log_mgf(beta).unwrap();
        let field = sample_field(&spec, 2, 5, 9).unwrap();
        for k in [0, 5] {
            let (l, r) = decompose_at(&field, k, 5, beta, lambda).unwrap();
            assert!((l.ln() - r.ln()).abs() < 1e-12);
        }
        assert!(decompose_at(&field, 3, 2, beta, lambda).is_err());
        assert!(decompose_at(&field, 1, 6, beta, lambda).is_err());
    }

    #[test]
    fn one_step_marginal_reproduces_ratio() {
        let spec = EnvironmentSpec::poisson(1.5).unwrap();
        let beta = 0.9;
        let lambda = spec.log_mgf(beta).unwrap();
        let field = sample_field(&spec, 3, 6, 1).unwrap();
        let s5 = pinned_on_field(&field, 5, beta, lambda).unwrap();
        let s6 = s5.evolve(field.cone(), field.row(6), beta, lambda).unwrap();
        let alpha = one_step_marginal(field.cone(), &s5).unwrap();
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let ratio: f64 = alpha
            .iter()
            .zip(field.row(6))
            .map(|(a, w)| a * (beta * w - lambda).exp())
            .sum();
        let dp = (s6.total().ln() - s5.total().ln()).exp();
        assert!((ratio - dp).abs() < 1e-12 * dp);
    }

    #[test]
    fn large_beta_does_not_overflow() {
        let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap().with_beta_max(60.0).unwrap();
        let tr = run_trace(&spec, 50.0, 1, 400, 5).unwrap();
        assert!(tr.ln_values().iter().all(|v| v.is_finite()));
    }
}
