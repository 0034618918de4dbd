//! Monte Carlo experiments on exceedance counts, convex-combination
//! overshoots and the overshoot of the polymer martingale at `τ(t)`.

mod convex;
mod martingale;

pub use convex::{simulate_convex_overshoot, OvershootStats};
pub use martingale::{
    martingale_overshoot_experiment, moment_trace, MartingaleOvershoot, MomentRow, MomentTable, OvershootAggregate,
    OvershootCell, OvershootConfig,
};

use crate::cone::Cone;
use crate::conditions::Verdict;
use crate::env::{EnvironmentSpec, TailModel, YTail};
use crate::error::{LabError, Result};
use crate::polymer::{one_step_marginal, Polymer};
use crate::rng::{replica_seed, Stream};
use crate::stats::{chunked_reduce, Estimate, RunningMoments};
use serde::Serialize;

/// Uniforms never fall below this, so `u < q` is impossible for smaller `q`.
const MIN_UNIFORM: f64 = 0.5 / 4_503_599_627_370_496.0;

/// `#{i : α_i Y_i > A}`.
pub fn count_exceedances(weights: &[f64], samples: &[f64], a: f64) -> usize {
    assert_eq!(weights.len(), samples.len(), "weights and samples differ in length");
    weights.iter().zip(samples).filter(|(w, y)| *w * *y > a).count()
}

/// Exact law of `N` from `q_i = P(α_i Y_i > A)`; `N` is a sum of independent Bernoullis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactExceedance {
    pub mean_n: f64,
    pub mean_n2: f64,
    pub p_hit: f64,
    pub cond_mean_n: f64,
    pub cond_mean_n2: f64,
}

/// `q_i = P(Y > A/α_i)`, zero for vanishing weights.
pub fn exceedance_probabilities<T: TailModel + ?Sized>(y: &T, weights: &[f64], a: f64) -> Vec<f64> {
    weights
        .iter()
        .map(|&w| if w > 0.0 { y.tail(a / w) } else { 0.0 })
        .collect()
}

pub fn exact_exceedance(q: &[f64]) -> ExactExceedance {
    let s: f64 = q.iter().sum();
    let s2: f64 = q.iter().map(|v| v * v).sum();
    let mean_n2 = s + s * s - s2;
    let p_hit = -q.iter().map(|v| (-v).ln_1p()).sum::<f64>().exp_m1();
    ExactExceedance {
        mean_n: s,
        mean_n2,
        p_hit,
        cond_mean_n: s / p_hit,
        cond_mean_n2: mean_n2 / p_hit,
    }
}

/// Monte Carlo moments of `N`, unconditionally and given `N >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NMoments {
    pub mean_n: Estimate,
    pub mean_n2: Estimate,
    pub cond_mean_n: Estimate,
    pub cond_mean_n2: Estimate,
}

/// Exceedance-count bounds checked with `slack` confidence half-widths of room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExceedanceBounds {
    /// `E[N] <= E[Y]/A`.
    pub mean_n: bool,
    /// `E[N^2] <= E[Y]/A + (E[Y]/A)^2`.
    pub mean_n2: bool,
    /// `E[N | N >= 1] <= 2`.
    pub cond_mean_n: bool,
    /// `E[N^2 | N >= 1] <= 5`.
    pub cond_mean_n2: bool,
}

impl ExceedanceBounds {
    pub fn all(&self) -> bool {
        self.mean_n && self.mean_n2 && self.cond_mean_n && self.cond_mean_n2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceedanceReport {
    pub a: f64,
    pub replicas: u64,
    pub seed: u64,
    pub moments: NMoments,
    pub exact: ExactExceedance,
    pub bounds: ExceedanceBounds,
    /// Replicas of the unconditional run with `N >= 1`.
    pub direct_hits: u64,
    pub slack: f64,
}

#[derive(Clone, Default)]
pub(crate) struct NAcc {
    pub(crate) n: RunningMoments,
    pub(crate) n2: RunningMoments,
    pub(crate) cn: RunningMoments,
    pub(crate) cn2: RunningMoments,
    pub(crate) hits: u64,
}

/// Estimates the moments of `N = Σ 1{α_i Y_i > A}` from `replicas`
/// unconditional draws and `replicas` draws conditioned on `N >= 1`.
///
/// Draws use the inverse-tail coupling, under which `α_i Y_i > A` is the
/// event `u_i < q_i`. The conditioned draws pick the first exceeding index
/// `σ` from its law given `σ < ∞`, then add fresh indicators after `σ`.
pub fn exceedance_moments(y: &YTail, weights: &[f64], a: f64, replicas: u64, seed: u64) -> Result<ExceedanceReport> {
    crate::conditions::validate_profile(weights)?;
    if !(a >= 1.0) {
        return Err(LabError::InvalidParameter {
            name: "A",
            value: a,
            reason: "must be >= 1",
        });
    }
    let q = exceedance_probabilities(y, weights, a);
    let exact = exact_exceedance(&q);
    if !(exact.p_hit > 0.0) {
        return Err(LabError::NoHits(format!("P(N >= 1) = 0 at A = {a}")));
    }
    // active indices only: smaller q can never fire
    let active: Vec<(usize, f64)> = q.iter().copied().enumerate().filter(|(_, v)| *v >= MIN_UNIFORM).collect();
    // P(σ <= i) for the active indices, in order
    let mut log_keep = 0.0;
    let cumulative: Vec<f64> = active
        .iter()
        .map(|&(_, v)| {
            log_keep += (-v).ln_1p();
            -log_keep.exp_m1()
        })
        .collect();
    let p_hit_active = cumulative.last().copied().unwrap_or(0.0);
    if !(p_hit_active > 0.0) {
        return Err(LabError::NoHits(format!("no index can exceed A = {a}")));
    }
    let free = Stream::new(seed, 0);
    let cond = Stream::new(seed, 1);
    let m = weights.len() as u64;
    let acc = chunked_reduce(
        replicas,
        NAcc::default,
        |acc, r| {
            let s = free.substream(r);
            let n = active.iter().filter(|&&(i, v)| s.uniform(i as u64) < v).count() as f64;
            acc.n.push(n);
            acc.n2.push(n * n);
            if n >= 1.0 {
                acc.hits += 1;
            }
            let c = cond.substream(r);
            let target = c.uniform(m) * p_hit_active;
            let sigma = cumulative.partition_point(|&v| v <= target).min(active.len() - 1);
            let n = 1.0
                + active[sigma + 1..]
                    .iter()
                    .filter(|&&(i, v)| c.uniform(i as u64) < v)
                    .count() as f64;
            acc.cn.push(n);
            acc.cn2.push(n * n);
        },
        |t, p| {
            t.n.merge(&p.n);
            t.n2.merge(&p.n2);
            t.cn.merge(&p.cn);
            t.cn2.merge(&p.cn2);
            t.hits += p.hits;
        },
    );
    let moments = NMoments {
        mean_n: acc.n.estimate(),
        mean_n2: acc.n2.estimate(),
        cond_mean_n: acc.cn.estimate(),
        cond_mean_n2: acc.cn2.estimate(),
    };
    let slack = 3.0;
    let ok = |e: &Estimate, bound: f64| e.value <= bound + slack * e.half_width();
    let ey_over_a = 1.0 / a;
    let bounds = ExceedanceBounds {
        mean_n: ok(&moments.mean_n, ey_over_a),
        mean_n2: ok(&moments.mean_n2, ey_over_a + ey_over_a * ey_over_a),
        cond_mean_n: ok(&moments.cond_mean_n, 2.0),
        cond_mean_n2: ok(&moments.cond_mean_n2, 5.0),
    };
    Ok(ExceedanceReport {
        a,
        replicas,
        seed,
        moments,
        exact,
        bounds,
        direct_hits: acc.hits,
        slack,
    })
}

/// `m` equal weights.
pub fn uniform_profile(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Weights proportional to `ratio^i`, `i < m`.
pub fn geometric_profile(m: usize, ratio: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|i| ratio.powi(i as i32)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Convex weights `α_x = μ_{ω,n-1}(X_n = x)` of the step `n-1 → n`, taken
/// from `count` independent polymer runs.
pub fn harvest_endpoint_profiles(
    spec: &EnvironmentSpec,
    beta: f64,
    dim: usize,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(LabError::OutOfRange("need n >= 1".into()));
    }
    let polymer = Polymer::new(spec, beta, dim, n)?;
    let cone: &Cone = polymer.cone();
    (0..count as u64)
        .map(|r| {
            let mut out = None;
            polymer.walk(replica_seed(seed, r), n - 1, |s| {
                if s.state.time() == n - 1 {
                    out = Some(one_step_marginal(cone, s.state));
                }
                true
            })?;
            let mut w = out.expect("walk reaches n - 1")?;
            // renormalise against rounding so the profile sums to one
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            Ok(w)
        })
        .collect()
}

/// Verdict of the exceedance-count bounds over a set of reports.
pub fn exceedance_verdict(reports: &[ExceedanceReport]) -> Verdict {
    if reports.iter().all(|r| r.bounds.all()) {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}
