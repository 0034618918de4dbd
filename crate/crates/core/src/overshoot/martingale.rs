use crate::conditions::{check_increasing, stabilization, Verdict};
use crate::env::EnvironmentSpec;
use crate::error::{LabError, Result};
use crate::polymer::{one_step_marginal, second_moment_exact, Polymer};
use crate::rng::replica_seed;
use crate::stats::{chunked_reduce, Estimate, RunningMoments};
use rayon::prelude::*;
use serde::Serialize;
use std::time::{Duration, Instant};

/// Settings of [`martingale_overshoot_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct OvershootConfig {
    pub t_grid: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub horizon: usize,
    pub replicas: u64,
    pub seed: u64,
    /// Threshold factor for the `W_k <= A3 t` / `W_k > A3 t` split.
    pub a3: Option<f64>,
    /// Constant of the second-case bound, reported against the empirical value.
    pub c3: Option<f64>,
    /// Stop starting new replica blocks after this much wall time.
    pub max_wall: Option<Duration>,
}

/// `E[W_k^p 1{τ(t)=k}] / (t^p P(τ(t)=k))` for one `(t, p, k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootCell {
    pub t: f64,
    pub p: f64,
    pub k: usize,
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hits: u64,
    /// `P(τ(t) = k)`.
    pub prob: f64,
    /// Direct mean of `W_k^p 1{τ(t)=k}` over all replicas.
    pub direct_mean: f64,
}

/// One side of the `A3 t` split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSplit {
    pub hits: u64,
    /// `E[W_τ^p 1{case}] / (t^p P(τ <= horizon, case))`, absent without hits.
    pub ratio: Option<f64>,
    pub bound_a3_pow_p: f64,
    pub bound_c3_a3_sq: Option<f64>,
    pub bound_c3_a3_pow_p: Option<f64>,
}

/// Ratio aggregated over `k` for one `(t, p)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootAggregate {
    pub t: f64,
    pub p: f64,
    pub ratio: Estimate,
    pub hits: u64,
    /// `P(τ(t) <= horizon)` with a Wilson interval.
    pub prob_hit: Estimate,
    pub first_case: Option<CaseSplit>,
    pub second_case: Option<CaseSplit>,
    /// Mean of `W_τ / W_{τ-1}`.
    pub mean_step_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleOvershoot {
    pub cells: Vec<OvershootCell>,
    pub aggregates: Vec<OvershootAggregate>,
    pub verdict: Verdict,
    /// Largest aggregated ratio over the grid, when every `t` was hit.
    pub constant: Option<f64>,
    pub requested_replicas: u64,
    pub completed_replicas: u64,
    pub budget_exhausted: bool,
    /// Largest relative gap between `Σ α_x Y_x` and the DP ratio `W_τ/W_{τ-1}`.
    pub identity_max_rel_err: f64,
    /// Largest relative gap between `P(τ=k)·ratio·t^p` and the direct mean.
    pub bookkeeping_max_rel_err: f64,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    k: usize,
    ln_w: f64,
    ln_prev: f64,
}

struct ReplicaOutcome {
    hits: Vec<Option<Hit>>,
    identity_err: f64,
}

fn run_replica(polymer: &Polymer, cfg: &OvershootConfig, r: u64) -> Result<ReplicaOutcome> {
    let nt = cfg.t_grid.len();
    let ln_t: Vec<f64> = cfg.t_grid.iter().map(|t| t.ln()).collect();
    let mut hits: Vec<Option<Hit>> = vec![None; nt];
    let mut remaining = nt;
    let mut identity_err = 0.0f64;
    let mut failure = None;
    let beta = polymer.beta();
    let lambda = polymer.lambda();
    polymer.walk(replica_seed(cfg.seed, r), cfg.horizon, |s| {
        let n = s.state.time();
        if n == 0 {
            return true;
        }
        let ln_w = s.state.total().ln();
        if !(0..nt).any(|i| hits[i].is_none() && ln_w >= ln_t[i]) {
            return true;
        }
        let ln_prev = s.prev_ln_total().expect("n >= 1");
        // W_n / W_{n-1} recomputed as a convex combination of the new weights
        let prev = s.previous().expect("n >= 1");
        match one_step_marginal(polymer.cone(), &prev) {
            Ok(alpha) => {
                let combo: f64 = alpha
                    .iter()
                    .zip(s.row)
                    .map(|(a, w)| a * (beta * w - lambda).exp())
                    .sum();
                let dp = (ln_w - ln_prev).exp();
                identity_err = identity_err.max((combo - dp).abs() / dp);
            }
            Err(e) => {
                failure = Some(e);
                return false;
            }
        }
        for i in 0..nt {
            if hits[i].is_none() && ln_w >= ln_t[i] {
                hits[i] = Some(Hit { k: n, ln_w, ln_prev });
                remaining -= 1;
            }
        }
        remaining > 0
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ReplicaOutcome { hits, identity_err })
}

/// Runs `replicas` polymer traces, records `τ(t)` for every `t` and
/// aggregates the overshoot ratio per `(t, p, k)` and per `(t, p)`.
pub fn martingale_overshoot_experiment(
    spec: &EnvironmentSpec,
    beta: f64,
    dim: usize,
    cfg: &OvershootConfig,
) -> Result<MartingaleOvershoot> {
    check_increasing("t grid", &cfg.t_grid)?;
    check_increasing("p grid", &cfg.p_grid)?;
    if cfg.t_grid[0] <= 1.0 {
        return Err(LabError::InvalidThreshold(cfg.t_grid[0]));
    }
    if cfg.p_grid[0] < 1.0 || cfg.p_grid[cfg.p_grid.len() - 1] > 2.0 {
        return Err(LabError::OutOfRange("p grid must lie in [1, 2]".into()));
    }
    let polymer = Polymer::new(spec, beta, dim, cfg.horizon)?;
    let start = Instant::now();
    let block = rayon::current_num_threads().max(1) as u64;
    let mut outcomes = Vec::with_capacity(cfg.replicas as usize);
    let mut budget_exhausted = false;
    let mut next = 0u64;
    while next < cfg.replicas {
        if let Some(limit) = cfg.max_wall {
            if start.elapsed() >= limit {
                budget_exhausted = true;
                break;
            }
        }
        let end = (next + block).min(cfg.replicas);
        let part = (next..end)
            .into_par_iter()
            .map(|r| run_replica(&polymer, cfg, r))
            .collect::<Result<Vec<_>>>()?;
        outcomes.extend(part);
        next = end;
    }
    Ok(aggregate(cfg, &outcomes, budget_exhausted))
}

fn aggregate(cfg: &OvershootConfig, outcomes: &[ReplicaOutcome], budget_exhausted: bool) -> MartingaleOvershoot {
    let r_done = outcomes.len() as u64;
    let rf = r_done.max(1) as f64;
    let mut cells = Vec::new();
    let mut aggregates = Vec::new();
    let mut bookkeeping = 0.0f64;
    let identity = outcomes.iter().map(|o| o.identity_err).fold(0.0, f64::max);
    for (it, &t) in cfg.t_grid.iter().enumerate() {
        let hits: Vec<Hit> = outcomes.iter().filter_map(|o| o.hits[it]).collect();
        let mut ks: Vec<usize> = hits.iter().map(|h| h.k).collect();
        ks.sort_unstable();
        ks.dedup();
        let prob_hit = Estimate::proportion(hits.len() as u64, r_done);
        let mean_step_ratio = if hits.is_empty() {
            None
        } else {
            Some(hits.iter().map(|h| (h.ln_w - h.ln_prev).exp()).sum::<f64>() / hits.len() as f64)
        };
        for &p in &cfg.p_grid {
            let ln_tp = p * t.ln();
            for &k in &ks {
                let mut m = RunningMoments::default();
                let mut direct = 0.0;
                for h in hits.iter().filter(|h| h.k == k) {
                    m.push((p * h.ln_w - ln_tp).exp());
                    direct += (p * h.ln_w).exp();
                }
                let e = m.estimate();
                let prob = m.count() as f64 / rf;
                let direct_mean = direct / rf;
                let via_ratio = prob * e.value * (ln_tp).exp();
                bookkeeping = bookkeeping.max((via_ratio - direct_mean).abs() / direct_mean);
                cells.push(OvershootCell {
                    t,
                    p,
                    k,
                    ratio: e.value,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                    hits: m.count(),
                    prob,
                    direct_mean,
                });
            }
            let mut all = RunningMoments::default();
            for h in &hits {
                all.push((p * h.ln_w - ln_tp).exp());
            }
            let split = |first: bool| {
                cfg.a3.map(|a3| {
                    let level = (a3 * t).ln();
                    let sel: Vec<f64> = hits
                        .iter()
                        .filter(|h| (h.ln_w <= level) == first)
                        .map(|h| (p * h.ln_w - ln_tp).exp())
                        .collect();
                    CaseSplit {
                        hits: sel.len() as u64,
                        ratio: if sel.is_empty() {
                            None
                        } else {
                            Some(sel.iter().sum::<f64>() / sel.len() as f64)
                        },
                        bound_a3_pow_p: a3.powf(p),
                        bound_c3_a3_sq: cfg.c3.map(|c| c * a3 * a3),
                        bound_c3_a3_pow_p: cfg.c3.map(|c| c * a3.powf(p)),
                    }
                })
            };
            aggregates.push(OvershootAggregate {
                t,
                p,
                ratio: all.estimate(),
                hits: hits.len() as u64,
                prob_hit,
                first_case: split(true),
                second_case: split(false),
                mean_step_ratio,
            });
        }
    }
    let (verdict, constant) = if aggregates.iter().any(|a| a.hits == 0) {
        (Verdict::Inconclusive, None)
    } else {
        let evidence: Vec<[f64; 2]> = aggregates.iter().map(|a| [a.t, a.ratio.value]).collect();
        match stabilization(&evidence) {
            Ok(s) => (s.verdict, Some(s.constant)),
            Err(_) => (Verdict::Inconclusive, None),
        }
    };
    MartingaleOvershoot {
        cells,
        aggregates,
        verdict,
        constant,
        requested_replicas: cfg.replicas,
        completed_replicas: r_done,
        budget_exhausted,
        identity_max_rel_err: identity,
        bookkeeping_max_rel_err: bookkeeping,
    }
}

/// One entry of a [`moment_trace`] table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub n: usize,
    pub p: f64,
    pub estimate: Estimate,
    /// `E[W_n^2]` from the collision-time formula, for `p = 2`.
    pub exact_p2: Option<f64>,
}

impl MomentRow {
    /// Distance to the exact value in standard errors.
    pub fn z_score(&self) -> Option<f64> {
        self.exact_p2
            .map(|e| (self.estimate.value - e) / self.estimate.std_err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
    /// Per `p`: relative change of the estimate from the first to the last `n`.
    pub growth: Vec<[f64; 2]>,
    pub replicas: u64,
    pub seed: u64,
}

impl MomentTable {
    pub fn row(&self, n: usize, p: f64) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.n == n && r.p == p)
    }
}

/// Monte Carlo `E[W_n^p]` on a grid of `n` and `p`, one environment per replica.
pub fn moment_trace(
    spec: &EnvironmentSpec,
    beta: f64,
    dim: usize,
    p_grid: &[f64],
    n_grid: &[usize],
    replicas: u64,
    seed: u64,
) -> Result<MomentTable> {
    check_increasing("p grid", p_grid)?;
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::OutOfRange("n grid must be strictly increasing".into()));
    }
    let horizon = *n_grid.last().expect("non-empty");
    let polymer = Polymer::new(spec, beta, dim, horizon)?;
    let np = p_grid.len();
    let acc = chunked_reduce(
        replicas,
        || (vec![RunningMoments::default(); n_grid.len() * np], None::<LabError>),
        |acc, r| {
            let mut slot = 0;
            let res = polymer.walk(replica_seed(seed, r), horizon, |s| {
                if slot < n_grid.len() && s.state.time() == n_grid[slot] {
                    let ln_w = s.state.total().ln();
                    for (ip, &p) in p_grid.iter().enumerate() {
                        acc.0[slot * np + ip].push((p * ln_w).exp());
                    }
                    slot += 1;
                }
                true
            });
            if let Err(e) = res {
                acc.1.get_or_insert(e);
            }
        },
        |t, p| {
            for (a, b) in t.0.iter_mut().zip(&p.0) {
                a.merge(b);
            }
            if t.1.is_none() {
                t.1 = p.1;
            }
        },
    );
    if let Some(e) = acc.1 {
        return Err(e);
    }
    let mut rows = Vec::with_capacity(acc.0.len());
    for (inn, &n) in n_grid.iter().enumerate() {
        for (ip, &p) in p_grid.iter().enumerate() {
            let exact_p2 = if p == 2.0 {
                second_moment_exact(spec, beta, dim, n).ok()
            } else {
                None
            };
            rows.push(MomentRow {
                n,
                p,
                estimate: acc.0[inn * np + ip].estimate(),
                exact_p2,
            });
        }
    }
    let last = n_grid.len() - 1;
    let growth = (0..np)
        .map(|ip| {
            let a = rows[ip].estimate.value;
            let b = rows[last * np + ip].estimate.value;
            [p_grid[ip], b / a - 1.0]
        })
        .collect();
    Ok(MomentTable {
        rows,
        growth,
        replicas,
        seed,
    })
}
