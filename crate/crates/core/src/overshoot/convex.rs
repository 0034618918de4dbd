use super::{NAcc, NMoments};
use crate::conditions::validate_profile;
use crate::env::YTail;
use crate::error::{LabError, Result};
use crate::rng::Stream;
use crate::stats::{chunked_reduce, Estimate, RunningMoments};
use serde::Serialize;

/// Conditional overshoot of `S = Σ α_i Y_i` above `A` at one `(A, p)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OvershootStats {
    pub a: f64,
    pub p: f64,
    /// `P(S > A)` with a Wilson interval.
    pub conditioning_prob: Estimate,
    /// `E[S^p | S > A] / A^p`.
    pub ratio: Estimate,
    /// `E[S^p 1{N = 0} | S > A] / A^p`.
    pub split_n0: f64,
    /// `E[S^p 1{N >= 1} | S > A] / A^p`.
    pub split_n1: f64,
    pub hits: u64,
    pub hits_n0: u64,
    pub n_moments: NMoments,
    pub replicas: u64,
    pub seed: u64,
    /// Conditioned samples where `Σ_{i<=τ} α_i Y_i 1{α_i Y_i <= A} > 2A`.
    pub truncation_violations: u64,
    /// Largest truncated partial sum seen, in units of `A`.
    pub max_truncated_over_a: f64,
}

#[derive(Clone)]
struct Cell {
    ratio: RunningMoments,
    sum_n0: f64,
    sum_n1: f64,
}

#[derive(Clone)]
struct Acc {
    hits: Vec<u64>,
    hits_n0: Vec<u64>,
    violations: Vec<u64>,
    max_trunc: Vec<f64>,
    n: Vec<NAcc>,
    cells: Vec<Cell>,
}

/// Rejection sampling of `S > A` for each `A` in `a_grid`; one result per
/// `(A, p)`, ordered by `A` then `p`.
pub fn simulate_convex_overshoot(
    y: &YTail,
    weights: &[f64],
    p_grid: &[f64],
    a_grid: &[f64],
    replicas: u64,
    seed: u64,
) -> Result<Vec<OvershootStats>> {
    validate_profile(weights)?;
    crate::conditions::check_increasing("A grid", a_grid)?;
    crate::conditions::check_increasing("p grid", p_grid)?;
    if a_grid[0] <= 0.0 {
        return Err(LabError::OutOfRange("A grid must be positive".into()));
    }
    let (na, np) = (a_grid.len(), p_grid.len());
    let stream = Stream::new(seed, 2);
    let acc = chunked_reduce(
        replicas,
        || Acc {
            hits: vec![0; na],
            hits_n0: vec![0; na],
            violations: vec![0; na],
            max_trunc: vec![0.0; na],
            n: vec![NAcc::default(); na],
            cells: vec![
                Cell {
                    ratio: RunningMoments::default(),
                    sum_n0: 0.0,
                    sum_n1: 0.0,
                };
                na * np
            ],
        },
        |acc, r| {
            let sub = stream.substream(r);
            let terms: Vec<f64> = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| w * y.sample_from_uniform(sub.uniform(i as u64)))
                .collect();
            let s: f64 = terms.iter().sum();
            for (ia, &a) in a_grid.iter().enumerate() {
                let n = terms.iter().filter(|&&v| v > a).count() as f64;
                let na_acc = &mut acc.n[ia];
                na_acc.n.push(n);
                na_acc.n2.push(n * n);
                if n >= 1.0 {
                    na_acc.hits += 1;
                    na_acc.cn.push(n);
                    na_acc.cn2.push(n * n);
                }
                if !(s > a) {
                    continue;
                }
                acc.hits[ia] += 1;
                if n == 0.0 {
                    acc.hits_n0[ia] += 1;
                }
                // first passage of the partial sums over A and the truncated sum up to it
                let mut partial = 0.0;
                let mut truncated = 0.0;
                for &v in &terms {
                    partial += v;
                    if v <= a {
                        truncated += v;
                    }
                    if partial > a {
                        break;
                    }
                }
                if truncated > 2.0 * a {
                    acc.violations[ia] += 1;
                }
                acc.max_trunc[ia] = acc.max_trunc[ia].max(truncated / a);
                for (ip, &p) in p_grid.iter().enumerate() {
                    let v = (s / a).powf(p);
                    let cell = &mut acc.cells[ia * np + ip];
                    cell.ratio.push(v);
                    if n == 0.0 {
                        cell.sum_n0 += v;
                    } else {
                        cell.sum_n1 += v;
                    }
                }
            }
        },
        |t, p| {
            for ia in 0..na {
                t.hits[ia] += p.hits[ia];
                t.hits_n0[ia] += p.hits_n0[ia];
                t.violations[ia] += p.violations[ia];
                t.max_trunc[ia] = t.max_trunc[ia].max(p.max_trunc[ia]);
                let (a, b) = (&mut t.n[ia], &p.n[ia]);
                a.n.merge(&b.n);
                a.n2.merge(&b.n2);
                a.cn.merge(&b.cn);
                a.cn2.merge(&b.cn2);
                a.hits += b.hits;
            }
            for (c, d) in t.cells.iter_mut().zip(&p.cells) {
                c.ratio.merge(&d.ratio);
                c.sum_n0 += d.sum_n0;
                c.sum_n1 += d.sum_n1;
            }
        },
    );
    let mut out = Vec::with_capacity(na * np);
    for (ia, &a) in a_grid.iter().enumerate() {
        let hits = acc.hits[ia];
        let prob = Estimate::proportion(hits, replicas);
        let n = &acc.n[ia];
        let n_moments = NMoments {
            mean_n: n.n.estimate(),
            mean_n2: n.n2.estimate(),
            cond_mean_n: n.cn.estimate(),
            cond_mean_n2: n.cn2.estimate(),
        };
        for (ip, &p) in p_grid.iter().enumerate() {
            let cell = &acc.cells[ia * np + ip];
            let h = hits.max(1) as f64;
            out.push(OvershootStats {
                a,
                p,
                conditioning_prob: prob,
                ratio: cell.ratio.estimate(),
                split_n0: cell.sum_n0 / h,
                split_n1: cell.sum_n1 / h,
                hits,
                hits_n0: acc.hits_n0[ia],
                n_moments,
                replicas,
                seed,
                truncation_violations: acc.violations[ia],
                max_truncated_over_a: acc.max_trunc[ia],
            });
        }
    }
    Ok(out)
}
