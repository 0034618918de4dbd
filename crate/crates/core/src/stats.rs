//! Streaming statistics with deterministic parallel reduction.

use rayon::prelude::*;
use serde::Serialize;

/// Two-sided 99% standard normal quantile.
pub const Z99: f64 = 2.575_829_303_548_900_4;

/// Replicas per work unit. Fixed, so reductions do not depend on the worker count.
pub const CHUNK: u64 = 256;

/// Welford accumulator, mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = self.std_err();
        Estimate {
            value: self.mean,
            ci_low: self.mean - Z99 * se,
            ci_high: self.mean + Z99 * se,
            std_err: se,
            samples: self.n,
        }
    }
}

/// Point estimate with a 99% normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std_err: f64,
    pub samples: u64,
}

impl Estimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn exact(value: f64) -> Self {
        Self {
            value,
            ci_low: value,
            ci_high: value,
            std_err: 0.0,
            samples: 0,
        }
    }
}

impl Estimate {
    /// Binomial proportion with a Wilson interval.
    pub fn proportion(successes: u64, trials: u64) -> Self {
        let (lo, hi) = wilson_interval(successes, trials, Z99);
        let n = trials.max(1) as f64;
        let p = successes as f64 / n;
        Self {
            value: p,
            ci_low: lo,
            ci_high: hi,
            std_err: (p * (1.0 - p) / n).sqrt(),
            samples: trials,
        }
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Folds replicas `0..n` in fixed-size chunks on the current rayon pool and
/// merges the chunk results in index order, so the outcome is bitwise
/// independent of the number of workers.
pub fn chunked_reduce<A, I, F, M>(n: u64, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) + Sync,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = init();
    for p in parts {
        merge(&mut total, p);
    }
    total
}
