//! Brute-force evaluation by enumerating all `(2d)^n` paths. Feasible for
//! `(2d)^n` up to a few million.

use crate::cone::{Site, MAX_DIM};
use crate::env::EnvField;
use crate::error::{LabError, Result};
use crate::special::log_add_exp;
use std::collections::BTreeMap;

const MAX_PATHS: u128 = 1 << 26;

/// Results of a full path enumeration up to time `n`.
#[derive(Debug, Clone)]
pub struct PathEnumeration {
    /// `ln W_t` for `t = 0..=n`.
    pub ln_totals: Vec<f64>,
    /// `ln W_{n,x}` keyed by endpoint.
    pub ln_pinned: BTreeMap<Site, f64>,
}

/// Sums `(2d)^{-n} exp(Σ_t βω_{t,x_t} - nλ)` over every path on the field.
pub fn enumerate_paths(field: &EnvField, n: usize, beta: f64, lambda: f64) -> Result<PathEnumeration> {
    let d = field.dim();
    if n > field.horizon() {
        return Err(LabError::OutOfRange(format!("time {n} beyond horizon {}", field.horizon())));
    }
    let paths = (2 * d as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if paths > MAX_PATHS {
        return Err(LabError::ConeTooLarge {
            sites: paths,
            budget: MAX_PATHS,
        });
    }
    let ln_step = -((2 * d) as f64).ln();
    let mut per_time = vec![f64::NEG_INFINITY; n + 1];
    per_time[0] = 0.0;
    let mut ends: BTreeMap<Site, f64> = BTreeMap::new();
    let mut pos: Site = [0; MAX_DIM];
    if n == 0 {
        ends.insert(pos, 0.0);
    }
    rec(field, d, n, 1, 0.0, &mut pos, beta, lambda, ln_step, &mut per_time, &mut ends)?;
    Ok(PathEnumeration {
        ln_totals: per_time,
        ln_pinned: ends,
    })
}

#[allow(clippy::too_many_arguments)]
fn rec(
    field: &EnvField,
    d: usize,
    n: usize,
    t: usize,
    acc: f64,
    pos: &mut Site,
    beta: f64,
    lambda: f64,
    ln_step: f64,
    per_time: &mut [f64],
    ends: &mut BTreeMap<Site, f64>,
) -> Result<()> {
    if t > n {
        return Ok(());
    }
    for axis in 0..d {
        for step in [-1, 1] {
            pos[axis] += step;
            let w = field
                .value(t, &pos[..d])
                .ok_or_else(|| LabError::OutOfRange("path left the field".into()))?;
            let a = acc + ln_step + beta * w - lambda;
            per_time[t] = log_add_exp(per_time[t], a);
            if t == n {
                let e = ends.entry(*pos).or_insert(f64::NEG_INFINITY);
                *e = log_add_exp(*e, a);
            }
            rec(field, d, n, t + 1, a, pos, beta, lambda, ln_step, per_time, ends)?;
            pos[axis] -= step;
        }
    }
    Ok(())
}
