//! `E[W_n^2]` through the collision local time of two independent walks.
//!
//! With `γ = λ(2β) - 2λ(β)`, `E[W_n^2] = E[exp(γ L_n)]` where `L_n` counts
//! the times `1..=n` at which the two walks meet. Expanding `e^{γL} = Π(1 + (e^γ - 1)1{meet})`
//! gives a renewal sum over the first-passage structure of the difference walk:
//! `h_0 = 1`, `h_m = (e^γ - 1) Σ_{k<m} h_k u_{m-k}`, `E[W_n^2] = Σ_{m<=n} h_m`,
//! with `u_k = P(X_k = X'_k)`.

use crate::env::EnvironmentSpec;
use crate::error::{LabError, Result};
use crate::special::{log_add_exp, log_sum_exp};

const MAX_STEPS: usize = 200_000;

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// `ln P(X_k = X'_k)` for `k = 0..=n`, two independent simple random walks on `Z^d`.
///
/// The difference walk after `k` steps of each walk is a `2k`-step walk,
/// so `u_k = C(2k,k)/4^k · Σ_{j_1+…+j_d=k} (k!/Π j_i!)^2 / d^{2k}`.
pub fn collision_log_probabilities(dim: usize, n: usize) -> Vec<f64> {
    let lf = ln_factorials(2 * n);
    // c[k] = ln Σ_{j_1+…+j_m = k} Π (j_i!)^{-2}, built by repeated convolution
    let base: Vec<f64> = (0..=n).map(|j| -2.0 * lf[j]).collect();
    let mut c = base.clone();
    for _ in 1..dim {
        let mut next = vec![f64::NEG_INFINITY; n + 1];
        let mut terms = Vec::with_capacity(n + 1);
        for (k, slot) in next.iter_mut().enumerate() {
            terms.clear();
            terms.extend((0..=k).map(|j| c[j] + base[k - j]));
            *slot = log_sum_exp(&terms);
        }
        c = next;
    }
    let ln4 = 4f64.ln();
    let lnd = (dim as f64).ln();
    (0..=n)
        .map(|k| {
            let kf = k as f64;
            (lf[2 * k] - 2.0 * lf[k]) - kf * ln4 + 2.0 * lf[k] - 2.0 * kf * lnd + c[k]
        })
        .collect()
}

/// `ln E[exp(γ L_n)]` for the collision local time `L_n` in dimension `dim`.
pub fn log_second_moment_from_gamma(gamma: f64, dim: usize, n: usize) -> f64 {
    if gamma == 0.0 || n == 0 {
        return 0.0;
    }
    let lu = collision_log_probabilities(dim, n);
    if gamma > 0.0 {
        let lg = gamma.exp_m1().ln();
        let mut h = Vec::with_capacity(n + 1);
        h.push(0.0);
        let mut terms = Vec::with_capacity(n);
        let mut total = 0.0;
        for m in 1..=n {
            terms.clear();
            terms.extend((0..m).map(|k| h[k] + lu[m - k]));
            let hm = lg + log_sum_exp(&terms);
            total = log_add_exp(total, hm);
            h.push(hm);
        }
        total
    } else {
        // e^γ - 1 in (-1, 0): alternating terms, all bounded, sum linearly
        let g = gamma.exp_m1();
        let u: Vec<f64> = lu.iter().map(|v| v.exp()).collect();
        let mut h = vec![1.0];
        for m in 1..=n {
            let s: f64 = (0..m).map(|k| h[k] * u[m - k]).sum();
            h.push(g * s);
        }
        h.iter().sum::<f64>().ln()
    }
}

/// `E[W_n^2]` for the polymer at inverse temperature `beta`.
pub fn second_moment_exact(spec: &EnvironmentSpec, beta: f64, dim: usize, n: usize) -> Result<f64> {
    if !(1..=crate::cone::MAX_DIM).contains(&dim) {
        return Err(LabError::UnsupportedDimension(dim));
    }
    if n > MAX_STEPS {
        return Err(LabError::OutOfRange(format!("n = {n} exceeds {MAX_STEPS}")));
    }
    let l1 = spec.log_mgf(beta)?;
    let l2 = spec.log_mgf(2.0 * beta)?;
    let mut gamma = l2 - 2.0 * l1;
    if gamma.abs() < 1e-15 * (1.0 + l2.abs()) {
        gamma = 0.0;
    }
    Ok(log_second_moment_from_gamma(gamma, dim, n).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_collisions() {
        let lu = collision_log_probabilities(1, 4);
        // P(S_{2k} = 0) for the 1d walk: 1, 1/2, 3/8, 5/16, 35/128
        let want = [1.0, 0.5, 0.375, 0.3125, 35.0 / 128.0];
        for (a, b) in lu.iter().zip(want) {
            assert!((a.exp() - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_dimensional_collisions() {
        // in d = 2, u_k = (C(2k,k)/4^k)^2
        let lu = collision_log_probabilities(2, 30);
        let one = collision_log_probabilities(1, 30);
        for k in 0..=30 {
            assert!((lu[k] - 2.0 * one[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step() {
        // E[e^{γ L_1}] = 1 + (e^γ - 1)/(2d)
        for d in 1..=4 {
            let g = 0.37;
            let got = log_second_moment_from_gamma(g, d, 1).exp();
            assert!((got - (1.0 + g.exp_m1() / (2 * d) as f64)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_temperature() {
        let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
        assert_eq!(second_moment_exact(&spec, 0.0, 3, 50).unwrap(), 1.0);
    }

    #[test]
    fn gamma_negative_branch() {
        let got = log_second_moment_from_gamma(-0.5, 1, 1).exp();
        assert!((got - (1.0 + (-0.5f64).exp_m1() / 2.0)).abs() < 1e-15);
    }
}
