//! Small special-function toolkit: log-sum-exp, Gaussian tails in log space,
//! the Gaussian quantile.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::gamma_ur;
use std::f64::consts::{PI, SQRT_2};

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log(sum(exp(x_i)))`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `log P(Z > z)` for a standard normal `Z`, accurate deep into the upper tail.
pub fn log_normal_upper_tail(z: f64) -> f64 {
    if z < 25.0 {
        (0.5 * erfc(z / SQRT_2)).ln()
    } else {
        // Mills ratio by continued fraction, evaluated bottom-up.
        let mut frac = z;
        for k in (1..=60).rev() {
            frac = z + k as f64 / frac;
        }
        -0.5 * z * z - 0.5 * (2.0 * PI).ln() - frac.ln()
    }
}

/// `P(Z > z)` for a standard normal `Z`.
pub fn normal_upper_tail(z: f64) -> f64 {
    log_normal_upper_tail(z).exp()
}

/// Standard normal quantile `Φ⁻¹(u)` for `u ∈ (0, 1)`.
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

/// Upper quantile: the `z` with `P(Z > z) = q`, precise for tiny `q`.
#[inline]
pub fn normal_upper_quantile(q: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * q)
}

/// `ln n!`.
pub fn ln_factorial(n: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

/// `ln Γ(s, x)`, the upper incomplete gamma function, for `s > 0`, `x >= 0`.
pub fn log_upper_gamma(s: f64, x: f64) -> f64 {
    if x < s + 1.0 {
        gamma_ur(s, x).ln() + libm::lgamma(s)
    } else {
        scaled_log_upper_gamma(s, x) - x
    }
}

/// `ln(e^x Γ(s, x))`, finite for arbitrarily large `x`.
///
/// Above `x = s + 1` the continued fraction is evaluated by the modified
/// Lentz method; `Γ(s, x)` itself would underflow there long before the
/// scaled value loses precision.
pub fn scaled_log_upper_gamma(s: f64, x: f64) -> f64 {
    if x < s + 1.0 {
        return gamma_ur(s, x).ln() + libm::lgamma(s) + x;
    }
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    s * x.ln() + h.ln()
}
