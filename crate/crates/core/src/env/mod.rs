//! Environment distributions: log-moment generating functions, tails,
//! conditional exponential moments, inverse-tail sampling.
//!
//! Every family is described through its upper tail `G(x) = P(ω > x)`.
//! For families without a closed form the truncated exponential moment uses
//! integration by parts,
//! `E[e^{βω}; ω > A] = e^{βA} G(A) + β ∫_A^∞ e^{βx} G(x) dx`,
//! which holds for any law (atoms included) and only needs the tail.

mod field;
mod tail;

pub use field::{sample_field, EnvField, EnvSampler, DEFAULT_SITE_BUDGET};
pub use tail::{StretchedEnvelope, SyntheticTail, TailModel, YTail};

use crate::error::{LabError, Result};
use crate::quadrature::log_integral_exp;
use crate::special::{ln_factorial, log_add_exp, log_normal_upper_tail, normal_upper_quantile, scaled_log_upper_gamma};
use serde::Serialize;
use libm::lgamma as ln_gamma;
use std::collections::BTreeMap;

/// Default largest inverse temperature for which `λ(β)` is requested.
pub const DEFAULT_BETA_MAX: f64 = 4.0;

/// Distribution family of the site disorder `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Gaussian { mean: f64, stddev: f64 },
    /// `ω = high` with probability `p_high`, otherwise `low`.
    TwoPoint { low: f64, high: f64, p_high: f64 },
    Poisson { mean: f64 },
    /// `P(ω > x) = min(1, c·exp(-rate·x^shape))` for `x >= 0`, and `ω >= 0`.
    Weibull { c: f64, rate: f64, shape: f64 },
    /// Negative Gumbel: `P(ω > x) = exp(-exp((x - loc)/scale))`.
    GumbelNeg { loc: f64, scale: f64 },
    /// Supported on `{k² : k >= 1}` with `P(ω = k²) ∝ exp(-rate·k²)`.
    SquaresLattice { rate: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian { .. } => "gaussian",
            Family::TwoPoint { .. } => "two_point",
            Family::Poisson { .. } => "poisson",
            Family::Weibull { .. } => "weibull",
            Family::GumbelNeg { .. } => "gumbel_neg",
            Family::SquaresLattice { .. } => "squares_lattice",
        }
    }
}

/// Precomputed tail of the squares-supported law.
#[derive(Debug, Clone, PartialEq)]
struct SquaresTable {
    log_norm: f64,
    // log_tail[k] = ln P(ω >= k²) for k >= 1, entry 0 unused
    log_tail: Vec<f64>,
}

impl SquaresTable {
    fn new(rate: f64) -> Result<Self> {
        // Series with terms exp(-rate k²), truncated once the ratio of
        // successive terms and the remainder drop below 1e-15.
        let mut log_terms = Vec::new();
        let mut k = 1u64;
        loop {
            let lt = -rate * (k * k) as f64;
            log_terms.push(lt);
            // keep tails down to e^{-2000} relative to the leading atom
            if lt - log_terms[0] < -2000.0 {
                break;
            }
            k += 1;
            if k > 10_000_000 {
                return Err(LabError::Series("squares-lattice normaliser".into()));
            }
        }
        let n = log_terms.len();
        let mut log_tail = vec![f64::NEG_INFINITY; n + 2];
        let mut acc = f64::NEG_INFINITY;
        for i in (0..n).rev() {
            acc = log_add_exp(acc, log_terms[i]);
            log_tail[i + 1] = acc;
        }
        let log_norm = acc;
        for v in log_tail.iter_mut().skip(1) {
            *v -= log_norm;
        }
        log_tail[1] = 0.0;
        Ok(Self { log_norm, log_tail })
    }

    fn log_tail_from(&self, k: u64) -> f64 {
        let k = k.max(1) as usize;
        if k < self.log_tail.len() {
            self.log_tail[k]
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// A validated environment law with the range of β it is used at.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    family: Family,
    beta_max: f64,
    squares: Option<SquaresTable>,
}

fn param_check(ok: bool, name: &'static str, value: f64, reason: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(LabError::InvalidParameter { name, value, reason })
    }
}

impl EnvironmentSpec {
    pub fn new(family: Family, beta_max: f64) -> Result<Self> {
        param_check(beta_max >= 0.0, "beta_max", beta_max, "must be >= 0")?;
        let mut squares = None;
        match family {
            Family::Gaussian { mean, stddev } => {
                param_check(mean.is_finite(), "mean", mean, "must be finite")?;
                param_check(stddev > 0.0, "stddev", stddev, "must be > 0")?;
            }
            Family::TwoPoint { low, high, p_high } => {
                param_check(low.is_finite(), "low", low, "must be finite")?;
                param_check(high > low, "high", high, "must exceed low")?;
                param_check(p_high > 0.0 && p_high < 1.0, "p_high", p_high, "must lie in (0, 1)")?;
            }
            Family::Poisson { mean } => {
                param_check(mean > 0.0, "mean", mean, "must be > 0")?;
            }
            Family::Weibull { c, rate, shape } => {
                param_check(c > 0.0, "c", c, "must be > 0")?;
                param_check(rate > 0.0, "rate", rate, "must be > 0")?;
                param_check(shape > 1.0, "shape", shape, "must be > 1")?;
            }
            Family::GumbelNeg { loc, scale } => {
                param_check(loc.is_finite(), "loc", loc, "must be finite")?;
                param_check(scale > 0.0, "scale", scale, "must be > 0")?;
            }
            Family::SquaresLattice { rate } => {
                param_check(rate > 0.0, "rate", rate, "must be > 0")?;
                // E[e^{βω}] = Σ e^{(β - rate) k²}/Z is finite only for β < rate.
                param_check(
                    beta_max < rate,
                    "beta_max",
                    beta_max,
                    "must be below the lattice rate for finite exponential moments",
                )?;
                squares = Some(SquaresTable::new(rate)?);
            }
        }
        Ok(Self {
            family,
            beta_max,
            squares,
        })
    }

    pub fn gaussian(mean: f64, stddev: f64) -> Result<Self> {
        Self::new(Family::Gaussian { mean, stddev }, DEFAULT_BETA_MAX)
    }

    pub fn two_point(low: f64, high: f64, p_high: f64) -> Result<Self> {
        Self::new(Family::TwoPoint { low, high, p_high }, DEFAULT_BETA_MAX)
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        Self::new(Family::Poisson { mean }, DEFAULT_BETA_MAX)
    }

    pub fn weibull(c: f64, rate: f64, shape: f64) -> Result<Self> {
        Self::new(Family::Weibull { c, rate, shape }, DEFAULT_BETA_MAX)
    }

    pub fn gumbel_neg(loc: f64, scale: f64) -> Result<Self> {
        Self::new(Family::GumbelNeg { loc, scale }, DEFAULT_BETA_MAX)
    }

    /// Squares-supported law; `beta_max` defaults to just below `rate`.
    pub fn squares_lattice(rate: f64) -> Result<Self> {
        Self::new(Family::SquaresLattice { rate }, rate * 0.999)
    }

    pub fn with_beta_max(mut self, beta_max: f64) -> Result<Self> {
        self = Self::new(self.family, beta_max)?;
        Ok(self)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self.family,
            Family::TwoPoint { .. } | Family::Poisson { .. } | Family::SquaresLattice { .. }
        )
    }

    /// Builds a spec from its config-section form: family name plus named parameters.
    pub fn from_params(family: &str, params: &BTreeMap<String, f64>) -> std::result::Result<Self, String> {
        let allowed: &[&str] = match family {
            "gaussian" => &["mean", "stddev", "beta_max"],
            "two_point" => &["low", "high", "p_high", "beta_max"],
            "poisson" => &["mean", "beta_max"],
            "weibull" => &["c", "rate", "shape", "beta_max"],
            "gumbel_neg" => &["loc", "scale", "beta_max"],
            "squares_lattice" => &["rate", "beta_max"],
            other => return Err(format!("unknown family `{other}`")),
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("unknown parameter `{k}` for family `{family}`"));
        }
        let get = |k: &str| params.get(k).copied();
        let need = |k: &str| get(k).ok_or_else(|| format!("missing parameter `{k}` for family `{family}`"));
        let fam = match family {
            "gaussian" => Family::Gaussian {
                mean: get("mean").unwrap_or(0.0),
                stddev: get("stddev").unwrap_or(1.0),
            },
            "two_point" => Family::TwoPoint {
                low: need("low")?,
                high: need("high")?,
                p_high: need("p_high")?,
            },
            "poisson" => Family::Poisson { mean: need("mean")? },
            "weibull" => Family::Weibull {
                c: get("c").unwrap_or(1.0),
                rate: get("rate").unwrap_or(1.0),
                shape: need("shape")?,
            },
            "gumbel_neg" => Family::GumbelNeg {
                loc: get("loc").unwrap_or(0.0),
                scale: get("scale").unwrap_or(1.0),
            },
            _ => Family::SquaresLattice { rate: need("rate")? },
        };
        let beta_max = match (get("beta_max"), fam) {
            (Some(b), _) => b,
            (None, Family::SquaresLattice { rate }) => rate * 0.999,
            (None, _) => DEFAULT_BETA_MAX,
        };
        Self::new(fam, beta_max).map_err(|e| e.to_string())
    }

    /// Config-section form, parameters in a fixed order.
    pub fn to_params(&self) -> (&'static str, Vec<(&'static str, f64)>) {
        let mut p = match self.family {
            Family::Gaussian { mean, stddev } => vec![("mean", mean), ("stddev", stddev)],
            Family::TwoPoint { low, high, p_high } => vec![("low", low), ("high", high), ("p_high", p_high)],
            Family::Poisson { mean } => vec![("mean", mean)],
            Family::Weibull { c, rate, shape } => vec![("c", c), ("rate", rate), ("shape", shape)],
            Family::GumbelNeg { loc, scale } => vec![("loc", loc), ("scale", scale)],
            Family::SquaresLattice { rate } => vec![("rate", rate)],
        };
        p.push(("beta_max", self.beta_max));
        (self.family.name(), p)
    }

    /// Short human-readable label, e.g. `gaussian(mean=0, stddev=1)`.
    pub fn label(&self) -> String {
        let (name, params) = self.to_params();
        let inner: Vec<String> = params
            .iter()
            .filter(|(k, _)| *k != "beta_max")
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{name}({})", inner.join(", "))
    }

    pub(crate) fn check_beta(&self, beta: f64) -> Result<()> {
        if beta >= 0.0 && beta <= self.beta_max * (1.0 + 1e-12) {
            Ok(())
        } else {
            Err(LabError::BetaOutOfRange {
                beta,
                beta_max: self.beta_max,
            })
        }
    }

    /// `ln P(ω > x)`, `-inf` when the tail vanishes.
    pub fn log_tail(&self, x: f64) -> f64 {
        match self.family {
            Family::Gaussian { mean, stddev } => log_normal_upper_tail((x - mean) / stddev),
            Family::TwoPoint { low, high, p_high } => {
                if x < low {
                    0.0
                } else if x < high {
                    p_high.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Family::Poisson { mean } => {
                if x < 0.0 {
                    0.0
                } else {
                    poisson_log_upper(mean, x.floor() as u64 + 1, 0.0)
                }
            }
            Family::Weibull { c, rate, shape } => {
                if x < 0.0 {
                    0.0
                } else {
                    (c.ln() - rate * x.powf(shape)).min(0.0)
                }
            }
            Family::GumbelNeg { loc, scale } => -((x - loc) / scale).exp(),
            Family::SquaresLattice { .. } => {
                let table = self.squares.as_ref().expect("squares table");
                table.log_tail_from(first_root_above(x))
            }
        }
    }

    /// `P(ω > x)`.
    pub fn tail_prob(&self, x: f64) -> f64 {
        self.log_tail(x).exp()
    }

    /// `λ(β) = ln E[e^{βω}]`.
    pub fn log_mgf(&self, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        if beta == 0.0 {
            return Ok(0.0);
        }
        Ok(match self.family {
            Family::Gaussian { mean, stddev } => mean * beta + 0.5 * stddev * stddev * beta * beta,
            Family::TwoPoint { low, high, p_high } => {
                log_add_exp((1.0 - p_high).ln() + beta * low, p_high.ln() + beta * high)
            }
            Family::Poisson { mean } => mean * beta.exp_m1(),
            Family::Weibull { .. } => {
                // ω >= 0: E[e^{βω}] = 1 + β ∫_0^∞ e^{βx} G(x) dx
                let li = log_integral_exp(|x| beta * x + self.log_tail(x), 0.0)?;
                log_add_exp(0.0, beta.ln() + li)
            }
            Family::GumbelNeg { loc, scale } => beta * loc + ln_gamma(1.0 + beta * scale),
            Family::SquaresLattice { rate } => {
                let table = self.squares.as_ref().expect("squares table");
                squares_log_sum(rate - beta, 1)? - table.log_norm
            }
        })
    }

    /// `ln E[e^{βω} | ω > A]`.
    pub fn log_conditional_exp_moment(&self, beta: f64, a: f64) -> Result<f64> {
        self.check_beta(beta)?;
        let log_cond = self.log_tail(a);
        if log_cond == f64::NEG_INFINITY {
            return Err(LabError::ZeroConditioningProbability { threshold: a });
        }
        if beta == 0.0 {
            return Ok(0.0);
        }
        let log_joint = match self.family {
            Family::Gaussian { mean, stddev } => {
                let z = (a - mean) / stddev;
                self.log_mgf(beta)? + log_normal_upper_tail(z - beta * stddev)
            }
            Family::TwoPoint { high, p_high, low } => {
                if a < low {
                    self.log_mgf(beta)?
                } else {
                    p_high.ln() + beta * high
                }
            }
            Family::Poisson { mean } => {
                let k0 = if a < 0.0 { 0 } else { a.floor() as u64 + 1 };
                poisson_log_upper(mean, k0, beta)
            }
            Family::SquaresLattice { rate } => {
                let table = self.squares.as_ref().expect("squares table");
                squares_log_sum(rate - beta, first_root_above(a))? - table.log_norm
            }
            Family::GumbelNeg { loc, scale } => {
                // ω = loc + scale·ln E with E ~ Exp(1), and P(ω > A) = e^{-x}
                let x = ((a - loc) / scale).exp();
                return Ok(beta * loc + scaled_log_upper_gamma(1.0 + beta * scale, x));
            }
            Family::Weibull { .. } => {
                let li = log_integral_exp(|x| beta * x + self.log_tail(x), a)?;
                log_add_exp(beta * a + log_cond, beta.ln() + li)
            }
        };
        Ok(log_joint - log_cond)
    }

    /// `E[e^{βω} | ω > A]`.
    pub fn conditional_exp_moment(&self, beta: f64, a: f64) -> Result<f64> {
        self.log_conditional_exp_moment(beta, a).map(f64::exp)
    }

    /// Inverse-tail transform: the `ω` with `P(ω > ω) ≈ u`, so that
    /// `{ω > x} = {u < P(ω > x)}` for the coupled uniform `u ∈ (0, 1)`.
    pub fn sample_from_uniform(&self, u: f64) -> f64 {
        match self.family {
            Family::Gaussian { mean, stddev } => mean + stddev * normal_upper_quantile(u),
            Family::TwoPoint { low, high, p_high } => {
                if u < p_high {
                    high
                } else {
                    low
                }
            }
            Family::Poisson { mean } => {
                // Smallest k with P(ω > k) <= u.
                let target = 1.0 - u;
                let mut log_p = -mean;
                let mut cdf = log_p.exp();
                let mut k = 0u64;
                while cdf < target && k < 100_000 {
                    k += 1;
                    log_p += mean.ln() - (k as f64).ln();
                    cdf += log_p.exp();
                }
                k as f64
            }
            Family::Weibull { c, rate, shape } => {
                if u >= c.min(1.0) {
                    (c.ln().max(0.0) / rate).powf(1.0 / shape)
                } else {
                    ((c / u).ln() / rate).powf(1.0 / shape)
                }
            }
            Family::GumbelNeg { loc, scale } => loc + scale * (-u.ln()).ln(),
            Family::SquaresLattice { .. } => {
                let table = self.squares.as_ref().expect("squares table");
                let lu = u.ln();
                // ω = k² iff P(ω >= (k+1)²) <= u < P(ω >= k²)
                let mut k = 1usize;
                while k + 1 < table.log_tail.len() && table.log_tail[k + 1] > lu {
                    k += 1;
                }
                (k * k) as f64
            }
        }
    }
}

/// Smallest `k >= 1` with `k² > x`.
fn first_root_above(x: f64) -> u64 {
    if x < 1.0 {
        return 1;
    }
    let mut k = x.sqrt().floor() as u64;
    while ((k * k) as f64) > x {
        k -= 1;
    }
    while (((k + 1) * (k + 1)) as f64) <= x {
        k += 1;
    }
    k + 1
}

/// `ln Σ_{k >= k0} exp(-rate·k²)`, `rate > 0`.
fn squares_log_sum(rate: f64, k0: u64) -> Result<f64> {
    if rate <= 0.0 {
        return Err(LabError::Series(format!(
            "squares series diverges (effective rate {rate} <= 0)"
        )));
    }
    let mut acc = f64::NEG_INFINITY;
    let mut k = k0.max(1);
    loop {
        let term = -rate * (k as f64) * (k as f64);
        acc = log_add_exp(acc, term);
        // terms decrease monotonically; stop once they fall below 1e-17 of the sum
        if term - acc < -40.0 {
            break;
        }
        k += 1;
        if k > 100_000_000 {
            return Err(LabError::Series("squares series truncation".into()));
        }
    }
    Ok(acc)
}

/// `ln Σ_{k >= k0} p_k e^{βk}` for the Poisson(mean) mass `p_k`.
fn poisson_log_upper(mean: f64, k0: u64, beta: f64) -> f64 {
    // Terms ln p_k + βk; consecutive ratio is mean·e^β/(k+1).
    let lm = mean.ln();
    let peak = mean * beta.exp();
    let mut k = k0;
    let mut term = -mean + k as f64 * lm - ln_factorial(k) + beta * k as f64;
    let mut acc = f64::NEG_INFINITY;
    loop {
        acc = log_add_exp(acc, term);
        let decreasing = (k + 1) as f64 > peak;
        if decreasing && term - acc < -36.0 * 1.2 {
            break;
        }
        k += 1;
        term += lm + beta - (k as f64).ln();
        if k > k0 + 10_000_000 {
            break;
        }
    }
    acc
}
