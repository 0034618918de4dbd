use super::EnvironmentSpec;
use crate::error::Result;

/// Anything with a computable upper tail `P(X > x)`.
pub trait TailModel {
    /// `ln P(X > x)`.
    fn log_tail(&self, x: f64) -> f64;

    fn tail(&self, x: f64) -> f64 {
        self.log_tail(x).exp()
    }

    fn label(&self) -> String;

    /// Constants `(c, C, γ)` with `c·e^{-C y^γ} <= P(X > y) <= C·e^{-c y^γ}`
    /// for large `y`, when known in closed form.
    fn stretched_envelope(&self) -> Option<StretchedEnvelope> {
        None
    }
}

/// Stretched-exponential tail envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchedEnvelope {
    pub lower_c: f64,
    pub upper_c: f64,
    pub gamma: f64,
}

impl StretchedEnvelope {
    /// Upper bound on `P(X > λy)/P(X > y)` implied by the envelope.
    pub fn ratio_bound(&self, lambda: f64, y: f64) -> f64 {
        let (c, big_c) = (self.lower_c, self.upper_c);
        (big_c / c) * (-(c * lambda.powf(self.gamma) - big_c) * y.powf(self.gamma)).exp()
    }
}

impl TailModel for EnvironmentSpec {
    fn log_tail(&self, x: f64) -> f64 {
        EnvironmentSpec::log_tail(self, x)
    }

    fn label(&self) -> String {
        EnvironmentSpec::label(self)
    }
}

/// Tails that are not environment families but serve as test subjects for
/// the tail criteria.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticTail {
    /// `P(X > x) = e^{-rate·x}` for `x >= 0`.
    Exponential { rate: f64 },
    /// `P(X > x) = exp(-e^{x^alpha})` for `x >= 0`.
    DoubleExponential { alpha: f64 },
    /// `P(X > y) = exp(-y^gamma)` for `y >= 0`.
    Stretched { gamma: f64 },
}

impl TailModel for SyntheticTail {
    fn log_tail(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        match *self {
            SyntheticTail::Exponential { rate } => -rate * x,
            SyntheticTail::DoubleExponential { alpha } => -(x.powf(alpha)).exp(),
            SyntheticTail::Stretched { gamma } => -x.powf(gamma),
        }
    }

    fn label(&self) -> String {
        match self {
            SyntheticTail::Exponential { rate } => format!("synthetic exp(-{rate}x)"),
            SyntheticTail::DoubleExponential { alpha } => format!("synthetic exp(-e^(x^{alpha}))"),
            SyntheticTail::Stretched { gamma } => format!("synthetic exp(-y^{gamma})"),
        }
    }

    fn stretched_envelope(&self) -> Option<StretchedEnvelope> {
        match *self {
            SyntheticTail::Stretched { gamma } => Some(StretchedEnvelope {
                lower_c: 1.0,
                upper_c: 1.0,
                gamma,
            }),
            _ => None,
        }
    }
}

/// Tail of the weight `Y = e^{βω - λ(β)}` induced by an environment.
#[derive(Debug, Clone)]
pub struct YTail<'a> {
    pub spec: &'a EnvironmentSpec,
    pub beta: f64,
    pub lambda: f64,
}

impl<'a> YTail<'a> {
    pub fn new(spec: &'a EnvironmentSpec, beta: f64) -> Result<Self> {
        let lambda = spec.log_mgf(beta)?;
        Ok(Self { spec, beta, lambda })
    }

    /// The environment level `ω` with `Y = y`.
    pub fn omega_level(&self, y: f64) -> f64 {
        (y.ln() + self.lambda) / self.beta
    }

    /// `Y` as a function of `ω`.
    pub fn weight(&self, omega: f64) -> f64 {
        (self.beta * omega - self.lambda).exp()
    }

    /// `E[Y^2] = e^{λ(2β) - 2λ(β)}`.
    pub fn second_moment(&self) -> Result<f64> {
        Ok((self.spec.log_mgf(2.0 * self.beta)? - 2.0 * self.lambda).exp())
    }

    /// `ln E[Y^p | Y > a]`.
    pub fn log_conditional_moment(&self, p: f64, a: f64) -> Result<f64> {
        let level = self.omega_level(a);
        Ok(self.spec.log_conditional_exp_moment(p * self.beta, level)? - p * self.lambda)
    }

    /// Draws `Y` from a uniform by the inverse-tail transform of `ω`.
    pub fn sample_from_uniform(&self, u: f64) -> f64 {
        self.weight(self.spec.sample_from_uniform(u))
    }
}

impl TailModel for YTail<'_> {
    fn log_tail(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.spec.log_tail(self.omega_level(y))
    }

    fn label(&self) -> String {
        format!("Y = exp({}·ω - λ), ω ~ {}", self.beta, self.spec.label())
    }

    fn stretched_envelope(&self) -> Option<StretchedEnvelope> {
        // Negative Gumbel ω gives P(Y > y) = exp(-κ y^{1/(β·scale)}).
        match *self.spec.family() {
            super::Family::GumbelNeg { loc, scale } if self.beta > 0.0 => {
                let kappa = ((self.lambda / self.beta - loc) / scale).exp();
                Some(StretchedEnvelope {
                    lower_c: kappa.min(1.0),
                    upper_c: kappa.max(1.0),
                    gamma: 1.0 / (self.beta * scale),
                })
            }
            _ => None,
        }
    }
}
