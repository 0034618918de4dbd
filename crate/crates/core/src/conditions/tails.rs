use super::{check_increasing, stabilization, ConditionId, ConditionReport, Verdict};
use crate::env::{EnvironmentSpec, TailModel, YTail};
use crate::error::{LabError, Result};

/// Tails below this are treated as underflowed.
const TAIL_FLOOR: f64 = 1e-300;
const CONVEXITY_TOL: f64 = 1e-8;
const MONOTONE_REL_TOL: f64 = 1e-12;

/// `ρ(x) = sup_{y ∈ y_grid} P(ω > x+y) e^{My} / P(ω > x)` along `x_grid`.
pub fn check_prop_i<T: TailModel + ?Sized>(
    tail: &T,
    beta: f64,
    k: f64,
    m: f64,
    x_grid: &[f64],
    y_grid: &[f64],
) -> Result<ConditionReport> {
    check_increasing("x grid", x_grid)?;
    check_increasing("y grid", y_grid)?;
    if !(m > 2.0 * beta) {
        return Err(LabError::InvalidParameter {
            name: "M",
            value: m,
            reason: "must exceed 2 beta",
        });
    }
    if !(k > 0.0) || y_grid[0] < k {
        return Err(LabError::InvalidParameter {
            name: "K",
            value: k,
            reason: "need K > 0 and y grid inside [K, inf)",
        });
    }
    let floor = TAIL_FLOOR.ln();
    let mut evidence = Vec::with_capacity(x_grid.len());
    let mut truncated_at = None;
    for &x in x_grid {
        let lx = tail.log_tail(x);
        if lx < floor {
            truncated_at = Some(x);
            break;
        }
        let rho = y_grid
            .iter()
            .map(|&y| (tail.log_tail(x + y) + m * y - lx).exp())
            .fold(0.0, f64::max);
        evidence.push([x, rho]);
    }
    let mut report = finish_stabilized(ConditionId::PropI, evidence, truncated_at)?;
    report.set("beta", beta);
    report.set("K", k);
    report.set("M", m);
    Ok(report)
}

fn finish_stabilized(id: ConditionId, evidence: Vec<[f64; 2]>, truncated_at: Option<f64>) -> Result<ConditionReport> {
    let mut report = if evidence.len() < 4 {
        ConditionReport::new(id, Verdict::Inconclusive)
    } else {
        let s = stabilization(&evidence)?;
        let verdict = match (s.verdict, truncated_at) {
            (Verdict::Pass, _) | (_, None) => s.verdict,
            _ => Verdict::Inconclusive,
        };
        let mut r = ConditionReport::new(id, verdict);
        r.set("limsup_estimate", s.constant);
        r.set("trend_growth_rate", s.growth_rate);
        r.record_stabilization(&s);
        r
    };
    if let Some(x) = truncated_at {
        report.set("underflow_at", x);
    }
    report.stabilization_tolerances();
    report.tol("tail_floor", TAIL_FLOOR);
    report.evidence = evidence;
    Ok(report)
}

/// Convexity and superlinear growth of `f = -ln P(ω > x)` on `x_grid`.
pub fn check_prop_ii<T: TailModel + ?Sized>(tail: &T, x_grid: &[f64]) -> Result<ConditionReport> {
    check_increasing("x grid", x_grid)?;
    if x_grid.len() < 4 {
        return Err(LabError::OutOfRange("x grid needs at least 4 points".into()));
    }
    let f: Vec<f64> = x_grid.iter().map(|&x| -tail.log_tail(x)).collect();
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(LabError::ZeroConditioningProbability { threshold: x_grid[i] });
    }
    let slopes: Vec<f64> = (1..f.len())
        .map(|i| (f[i] - f[i - 1]) / (x_grid[i] - x_grid[i - 1]))
        .collect();
    let min_second = slopes
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let convex = min_second >= -CONVEXITY_TOL;

    let mid = x_grid.len() / 2;
    let growth: Vec<[f64; 2]> = x_grid
        .iter()
        .zip(&f)
        .skip(mid)
        .filter(|(x, _)| **x > 0.0)
        .map(|(&x, &v)| [x, v / x])
        .collect();
    let min_increment = growth
        .windows(2)
        .map(|w| (w[1][1] - w[0][1]) / w[0][1].abs().max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    let superlinear = growth.len() >= 2 && min_increment > 1e-9;

    let verdict = if convex && superlinear {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let mut report = ConditionReport::new(ConditionId::PropII, verdict);
    report.set("min_second_difference", min_second);
    report.set("min_relative_increment_f_over_x", min_increment);
    report.set("convex", convex as u8 as f64);
    report.set("superlinear", superlinear as u8 as f64);
    report.tol("convexity", CONVEXITY_TOL);
    report.tol("superlinear_rel_increment", 1e-9);
    report.evidence = x_grid
        .iter()
        .zip(&f)
        .filter(|(x, _)| **x > 0.0)
        .map(|(&x, &v)| [x, v / x])
        .collect();
    Ok(report)
}

/// Fits `f = sqrt(L^2 - ln^2 c)` with `L = -ln P(ω > x)`, the geometric mean
/// of the bounds allowed by `c^{-1}e^{-cf} <= P <= c e^{-f/c}`, and tests
/// monotonicity and `f(x+y) >= f(x) f(y)` on the grids.
pub fn check_prop_iii<T: TailModel + ?Sized>(
    tail: &T,
    c_candidate: f64,
    x_grid: &[f64],
    y_grid: &[f64],
) -> Result<ConditionReport> {
    check_increasing("x grid", x_grid)?;
    check_increasing("y grid", y_grid)?;
    if !(c_candidate >= 1.0) || !c_candidate.is_finite() {
        // the envelope is empty for c < 1
        return Err(LabError::InvalidParameter {
            name: "c",
            value: c_candidate,
            reason: "envelope constant must be finite and >= 1",
        });
    }
    let lc = c_candidate.ln();
    let fit = |x: f64| -> Option<f64> {
        let l = -tail.log_tail(x);
        if !(l > lc) || !l.is_finite() {
            return None;
        }
        let f = ((l - lc) * (l + lc)).sqrt();
        let ok = f >= (l - lc) / c_candidate * (1.0 - 1e-15) && f <= c_candidate * (l + lc) * (1.0 + 1e-15);
        ok.then_some(f)
    };
    let mut report = ConditionReport::new(ConditionId::PropIII, Verdict::Pass);
    report.set("c", c_candidate);
    report.tol("relative", MONOTONE_REL_TOL);

    let mut fx = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        match fit(x) {
            Some(f) => fx.push(f),
            None => {
                report.verdict = Verdict::Inconclusive;
                report.set("envelope_invalid_at", x);
                return Ok(report);
            }
        }
    }
    let monotone = fx.windows(2).all(|w| w[1] >= w[0] * (1.0 - MONOTONE_REL_TOL));
    let mut worst = (f64::INFINITY, 0.0, 0.0);
    for (&x, &f_x) in x_grid.iter().zip(&fx) {
        for &y in y_grid {
            let (Some(f_y), Some(f_xy)) = (fit(y), fit(x + y)) else {
                report.verdict = Verdict::Inconclusive;
                report.set("envelope_invalid_at", if fit(y).is_none() { y } else { x + y });
                return Ok(report);
            };
            // log-gap: ln f(x+y) - ln f(x) - ln f(y)
            let gap = f_xy.ln() - f_x.ln() - f_y.ln();
            if gap < worst.0 {
                worst = (gap, x, y);
            }
        }
    }
    let supermult = worst.0 >= -MONOTONE_REL_TOL;
    report.verdict = if monotone && supermult {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    report.set("monotone", monotone as u8 as f64);
    report.set("worst_log_gap", worst.0);
    if !supermult {
        report.set("witness_x", worst.1);
        report.set("witness_y", worst.2);
    }
    report.evidence = x_grid.iter().zip(&fx).map(|(&x, &f)| [x, f]).collect();
    Ok(report)
}

/// One-sided regular variation of a positive variable's tail:
/// `g(y) = max_{λ ∈ lambda_grid} λ^M P(Y > λy)/P(Y > y)` along `y_grid`.
///
/// FAIL on a divergent trend or when the tail does not decay at all across
/// `[y, K^2 y]` far out (`ρ = 1`); PASS when the trend stabilises and the
/// far-out ratio `ρ` drops below `K^{-M}`; INCONCLUSIVE otherwise.
pub fn check_rv_tail<T: TailModel + ?Sized>(
    tail: &T,
    k: f64,
    m: f64,
    lambda_grid: &[f64],
    y_grid: &[f64],
) -> Result<ConditionReport> {
    check_increasing("lambda grid", lambda_grid)?;
    check_increasing("y grid", y_grid)?;
    if !(k > 1.0) || !(m > 2.0) {
        return Err(LabError::InvalidParameter {
            name: "K, M",
            value: k,
            reason: "need K > 1 and M > 2",
        });
    }
    let tol = 1e-12;
    if lambda_grid[0] < k * (1.0 - tol) || lambda_grid[lambda_grid.len() - 1] > k * k * (1.0 + tol) {
        return Err(LabError::OutOfRange("lambda grid must lie in [K, K^2]".into()));
    }
    let floor = TAIL_FLOOR.ln();
    let mut evidence = Vec::with_capacity(y_grid.len());
    let mut rho = Vec::with_capacity(y_grid.len());
    let mut truncated_at = None;
    for &y in y_grid {
        let ly = tail.log_tail(y);
        if ly < floor {
            truncated_at = Some(y);
            break;
        }
        let mut g = 0.0f64;
        let mut r_max = 0.0f64;
        for &l in lambda_grid {
            let r = (tail.log_tail(l * y) - ly).exp();
            r_max = r_max.max(r);
            g = g.max(l.powf(m) * r);
        }
        evidence.push([y, g]);
        rho.push(r_max);
    }
    let threshold = k.powf(-m);
    let mut report = finish_stabilized(ConditionId::RvY, evidence, truncated_at)?;
    let n = rho.len();
    let rho_hat = rho[n - n.div_ceil(4).min(n)..]
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let flat = rho_hat >= 1.0 - tol;
    report.verdict = match report.verdict {
        Verdict::Fail => Verdict::Fail,
        _ if flat => Verdict::Fail,
        Verdict::Pass if rho_hat < threshold => Verdict::Pass,
        _ => Verdict::Inconclusive,
    };
    if truncated_at.is_some() && report.verdict != Verdict::Pass {
        report.verdict = Verdict::Inconclusive;
    }
    report.set("K", k);
    report.set("M", m);
    report.set("rho_hat", rho_hat);
    report.set("K_pow_minus_M", threshold);
    if let Some(env) = tail.stretched_envelope() {
        let y_last = report.evidence.last().map(|e| e[0]).unwrap_or(y_grid[0]);
        let bound = lambda_grid
            .iter()
            .map(|&l| l.powf(m) * env.ratio_bound(l, y_last))
            .fold(0.0, f64::max);
        let decays = lambda_grid
            .iter()
            .all(|&l| env.lower_c * l.powf(env.gamma) > env.upper_c);
        report.set("envelope_c", env.lower_c);
        report.set("envelope_C", env.upper_c);
        report.set("envelope_gamma", env.gamma);
        report.set("envelope_bound_at_last_y", bound);
        report.set("envelope_decays", decays as u8 as f64);
    }
    Ok(report)
}

/// [`check_rv_tail`] for `Y = e^{βω - λ(β)}`.
pub fn check_rv_y(
    spec: &EnvironmentSpec,
    beta: f64,
    k: f64,
    m: f64,
    lambda_grid: &[f64],
    y_grid: &[f64],
) -> Result<ConditionReport> {
    let y = YTail::new(spec, beta)?;
    let mut report = check_rv_tail(&y, k, m, lambda_grid, y_grid)?;
    report.set("beta", beta);
    report.set("lambda", y.lambda);
    Ok(report)
}
