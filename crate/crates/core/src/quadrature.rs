//! Adaptive Gauss–Kronrod (7/15) quadrature and a log-space integrator for
//! unimodal integrands on half lines.

use crate::error::{LabError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]` by adaptive bisection until each panel's
/// Kronrod–Gauss discrepancy is within its share of `abs_tol + rel_tol·|I|`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (whole, err) = kronrod15(&f, a, b);
    if !whole.is_finite() {
        return Err(LabError::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    let mut panels = vec![(a, b, whole, err)];
    for _ in 0..2000 {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let total_err: f64 = panels.iter().map(|p| p.3).sum();
        if total_err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        // Split the panel with the largest error estimate.
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            return Err(LabError::Quadrature(format!("panel collapsed near {pa}")));
        }
        let (l, le) = kronrod15(&f, pa, mid);
        let (r, re) = kronrod15(&f, mid, pb);
        panels.push((pa, mid, l, le));
        panels.push((mid, pb, r, re));
    }
    Err(LabError::Quadrature(format!(
        "no convergence on [{a}, {b}] after 2000 subdivisions"
    )))
}

fn argmax_unimodal<H: Fn(f64) -> f64>(h: &H, a: f64) -> f64 {
    let scale = 1.0_f64.max(a.abs());
    let probe = 1e-7 * scale;
    if h(a + probe) <= h(a) {
        return a;
    }
    // Bracket the mode by doubling steps.
    let mut step = 1.0;
    let mut lo = a;
    let mut mid = a + step;
    while h(mid + step) > h(mid) {
        lo = mid;
        mid += step;
        step *= 2.0;
        if step > 1e12 {
            return mid;
        }
    }
    let mut hi = mid + step;
    // Golden-section search on [lo, hi].
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (h(x1), h(x2));
    for _ in 0..200 {
        if hi - lo <= 1e-12 * scale.max(hi.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = h(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = h(x1);
        }
    }
    0.5 * (lo + hi)
}

/// `ln ∫_a^∞ exp(h(x)) dx` for a unimodal log-integrand `h` that decays to
/// `-∞` at infinity.
///
/// The integrand is shifted by its maximum so the quadrature never sees
/// values outside the floating-point range. Panels of doubling width march
/// away from the mode on both sides until a new panel adds less than
/// `1e-14` of the running integral.
pub fn log_integral_exp<H: Fn(f64) -> f64>(h: H, a: f64) -> Result<f64> {
    let mode = argmax_unimodal(&h, a);
    let peak = h(mode);
    if !peak.is_finite() {
        return Err(LabError::Quadrature(format!("log-integrand is {peak} at its mode {mode}")));
    }
    let eps = 1e-3 * 1.0_f64.max(mode.abs());
    let curvature = (h(mode + eps) - 2.0 * peak + h(mode - eps)) / (eps * eps);
    let mut width = if curvature < 0.0 {
        (1.0 / (-curvature).sqrt()).clamp(1e-8, 1e6)
    } else {
        1.0
    };
    if mode <= a {
        // mode on the boundary: the decay length there is 1/|h'(a)|
        let slope = (h(a + 0.5 * eps) - peak) / (0.5 * eps);
        if slope < 0.0 {
            width = width.min(1.0 / -slope).max(1e-12);
        }
    }
    let f = |x: f64| (h(x) - peak).exp();
    const STOP: f64 = 1e-14;
    // the log-integrand itself carries roundoff of order |h|·ε
    const PANEL_REL_TOL: f64 = 1e-12;

    let mut total = 0.0;
    // Right of the mode.
    let mut left = mode;
    let mut w = width;
    let mut converged = false;
    for _ in 0..400 {
        let piece = integrate(&f, left, left + w, (STOP * 1e-2 * total).max(1e-300), PANEL_REL_TOL)?;
        total += piece;
        left += w;
        w *= 2.0;
        if piece <= STOP * total {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LabError::Quadrature(format!(
            "upper tail of the integrand did not decay (a = {a})"
        )));
    }
    // Between `a` and the mode.
    let mut right = mode;
    let mut w = width;
    while right > a {
        let lo = (right - w).max(a);
        let piece = integrate(&f, lo, right, (STOP * 1e-2 * total).max(1e-300), PANEL_REL_TOL)?;
        total += piece;
        right = lo;
        w *= 2.0;
        if piece <= STOP * total * 1e-2 {
            break;
        }
    }
    if !(total > 0.0) {
        return Err(LabError::Quadrature("integral vanished".into()));
    }
    Ok(peak + total.ln())
}
