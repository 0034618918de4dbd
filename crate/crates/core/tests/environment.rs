use polymer_lab::cone::l1;
use polymer_lab::env::sample_field;
use polymer_lab::EnvironmentSpec;
use statrs::distribution::{ContinuousCDF, Normal};

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `E[e^{βω - λ}]` computed from densities and mass functions written out
/// here, independent of the library's tail formulas.
fn mean_y(spec: &EnvironmentSpec, beta: f64) -> f64 {
    let lambda = spec.log_mgf(beta).unwrap();
    let (name, params) = spec.to_params();
    let p = |k: &str| params.iter().find(|(n, _)| *n == k).unwrap().1;
    match name {
        "gaussian" => {
            let (m, s) = (p("mean"), p("stddev"));
            let dens = |x: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            simpson(|x| (beta * x - lambda).exp() * dens(x), m - 40.0 * s, m + 40.0 * s, 200_000)
        }
        "two_point" => {
            let (lo, hi, q) = (p("low"), p("high"), p("p_high"));
            q * (beta * hi - lambda).exp() + (1.0 - q) * (beta * lo - lambda).exp()
        }
        "poisson" => {
            let m = p("mean");
            let mut term = (-m - lambda).exp();
            let mut acc = term;
            for k in 1..400 {
                term *= m * beta.exp() / k as f64;
                acc += term;
            }
            acc
        }
        "weibull" => {
            let (c, r, a) = (p("c"), p("rate"), p("shape"));
            // tail capped at one up to x0, density c r a x^{a-1} e^{-r x^a} beyond
            let x0 = if c > 1.0 { (c.ln() / r).powf(1.0 / a) } else { 0.0 };
            let atom = if c < 1.0 { 1.0 - c } else { 0.0 };
            let dens = |x: f64| c * r * a * x.powf(a - 1.0) * (-r * x.powf(a)).exp();
            // x = x0 + u² removes the x^{a-1} kink at the origin
            let g = |u: f64| {
                let x = x0 + u * u;
                (beta * x - lambda).exp() * dens(x) * 2.0 * u
            };
            atom * (-lambda).exp() + simpson(g, 0.0, 60f64.sqrt(), 400_000)
        }
        "gumbel_neg" => {
            let (loc, s) = (p("loc"), p("scale"));
            let dens = |x: f64| {
                let z = (x - loc) / s;
                z.exp() * (-z.exp()).exp() / s
            };
            simpson(|x| (beta * x - lambda).exp() * dens(x), loc - 80.0 * s, loc + 8.0 * s, 400_000)
        }
        "squares_lattice" => {
            let r = p("rate");
            let (mut num, mut den) = (0.0, 0.0);
            for k in 1..200u32 {
                let k2 = (k * k) as f64;
                num += ((beta - r) * k2 - lambda).exp();
                den += (-r * k2).exp();
            }
            num / den
        }
        other => panic!("no oracle for {other}"),
    }
}

fn battery() -> Vec<EnvironmentSpec> {
    vec![
        EnvironmentSpec::gaussian(0.0, 1.0).unwrap(),
        EnvironmentSpec::gaussian(-0.5, 2.0).unwrap(),
        EnvironmentSpec::two_point(-1.0, 1.0, 0.5).unwrap(),
        EnvironmentSpec::poisson(1.0).unwrap(),
        EnvironmentSpec::poisson(3.5).unwrap(),
        EnvironmentSpec::weibull(1.0, 1.0, 2.0).unwrap(),
        EnvironmentSpec::weibull(0.5, 2.0, 1.5).unwrap(),
        EnvironmentSpec::weibull(3.0, 1.0, 2.0).unwrap(),
        EnvironmentSpec::gumbel_neg(0.0, 1.0).unwrap(),
        EnvironmentSpec::gumbel_neg(1.0, 0.5).unwrap(),
        EnvironmentSpec::squares_lattice(2.0).unwrap(),
    ]
}

fn beta_grid(spec: &EnvironmentSpec) -> Vec<f64> {
    let top = spec.beta_max().min(2.0);
    (1..=8).map(|i| top * i as f64 / 8.0).collect()
}

#[test]
fn weights_have_mean_one() {
    for spec in battery() {
        for beta in beta_grid(&spec) {
            let m = mean_y(&spec, beta);
            assert!((m - 1.0).abs() <= 1e-9, "{} at beta {beta}: {m}", spec.label());
        }
    }
}

#[test]
fn log_mgf_is_convex_and_vanishes_at_zero() {
    for spec in battery() {
        assert_eq!(spec.log_mgf(0.0).unwrap(), 0.0);
        let top = spec.beta_max().min(3.0);
        let h = top / 40.0;
        let lam: Vec<f64> = (0..=40).map(|i| spec.log_mgf(i as f64 * h).unwrap()).collect();
        for w in lam.windows(3) {
            let second = (w[2] - 2.0 * w[1] + w[0]) / (h * h);
            assert!(second >= -1e-8, "{}: {second}", spec.label());
        }
    }
}

#[test]
fn tails_are_monotone_probabilities() {
    for spec in battery() {
        let mut prev = 1.0;
        for i in 0..=400 {
            let x = -20.0 + i as f64 * 0.1;
            let q = spec.tail_prob(x);
            assert!((0.0..=1.0).contains(&q));
            assert!(q <= prev, "{} at {x}", spec.label());
            prev = q;
        }
    }
}

#[test]
fn conditioning_raises_the_moment() {
    for spec in battery() {
        for beta in beta_grid(&spec) {
            for a in [-2.0, 0.0, 0.7, 1.5, 3.0, 6.0] {
                if spec.tail_prob(a) == 0.0 {
                    continue;
                }
                let v = spec.log_conditional_exp_moment(beta, a).unwrap();
                assert!(v >= beta * a - 1e-12, "{} beta {beta} A {a}", spec.label());
            }
        }
    }
}

#[test]
fn gaussian_conditional_moment_example() {
    let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    let n = Normal::new(0.0, 1.0).unwrap();
    let want = 0.5f64.exp() * n.sf(1.0) / n.sf(2.0);
    let got = spec.conditional_exp_moment(1.0, 2.0).unwrap();
    assert!((got / want - 1.0).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn conditional_moments_match_direct_integration() {
    let cases = [
        (EnvironmentSpec::weibull(1.0, 1.0, 2.0).unwrap(), 1.0, 1.5),
        (EnvironmentSpec::weibull(2.0, 0.5, 1.5).unwrap(), 0.5, 3.0),
        (EnvironmentSpec::gumbel_neg(0.0, 1.0).unwrap(), 1.0, 0.5),
        (EnvironmentSpec::gumbel_neg(0.5, 2.0).unwrap(), 0.3, 4.0),
    ];
    for (spec, beta, a) in cases {
        // E[e^{βω}; ω > A] = e^{βA}P(ω > A) + β∫_A^∞ e^{βx} P(ω > x) dx
        let tail = |x: f64| spec.tail_prob(x);
        let integral = simpson(|x| (beta * x).exp() * tail(x), a, a + 60.0, 400_000);
        let want = ((beta * a).exp() * tail(a) + beta * integral) / tail(a);
        let got = spec.conditional_exp_moment(beta, a).unwrap();
        assert!((got / want - 1.0).abs() < 1e-9, "{}: {got} vs {want}", spec.label());
    }
}

#[test]
fn deep_gumbel_conditioning_stays_finite() {
    // beyond A ≈ 7 the tail is below e^{-1000}
    let spec = EnvironmentSpec::gumbel_neg(0.0, 1.0).unwrap();
    let mut prev = f64::INFINITY;
    for a in [5.0, 10.0, 20.0, 40.0] {
        let r = (spec.log_conditional_exp_moment(1.0, a).unwrap() - a).exp();
        assert!(r.is_finite() && r >= 1.0 && r <= prev, "A {a}: {r}");
        prev = r;
    }
    assert!(prev - 1.0 < 1e-12);
}

#[test]
fn poisson_conditional_moment_by_series() {
    let spec = EnvironmentSpec::poisson(1.0).unwrap();
    let beta = 0.5;
    for a in [0.5f64, 2.0, 4.7, 10.0] {
        let k0 = a.floor() as u64 + 1;
        let (mut num, mut den) = (0.0, 0.0);
        let mut lf = 0.0;
        for k in 0..200u64 {
            if k > 0 {
                lf += (k as f64).ln();
            }
            if k >= k0 {
                let pk = (-1.0 - lf).exp();
                num += (beta * k as f64).exp() * pk;
                den += pk;
            }
        }
        let got = spec.conditional_exp_moment(beta, a).unwrap();
        assert!((got / (num / den) - 1.0).abs() < 1e-12, "A {a}");
    }
}

#[test]
fn squares_counterexample_inequality() {
    let spec = EnvironmentSpec::squares_lattice(2.0).unwrap();
    let beta = 1.0;
    for k in 1..=6u32 {
        let a = (k * k) as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for j in k + 1..200 {
            let j2 = (j * j) as f64;
            num += ((beta - 2.0) * j2).exp();
            den += (-2.0 * j2).exp();
        }
        let got = spec.log_conditional_exp_moment(beta, a).unwrap();
        assert!((got - (num / den).ln()).abs() < 1e-12);
        assert!(got >= beta * ((k + 1) * (k + 1)) as f64);
    }
}

#[test]
fn sampled_fields_follow_the_cone() {
    let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    let f = sample_field(&spec, 1, 2, 7).unwrap();
    assert_eq!(f.populated(), 5);
    for (t, x) in [(1, [1]), (1, [-1]), (2, [0]), (2, [2]), (2, [-2])] {
        assert!(f.value(t, &x).is_some());
    }
    assert!(f.value(2, &[1]).is_none());

    let a = sample_field(&spec, 3, 10, 0).unwrap();
    let b = sample_field(&spec, 3, 10, 0).unwrap();
    let ea = a.entries();
    let eb = b.entries();
    assert_eq!(ea.len(), eb.len());
    for ((ta, xa, va), (tb, xb, vb)) in ea.iter().zip(&eb) {
        assert_eq!((ta, xa, va.to_bits()), (tb, xb, vb.to_bits()));
        let n = l1(xa, 3);
        assert!(n as usize <= *ta && (*ta as i32 - n) % 2 == 0);
    }
    let c = sample_field(&spec, 3, 10, 1).unwrap();
    assert_ne!(c.row(10)[0].to_bits(), a.row(10)[0].to_bits());
}

#[test]
fn empirical_law_matches_tail() {
    // the field's values at one time follow the specified tail
    for spec in [
        EnvironmentSpec::gaussian(0.0, 1.0).unwrap(),
        EnvironmentSpec::poisson(2.0).unwrap(),
        EnvironmentSpec::weibull(1.0, 1.0, 2.0).unwrap(),
        EnvironmentSpec::gumbel_neg(0.0, 1.0).unwrap(),
    ] {
        let f = sample_field(&spec, 2, 150, 5).unwrap();
        let row = f.row(150);
        let m = row.len() as f64;
        for x in [-1.0, 0.0, 0.5, 1.5] {
            let q = spec.tail_prob(x);
            let emp = row.iter().filter(|&&v| v > x).count() as f64 / m;
            let se = (q * (1.0 - q) / m).sqrt();
            assert!((emp - q).abs() <= 5.0 * se + 1e-12, "{} at {x}: {emp} vs {q}", spec.label());
        }
    }
}
