use polymer_lab::conditions::{
    check_condition1, check_condition2, check_condition3, check_prop_i, check_prop_ii, check_prop_iii, check_rv_y,
    condition2_ratio, derive_condition2_constants, derived_condition3_constant, stabilization, Condition3Options,
    ConditionId, Verdict,
};
use polymer_lab::env::{SyntheticTail, TailModel, YTail};
use polymer_lab::overshoot::{geometric_profile, simulate_convex_overshoot, uniform_profile};
use polymer_lab::EnvironmentSpec;

fn lin(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn a_grid() -> Vec<f64> {
    (3..=50).map(|i| i as f64 * 0.5).collect()
}

fn light_tailed() -> Vec<EnvironmentSpec> {
    vec![
        EnvironmentSpec::gaussian(0.0, 1.0).unwrap(),
        EnvironmentSpec::weibull(1.0, 1.0, 2.0).unwrap(),
        EnvironmentSpec::poisson(1.0).unwrap(),
        EnvironmentSpec::gumbel_neg(0.0, 1.0).unwrap(),
    ]
}

#[test]
fn condition1_battery() {
    for beta in [0.5, 1.0] {
        for spec in light_tailed() {
            let r = check_condition1(&spec, beta, &a_grid()).unwrap();
            assert_eq!(r.verdict, Verdict::Pass, "{} at {beta}", spec.label());
            let c1 = r.constant("c1").unwrap();
            assert!(r.evidence.iter().all(|e| e[1] <= c1));
        }
        let sq = EnvironmentSpec::squares_lattice(2.0).unwrap();
        let r = check_condition1(&sq, beta, &a_grid()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        for k in 2..=5u32 {
            let a = (k * k) as f64;
            let ratio = r.evidence.iter().find(|e| e[0] == a).unwrap()[1];
            let floor = (beta * ((k + 1) * (k + 1) - k * k) as f64).exp();
            assert!(ratio > floor / 2.0, "k={k}: {ratio} vs {floor}");
        }
        assert!(r.constant("growth_rate").unwrap() > 0.0);
    }
}

#[test]
fn two_point_below_the_top_atom() {
    let spec = EnvironmentSpec::two_point(0.0, 1.0, 0.5).unwrap();
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let r = check_condition1(&spec, 1.0, &grid).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    for e in &r.evidence {
        assert!((e[1] - (1.0 - e[0]).exp()).abs() < 1e-14);
    }
}

#[test]
fn stabilization_rule_examples() {
    let flat: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, 1.0]).collect();
    assert_eq!(stabilization(&flat).unwrap().verdict, Verdict::Pass);
    let exploding: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, (i as f64).exp()]).collect();
    assert_eq!(stabilization(&exploding).unwrap().verdict, Verdict::Fail);
    let creeping: Vec<[f64; 2]> = (0..8).map(|i| [i as f64, 1.0 + 0.05 * i as f64]).collect();
    assert_eq!(stabilization(&creeping).unwrap().verdict, Verdict::Inconclusive);
    assert!(stabilization(&flat[..3]).is_err());
}

#[test]
fn derived_constants() {
    let k = derive_condition2_constants(2.0, 3.0, 1.0, 0.5).unwrap();
    assert!((k.a2 - 4.481_689_070_338_065).abs() < 1e-12);
    assert_eq!(k.c2, 3.0);
    for a in [1.5, 4.0, 11.0] {
        let k = derive_condition2_constants(a, 1.0, 0.7, 0.0).unwrap();
        assert!((k.a2 - (0.7 * a).exp()).abs() < 1e-12 * k.a2);
    }
    assert!(derive_condition2_constants(1.0, 1.0, 1.0, 0.0).is_err());
}

#[test]
fn condition2_examples() {
    // Y in {1/2, 2}, P(Y = 2) = 1/3
    let spec = EnvironmentSpec::two_point(0.5f64.ln(), 2f64.ln(), 1.0 / 3.0).unwrap();
    assert!((condition2_ratio(&spec, 1.0, 2.0, 1.0).unwrap() - 4.0).abs() < 1e-12);
    let g = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    for a in [2.0, 10.0, 100.0] {
        assert!(condition2_ratio(&g, 0.5, 1.0, a).unwrap() >= 1.0);
    }
    let grid: Vec<f64> = (0..12).map(|j| 1.5 * 2f64.powi(j)).collect();
    let r = check_condition2(&g, 0.5, &[1.0, 1.5, 2.0], &grid, None).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
}

/// Condition 1 at 2β, then Condition 2 with the derived constants, then
/// Condition 3 with the explicit constant.
#[test]
fn implication_chain() {
    let beta = 0.5;
    for spec in light_tailed() {
        let c1r = check_condition1(&spec, 2.0 * beta, &a_grid()).unwrap();
        assert_eq!(c1r.verdict, Verdict::Pass);
        let lambda = spec.log_mgf(beta).unwrap();
        let k = derive_condition2_constants(c1r.constant("A1").unwrap(), c1r.constant("c1").unwrap(), beta, lambda)
            .unwrap();
        // keep (ln A + λ)/β inside the range certified above
        let top = (beta * 25.0 - lambda).exp();
        let grid: Vec<f64> = (0..40).map(|j| k.a2 * (top / k.a2).powf(j as f64 / 39.0)).collect();
        let c2r = check_condition2(&spec, beta, &[1.0, 1.5, 2.0], &grid, Some(&k)).unwrap();
        assert_eq!(c2r.verdict, Verdict::Pass, "{}", spec.label());

        let y = YTail::new(&spec, beta).unwrap();
        let c3 = derived_condition3_constant(k.c2, k.a2, y.second_moment().unwrap());
        // one dominant weight keeps S > A3 reachable for the nearly bounded Gumbel weight
        let profiles = vec![vec![1.0], vec![0.9, 0.1], vec![0.8, 0.15, 0.05]];
        let a3 = vec![k.a2, 1.05 * k.a2, 1.1 * k.a2, 1.15 * k.a2];
        let mut opts = Condition3Options::new(profiles, vec![1.0, 1.5, 2.0], a3, 1_000_000, 17);
        opts.c3_candidate = Some(c3);
        let c3r = check_condition3(&spec, beta, &opts).unwrap();
        assert_eq!(c3r.verdict, Verdict::Pass, "{}: {:?}", spec.label(), c3r.constants);
        assert!(c3r.constant("worst_upper_bound").unwrap() <= c3);
    }
}

#[test]
fn condition3_is_inconclusive_without_hits() {
    let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    let opts = Condition3Options::new(vec![uniform_profile(4)], vec![2.0], vec![50.0, 60.0, 70.0, 80.0], 1000, 1);
    let r = check_condition3(&spec, 0.5, &opts).unwrap();
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert_eq!(r.condition_id, ConditionId::Cond3);
}

#[test]
fn single_weight_profile_reduces_to_condition2() {
    let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    let beta = 0.5;
    let y = YTail::new(&spec, beta).unwrap();
    let stats = simulate_convex_overshoot(&y, &[1.0], &[1.0, 2.0], &[1.5, 2.0, 3.0], 400_000, 9).unwrap();
    for s in stats {
        let exact = condition2_ratio(&spec, beta, s.p, s.a).unwrap();
        assert!(
            (s.ratio.value - exact).abs() <= 4.0 * s.ratio.std_err,
            "A {} p {}: {} vs {exact}",
            s.a,
            s.p,
            s.ratio.value
        );
    }
}

#[test]
fn jensen_between_exponents() {
    let spec = EnvironmentSpec::poisson(1.0).unwrap();
    let y = YTail::new(&spec, 0.7).unwrap();
    for w in [uniform_profile(3), geometric_profile(6, 0.6)] {
        let stats = simulate_convex_overshoot(&y, &w, &[1.5, 2.0], &[1.0, 1.5, 2.0], 50_000, 4).unwrap();
        for pair in stats.chunks(2) {
            let (p15, p2) = (&pair[0], &pair[1]);
            assert_eq!((p15.p, p2.p), (1.5, 2.0));
            assert!(p15.ratio.value <= p2.ratio.value.powf(0.75) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn tail_criteria_battery() {
    let poisson = EnvironmentSpec::poisson(1.0).unwrap();
    let r = check_prop_i(&poisson, 0.5, 2.0, 1.5, &lin(1.0, 60.0, 60), &lin(2.0, 11.0, 10)).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    let gaussian = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    let r = check_prop_i(&gaussian, 1.0, 1.0, 3.0, &lin(0.5, 30.0, 60), &lin(1.0, 10.0, 10)).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    let sq = EnvironmentSpec::squares_lattice(2.0).unwrap();
    let r = check_prop_i(&sq, 0.5, 1.0, 1.5, &lin(1.0, 25.0, 49), &lin(1.0, 10.0, 10)).unwrap();
    assert_eq!(r.verdict, Verdict::Fail);

    let weibull = EnvironmentSpec::weibull(1.0, 1.0, 2.0).unwrap();
    let grid = lin(0.5, 30.0, 40);
    assert_eq!(check_prop_ii(&gaussian, &grid).unwrap().verdict, Verdict::Pass);
    assert_eq!(check_prop_ii(&weibull, &grid).unwrap().verdict, Verdict::Pass);
    let exp = SyntheticTail::Exponential { rate: 1.0 };
    assert_eq!(check_prop_ii(&exp, &grid).unwrap().verdict, Verdict::Fail);

    let (xs, ys) = (lin(0.5, 5.0, 19), lin(0.5, 3.0, 11));
    for (tail, label) in [
        (&EnvironmentSpec::gumbel_neg(0.0, 1.0).unwrap() as &dyn TailModel, "gumbel"),
        (&EnvironmentSpec::gumbel_neg(0.5, 2.0).unwrap(), "gumbel(0.5, 2)"),
        (&SyntheticTail::DoubleExponential { alpha: 1.0 }, "e^x"),
        (&SyntheticTail::DoubleExponential { alpha: 1.5 }, "e^{x^1.5}"),
    ] {
        let r = check_prop_iii(tail, 1.5, &xs, &ys).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{label}: {:?}", r.constants);
    }
    let r = check_prop_iii(&gaussian, 1.5, &lin(0.5, 10.0, 20), &ys).unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
}

#[test]
fn regular_variation_of_the_weight() {
    let lam = lin(2.0, 4.0, 9);
    let ys = lin(1.0, 60.0, 60);
    let g = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    assert_eq!(check_rv_y(&g, 1.0, 2.0, 2.5, &lam, &ys).unwrap().verdict, Verdict::Pass);
    let sq = EnvironmentSpec::squares_lattice(2.0).unwrap();
    assert_eq!(check_rv_y(&sq, 1.0, 2.0, 2.5, &lam, &ys).unwrap().verdict, Verdict::Fail);
}

#[test]
fn reports_are_deterministic() {
    let spec = EnvironmentSpec::weibull(1.0, 1.0, 2.0).unwrap();
    let opts = Condition3Options::new(vec![uniform_profile(3)], vec![2.0], vec![1.5, 2.0, 2.5, 3.0], 20_000, 3);
    let a = check_condition3(&spec, 0.5, &opts).unwrap();
    let b = check_condition3(&spec, 0.5, &opts).unwrap();
    assert_eq!(a, b);
}
