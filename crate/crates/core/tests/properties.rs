use polymer_lab::env::sample_field;
use polymer_lab::overshoot::count_exceedances;
use polymer_lab::polymer::{decompose_at, pinned_on_field, stopping_time, MartingaleTrace};
use polymer_lab::EnvironmentSpec;
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = EnvironmentSpec> {
    prop_oneof![
        (-1.0..1.0f64, 0.2..2.0f64).prop_map(|(m, s)| EnvironmentSpec::gaussian(m, s).unwrap()),
        (0.05..0.95f64).prop_map(|p| EnvironmentSpec::two_point(-1.0, 1.5, p).unwrap()),
        (0.2..4.0f64).prop_map(|m| EnvironmentSpec::poisson(m).unwrap()),
        (0.5..3.0f64, 0.5..2.0f64).prop_map(|(c, r)| EnvironmentSpec::weibull(c, r, 2.0).unwrap()),
        (-1.0..1.0f64, 0.3..2.0f64).prop_map(|(l, s)| EnvironmentSpec::gumbel_neg(l, s).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn endpoint_measure_is_a_probability(spec in spec_strategy(), beta in 0.0..1.5f64, d in 1usize..=3, n in 0usize..=6, seed: u64) {
        let lambda = spec.log_mgf(beta).unwrap();
        let field = sample_field(&spec, d, n.max(1), seed).unwrap();
        let state = pinned_on_field(&field, n, beta, lambda).unwrap();
        let alpha = state.endpoint_measure().unwrap();
        prop_assert!(alpha.iter().all(|&a| a >= 0.0));
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        prop_assert!(state.weights().iter().cloned().fold(0.0, f64::max) == 1.0);
    }

    #[test]
    fn decomposition_holds(spec in spec_strategy(), beta in 0.0..1.2f64, d in 1usize..=2, n in 0usize..=7, k_frac in 0.0..=1.0f64, seed: u64) {
        let lambda = spec.log_mgf(beta).unwrap();
        let field = sample_field(&spec, d, n.max(1), seed).unwrap();
        let k = ((n as f64) * k_frac).round() as usize;
        let (lhs, rhs) = decompose_at(&field, k, n, beta, lambda).unwrap();
        prop_assert!((lhs.ln() - rhs.ln()).abs() <= 1e-12);
    }

    #[test]
    fn tail_is_monotone(spec in spec_strategy(), x in -5.0..10.0f64, dx in 0.0..5.0f64) {
        let (a, b) = (spec.tail_prob(x), spec.tail_prob(x + dx));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }

    #[test]
    fn exceedance_count_is_bounded(w in prop::collection::vec(0.0..1.0f64, 1..20), y in prop::collection::vec(0.0..10.0f64, 20), a in 0.0..5.0f64) {
        let y = &y[..w.len()];
        let n = count_exceedances(&w, y, a);
        prop_assert!(n <= w.len());
        let top = w.iter().zip(y).map(|(w, y)| w * y).fold(0.0, f64::max);
        if a >= top {
            prop_assert_eq!(n, 0);
        }
    }

    #[test]
    fn stopping_time_is_the_first_crossing(values in prop::collection::vec(0.1..3.0f64, 1..30), t in 1.01..3.0f64) {
        let mut all = vec![1.0];
        all.extend(values);
        let trace = MartingaleTrace::from_values(0.5, &all);
        match stopping_time(&trace, t).unwrap() {
            Some(k) => {
                prop_assert!(all[k] >= t);
                prop_assert!(all[1..k].iter().all(|&v| v < t));
            }
            None => prop_assert!(all[1..].iter().all(|&v| v < t)),
        }
    }
}

#[test]
fn thresholds_at_or_below_one_are_rejected() {
    let trace = MartingaleTrace::from_values(0.5, &[1.0, 2.0]);
    assert!(stopping_time(&trace, 1.0).is_err());
    assert_eq!(stopping_time(&trace, 2.0).unwrap(), Some(1));
}
