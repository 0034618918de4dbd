//! Transfer DP against brute force: path sums, environment enumeration and
//! the two-replica collision formula.

use polymer_lab::cone::{Cone, Site, MAX_DIM};
use polymer_lab::env::{sample_field, EnvField};
use polymer_lab::polymer::{
    decompose_at, pinned_on_field, run_trace, second_moment_exact, PartitionState,
};
use polymer_lab::EnvironmentSpec;
use std::collections::BTreeMap;

/// `(2d)^{-n} Σ_paths exp(Σ_t βω - λ)` by depth-first recursion over all
/// paths, as plain (non-log) sums keyed by endpoint.
fn brute_pinned(env: &dyn Fn(usize, &Site) -> f64, d: usize, n: usize, beta: f64, lambda: f64) -> BTreeMap<Site, f64> {
    fn rec(
        env: &dyn Fn(usize, &Site) -> f64,
        d: usize,
        n: usize,
        t: usize,
        weight: f64,
        pos: &mut Site,
        beta: f64,
        lambda: f64,
        out: &mut BTreeMap<Site, f64>,
    ) {
        if t == n {
            *out.entry(*pos).or_insert(0.0) += weight;
            return;
        }
        for axis in 0..d {
            for s in [1, -1] {
                pos[axis] += s;
                let w = weight * (beta * env(t + 1, pos) - lambda).exp() / (2 * d) as f64;
                rec(env, d, n, t + 1, w, pos, beta, lambda, out);
                pos[axis] -= s;
            }
        }
    }
    let mut out = BTreeMap::new();
    let mut pos: Site = [0; MAX_DIM];
    rec(env, d, n, 0, 1.0, &mut pos, beta, lambda, &mut out);
    out
}

fn field_env(field: &EnvField) -> impl Fn(usize, &Site) -> f64 + '_ {
    move |t, x| field.value(t, x).expect("site inside the cone")
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn check_against_paths(spec: &EnvironmentSpec, beta: f64, d: usize, n: usize, seed: u64) -> f64 {
    let lambda = spec.log_mgf(beta).unwrap();
    let field = sample_field(spec, d, n, seed).unwrap();
    let state = pinned_on_field(&field, n, beta, lambda).unwrap();
    let env = field_env(&field);
    let brute = brute_pinned(&env, d, n, beta, lambda);
    let total: f64 = brute.values().sum();
    let mut worst = rel(state.total().value(), total);
    let alpha = state.endpoint_measure().unwrap();
    let cone = Cone::new(d, n).unwrap();
    assert_eq!(brute.len(), cone.site_count(n));
    for (x, w) in &brute {
        let i = cone.rank(n, x).unwrap();
        worst = worst.max(rel(state.log_pinned(i).exp(), *w));
        worst = worst.max(rel(alpha[i], w / total));
    }
    worst
}

#[test]
fn dp_matches_path_enumeration_in_one_dimension() {
    let specs = [
        EnvironmentSpec::two_point(-1.0, 1.0, 0.5).unwrap(),
        EnvironmentSpec::two_point(0.0, 2.0, 0.2).unwrap(),
        EnvironmentSpec::gaussian(0.0, 1.0).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for spec in &specs {
        for beta in [0.3, 1.0, 2.5] {
            for n in 1..=8 {
                for seed in 0..50 {
                    worst = worst.max(check_against_paths(spec, beta, 1, n, seed));
                }
            }
        }
    }
    assert!(worst <= 1e-12, "max relative error {worst:e}");
}

#[test]
fn dp_matches_path_enumeration_in_higher_dimensions() {
    let spec = EnvironmentSpec::gaussian(0.2, 0.7).unwrap();
    let mut worst: f64 = 0.0;
    for (d, max_n) in [(2, 6), (3, 4), (4, 3)] {
        for n in 1..=max_n {
            for seed in 0..5 {
                worst = worst.max(check_against_paths(&spec, 0.8, d, n, seed));
            }
        }
    }
    assert!(worst <= 1e-12, "max relative error {worst:e}");
}

#[test]
fn trace_matches_path_enumeration() {
    let spec = EnvironmentSpec::two_point(-1.0, 1.0, 0.5).unwrap();
    let beta = 0.7;
    let lambda = spec.log_mgf(beta).unwrap();
    for seed in [3, 11, 12] {
        let trace = run_trace(&spec, beta, 1, 6, seed).unwrap();
        let field = sample_field(&spec, 1, 6, seed).unwrap();
        let env = field_env(&field);
        assert_eq!(trace.values[0].value(), 1.0);
        for n in 1..=6 {
            let total: f64 = brute_pinned(&env, 1, n, beta, lambda).values().sum();
            assert!(rel(trace.values[n].value(), total) <= 1e-12);
        }
    }
}

#[test]
fn hand_examples() {
    // one step, both neighbours carry v: W_1 = e^{βv - λ}
    let spec = EnvironmentSpec::two_point(-1.0, 1.0, 0.5).unwrap();
    let cone = Cone::new(1, 2).unwrap();
    let beta = 0.6;
    let lambda = spec.log_mgf(beta).unwrap();
    let s1 = PartitionState::initial(1).unwrap().evolve(&cone, &[1.0, 1.0], beta, lambda).unwrap();
    assert!(rel(s1.total().value(), (beta - lambda).exp()) < 1e-15);

    // flat environment, Gaussian λ = β²/2: W_2 = e^{-β²}
    let beta = 1.3;
    let gaussian = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    let lambda = gaussian.log_mgf(beta).unwrap();
    assert_eq!(lambda, beta * beta / 2.0);
    let s = PartitionState::initial(1).unwrap();
    let s = s.evolve(&cone, &[0.0; 2], beta, lambda).unwrap();
    let s = s.evolve(&cone, &[0.0; 3], beta, lambda).unwrap();
    assert!(rel(s.total().value(), (-beta * beta).exp()) < 1e-15);
    let alpha = s.endpoint_measure().unwrap();
    assert!(rel(alpha[0], 0.25) < 1e-15 && rel(alpha[1], 0.5) < 1e-15);
}

/// All assignments of a two-point law to `sites` sites, with probabilities.
fn assignments(sites: usize, low: f64, high: f64, p_high: f64) -> impl Iterator<Item = (Vec<f64>, f64)> {
    (0u64..1 << sites).map(move |mask| {
        let mut values = Vec::with_capacity(sites);
        let mut prob = 1.0;
        for i in 0..sites {
            if mask >> i & 1 == 1 {
                values.push(high);
                prob *= p_high;
            } else {
                values.push(low);
                prob *= 1.0 - p_high;
            }
        }
        (values, prob)
    })
}

fn run_rows(cone: &Cone, rows: &[f64], n: usize, beta: f64, lambda: f64) -> PartitionState {
    let mut state = PartitionState::initial(cone.dim()).unwrap();
    let mut offset = 0;
    for t in 1..=n {
        let len = cone.site_count(t);
        state = state.evolve(cone, &rows[offset..offset + len], beta, lambda).unwrap();
        offset += len;
    }
    state
}

#[test]
fn martingale_by_environment_enumeration() {
    let (low, high, p) = (-0.5, 1.5, 0.3);
    let spec = EnvironmentSpec::two_point(low, high, p).unwrap();
    let beta = 0.9;
    // independent closed form for the two-atom mgf
    let lambda = (p * (beta * high).exp() + (1.0 - p) * (beta * low).exp()).ln();
    assert!(rel(spec.log_mgf(beta).unwrap(), lambda) < 1e-15);
    for n in 1..=4 {
        let cone = Cone::new(1, n).unwrap();
        let before: usize = (1..n).map(|t| cone.site_count(t)).sum();
        let last = cone.site_count(n);
        let mut mean = 0.0;
        for (past, p_past) in assignments(before, low, high, p) {
            let prev = run_rows(&cone, &past, n - 1, beta, lambda).total().value();
            let mut conditional = 0.0;
            for (row, p_row) in assignments(last, low, high, p) {
                let mut all = past.clone();
                all.extend_from_slice(&row);
                let w = run_rows(&cone, &all, n, beta, lambda).total().value();
                conditional += p_row * w;
            }
            assert!(rel(conditional, prev) <= 1e-12, "n={n}: {conditional} vs {prev}");
            mean += p_past * conditional;
        }
        assert!((mean - 1.0).abs() <= 1e-12, "n={n}: E[W_n] = {mean}");
    }
}

#[test]
fn second_moment_by_environment_and_path_enumeration() {
    let (low, high, p) = (-1.0, 1.0, 0.5);
    let spec = EnvironmentSpec::two_point(low, high, p).unwrap();
    let beta = 0.5;
    let lambda = spec.log_mgf(beta).unwrap();
    for (d, n) in [(1, 1), (1, 2), (1, 3), (2, 2)] {
        let cone = Cone::new(d, n).unwrap();
        let sites: usize = (1..=n).map(|t| cone.site_count(t)).sum();
        let mut m2 = 0.0;
        for (values, prob) in assignments(sites, low, high, p) {
            let mut index = BTreeMap::new();
            let mut k = 0;
            for t in 1..=n {
                for x in cone.sites(t) {
                    index.insert((t, x), values[k]);
                    k += 1;
                }
            }
            let env = |t: usize, x: &Site| index[&(t, *x)];
            let w: f64 = brute_pinned(&env, d, n, beta, lambda).values().sum();
            m2 += prob * w * w;
        }
        let exact = second_moment_exact(&spec, beta, d, n).unwrap();
        assert!(rel(exact, m2) <= 1e-12, "d={d} n={n}: {exact} vs {m2}");
    }
    // d = 1, n = 1: two independent steps collide with probability 1/2
    let gamma = spec.log_mgf(2.0 * beta).unwrap() - 2.0 * lambda;
    let one = second_moment_exact(&spec, beta, 1, 1).unwrap();
    assert!(rel(one, 0.5 * gamma.exp() + 0.5) < 1e-14);
    assert_eq!(second_moment_exact(&spec, 0.0, 3, 40).unwrap(), 1.0);
}

#[test]
fn decomposition_on_random_fields() {
    let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    let beta = 0.8;
    let lambda = spec.log_mgf(beta).unwrap();
    for (d, n) in [(1, 10), (2, 7), (3, 5)] {
        for seed in 0..3 {
            let field = sample_field(&spec, d, n, seed).unwrap();
            for m in 0..=n {
                for k in 0..=m {
                    let (lhs, rhs) = decompose_at(&field, k, m, beta, lambda).unwrap();
                    let err = (lhs.ln() - rhs.ln()).exp_m1().abs();
                    assert!(err <= 1e-12, "d={d} k={k} n={m}: {err:e}");
                }
            }
        }
    }
}

#[test]
fn monte_carlo_mean_is_one() {
    let spec = EnvironmentSpec::gaussian(0.0, 1.0).unwrap();
    for (d, beta, n) in [(1, 0.5, 12), (2, 0.7, 8), (3, 0.4, 6)] {
        let r = 4000u64;
        let values: Vec<f64> = (0..r)
            .map(|s| run_trace(&spec, beta, d, n, 1000 + s).unwrap().values[n].value())
            .collect();
        let mean = values.iter().sum::<f64>() / r as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64;
        let bound = 4.0 * (var / r as f64).sqrt();
        assert!((mean - 1.0).abs() <= bound, "d={d}: mean {mean}, bound {bound}");
    }
}
