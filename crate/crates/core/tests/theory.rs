use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use subforest::sampling::derive_stream;
use subforest::theory::*;
use subforest::Exec;

fn inputs() -> impl Strategy<Value = (usize, f64, f64, f64)> {
    (1usize..=30, 10.0f64..1e7, 1e-3f64..10.0, 1e-2f64..10.0)
}

fn bound(d: usize, n: f64, sigma2: f64, lipschitz: f64, k: f64) -> f64 {
    risk_bound(&BoundInputs { d, n, sigma2, lipschitz, k })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn real_minimiser_beats_the_grid((d, n, s2, l) in inputs()) {
        let opt = optimal_depth(d, n, s2, l).unwrap();
        prop_assume!(opt.k_star_real >= 0.0);
        let best = bound(d, n, s2, l, opt.k_star_real);
        for i in 0..=300 {
            let k = i as f64 * 0.1;
            prop_assert!(best <= bound(d, n, s2, l, k) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn integer_optimum_is_a_local_minimum((d, n, s2, l) in inputs()) {
        let k = optimal_depth(d, n, s2, l).unwrap().k_star_int as f64;
        let here = bound(d, n, s2, l, k);
        prop_assert!(here <= bound(d, n, s2, l, k + 1.0));
        if k >= 1.0 {
            prop_assert!(here <= bound(d, n, s2, l, k - 1.0));
        }
    }

    #[test]
    fn bound_is_convex_in_depth((d, n, s2, l) in inputs(), k in 0.5f64..30.0) {
        let h = 0.25;
        let mid = bound(d, n, s2, l, k);
        let chord = 0.5 * (bound(d, n, s2, l, k - h) + bound(d, n, s2, l, k + h));
        prop_assert!(mid <= chord * (1.0 + 1e-12));
    }

    #[test]
    fn bound_monotone_in_inputs((d, n, s2, l) in inputs(), k in 0.0f64..20.0) {
        let base = bound(d, n, s2, l, k);
        prop_assert!(bound(d, n, s2 * 1.5, l, k) > base);
        prop_assert!(bound(d, n, s2, l * 1.5, k) > base);
        prop_assert!(bound(d, n * 1.5, s2, l, k) < base);
    }

    #[test]
    fn exact_moment_never_exceeds_the_lemma_bound(d in 1usize..12, start in 4usize..5000, seed in any::<u64>()) {
        let mut rng = derive_stream(seed, 0);
        let mut counts = vec![start];
        while *counts.last().unwrap() >= 2 && rng.random::<f64>() < 0.85 {
            let last = *counts.last().unwrap();
            counts.push(rng.random_range(1..=last / 2));
        }
        let seq = CountSequence::new(counts).unwrap();
        let k = seq.depth();
        let exact = exact_side_second_moment(&seq, d);
        prop_assert!(exact <= SideMomentEstimate::lemma_bound(d, k) * (1.0 + 1e-12));
        prop_assert!(exact > 0.0 && exact <= 1.0);
    }
}

#[test]
fn twenty_parameter_sets_integer_optimum_is_global() {
    let mut rng = derive_stream(2024, 0);
    for _ in 0..20 {
        let d = rng.random_range(1..=20);
        let n = 10f64.powf(rng.random_range(1.0..6.0));
        let s2 = rng.random_range(0.01..5.0);
        let l = rng.random_range(0.1..5.0);
        let k_int = optimal_depth(d, n, s2, l).unwrap().k_star_int;
        let at = bound(d, n, s2, l, k_int as f64);
        for k in 0..=30 {
            assert!(at <= bound(d, n, s2, l, k as f64), "d={d} n={n} k*={k_int} vs k={k}");
        }
    }
}

#[test]
fn exact_moment_matches_sampled_beta_products() {
    // independent route: draw the side length as a product of beta factors
    let seq = CountSequence::new(vec![100, 49, 24, 11]).unwrap();
    let d = 3;
    let counts = seq.counts();
    let mut rng = derive_stream(77, 0);
    let trials = 200_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let mut v = 1.0;
        for w in counts.windows(2) {
            if rng.random_range(0..d) == 0 {
                let b = Beta::new((w[1] + 1) as f64, (w[0] - w[1]) as f64).unwrap();
                v *= b.sample(&mut rng);
            }
        }
        sum += v * v;
        sum_sq += v.powi(4);
    }
    let mean = sum / trials as f64;
    let se = ((sum_sq / trials as f64 - mean * mean) / trials as f64).sqrt();
    let exact = exact_side_second_moment(&seq, d);
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn beta_moment_by_quadrature() {
    // midpoint rule on the Beta(a, b) density
    for (a, b) in [(2.0, 1.0), (3.0, 4.0), (6.0, 5.0)] {
        let m = 200_000;
        let h = 1.0 / m as f64;
        let (mut norm, mut second) = (0.0, 0.0);
        for i in 0..m {
            let x = (i as f64 + 0.5) * h;
            let w = x.powf(a - 1.0) * (1.0 - x).powf(b - 1.0);
            norm += w * h;
            second += x * x * w * h;
        }
        assert_relative_eq!(beta_second_moment(a, b), second / norm, max_relative = 1e-6);
    }
}

#[test]
fn random_path_cells_follow_the_beta_product() {
    for (d, k) in [(1, 2), (2, 3)] {
        let a_n = 1 << (k + 6);
        let est = mc_side_second_moment(a_n, k, d, 4000, 5, &CellSelection::RandomPath, Exec::Parallel).unwrap();
        let z = (est.estimate - est.exact_mean) / est.paired_std_error;
        assert!(z.abs() < 4.0, "d={d} k={k}: z = {z}");
        assert_eq!(est.chains.len(), 4000);
        assert!(est.chains.iter().all(|c| c.depth() == k && c.counts()[0] == a_n));
    }
}

#[test]
fn monte_carlo_is_schedule_independent() {
    let a = mc_side_second_moment(64, 2, 2, 300, 9, &CellSelection::Centre, Exec::Sequential).unwrap();
    let b = mc_side_second_moment(64, 2, 2, 300, 9, &CellSelection::Centre, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_assembles_the_bound_from_its_fields() {
    let inputs = BoundInputs { d: 4, n: 2000.0, sigma2: 0.4, lipschitz: 1.7, k: 6.0 };
    let r = bound_report(&inputs).unwrap();
    let assembled = 2.0 * inputs.sigma2 * 2f64.powf(inputs.k) / inputs.n
        + inputs.d as f64 * inputs.lipschitz.powi(2) * r.c * r.beta.powf(inputs.k);
    assert_relative_eq!(r.bound_value, assembled, max_relative = 1e-14);
    assert!(r.beta > 0.0 && r.beta < 1.0 && r.c > 1.0);
    assert_eq!(r.rate_exponent, rate_exponent(4));
}
