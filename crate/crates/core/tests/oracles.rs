//! Checks against independently computed reference values (30+ digit
//! arithmetic, frozen here) and against Monte Carlo estimates.

// Reference values keep every digit of the high-precision evaluation.
#![allow(clippy::excessive_precision, clippy::inconsistent_digit_grouping)]

use efalloc::analysis::{
    analytic_tau, coupon_threshold, global_nonexistence_bound, nonexistence_c, nonexistence_max_r,
    per_allocation_ef_bound, NonExistenceBoundParams,
};
use efalloc::distributions::{sample, staircase_atom};
use efalloc::rng::DrawStream;
use efalloc::{DistributionSpec, PolyBoundParams};

fn close(x: f64, reference: f64, rel: f64) -> bool {
    ((x - reference) / reference).abs() <= rel
}

#[test]
fn threshold_reference_values() {
    let uni = PolyBoundParams::new(1.0, 1.0, 1.0).unwrap();
    for (c, n, m, reference) in [
        (64.0, 1_000_000, 2_000_000, 0.999_071_445_904_734_449_957_53),
        (2.0, 1000, 2000, 0.984_798_195_080_915_835_277_05),
        (64.0, 1000, 2000, 0.513_542_242_589_306_728_865_84),
    ] {
        let t = analytic_tau(c, n, m, &uni).unwrap();
        assert!(close(t, reference, 1e-13), "tau({c}, {n}, {m}) = {t}");
    }
    // 64 ln 400 / 200 > 1 pushes the threshold below zero.
    assert!(analytic_tau(64.0, 200, 400, &uni).is_err());
}

#[test]
fn global_bound_reference_values() {
    // (n, m, theta, q) -> (per-allocation log, global log, target log).
    let refs = [
        (
            100,
            150,
            1.0,
            1.0,
            -89.900_647_641_181_539_825,
            600.874_880_257_035_165_38,
            -1381.551_055_796_427_410_4,
        ),
        (
            10,
            13,
            1.0,
            1.0,
            -0.755_165_440_185_924_934_53,
            29.178_440_768_736_668_958,
            -59.867_212_417_845_187_784,
        ),
        (
            50,
            120,
            0.5,
            2.0,
            -0.004_287_061_658_452_026_439_4,
            469.438_473_589_719_075_01,
            -938.885_521_302_755_054_07,
        ),
        (
            1000,
            1500,
            1.0,
            1.0,
            -8990.064_764_118_153_982_5,
            1371.568_154_355_051_595_6,
            -20723.265_836_946_411_156,
        ),
        (
            7,
            9,
            0.3,
            1.5,
            -0.014_142_199_875_341_778_250,
            17.499_049_141_622_477_968,
            -35.026_382_682_995_639_492,
        ),
    ];
    for (n, m, theta, q, per, global, target) in refs {
        let p = NonExistenceBoundParams::new(n, m, theta, q, 0.5).unwrap();
        let g = global_nonexistence_bound(&p).unwrap();
        assert!(close(g.per_allocation_log, per, 1e-12), "per ({n}, {m})");
        assert!((g.log_bound - global).abs() < 1e-10, "global ({n}, {m})");
        assert!((g.target_log - target).abs() < 1e-10, "target ({n}, {m})");
    }
}

#[test]
fn global_bound_decreases_with_n_at_large_scale() {
    // For m = 1.5 n and r = 1 the union bound peaks near n = 620 and then falls.
    let logs: Vec<f64> = [1000usize, 2000, 4000, 8000, 16000]
        .iter()
        .map(|&n| {
            let p = NonExistenceBoundParams::new(n, 3 * n / 2, 1.0, 1.0, 0.5).unwrap();
            global_nonexistence_bound(&p).unwrap().log_bound
        })
        .collect();
    assert!(logs.windows(2).all(|w| w[1] < w[0]), "{logs:?}");
    assert!(logs[4] < 0.0);
}

#[test]
fn epsilon_form_is_weaker_inside_range() {
    let p = NonExistenceBoundParams::new(10_000, 15_000, 1.0, 1.0, 0.5).unwrap();
    let b = per_allocation_ef_bound(&p).unwrap();
    assert!(b.in_epsilon_range);
    assert!(b.log <= b.log_min_form && b.log_min_form <= b.log_epsilon_form);
}

#[test]
fn constants() {
    assert!(close(
        coupon_threshold(100).unwrap(),
        460.517_018_598_809_136_80,
        1e-15
    ));
    assert!(close(
        coupon_threshold(2).unwrap(),
        1.386_294_361_119_890_618_8,
        1e-15
    ));
    let c = nonexistence_c(0.5, 1.0, 1.0).unwrap();
    // c ln n / ln ln n = 0.26307 at n = 10^6: r is forced to 0 at any desk scale.
    assert_eq!(nonexistence_max_r(c, 1_000_000).unwrap(), 0);
}

fn empirical_tail(spec: &DistributionSpec, alpha: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = DrawStream::new(seed, 0);
    let x = 1.0 - alpha;
    let hits = (0..draws)
        .filter(|_| sample(spec, &mut rng).unwrap() > x)
        .count();
    hits as f64 / draws as f64
}

#[test]
fn empirical_tails_match_analytic_tails() {
    let draws = 200_000;
    let specs = [
        DistributionSpec::Uniform,
        DistributionSpec::truncated_normal(0.5, 0.2),
        DistributionSpec::truncated_normal(0.95, 0.02),
        DistributionSpec::truncated_normal(-0.5, 0.3),
        DistributionSpec::Staircase,
        DistributionSpec::Table {
            points: vec![(0.1, 0.25), (0.6, 0.5), (0.95, 1.0)],
        },
    ];
    for (k, spec) in specs.iter().enumerate() {
        for alpha in [0.9, 0.5, 0.3, 0.1, 0.02] {
            let p = spec.tail_prob(alpha).unwrap();
            let emp = empirical_tail(spec, alpha, draws, 100 + k as u64);
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!(
                (emp - p).abs() <= 4.0 * se + 1e-12,
                "{spec} alpha {alpha}: empirical {emp} vs {p}"
            );
        }
    }
}

#[test]
fn staircase_hits_its_atoms() {
    let mut rng = DrawStream::new(9, 0);
    let mut counts = [0usize; 4];
    let draws = 100_000;
    for _ in 0..draws {
        let v = sample(&DistributionSpec::Staircase, &mut rng).unwrap();
        let level = (0..=40u32)
            .find(|&l| v == staircase_atom(l))
            .expect("value is an atom");
        counts[(level as usize).min(3)] += 1;
    }
    // Level i carries 2^(-i^2) - 2^(-(i+1)^2); the last bucket is level 3 and deeper.
    for (i, &c) in counts.iter().enumerate() {
        let next = if i == 3 {
            0.0
        } else {
            2f64.powi(-(((i + 1) * (i + 1)) as i32))
        };
        let p = 2f64.powi(-((i * i) as i32)) - next;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((c as f64 / draws as f64 - p).abs() <= 4.0 * se, "level {i}");
    }
}

/// Composite Simpson rule for `x f(x)` on `[0, 1]`.
fn simpson_mean(spec: &DistributionSpec, intervals: usize) -> f64 {
    let h = 1.0 / intervals as f64;
    let g = |x: f64| x * spec.density(x).unwrap();
    let mut acc = g(0.0) + g(1.0);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(k as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn truncated_normal_means() {
    // Reference means from 30-digit quadrature.
    for (mu, sigma, reference) in [
        (0.3, 1e6, 0.499_999_999_999_983_333_333_333_388_98),
        (0.9, 0.05, 0.897_237_606_866_050_502_044_884_951_372),
    ] {
        let spec = DistributionSpec::truncated_normal(mu, sigma);
        assert!(
            (simpson_mean(&spec, 20_000) - reference).abs() < 1e-10,
            "quadrature {mu} {sigma}"
        );
        let draws = 200_000;
        let mut rng = DrawStream::new(17, 0);
        let mean = (0..draws)
            .map(|_| sample(&spec, &mut rng).unwrap())
            .sum::<f64>()
            / draws as f64;
        // Both cases have variance below 1/12.
        let se = (1.0 / 12.0 / draws as f64).sqrt();
        assert!(
            (mean - reference).abs() <= 4.0 * se,
            "sample mean {mu} {sigma}: {mean}"
        );
    }
}

#[test]
fn upper_quantile_inverts_tail() {
    let q = DistributionSpec::Uniform.upper_quantile(0.1).unwrap();
    assert!((q - 0.9).abs() < 1e-12);
    let tn = DistributionSpec::truncated_normal(0.5, 0.2);
    for p in [0.5, 0.1, 0.01] {
        let t = tn.upper_quantile(p).unwrap();
        assert!((tn.tail_prob(1.0 - t).unwrap() - p).abs() < 1e-9);
    }
}
