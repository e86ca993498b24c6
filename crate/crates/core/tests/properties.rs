mod common;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use aniso::dataset::{preprocess, replay, CoordScaling, PreprocessStep};
use aniso::field_sim::RngStream;
use aniso::inference::{estimate_mean, MleProblem, Parameterization, WarmStart};
use aniso::kernels::{anisotropy_matrix, covariance_matrix, eval_kernel, multi_axis_matrix};
use aniso::linalg::CholeskyFactor;
use aniso::test_parametric::{discrepancy, p_value};
use aniso::test_rotational::{build_pair_data, subsample_pairs, LsProblem, LsWarmStart, PairData};
use aniso::variogram::{empirical_variogram, LagBinSpec};
use aniso::{
    log_likelihood, parametric_bootstrap_test, rotational_test, AxisMode, CoordinateSet, HypothesisPair,
    KernelFamily, KernelParams, LagVector, OptimizerConfig, RotationalConfig,
};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lag() -> impl Strategy<Value = [f64; 2]> {
    [-10.0..10.0f64, -10.0..10.0f64]
}

fn scale() -> impl Strategy<Value = f64> {
    (-2.0..2.0f64).prop_map(f64::exp)
}

fn angle() -> impl Strategy<Value = f64> {
    -10.0..10.0f64
}

fn eval(p: &KernelParams, h: [f64; 2]) -> f64 {
    eval_kernel(p, &LagVector::xy(h[0], h[1]).unwrap()).unwrap()
}

fn norm2(m: &[[f64; 2]], h: [f64; 2]) -> f64 {
    m.iter().map(|r| (r[0] * h[0] + r[1] * h[1]).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn equal_scales_reduce_to_isotropic(s in 0.1..10.0f64, l in scale(), eta in angle(), nug in 0.0..2.0f64, h in lag()) {
        let e = KernelParams::elliptic(s, [l, l], eta, nug).unwrap();
        let i = KernelParams::isotropic(s, l, nug).unwrap();
        prop_assert!((eval(&e, h) - eval(&i, h)).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn axis_swap(a in scale(), b in scale(), eta in angle(), h in lag()) {
        let p = KernelParams::elliptic(1.0, [a, b], eta, 0.0).unwrap();
        let q = KernelParams::elliptic(1.0, [b, a], eta + FRAC_PI_2, 0.0).unwrap();
        prop_assert!(close(eval(&p, h), eval(&q, h), 1e-12));
    }

    #[test]
    fn pi_periodic(a in scale(), b in scale(), eta in angle(), k in -4i32..4, h in lag()) {
        let p = KernelParams::elliptic(1.0, [a, b], eta, 0.3).unwrap();
        let q = KernelParams::elliptic(1.0, [a, b], eta + k as f64 * PI, 0.3).unwrap();
        prop_assert!(close(eval(&p, h), eval(&q, h), 1e-12));
        // The raw matrix flips sign with η → η + π, its norm does not.
        let m = anisotropy_matrix(a, b, eta).unwrap();
        let n = anisotropy_matrix(a, b, eta + PI).unwrap();
        prop_assert!(close(norm2(&m, h), norm2(&n, h), 1e-12));
    }

    #[test]
    fn kernels_match_oracle(a in scale(), b in scale(), eta in angle(), s in 0.1..5.0f64, nug in 0.0..1.0f64, h in lag()) {
        for p in [
            KernelParams::isotropic(s, a, nug).unwrap(),
            KernelParams::elliptic(s, [a, b], eta, nug).unwrap(),
            KernelParams::multi_axis(s, vec![0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4], vec![0, 0, 1, 1], vec![a, b], nug).unwrap(),
        ] {
            prop_assert!(close(eval(&p, h), brute_kernel(&p, h), 1e-12));
        }
    }

    #[test]
    fn strictly_decreasing_along_rays(a in 0.1..10.0f64, b in 0.1..10.0f64, eta in angle(), theta in angle(), r in 1e-3..5.0f64, f in 1.001..2.0f64) {
        let p = KernelParams::elliptic(1.0, [a, b], eta, 0.5).unwrap();
        let (sn, cs) = theta.sin_cos();
        prop_assert!(eval(&p, [r * cs, r * sn]) > eval(&p, [f * r * cs, f * r * sn]));
    }

    #[test]
    fn sill_and_nugget(s in 0.1..10.0f64, nug in 0.0..5.0f64, a in scale(), b in scale(), eta in angle(), theta in angle()) {
        let p = KernelParams::elliptic(s, [a, b], eta, nug).unwrap();
        let (sn, cs) = theta.sin_cos();
        prop_assert_eq!(eval(&p, [0.0, 0.0]), s + nug);
        prop_assert!(close(eval(&p, [1e-12 * cs, 1e-12 * sn]), s, 1e-9));
        prop_assert!(eval(&p, [1e4 * cs, 1e4 * sn]) <= 1e-12 * s);
    }

    #[test]
    fn four_axis_equal_scales_rotation_invariant(l in scale(), h in lag()) {
        let axes = [0.0, FRAC_PI_2, FRAC_PI_4, 3.0 * FRAC_PI_4];
        let m = multi_axis_matrix(&axes, &[l; 4]).unwrap();
        let (s, c) = FRAC_PI_4.sin_cos();
        let r = [c * h[0] - s * h[1], s * h[0] + c * h[1]];
        prop_assert!(close(norm2(&m, h), norm2(&m, r), 1e-12));
    }

    #[test]
    fn two_axis_layout_is_elliptic(a in scale(), b in scale(), h in lag()) {
        let m = multi_axis_matrix(&[0.0, FRAC_PI_2], &[a, b]).unwrap();
        let e = anisotropy_matrix(a, b, 0.0).unwrap();
        prop_assert!((norm2(&m, h) - norm2(&e, h)).abs() <= 1e-12 * norm2(&e, h).max(1.0));
        let mk = KernelParams::multi_axis(1.0, vec![0.0, FRAC_PI_2], vec![0, 1], vec![a, b], 0.0).unwrap();
        let ek = KernelParams::elliptic(1.0, [a, b], 0.0, 0.0).unwrap();
        prop_assert!((eval(&mk, h) - eval(&ek, h)).abs() <= 1e-12);
    }

    #[test]
    fn p_value_lattice_and_ties(raw in prop::collection::vec(0u8..20, 1..300), pick in any::<prop::sample::Index>()) {
        let phis: Vec<f64> = raw.iter().map(|&v| v as f64 / 4.0).collect();
        let phi = phis[pick.index(phis.len())];
        let p = p_value(phi, &phis).unwrap();
        let b = phis.len() as f64;
        let k = (p * b).round();
        prop_assert_eq!(k / b, p);
        prop_assert_eq!(k as usize, phis.iter().filter(|&&x| phi <= x).count());
        // Ties count: φ equal to a resampled value always gives p ≥ 1/B.
        prop_assert!(p >= 1.0 / b);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn variogram_matches_double_loop(seed in any::<u64>(), n in 2usize..40, d in 0.0..1.0f64, tol in 0.0..0.5f64, dir in proptest::option::of(angle()), at in 0.0..1.5f64, tx in -1.0..1.0f64, ty in -1.0..1.0f64, dx in 0.0..0.5f64, dy in 0.0..0.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n);
        let z: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let s = sample_from(&pts, z.clone());

        let polar = LagBinSpec::Polar { distance: d, distance_tolerance: tol, direction: dir, angle_tolerance: at };
        let est = empirical_variogram(&s, &polar).unwrap();
        let (g, c) = brute_variogram(&pts, &z, |h| {
            let r = h[0].hypot(h[1]);
            (r - d).abs() <= tol
                && match dir {
                    None => true,
                    Some(dir) => r > 0.0 && axial_difference(h[1].atan2(h[0]), dir) <= at,
                }
        });
        prop_assert_eq!(est.pair_count, c);
        match (est.gamma, g) {
            (Some(a), Some(b)) => prop_assert!(close(a, b, 1e-12)),
            (a, b) => prop_assert_eq!(a, b),
        }

        let cart = LagBinSpec::Cartesian { target: LagVector::xy(tx, ty).unwrap(), tolerance: vec![dx, dy] };
        let est = empirical_variogram(&s, &cart).unwrap();
        let (g, c) = brute_variogram(&pts, &z, |h| {
            ((h[0] - tx).abs() <= dx && (h[1] - ty).abs() <= dy) || ((-h[0] - tx).abs() <= dx && (-h[1] - ty).abs() <= dy)
        });
        prop_assert_eq!(est.pair_count, c);
        match (est.gamma, g) {
            (Some(a), Some(b)) => prop_assert!(close(a, b, 1e-12) && a >= 0.0),
            (a, b) => prop_assert_eq!(a, b),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn log_likelihood_matches_elimination(seed in any::<u64>(), mean in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_spd(&mut rng, 5);
        let z: Vec<f64> = (0..5).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let ll = log_likelihood(&z, mean, &to_mat(&cov)).unwrap();
        prop_assert!((ll - oracle_log_likelihood(&z, mean, &cov)).abs() <= 1e-10);
    }

    #[test]
    fn covariance_matches_double_loop(seed in any::<u64>(), n in 1usize..12, a in scale(), b in scale(), eta in angle(), nug in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n);
        let p = KernelParams::elliptic(1.3, [a, b], eta, nug).unwrap();
        let m = covariance_matrix(&CoordinateSet::from_xy(&pts).unwrap(), &p).unwrap();
        for i in 0..n {
            for j in 0..n {
                let h = [pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]];
                prop_assert!(close(m[(i, j)], brute_kernel(&p, h), 1e-12));
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
    }

    #[test]
    fn nugget_makes_covariance_positive_definite(seed in any::<u64>(), n in 2usize..60, a in scale(), b in scale(), eta in angle(), nug in 1e-3..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n);
        let p = KernelParams::elliptic(1.0, [a, b], eta, nug).unwrap();
        let f = CholeskyFactor::new(&covariance_matrix(&CoordinateSet::from_xy(&pts).unwrap(), &p).unwrap()).unwrap();
        prop_assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn standardized_values(seed in any::<u64>(), n in 2usize..100, shift in -1e3..1e3f64, spread in 1e-2..1e2f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n);
        let mut z: Vec<f64> = (0..n).map(|_| shift + spread * rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        z[0] += spread;
        let s = preprocess(&sample_from(&pts, z), &[PreprocessStep::StandardizeValues]).unwrap();
        let m = estimate_mean(s.values()).unwrap();
        let sd = (s.values().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        prop_assert!(m.abs() <= 1e-12);
        prop_assert!((sd - 1.0).abs() <= 1e-12);
    }
}

fn step() -> impl Strategy<Value = PreprocessStep> {
    prop_oneof![
        Just(PreprocessStep::StandardizeValues),
        Just(PreprocessStep::LogValues),
        Just(PreprocessStep::StandardizeCoords { scaling: CoordScaling::UnitInterval }),
        Just(PreprocessStep::StandardizeCoords { scaling: CoordScaling::ZScore }),
        (1.0..3.0f64).prop_map(|threshold| PreprocessStep::DropOutliers { threshold }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// The log alone rebuilds the processed sample bit for bit.
    #[test]
    fn preprocessing_log_replays_exactly(seed in any::<u64>(), n in 3usize..60, steps in prop::collection::vec(step(), 0..5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = random_points(&mut rng, n).iter().map(|p| [1e3 * p[0] - 50.0, 7.0 * p[1]]).collect();
        let z: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 1.0..100.0)).collect();
        let raw = sample_from(&pts, z);
        if let Ok(done) = preprocess(&raw, &steps) {
            let again = replay(&raw, done.preprocessing_log()).unwrap();
            prop_assert_eq!(again, done);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// The alternative is warm-started at the null fit in both algorithms,
    /// so every discrepancy is nonnegative, observed and resampled.
    #[test]
    fn parametric_nesting(seed in any::<u64>(), n in 6usize..24, l1 in 0.05..1.0f64, ratio in 1.0..10.0f64, eta in angle(), nug in 0.01..1.0f64, fixed in any::<bool>()) {
        let s = simulated_sample(n, l1, l1 * ratio, eta, nug, RngStream::new(seed, 0));
        let hyp = if fixed {
            HypothesisPair::elliptic_fixed(eta)
        } else {
            HypothesisPair::new(KernelFamily::Elliptic, AxisMode::Free(2)).unwrap()
        };
        let cfg = OptimizerConfig { random_starts: 1, ..OptimizerConfig::default() };
        let (phi, null, alt) = discrepancy(&s, &hyp, &cfg, RngStream::new(seed, 1)).unwrap();
        prop_assert!(phi >= 0.0, "φ = {phi}");
        prop_assert_eq!(phi, alt.log_likelihood - null.log_likelihood);
        let t = parametric_bootstrap_test(&s, &hyp, 2, &cfg, RngStream::new(seed, 2)).unwrap();
        prop_assert!(t.phi_observed >= 0.0);
        prop_assert!(t.phi_resampled.iter().all(|&p| p >= 0.0), "{:?}", t.phi_resampled);
    }

    #[test]
    fn rotational_nesting(seed in any::<u64>(), n in 6usize..30, l1 in 0.05..1.0f64, ratio in 1.0..10.0f64, eta in angle(), ranged in any::<bool>()) {
        let s = simulated_sample(n, l1, l1 * ratio, eta, 0.3, RngStream::new(seed, 0));
        let cfg = RotationalConfig {
            eta: eta.rem_euclid(PI),
            b: 3,
            pair_subsample: None,
            range_halfwidth: ranged.then_some(PI / 36.0),
            ..RotationalConfig::default()
        };
        let opt = OptimizerConfig { random_starts: 1, ..OptimizerConfig::default() };
        let t = rotational_test(&s, &cfg, &opt, RngStream::new(seed, 1)).unwrap();
        prop_assert!(t.phi_observed >= 0.0, "φ = {}", t.phi_observed);
        prop_assert!(t.phi_resampled.iter().all(|&p| p >= 0.0), "{:?}", t.phi_resampled);
    }

    #[test]
    fn warm_start_is_never_worse(seed in any::<u64>(), n in 6usize..24, l1 in 0.05..2.0f64, l2 in 0.05..2.0f64, eta in angle(), s2 in 0.1..3.0f64, nug in 0.01..1.0f64) {
        let s = simulated_sample(n, 0.3, 0.6, 0.0, 0.2, RngStream::new(seed, 0));
        let theta = KernelParams::elliptic(s2, [l1, l2], eta, nug).unwrap();
        let problem = MleProblem::new(s.coords());
        let mean = s.working_mean();
        let at = problem.log_likelihood_at(s.values(), mean, &theta).unwrap();
        let cfg = OptimizerConfig::deterministic_starts();
        let fit = aniso::fit_kernel_mle(&s, &KernelFamily::Elliptic, &AxisMode::Free(2), &cfg, Some(&theta), RngStream::new(seed, 1)).unwrap();
        prop_assert!(fit.log_likelihood >= at, "{} < {}", fit.log_likelihood, at);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// The likelihood is multimodal, so the coordinate systems are compared
    /// at one optimum: each refines the same maximizer and must report the
    /// same maximal value.
    #[test]
    fn likelihood_optimum_independent_of_parameterization(seed in any::<u64>(), l2 in 0.2..1.0f64) {
        let s = simulated_sample(40, 0.2, l2, 0.0, 0.3, RngStream::new(seed, 0));
        let problem = MleProblem::new(s.coords());
        let family = KernelFamily::Elliptic;
        let mode = AxisMode::Fixed(vec![0.0, FRAC_PI_2]);
        let fit = |p: Parameterization, warm: Option<&KernelParams>, starts: usize| {
            let cfg = OptimizerConfig { parameterization: p, random_starts: starts, ..OptimizerConfig::default() };
            problem
                .fit(s.values(), s.working_mean(), &family, &mode, &cfg, warm.map(WarmStart::Params), RngStream::new(seed, 1))
                .unwrap()
        };
        let best = [Parameterization::Profiled, Parameterization::LogScale, Parameterization::RawScale]
            .into_iter()
            .map(|p| fit(p, None, 4))
            .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
            .unwrap();
        let refined: Vec<f64> = [Parameterization::Profiled, Parameterization::LogScale, Parameterization::RawScale]
            .into_iter()
            .map(|p| fit(p, Some(&best.params), 0).log_likelihood)
            .collect();
        for ll in &refined {
            prop_assert!((ll - best.log_likelihood).abs() <= 1e-6 * best.log_likelihood.abs().max(1.0), "{} vs {refined:?}", best.log_likelihood);
        }
    }

    #[test]
    fn least_squares_recovers_exact_products(seed in any::<u64>(), l1 in 0.05..1.0f64, l2 in 0.05..1.0f64, eta in 0.0..PI, s2 in 0.2..3.0f64, nug in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 25);
        let theta = KernelParams::elliptic(s2, [l1, l2], eta, nug).unwrap();
        let mut lags = Vec::new();
        let mut y = Vec::new();
        for i in 0..pts.len() {
            for j in i..pts.len() {
                let h = [pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]];
                lags.push(LagVector::xy(h[0], h[1]).unwrap());
                y.push(brute_kernel(&theta, h));
            }
        }
        let problem = LsProblem::new(&PairData::new(lags, y).unwrap()).unwrap();
        prop_assert!(problem.sse_at(&theta) <= 1e-20);
        let fit = problem
            .fit(&KernelFamily::Elliptic, &AxisMode::Free(2), &OptimizerConfig::deterministic_starts(), &[LsWarmStart::Params(&theta)], RngStream::new(seed, 0))
            .unwrap();
        prop_assert!(fit.sse <= 1e-8, "sse = {}", fit.sse);
    }
}

#[test]
fn rotated_axes_stay_inside_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (eta, alpha, range) in [(0.0, PI / 36.0, None), (1.0, PI / 72.0, None), (0.3, 0.7, None), (2.0, PI / 36.0, Some(PI / 36.0))] {
        let cfg = RotationalConfig {
            eta,
            alpha,
            range_halfwidth: range,
            ..RotationalConfig::default()
        };
        cfg.validate().unwrap();
        let a = if range.is_some() { 2.0 * alpha } else { alpha };
        let (lo, hi) = (eta + a, eta + FRAC_PI_2 - a);
        let draws: Vec<f64> = (0..10_000).map(|_| cfg.sample_axis(&mut rng)).collect();
        let min = draws.iter().copied().fold(f64::INFINITY, f64::min);
        let max = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(min >= lo && max <= hi, "[{min}, {max}] outside [{lo}, {hi}]");
        // The draws cover the interval rather than collapsing to a point.
        assert!(min - lo < 0.01 && hi - max < 0.01);
    }
}

#[test]
fn subsample_of_five_hundred_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = random_points(&mut rng, 500);
    let z: Vec<f64> = (0..500).map(|i| (i as f64).sin()).collect();
    let all = build_pair_data(&sample_from(&pts, z), 0.0);
    assert_eq!(all.len(), 125_250);
    let sub = subsample_pairs(&all, 10_000, RngStream::new(3, 9)).unwrap();
    assert_eq!(sub.len(), 10_000);
    let mut idx = sub.source_indices().unwrap().to_vec();
    assert!(idx.iter().all(|&(i, j)| i <= j && j < 500));
    idx.sort_unstable();
    idx.dedup();
    assert_eq!(idx.len(), 10_000);
}

#[test]
fn forced_null_subspace_gives_zero_discrepancy() {
    let s = simulated_sample(30, 0.2, 0.5, 0.0, 0.3, RngStream::new(1, 0));
    // Two perpendicular axes sharing one scale group are the isotropic model.
    let hyp = HypothesisPair::new(
        KernelFamily::MultiAxis {
            axes: vec![0.0, FRAC_PI_2],
            groups: vec![0, 0],
            n_groups: 1,
        },
        AxisMode::Fixed(vec![0.0, FRAC_PI_2]),
    )
    .unwrap();
    let (phi, _, _) = discrepancy(&s, &hyp, &OptimizerConfig::default(), RngStream::new(1, 1)).unwrap();
    assert_eq!(phi, 0.0);
}

#[test]
fn identical_seeds_identical_results() {
    let s = simulated_sample(25, 0.2, 0.6, 0.0, 0.3, RngStream::new(4, 0));
    let cfg = OptimizerConfig::default();
    let hyp = HypothesisPair::elliptic_fixed(0.0);
    let a = parametric_bootstrap_test(&s, &hyp, 5, &cfg, RngStream::new(8, 0)).unwrap();
    let b = parametric_bootstrap_test(&s, &hyp, 5, &cfg, RngStream::new(8, 0)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let rc = RotationalConfig { b: 5, ..RotationalConfig::default() };
    let a = rotational_test(&s, &rc, &cfg, RngStream::new(8, 0)).unwrap();
    let b = rotational_test(&s, &rc, &cfg, RngStream::new(8, 0)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
