use approx::assert_relative_eq;
use proptest::prelude::*;
use resetlp_core::backtest::{prices_from_moves, replay};
use resetlp_core::bins::BinGrid;
use resetlp_core::distribution::NextPriceDistribution;
use resetlp_core::markov::build_reset_chain;
use resetlp_core::optimizer::{
    kkt_residual, projected_gradient_verify, solve, OptimizationProblem,
};
use resetlp_core::simulate::{run_strategy, run_trace, sample_path};
use resetlp_core::strategies::{
    proportional_with_windows, uniform_strategy, StrategyKind, StrategySpec,
};
use resetlp_core::utility::{
    exp_utility, expected_utility, Allocation, EvalMode, LandingProfile, UtilityParams,
};

fn dist_strategy() -> impl Strategy<Value = NextPriceDistribution> {
    (1usize..6)
        .prop_flat_map(|k| prop::collection::vec(0.01f64..1.0, 2 * k + 1))
        .prop_map(|w| {
            let k = (w.len() - 1) / 2;
            NextPriceDistribution::from_weights(k, 1.0, &w).unwrap()
        })
}

fn alloc_strategy(n_alpha: usize) -> impl Strategy<Value = Allocation> {
    prop::collection::vec(0.0f64..1.0, 2 * n_alpha + 1).prop_map(move |w| {
        let s: f64 = w.iter().sum::<f64>() + 1e-9;
        Allocation::new(n_alpha, w.iter().map(|x| x / s).collect()).unwrap()
    })
}

/// Occupancy of the reset chain by plain power iteration over the reset rule,
/// with no matrix shared with the library.
fn brute_occupancy(dist: &NextPriceDistribution, n_tau: usize) -> Vec<f64> {
    let n = n_tau as i64;
    let size = 2 * n_tau + 1;
    let mut p = vec![1.0 / size as f64; size];
    for _ in 0..20_000 {
        let mut next = vec![0.0; size];
        for i in -n..=n {
            for k in -(dist.k_max() as i64)..=dist.k_max() as i64 {
                let j = i + k;
                let target = if j.abs() > n { 0 } else { j };
                next[(target + n) as usize] += p[(i + n) as usize] * dist.h(k);
            }
        }
        // lazy step so periodic chains still converge
        for (a, b) in p.iter_mut().zip(&next) {
            *a = 0.5 * *a + 0.5 * b;
        }
    }
    p
}

/// E_u by enumerating every (current bin, move) pair.
fn brute_expected_utility(
    dist: &NextPriceDistribution,
    n_tau: usize,
    alloc: &Allocation,
    params: &UtilityParams,
    mode: EvalMode,
) -> f64 {
    let n = n_tau as i64;
    let p = brute_occupancy(dist, n_tau);
    let shift = if params.a == 0.0 { 0.0 } else { 1.0 };
    let mut total = 0.0;
    for i in -n..=n {
        for k in -(dist.k_max() as i64)..=dist.k_max() as i64 {
            let j = i + k;
            let inside_alpha = j.unsigned_abs() as usize <= alloc.n_alpha();
            if !inside_alpha && mode == EvalMode::StrictPaper {
                continue;
            }
            let fee = if inside_alpha {
                params.kappa * params.ell * alloc.weights()[(j + alloc.n_alpha() as i64) as usize]
            } else {
                0.0
            };
            let reward = if j.abs() > n { fee - 1.0 } else { fee };
            total +=
                p[(i + n) as usize] * dist.h(k) * exp_utility(reward + shift, params.a).unwrap();
        }
    }
    total
}

fn onto_simplex(a: &Allocation) -> Allocation {
    let t = a.total();
    Allocation::new(a.n_alpha(), a.weights().iter().map(|w| w / t).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expected_utility_matches_enumeration(
        dist in dist_strategy(),
        n_tau in 0usize..4,
        alloc in alloc_strategy(3),
        a in prop::sample::select(vec![0.0, 0.1, 1.0, -0.5]),
        full in any::<bool>(),
    ) {
        let params = UtilityParams::new(a, 1.0, 3.0).unwrap();
        let mode = if full { EvalMode::FullCoverage } else { EvalMode::StrictPaper };
        let lib = expected_utility(&dist, n_tau, &alloc, &params, mode).unwrap();
        let brute = brute_expected_utility(&dist, n_tau, &alloc, &params, mode);
        prop_assert!((lib - brute).abs() <= 1e-9 * (1.0 + brute.abs()), "{} vs {}", lib, brute);
    }

    #[test]
    fn stationary_is_a_fixed_point(dist in dist_strategy(), n_tau in 0usize..6) {
        let chain = build_reset_chain(&dist, n_tau).unwrap();
        let m = chain.matrix();
        let p = chain.stationary();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for row in m {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for j in 0..p.len() {
            let pm: f64 = (0..p.len()).map(|i| p[i] * m[i][j]).sum();
            prop_assert!((pm - p[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn landing_deficit_conserves_mass(dist in dist_strategy(), n_tau in 0usize..4, n_alpha in 0usize..10) {
        let profile = LandingProfile::new(&dist, n_tau).unwrap();
        let inside: f64 = profile.landing(n_alpha).iter().sum();
        prop_assert!((inside + profile.deficit(n_alpha) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn risk_neutral_utility_is_linear(
        dist in dist_strategy(),
        x in alloc_strategy(2),
        y in alloc_strategy(2),
        t in 0.0f64..1.0,
    ) {
        let params = UtilityParams::new(0.0, 1.0, 10.0).unwrap();
        let mix = Allocation::new(2, x.weights().iter().zip(y.weights()).map(|(a, b)| t * a + (1.0 - t) * b).collect()).unwrap();
        let eu = |a: &Allocation| expected_utility(&dist, 1, a, &params, EvalMode::StrictPaper).unwrap();
        prop_assert!((eu(&mix) - (t * eu(&x) + (1.0 - t) * eu(&y))).abs() < 1e-10);
    }

    #[test]
    fn risk_averse_utility_is_concave(
        dist in dist_strategy(),
        x in alloc_strategy(2),
        y in alloc_strategy(2),
        t in 0.0f64..1.0,
        a in 0.05f64..3.0,
    ) {
        let params = UtilityParams::new(a, 1.0, 10.0).unwrap();
        let mix = Allocation::new(2, x.weights().iter().zip(y.weights()).map(|(a, b)| t * a + (1.0 - t) * b).collect()).unwrap();
        let eu = |a: &Allocation| expected_utility(&dist, 1, a, &params, EvalMode::FullCoverage).unwrap();
        prop_assert!(eu(&mix) >= t * eu(&x) + (1.0 - t) * eu(&y) - 1e-10);
    }

    #[test]
    fn solvers_agree(
        dist in dist_strategy(),
        n_tau in 0usize..3,
        a in prop::sample::select(vec![0.1, 1.0, 10.0]),
    ) {
        let params = UtilityParams::new(a, 1.0, 100.0).unwrap();
        let profile = LandingProfile::new(&dist, n_tau).unwrap();
        let problem = OptimizationProblem::from_profile(&profile, profile.reach(), params, EvalMode::FullCoverage).unwrap();
        let wf = solve(&problem, 1e-8).unwrap();
        let pg = projected_gradient_verify(&problem, 1e-10, 200_000).unwrap();
        prop_assert!(wf.kkt_residual < 1e-8);
        prop_assert!((wf.objective - pg.objective).abs() <= 1e-6 * (1.0 + wf.objective.abs()));
        // objective always agrees with the E_u of the returned allocation
        let eu = profile.expected_utility(&wf.allocation, &params, EvalMode::FullCoverage).unwrap();
        prop_assert!((eu - wf.objective).abs() < 1e-10);
    }

    #[test]
    fn optimum_beats_feasible_points(dist in dist_strategy(), alloc in alloc_strategy(3), a in 0.1f64..5.0) {
        let params = UtilityParams::new(a, 1.0, 100.0).unwrap();
        let profile = LandingProfile::new(&dist, 1).unwrap();
        let problem = OptimizationProblem::from_profile(&profile, profile.reach(), params, EvalMode::FullCoverage).unwrap();
        let wf = solve(&problem, 1e-8).unwrap();
        let other = onto_simplex(&alloc).widened(profile.reach());
        let eu = profile.expected_utility(&other, &params, EvalMode::FullCoverage).unwrap();
        prop_assert!(wf.objective >= eu - 1e-9);
    }

    #[test]
    fn replay_matches_run_strategy(dist in dist_strategy(), seed in 0u64..1000, n_tau in 0usize..3, n_alpha in 0usize..4) {
        let params = UtilityParams::new(0.5, 1.0, 10.0).unwrap();
        let spec = proportional_with_windows(&dist, n_tau, n_alpha, params).unwrap();
        let moves = sample_path(&dist, 500, seed);
        let grid = BinGrid::new(100.0, dist.grid_step(), -4000, 4000).unwrap();
        let series = prices_from_moves(&grid, 0, &moves, 600).unwrap();
        for mode in [EvalMode::StrictPaper, EvalMode::FullCoverage] {
            let bt = replay(&series, &spec, &grid, mode).unwrap();
            let sim: Vec<f64> = run_trace(&moves, &spec, mode).unwrap().iter().map(|o| o.reward).collect();
            prop_assert_eq!(&bt.rewards, &sim);
            let report = run_strategy(&moves, &spec, mode).unwrap();
            prop_assert_eq!(bt.resets, report.resets);
            prop_assert_eq!(bt.mean_utility_per_step, report.mean_utility_per_step);
        }
    }

    #[test]
    fn bands_contain_the_price(dist in dist_strategy(), seed in 0u64..1000, n_tau in 0usize..3, extra in 0usize..3) {
        let spec = uniform_strategy(n_tau, n_tau + extra, UtilityParams::default());
        let moves = sample_path(&dist, 300, seed);
        let grid = BinGrid::new(100.0, dist.grid_step(), -3000, 3000).unwrap();
        let series = prices_from_moves(&grid, 0, &moves, 600).unwrap();
        let bt = replay(&series, &spec, &grid, EvalMode::StrictPaper).unwrap();
        let resets: Vec<bool> = run_trace(&moves, &spec, EvalMode::StrictPaper).unwrap().iter().map(|o| o.reset).collect();
        for (row, reset) in bt.band_trace.iter().zip(resets) {
            prop_assert!(row.alpha_low <= row.tau_low && row.tau_high <= row.alpha_high);
            let inside = row.price >= row.tau_low && row.price < row.tau_high;
            prop_assert_eq!(inside, !reset);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let dist =
        NextPriceDistribution::from_weights(3, 1.0, &[1.0, 2.0, 4.0, 6.0, 3.0, 2.0, 1.0]).unwrap();
    let profile = LandingProfile::new(&dist, 1).unwrap();
    for a in [0.1, 1.0, 10.0] {
        let params = UtilityParams::new(a, 1.0, 1.0).unwrap();
        let problem = OptimizationProblem::from_profile(
            &profile,
            profile.reach(),
            params,
            EvalMode::FullCoverage,
        )
        .unwrap();
        let n = 2 * profile.reach() + 1;
        let x: Vec<f64> = (0..n)
            .map(|i| (1.0 + i as f64) / (n * (n + 1) / 2) as f64)
            .collect();
        let g = problem.gradient(&x);
        for i in 0..n {
            let h = 1e-6;
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd =
                (problem.objective(&up).unwrap() - problem.objective(&dn).unwrap()) / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-5, epsilon = 1e-9);
        }
        assert!(
            kkt_residual(
                &problem,
                solve(&problem, 1e-10).unwrap().allocation.weights()
            ) < 1e-8
        );
    }
}

#[test]
fn sampled_moves_pass_chi_square() {
    let dist = NextPriceDistribution::from_weights(2, 1.0, &[1.0, 2.0, 4.0, 2.0, 1.0]).unwrap();
    let n = 100_000;
    let path = sample_path(&dist, n, 99);
    let stat: f64 = (-2..=2)
        .map(|k| {
            let observed = path.iter().filter(|&&m| m == k).count() as f64;
            let expected = n as f64 * dist.h(k);
            (observed - expected).powi(2) / expected
        })
        .sum();
    // 99.9% quantile of chi-square with 4 degrees of freedom
    assert!(stat < 18.47, "chi-square {stat}");
}

#[test]
fn monte_carlo_matches_analytic() {
    let dist =
        NextPriceDistribution::from_weights(3, 1.0, &[1.0, 2.0, 4.0, 6.0, 3.0, 2.0, 1.0]).unwrap();
    let params = UtilityParams::new(0.3, 1.0, 5.0).unwrap();
    for mode in [EvalMode::StrictPaper, EvalMode::FullCoverage] {
        let spec = proportional_with_windows(&dist, 1, 2, params).unwrap();
        let analytic = spec.expected_utility(&dist, mode).unwrap();
        let r = run_strategy(&sample_path(&dist, 200_000, 5), &spec, mode).unwrap();
        assert!(
            (r.mean_utility_per_step - analytic).abs() < 4.0 * r.std_error,
            "{mode:?}: {} vs {analytic}",
            r.mean_utility_per_step
        );
    }
}

#[test]
fn jump_beyond_alpha_is_one_reset() {
    let grid = BinGrid::new(100.0, 0.01, -50, 50).unwrap();
    let spec = StrategySpec::new(
        StrategyKind::Custom,
        1,
        Allocation::uniform(2),
        UtilityParams::default(),
    )
    .unwrap();
    let series = prices_from_moves(&grid, 0, &[9, -1, 0], 600).unwrap();
    let r = replay(&series, &spec, &grid, EvalMode::FullCoverage).unwrap();
    assert_eq!(r.resets, 1);
    assert_eq!(r.rewards[0], -1.0);
    assert_eq!(r.rewards[1], 20.0);
}
