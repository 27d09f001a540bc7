mod common;

use common::{interior_profile, mp, mp_3x2, random_game, random_shape_game};
use proptest::prelude::*;

use replab::equilibrium::{maximal_support_equilibrium, solve_value, solve_value_simplex};
use replab::game::{
    check_support_lemma, is_anti_equilibrium, is_nash, support, utilities, Game, SimplexPoint, StrategyProfile,
    SupportVerdict,
};
use replab::generator::{
    apply_generator, corner_h_exponents, interior_boundary_bound, Label, LyapunovSpec, LABEL_TOL,
};
use replab::measures::{corner_mass, in_corner_ball, occupation_histogram, regret_report, time_average, Axis};
use replab::ode::{cross_entropy, integrate_ode, lyapunov_time_derivative, OdeConfig};
use replab::sde::{ensemble_map, simulate_sde, DiffusionSpec, EmStepper, NoiseMode, NoiseStream, SdeConfig};

fn game_strategy() -> impl Strategy<Value = Game> {
    (2usize..=4, 2usize..=4).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, m), n)
            .prop_map(|a| Game::new("prop", a).unwrap())
    })
}

fn weights(dim: usize) -> impl Strategy<Value = SimplexPoint> {
    prop::collection::vec(0.01f64..1.0, dim).prop_map(|w| SimplexPoint::from_weights(w).unwrap())
}

fn game_and_profile() -> impl Strategy<Value = (Game, StrategyProfile)> {
    game_strategy().prop_flat_map(|g| {
        let (n, m) = (g.rows(), g.cols());
        (Just(g), weights(n), weights(m)).prop_map(|(g, x, y)| (g, StrategyProfile::new(x, y)))
    })
}

proptest! {
    #[test]
    fn payoffs_sum_to_zero((g, s) in game_and_profile()) {
        let u = utilities(&g, &s).unwrap();
        prop_assert!((u.row_payoff + u.col_payoff).abs() <= 1e-12);
    }

    #[test]
    fn simplex_construction(w in prop::collection::vec(0.0f64..1.0, 2..6), bump in -5e-10f64..5e-10) {
        let sum: f64 = w.iter().sum();
        prop_assume!(sum > 0.1);
        let mut unit: Vec<f64> = w.iter().map(|v| v / sum).collect();
        unit[0] = (unit[0] + bump).max(0.0);
        let p = SimplexPoint::new(unit.clone()).unwrap();
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        let mut off = unit.clone();
        off[0] += 1e-6;
        prop_assert!(SimplexPoint::new(off).is_err());
        let mut neg = unit;
        neg[1] = -1e-3;
        prop_assert!(SimplexPoint::new(neg).is_err());
    }

    #[test]
    fn support_partitions_indices(w in prop::collection::vec(0.0f64..1.0, 2..7)) {
        let sum: f64 = w.iter().sum();
        prop_assume!(sum > 0.0);
        let p = SimplexPoint::from_weights(w).unwrap();
        let s = support(&p, 1e-9).unwrap();
        let mut all: Vec<usize> = s.indices().iter().copied().chain(s.complement()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..p.dim()).collect::<Vec<_>>());
        prop_assert!(s.indices().iter().all(|i| !s.complement().contains(i)));
    }

    #[test]
    fn zero_noise_generator_is_time_derivative((g, s) in game_and_profile(), r in any::<u64>()) {
        let mut rng = NoiseStream::new(r, 0);
        let reference = interior_profile(&mut rng, g.rows(), g.cols(), 0.0);
        let spec = DiffusionSpec::zero(g.rows(), g.cols());
        let lv = apply_generator(&g, &spec, &LyapunovSpec::cross_entropy(&reference), &s).unwrap();
        prop_assert_eq!(lv, lyapunov_time_derivative(&g, &reference, &s).unwrap());
    }

    #[test]
    fn labels_follow_exponents(g in game_strategy(), sigma in 0.0f64..2.0, eta in 0.0f64..2.0) {
        let spec = DiffusionSpec::uniform(g.rows(), g.cols(), sigma, eta).unwrap();
        let report = maximal_support_equilibrium(&g).unwrap();
        let r = corner_h_exponents(&g, &spec, &report).unwrap();
        prop_assert!(r.lambda_plus >= r.lambda_minus);
        for c in &r.corners {
            prop_assert_eq!(c.lambda, -c.h);
            prop_assert_eq!(c.label == Label::Attracting, c.lambda < -LABEL_TOL);
            prop_assert_eq!(c.label == Label::Repelling, c.lambda > LABEL_TOL);
        }
    }

    #[test]
    fn increments_keep_sums((g, s) in game_and_profile(), sigma in 0.0f64..1.5, seed in any::<u64>()) {
        let spec = DiffusionSpec::uniform(g.rows(), g.cols(), sigma, sigma).unwrap();
        let mut st = EmStepper::new(&g, &spec, NoiseMode::Full, 0.0).unwrap();
        let mut rng = NoiseStream::new(seed, 0);
        let mut xi = vec![0.0; g.rows()];
        let mut zeta = vec![0.0; g.cols()];
        rng.fill_normals(&mut xi);
        rng.fill_normals(&mut zeta);
        let (dx, dy) = st.increment(s.x.as_slice(), s.y.as_slice(), 1e-3, &xi, &zeta).unwrap();
        prop_assert!(dx.iter().sum::<f64>().abs() <= 1e-10);
        prop_assert!(dy.iter().sum::<f64>().abs() <= 1e-10);
    }

    #[test]
    fn corner_mass_monotone_in_radius(seed in 0u64..1000) {
        let g = mp();
        let spec = DiffusionSpec::reduced(0.5, 0.5).unwrap();
        let mut cfg = SdeConfig::new(StrategyProfile::barycenter(2, 2), 20.0, seed);
        cfg.noise = NoiseMode::Reduced;
        cfg.burn_in = 2.0;
        let t = simulate_sde(&g, &spec, &cfg).unwrap();
        let mut prev = 0.0;
        for r in [0.05, 0.1, 0.2, 0.3, 0.45] {
            let c = corner_mass(&t, r, 2.0).unwrap();
            prop_assert!(c.total >= prev);
            prop_assert!((c.total + c.residual - 1.0).abs() <= 1e-12);
            prev = c.total;
        }
    }
}

#[test]
fn anti_equilibrium_is_nash_of_negated_game() {
    let mut rng = NoiseStream::new(11, 0);
    let mut agreed_true = 0;
    for k in 0..1000 {
        let g = random_shape_game(&mut rng, 4);
        let (p, q) = if k % 2 == 0 {
            let r = maximal_support_equilibrium(&g).unwrap();
            (r.p_star, r.q_star)
        } else {
            let s = interior_profile(&mut rng, g.rows(), g.cols(), 0.0);
            (s.x, s.y)
        };
        let anti = is_anti_equilibrium(&g, &p, &q, 1e-9).unwrap();
        assert_eq!(anti, is_nash(&g.negated(), &p, &q, 1e-9).unwrap());
        agreed_true += anti as usize;
    }
    assert!(agreed_true >= 500);
}

#[test]
fn random_games_solve_consistently() {
    let mut rng = NoiseStream::new(5, 0);
    let mut violations = 0;
    for _ in 0..500 {
        let g = random_shape_game(&mut rng, 4);
        let v = solve_value(&g).unwrap();
        assert!(is_nash(&g, &v.p, &v.q, 1e-9).unwrap());
        // column player's game: rows and columns swapped, payoffs -Aᵀ
        let swapped = Game::from_matrix("swapped", &g.b_matrix()).unwrap();
        let dual = solve_value(&swapped).unwrap();
        assert!((v.value + dual.value).abs() <= 1e-8, "{} vs {}", v.value, dual.value);
        let lp = solve_value_simplex(&g).unwrap();
        assert!((v.value - lp.value).abs() <= 1e-8);

        let r = maximal_support_equilibrium(&g).unwrap();
        assert!(is_nash(&g, &r.p, &r.q, 1e-9).unwrap());
        assert!(is_anti_equilibrium(&g, &r.p_star, &r.q_star, 1e-9).unwrap());
        // any optimal pair found lives inside the maximal support
        assert!(support(&v.p, 1e-9).unwrap().indices().iter().all(|i| r.row_support.contains(*i)));
        assert!(support(&v.q, 1e-9).unwrap().indices().iter().all(|j| r.col_support.contains(*j)));
        if check_support_lemma(&g, (&r.p, &r.q), (&r.p_star, &r.q_star), 1e-9).unwrap() == SupportVerdict::Violation {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn interior_equilibria_are_flagged() {
    let mut rng = NoiseStream::new(8, 0);
    for _ in 0..200 {
        let mut d = || 0.1 + rng.uniform();
        let g = Game::new("cyclic", vec![vec![d(), -d()], vec![-d(), d()]]).unwrap();
        let r = maximal_support_equilibrium(&g).unwrap();
        assert!(r.interior);
        assert!(r.p.as_slice().iter().chain(r.q.as_slice()).all(|v| *v > 1e-9));
    }
}

#[test]
fn interior_nash_generator_positive_on_boundary() {
    let g = mp();
    let r = maximal_support_equilibrium(&g).unwrap();
    let v = LyapunovSpec::cross_entropy(&StrategyProfile::new(r.p.clone(), r.q.clone()));
    for (sigma, eta) in [(0.2, 0.2), (0.5, 0.1), (1.0, 1.5)] {
        let spec = DiffusionSpec::uniform(2, 2, sigma, eta).unwrap();
        let bound = interior_boundary_bound(&spec, &r).unwrap();
        assert!(bound > 0.0);
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            for (x, y) in [([0.0, 1.0], [t, 1.0 - t]), ([1.0, 0.0], [t, 1.0 - t]), ([t, 1.0 - t], [0.0, 1.0]), ([t, 1.0 - t], [1.0, 0.0])] {
                let s = StrategyProfile::from_vecs(x.to_vec(), y.to_vec()).unwrap();
                let lv = apply_generator(&g, &spec, &v, &s).unwrap();
                assert!(lv > 0.0 && lv >= bound - 1e-12, "{lv} < {bound} at {s:?}");
            }
        }
    }
}

#[test]
fn cross_entropy_diverges_against_anti_equilibrium() {
    let g = mp_3x2();
    let r = maximal_support_equilibrium(&g).unwrap();
    let anti = StrategyProfile::new(r.p_star.clone(), r.q_star.clone());
    let init = StrategyProfile::from_vecs(vec![0.3, 0.3, 0.4], vec![0.6, 0.4]).unwrap();
    let mut cfg = OdeConfig::new(init, 200.0);
    cfg.thin = 1000;
    let t = integrate_ode(&g, &cfg).unwrap();
    let v0 = cross_entropy(&anti, &t.profile(0)).unwrap();
    let v1 = cross_entropy(&anti, &t.last_profile().unwrap()).unwrap();
    assert!(v1 > v0 + 5.0, "{v0} -> {v1}");
}

#[test]
fn time_derivative_matches_finite_differences() {
    let g = mp_3x2();
    let reference = StrategyProfile::from_vecs(vec![0.2, 0.5, 0.3], vec![0.7, 0.3]).unwrap();
    let init = StrategyProfile::from_vecs(vec![0.3, 0.3, 0.4], vec![0.6, 0.4]).unwrap();
    let mut cfg = OdeConfig::new(init, 5.0);
    cfg.thin = 1;
    let t = integrate_ode(&g, &cfg).unwrap();
    let dt = cfg.dt;
    for k in (1..t.len() - 1).step_by(7) {
        let fd = (cross_entropy(&reference, &t.profile(k + 1)).unwrap()
            - cross_entropy(&reference, &t.profile(k - 1)).unwrap())
            / (2.0 * dt);
        let d = lyapunov_time_derivative(&g, &reference, &t.profile(k)).unwrap();
        assert!((fd - d).abs() <= 1e-4 * d.abs().max(1e-2), "step {k}: {fd} vs {d}");
    }
    for k in 0..t.len() {
        for w in [t.x(k), t.y(k)] {
            assert!(w.iter().all(|v| *v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn paths_stay_on_their_face() {
    let g = mp_3x2();
    let spec = DiffusionSpec::uniform(3, 2, 0.6, 0.6).unwrap();
    let init = StrategyProfile::from_vecs(vec![0.4, 0.6, 0.0], vec![0.5, 0.5]).unwrap();
    let mut cfg = SdeConfig::new(init, 50.0, 3);
    cfg.thin = 1;
    let t = simulate_sde(&g, &spec, &cfg).unwrap();
    assert!((0..t.len()).all(|k| t.x(k)[2] == 0.0));
}

/// The single-Brownian form for two-strategy sides matches the full form in its first two moments.
#[test]
fn reduced_mode_matches_full_in_law() {
    let g = mp();
    let spec = DiffusionSpec::reduced(0.8, 0.8).unwrap();
    let init = StrategyProfile::from_vecs(vec![0.7, 0.3], vec![0.4, 0.6]).unwrap();
    let replicas = 4000;
    let moments = |mode: NoiseMode, seed: u64| {
        let mut cfg = SdeConfig::new(init.clone(), 1.0, seed);
        cfg.noise = mode;
        cfg.thin = 1000;
        let v = ensemble_map(&g, &spec, &cfg, replicas, |_, t| t.x(t.len() - 1)[0]).unwrap();
        let n = v.len() as f64;
        let m1 = v.iter().sum::<f64>() / n;
        let m2 = v.iter().map(|a| a * a).sum::<f64>() / n;
        let var1 = v.iter().map(|a| (a - m1).powi(2)).sum::<f64>() / (n - 1.0);
        let var2 = v.iter().map(|a| (a * a - m2).powi(2)).sum::<f64>() / (n - 1.0);
        (m1, m2, (var1 / n).sqrt(), (var2 / n).sqrt())
    };
    let (a1, a2, sa1, sa2) = moments(NoiseMode::Full, 1);
    let (b1, b2, sb1, sb2) = moments(NoiseMode::Reduced, 2);
    assert!((a1 - b1).abs() <= 4.0 * sa1.hypot(sb1), "{a1} vs {b1}");
    assert!((a2 - b2).abs() <= 4.0 * sa2.hypot(sb2), "{a2} vs {b2}");
}

#[test]
fn histogram_and_corner_mass_are_consistent() {
    let g = mp();
    let spec = DiffusionSpec::reduced(0.4, 0.4).unwrap();
    let mut cfg = SdeConfig::new(StrategyProfile::barycenter(2, 2), 200.0, 9);
    cfg.noise = NoiseMode::Reduced;
    let t = simulate_sde(&g, &spec, &cfg).unwrap();
    let h = occupation_histogram(&t, &[Axis::X(0), Axis::Y(0)], 30, 20.0).unwrap();
    assert_eq!(h.counts.iter().sum::<u64>(), h.total_samples);
    assert!((h.frequencies().iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let c = corner_mass(&t, 0.1, 20.0).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let avg = time_average(&t, |x, y| in_corner_ball(x, y, i, j, 0.1) as u8 as f64, 20.0).unwrap();
            assert!((avg - c.mass(i + 1, j + 1)).abs() <= 1e-12);
        }
    }
    let mut merged = h.clone();
    merged.merge(&h).unwrap();
    assert_eq!(merged.total_samples, 2 * h.total_samples);
}

#[test]
fn deterministic_regret_bound_holds() {
    let g = mp();
    let mut rng = NoiseStream::new(21, 0);
    for _ in 0..100 {
        let init = interior_profile(&mut rng, 2, 2, 0.02);
        let mut cfg = OdeConfig::new(init, 50.0);
        cfg.thin = 20;
        let t = integrate_ode(&g, &cfg).unwrap();
        let r = regret_report(&g, &t, None).unwrap();
        assert_eq!(r.exceed_events, 0);
    }
}

#[test]
fn random_games_share_cases_with_helpers() {
    let mut rng = NoiseStream::new(2, 0);
    let g = random_game(&mut rng, 3, 4);
    assert_eq!((g.rows(), g.cols()), (3, 4));
}
