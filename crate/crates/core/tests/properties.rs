use proptest::prelude::*;

use urnld::drift::{
    drift_derivative, drift_eval, equilibrium_solve, interval_istar, monotonicity_check,
    remark_condition_checks, DriftProfile,
};
use urnld::exact::dp_distribution;
use urnld::ldp::{rate_fit, TailEstimate};
use urnld::model::{
    conditional_increment_stats, draw_probability, replay_path, simulate_path, Outcome,
    ReplacementMatrix, SkewSpec, UrnConfig, UrnState,
};
use urnld::sa::{run_sa, Drift, NoiseSource, SaProblem, StepSchedule};

fn skew() -> impl Strategy<Value = SkewSpec> {
    prop_oneof![
        Just(SkewSpec::identity()),
        (1.0..3.0f64).prop_map(|p| SkewSpec::power(p).unwrap()),
        (1.0..3.0f64).prop_map(|p| SkewSpec::mirror_power(p).unwrap()),
    ]
}

fn smooth_skew() -> impl Strategy<Value = SkewSpec> {
    prop_oneof![
        Just(SkewSpec::identity()),
        Just(SkewSpec::power(2.0).unwrap()),
        Just(SkewSpec::mirror_power(2.0).unwrap()),
        (1.5..3.0f64).prop_map(|p| SkewSpec::power(p).unwrap()),
    ]
}

/// Valid integer urns: positive off-diagonal, unbalanced.
fn urn() -> impl Strategy<Value = UrnConfig> {
    (0u32..8, 1u32..8, 1u32..8, 0u32..8, skew(), 1u32..6, 1u32..6)
        .prop_filter("unbalanced", |(a, b, c, d, ..)| a + c != b + d)
        .prop_map(|(a, b, c, d, f, y1, y2)| {
            UrnConfig::new(
                ReplacementMatrix::new(a as f64, b as f64, c as f64, d as f64).unwrap(),
                f,
                (y1 as f64, y2 as f64),
            )
            .unwrap()
        })
}

fn smooth_urn() -> impl Strategy<Value = UrnConfig> {
    (urn(), smooth_skew()).prop_map(|(c, f)| UrnConfig::new(c.matrix, f, c.y0).unwrap())
}

/// Law of `Z_n` by listing all `2^n` draw sequences.
fn brute_force(config: &UrnConfig, n: usize) -> Vec<f64> {
    let mut by_k = vec![0.0; n + 1];
    for mask in 0u32..(1 << n) {
        let outcomes: Vec<Outcome> = (0..n)
            .map(|i| {
                if mask >> i & 1 == 1 {
                    Outcome::E1
                } else {
                    Outcome::E2
                }
            })
            .collect();
        let path = replay_path(config, &outcomes);
        let mut p = 1.0;
        for (state, o) in path.states.iter().zip(&outcomes) {
            let p1 = draw_probability(state, &config.skew);
            p *= if *o == Outcome::E1 { p1 } else { 1.0 - p1 };
        }
        by_k[mask.count_ones() as usize] += p;
    }
    by_k
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn draw_probability_is_a_probability(f in skew(), y1 in 0.0..50.0f64, y2 in 0.0..50.0f64) {
        prop_assume!(y1 + y2 > 0.0);
        let p = draw_probability(&UrnState::new(0, y1, y2), &f);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(draw_probability(&UrnState::new(0, 3.0, 0.0), &f), 1.0);
        prop_assert_eq!(draw_probability(&UrnState::new(0, 0.0, 3.0), &f), 0.0);
    }

    #[test]
    fn martingale_increment_has_zero_conditional_mean(c in urn(), y1 in 0.5..100.0f64, y2 in 0.5..100.0f64) {
        let stats = conditional_increment_stats(&UrnState::new(0, y1, y2), &c);
        prop_assert!(stats.cond_mean_dm().abs() <= 1e-12);
    }

    #[test]
    fn paths_respect_the_increment_bound_and_accounting(c in urn(), seed in any::<u64>()) {
        let path = simulate_path(&c, 300, seed).unwrap();
        let (h1, h2) = (c.matrix.h1(), c.matrix.h2());
        let mut k = 0.0;
        for (i, (s, r)) in path.states.iter().skip(1).zip(&path.steps).enumerate() {
            prop_assert!(r.delta_m.abs() <= 4.0 * (h1 + h2));
            if r.outcome == Outcome::E1 {
                k += 1.0;
            }
            let m = (i + 1) as f64;
            prop_assert_eq!(s.t, c.t0() + k * h1 + (m - k) * h2);
        }
    }

    #[test]
    fn paths_are_reproducible(c in urn(), seed in any::<u64>()) {
        let a = simulate_path(&c, 200, seed).unwrap();
        let b = simulate_path(&c, 200, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn drift_endpoints_and_envelope(c in urn()) {
        let p = DriftProfile::new(c.matrix, c.skew.clone());
        prop_assert!((drift_eval(&p, 0.0).unwrap() - c.matrix.h12).abs() <= 1e-12);
        prop_assert!((drift_eval(&p, 1.0).unwrap() + c.matrix.h21).abs() <= 1e-12);
        let env = 2.0 * (c.matrix.h1() + c.matrix.h2());
        for i in 0..10_000 {
            let y = i as f64 / 9_999.0;
            prop_assert!(drift_eval(&p, y).unwrap().abs() <= env);
        }
    }

    #[test]
    fn derivative_matches_central_differences(c in smooth_urn()) {
        let p = DriftProfile::new(c.matrix, c.skew.clone());
        let d = 1e-5;
        for i in 1..100 {
            let y = i as f64 / 100.0;
            let fd = (drift_eval(&p, y + d).unwrap() - drift_eval(&p, y - d).unwrap()) / (2.0 * d);
            prop_assert!((drift_derivative(&p, y).unwrap() - fd).abs() <= 1e-6, "y = {}", y);
        }
    }

    #[test]
    fn roots_lie_in_istar(c in urn()) {
        let p = DriftProfile::new(c.matrix, c.skew.clone());
        let r = equilibrium_solve(&p, 1e-12).unwrap();
        let (lo, hi) = interval_istar(&c.matrix);
        for y in &r.roots_found {
            prop_assert!(*y >= lo - 1e-12 && *y <= hi + 1e-12, "{} not in [{}, {}]", y, lo, hi);
        }
    }

    #[test]
    fn sufficient_conditions_give_a_unique_stable_root(c in urn()) {
        let p = DriftProfile::new(c.matrix, c.skew.clone());
        let mono = monotonicity_check(&p);
        if let Ok(remark) = remark_condition_checks(&c.matrix, &c.skew) {
            if mono.non_increasing && remark.passed {
                let r = equilibrium_solve(&p, 1e-12).unwrap();
                prop_assert!(r.unique());
                prop_assert!(r.stable);
            }
        }
    }

    #[test]
    fn dp_rows_sum_to_one(c in urn(), n in 0u64..300) {
        let d = dp_distribution(&c, n).unwrap();
        prop_assert!((d.total_mass() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn dp_matches_enumeration(c in urn(), n in 0usize..=10) {
        let d = dp_distribution(&c, n as u64).unwrap();
        let bf = brute_force(&c, n);
        for (atom, p) in d.support.iter().zip(&bf) {
            prop_assert!((atom.probability - p).abs() <= 1e-13);
        }
    }

    #[test]
    fn rate_fit_recovers_exact_log_linear_input(a in 0.001..0.5f64, log_c in -3.0..1.0f64) {
        let est: Vec<TailEstimate> = (1..=8u64)
            .map(|i| TailEstimate::exact(10 * i, 0.1, (log_c - a * (10 * i) as f64).exp()))
            .collect();
        let fit = rate_fit(&est).unwrap();
        prop_assert!((fit.a_hat - a).abs() <= 1e-12);
        prop_assert!((fit.log_c_hat - log_c).abs() <= 1e-12);
    }

    #[test]
    fn sa_recursion_holds_at_every_step(seed in any::<u64>(), slope in 0.1..2.0f64, noise in 0.0..0.5f64) {
        let p = SaProblem::synthetic(
            Drift::Linear { slope, center: 0.5 },
            StepSchedule::harmonic(1.0, 10.0).unwrap(),
            NoiseSource::Uniform { half_width: noise },
            0.2,
            true,
        )
        .unwrap();
        let t = run_sa(&p, 500, seed).unwrap();
        for (i, a) in t.audit.iter().enumerate() {
            let next = t.states[i] + a.gamma * (a.drift + a.noise);
            prop_assert_eq!(t.states[i + 1], next);
            prop_assert!((0.0..=1.0).contains(&t.states[i + 1]));
        }
    }
}

#[test]
fn dp_matches_enumeration_up_to_twelve_draws() {
    let configs = [
        ([[2.0, 4.0], [3.0, 6.0]], SkewSpec::identity()),
        ([[4.0, 1.0], [5.0, 4.0]], SkewSpec::identity()),
        ([[1.0, 2.0], [3.0, 4.0]], SkewSpec::power(2.0).unwrap()),
        ([[3.0, 1.0], [2.0, 5.0]], SkewSpec::power(2.0).unwrap()),
        (
            [[1.0, 2.0], [3.0, 4.0]],
            SkewSpec::mirror_power(2.0).unwrap(),
        ),
        (
            [[0.5, 2.5], [1.5, 0.0]],
            SkewSpec::mirror_power(2.0).unwrap(),
        ),
    ];
    for (rows, f) in configs {
        let c = UrnConfig::new(ReplacementMatrix::from_rows(rows).unwrap(), f, (1.0, 2.0)).unwrap();
        for n in 0..=12 {
            let d = dp_distribution(&c, n as u64).unwrap();
            let bf = brute_force(&c, n);
            for (atom, p) in d.support.iter().zip(&bf) {
                assert!((atom.probability - p).abs() <= 1e-13, "{rows:?} n = {n}");
            }
        }
    }
}

#[test]
fn bounded_problems_concentrate() {
    let problems = [
        Drift::Linear {
            slope: 1.0,
            center: 0.5,
        },
        Drift::Tanh {
            scale: 1.5,
            center: 0.4,
        },
    ];
    for drift in problems {
        let center = match drift {
            Drift::Linear { center, .. } | Drift::Tanh { center, .. } => center,
            Drift::Zero => unreachable!(),
        };
        let p = SaProblem::synthetic(
            drift,
            StepSchedule::harmonic(1.0, 10.0).unwrap(),
            NoiseSource::Uniform { half_width: 0.5 },
            center,
            true,
        )
        .unwrap();
        let x = urnld::sa::tail_experiment(&p, center, &[500, 5000], 0.1, 2000, 5).unwrap();
        let two_sided = |i: usize| x.upper[i].p_hat + x.lower[i].p_hat;
        assert!(
            two_sided(1) < two_sided(0) || two_sided(0) == 0.0,
            "{drift:?}"
        );
    }
}
