use nojump::model::BoundaryCase;
use nojump::models::{build_chain, chain_scale_direct, ChainSpec};
use nojump::qsd::{qsd_bundle, yaglom_projection};
use nojump::scale::{identity_residuals, scale_row, wq_eval, Method, DEFAULT_TOL};
use nojump::spectral::{decay_parameter, eval_d, SpectralProblem};
use nojump::verify::{simulate, transition_oracle, SimConfig, Start, SubGenerator};
use num_complex::Complex64;
use proptest::prelude::*;

fn chain_spec() -> impl Strategy<Value = ChainSpec> {
    (2usize..8, prop::collection::vec((0.2f64..3.0, 0.2f64..3.0, 0.0f64..1.0), 8), 0usize..3).prop_map(
        |(n, rates, case)| {
            let boundary = [BoundaryCase::ReflectingRight, BoundaryCase::KilledBoth, BoundaryCase::EntranceInfinity][case];
            let mut triplets = Vec::new();
            for y in 1..=n {
                let (down, up, jump) = rates[y - 1];
                triplets.push((y, y - 1, down));
                if y < n {
                    triplets.push((y, y + 1, up));
                }
                if y + 2 <= n {
                    triplets.push((y, y + 2, jump));
                }
            }
            ChainSpec { states: n, rates: triplets, boundary }
        },
    )
}

fn rate() -> impl Strategy<Value = Complex64> {
    (-8.0f64..8.0, -8.0f64..8.0).prop_map(|(a, b)| Complex64::new(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn zero_rate_reproduces_the_kernel(spec in chain_spec()) {
        let m = build_chain(&spec).unwrap();
        let e = wq_eval(&m, Complex64::new(0.0, 0.0), Method::Volterra, DEFAULT_TOL).unwrap();
        for i in 0..=m.last() {
            for j in 0..=m.last() {
                let k = if j > i { m.k(i, j) } else { 0.0 };
                prop_assert!((e.w(i, j).re - k).abs() <= 1e-12 * k.abs().max(1.0));
                prop_assert_eq!(e.w(i, j).im, 0.0);
            }
        }
    }

    #[test]
    fn recursion_matches_the_direct_chain_inverse(spec in chain_spec(), q in rate()) {
        let m = build_chain(&spec).unwrap();
        let direct = chain_scale_direct(&spec, q).unwrap();
        for i in 0..m.last() {
            let row = scale_row(&m, q, i);
            for j in (i + 1)..=m.last() {
                let d = direct.get(i, j);
                prop_assert!((row[j] - d).norm() <= 1e-9 * d.norm().max(1.0), "({}, {}): {} vs {}", i, j, row[j], d);
            }
        }
    }

    #[test]
    fn resolvent_identities_hold(spec in chain_spec(), q in rate(), r in rate()) {
        let m = build_chain(&spec).unwrap();
        let res = identity_residuals(&m, q, r).unwrap();
        prop_assert!(res.res_w <= 1e-10 && res.res_z <= 1e-10, "{:?}", res);
        if let Some(rr) = res.res_r {
            prop_assert!(rr <= 1e-8, "{:?}", res);
        }
    }

    #[test]
    fn characteristic_function_is_real_on_conjugates(spec in chain_spec(), q in rate()) {
        let m = build_chain(&spec).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let a = eval_d(&p, q).unwrap();
        let b = eval_d(&p, q.conj()).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-12 * a.norm().max(1.0));
    }

    #[test]
    fn qsd_is_a_probability_and_projection_is_idempotent(spec in chain_spec(), f in prop::collection::vec(-1.0f64..1.0, 9)) {
        let m = build_chain(&spec).unwrap();
        let p = SpectralProblem::new(&m).unwrap();
        let d = decay_parameter(&p).unwrap();
        let b = qsd_bundle(&p, d.lambda0).unwrap();
        prop_assert!(b.nu.iter().all(|v| *v >= 0.0));
        prop_assert!((b.nu.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let f = &f[..m.last() + 1];
        let once = yaglom_projection(&b, f).unwrap();
        let twice = yaglom_projection(&b, &once).unwrap();
        for (a, c) in once.iter().zip(&twice) {
            prop_assert!((a - c).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn survival_is_a_decreasing_probability(spec in chain_spec(), t in 0.0f64..5.0) {
        let m = build_chain(&spec).unwrap();
        let s = SubGenerator::from_model(&m).unwrap();
        let ones = vec![1.0; s.dim()];
        let a = transition_oracle(&s, t, &ones).unwrap();
        let b = transition_oracle(&s, t + 0.5, &ones).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*x <= 1.0 + 1e-12 && *y >= -1e-12 && *y <= *x + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ensembles_do_not_depend_on_the_worker_count(spec in chain_spec(), seed in any::<u64>(), workers in 2usize..6) {
        let m = build_chain(&spec).unwrap();
        let mut cfg = SimConfig {
            start: Start::Index(1),
            horizon: 2.0,
            paths: 3000,
            seed,
            step: 0.0,
            buckets: SimConfig::uniform_buckets(2.0, 4),
            workers: 1,
        };
        let a = simulate(&m, &cfg).unwrap();
        cfg.workers = workers;
        let b = simulate(&m, &cfg).unwrap();
        prop_assert!(a.survivors.iter().all(|s| *s <= a.paths));
        prop_assert_eq!(a, b);
    }
}
