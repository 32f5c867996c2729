use capsize_core::grid::{Grid2D, RegionLabel, RegionSpec};
use capsize_core::ldt::ReducedAction;
use capsize_core::tpt::{Generator, COMMITTOR_SLACK};
use capsize_core::{default_dividing_surface, find_saddle, first_crossing, integrate_ode, toy_roll_system, RollModelParams};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = RollModelParams> {
    (0.5f64..2.0, 0.5f64..2.0, 0.1f64..1.0, 0.2f64..0.6).prop_map(|(w, a, d, e)| RollModelParams::new(w, a, d, e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drift_is_odd(p in params(), t in -2.0f64..2.0, v in -2.0f64..2.0) {
        let sys = toy_roll_system(p).unwrap();
        let f = sys.drift_vec(&[t, v], 0.0);
        let g = sys.drift_vec(&[-t, -v], 0.0);
        prop_assert!((f[0] + g[0]).abs() < 1e-12 && (f[1] + g[1]).abs() < 1e-12);
    }

    #[test]
    fn energy_decays_inside_the_well(p in params(), r in 0.05f64..0.6, phi in 0.0f64..std::f64::consts::TAU) {
        let sys = toy_roll_system(p).unwrap();
        let scale = p.saddle_angle();
        let x0 = [r * scale * phi.cos(), r * scale * phi.sin()];
        let path = integrate_ode(&sys, &x0, 0.0, 10.0, 1e-2).unwrap();
        let e: Vec<f64> = path.states().map(|x| p.energy(x[0], x[1])).collect();
        prop_assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn crossing_time_does_not_depend_on_horizon(h in 5.0f64..40.0, t0 in 0.9f64..1.3, v0 in -0.5f64..0.5) {
        let sys = toy_roll_system(RollModelParams::new(1.0, 1.0, 0.5, 0.0)).unwrap();
        let s = find_saddle(&sys, &[1.0, 0.0]).unwrap();
        let g = default_dividing_surface(&s);
        let short = first_crossing(&sys, &[t0, v0], &g, h, 1e-2, None).unwrap();
        let long = first_crossing(&sys, &[t0, v0], &g, 2.0 * h, 1e-2, None).unwrap();
        if short.time.is_finite() {
            prop_assert_eq!(short.time, long.time);
        } else {
            prop_assert!(long.time >= h);
        }
    }

    #[test]
    fn action_is_nonnegative(seed in 0u64..1000, amp in 0.0f64..2.0) {
        let sys = toy_roll_system(RollModelParams::new(1.0, 1.0, 0.5, 0.4)).unwrap();
        let f = ReducedAction::new(&sys, &[0.0, 0.0], &[1.0, 0.0], 60, 20.0, false).unwrap();
        let mut u = f.linear_guess();
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        for x in u.iter_mut() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            *x += amp * ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
        }
        prop_assert!(f.value(&u) >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn committors_stay_in_unit_interval(eps in 0.3f64..0.6, delta in 0.3f64..0.8) {
        let sys = toy_roll_system(RollModelParams::new(1.0, 1.0, delta, eps)).unwrap();
        let grid = Grid2D::new((-2.0, 2.0), (-2.5, 2.5), 41, 41).unwrap();
        let a = RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.3).unwrap();
        let b = RegionSpec::both_sides(RegionLabel::B, 1.5).unwrap();
        let gen = Generator::assemble(&sys, &grid).unwrap();
        let rho = gen.stationary_density().unwrap();
        prop_assert!(rho.values.iter().all(|&r| r >= 0.0));
        prop_assert!((rho.integral() - 1.0).abs() < 1e-9);
        let qp = gen.committor_forward(&a, &b).unwrap();
        let qm = gen.committor_backward(&a, &b, &rho).unwrap().field;
        for q in [&qp, &qm] {
            prop_assert!(q.values.iter().all(|&v| (-COMMITTOR_SLACK..=1.0 + COMMITTOR_SLACK).contains(&v)));
        }
        for k in 0..grid.len() {
            let x = grid.node(k);
            if a.contains(&x) {
                prop_assert_eq!(qp.values[k], 0.0);
            } else if b.contains(&x) {
                prop_assert_eq!(qp.values[k], 1.0);
            }
            // B is symmetric and the drift is odd
            let mirror = grid.len() - 1 - k;
            prop_assert!((qp.values[k] - qp.values[mirror]).abs() < 1e-8);
        }
    }
}
