use capsize_core::grid::{Grid2D, RegionLabel, RegionSpec, Shape};
use capsize_core::ldt::{minimize_action, Duration, MinimizeOptions};
use capsize_core::mc::{reactive_histogram, sample_transitions_capped};
use capsize_core::tpt::Generator;
use capsize_core::{
    capsize_time_ensemble, default_dividing_surface, find_saddle, reactive_density, toy_roll_system, DividingSurface,
    InitialSampler, RollModelParams, SystemSpec,
};

fn toy(eps: f64) -> SystemSpec {
    toy_roll_system(RollModelParams::new(1.0, 1.0, 0.5, eps)).unwrap()
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

#[test]
fn reactive_density_peaks_near_the_well() {
    let sys = toy(0.4);
    let grid = Grid2D::default();
    let a = RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.2).unwrap();
    let b = RegionSpec::both_sides(RegionLabel::B, 1.5).unwrap();
    let gen = Generator::assemble(&sys, &grid).unwrap();
    let rho = gen.stationary_density().unwrap();
    let qp = gen.committor_forward(&a, &b).unwrap();
    let qm = gen.committor_backward(&a, &b, &rho).unwrap().field;
    let rr = reactive_density(&rho, &qp, &qm).unwrap();
    let peak = grid.node(rr.argmax().0);

    let coarse = Grid2D::new((-2.0, 2.0), (-2.5, 2.5), 41, 41).unwrap();
    let rec = sample_transitions_capped(&sys, &a, &b, 2e4, 1e-3, 11, 2_000).unwrap();
    let hist = reactive_histogram(&rec, &coarse).unwrap();
    let mc_peak = coarse.node(hist.argmax().0);
    println!("rho_R peak {peak:?}, MC peak {mc_peak:?}, {} transitions", rec.n_transitions);

    for p in [peak, mc_peak] {
        assert!(dist(p, [0.0, 0.0]) < 0.6, "peak {p:?} too far from A");
        assert!(dist(p, [0.0, 0.0]) < dist(p, [1.0, 0.0]) && dist(p, [0.0, 0.0]) < dist(p, [-1.0, 0.0]));
    }
}

#[test]
fn instanton_is_stable_under_refinement() {
    let sys = toy(0.4);
    let solve = |n| {
        let opts = MinimizeOptions { n_points: n, duration: Duration::Fixed { duration: 27.0 }, ..Default::default() };
        minimize_action(&sys, &[0.0, 0.0], &[1.0, 0.0], &opts).unwrap()
    };
    let coarse = solve(200);
    let fine = solve(400);
    let rel = (coarse.value - fine.value).abs() / fine.value;
    println!("S(200) = {:.6}, S(400) = {:.6}, rel {rel:.2e}", coarse.value, fine.value);
    assert!(coarse.converged && fine.converged);
    assert!(rel < 5e-3);
}

#[test]
fn tilt_shifts_capsize_probability_monotonically() {
    let sys = toy(0.4);
    let surface = |angle: f64| {
        let r = default_dividing_surface(&find_saddle(&sys, &[1.0, 0.0]).unwrap()).tilted(angle);
        let l = default_dividing_surface(&find_saddle(&sys, &[-1.0, 0.0]).unwrap()).tilted(angle);
        DividingSurface::any_of(vec![r, l])
    };
    let sampler = InitialSampler::Gaussian { mean: vec![0.0, 0.0], covariance: vec![0.16, 0.0, 0.0, 0.16] };
    let run = |angle: f64| capsize_time_ensemble(&sys, &sampler, &surface(angle), 20.0, 1e-2, 4_000, 6).unwrap();
    let p: Vec<f64> = [-10.0f64, 0.0, 10.0]
        .iter()
        .map(|deg| {
            let s = run(deg.to_radians());
            println!("tilt {deg}: p {:.4} ± {:.4}", s.p_capsize, s.stderr);
            s.p_capsize
        })
        .collect();
    assert!(p[0] < p[1] && p[1] < p[2]);
    assert!((p[2] - p[0]).abs() < 0.25);
}

#[test]
fn committor_near_starboard_saddle() {
    let sys = toy(0.4);
    let grid = Grid2D::default();
    let a = RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.2).unwrap();
    let gen = Generator::assemble(&sys, &grid).unwrap();
    let one_sided = RegionSpec::new(RegionLabel::B, vec![Shape::HalfPlane { normal: [1.0, 0.0], offset: 1.5 }]).unwrap();
    let both = RegionSpec::both_sides(RegionLabel::B, 1.5).unwrap();
    let q1 = gen.committor_forward(&a, &one_sided).unwrap().interpolate(1.0, 0.0);
    let q2 = gen.committor_forward(&a, &both).unwrap().interpolate(1.0, 0.0);
    println!("q+(1,0): one-sided B {q1:.4}, two-sided B {q2:.4}");
    assert!((0.35..=0.65).contains(&q1));
    assert!(q2 > q1);
}

#[test]
fn committor_is_consistent_under_grid_refinement() {
    let sys = toy(0.4);
    let a = RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.2).unwrap();
    let b = RegionSpec::both_sides(RegionLabel::B, 1.5).unwrap();
    let coarse = Grid2D::default();
    let fine = Grid2D { n_theta: 2 * coarse.n_theta, n_v: 2 * coarse.n_v, ..coarse };
    let qc = Generator::assemble(&sys, &coarse).unwrap().committor_forward(&a, &b).unwrap();
    let qf = Generator::assemble(&sys, &fine).unwrap().committor_forward(&a, &b).unwrap();
    for p in [[1.0, 0.0], [0.5, 0.5], [-0.8, 0.3], [0.0, 1.0], [1.2, -0.6]] {
        let (c, f) = (qc.interpolate(p[0], p[1]), qf.interpolate(p[0], p[1]));
        println!("q+{p:?}: {c:.4} (200) vs {f:.4} (400)");
        assert!((c - f).abs() < 0.03);
    }
}
