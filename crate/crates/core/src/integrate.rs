//! Fixed-step integrators and first-crossing detection.

use crate::error::{Error, Result};
use crate::model::SystemSpec;
use crate::rng::NoiseStream;
use crate::saddle::DividingSurface;

/// Time-stamped sequence of states.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    /// Step size used to produce the path (0 for paths built otherwise).
    pub dt: f64,
    /// Noise seed, for stochastic paths.
    pub seed: Option<u64>,
}

impl Path {
    pub fn new(dim: usize, dt: f64, seed: Option<u64>) -> Self {
        Self { dim, times: Vec::new(), states: Vec::new(), dt, seed }
    }

    /// Appends a state; times must be strictly increasing.
    pub fn push(&mut self, t: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert!(self.times.last().is_none_or(|&last| t > last), "path times must increase");
        self.times.push(t);
        self.states.extend_from_slice(x);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn final_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Duration between the first and last sample.
    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// CSV with one row per sample. `header` names the time column followed
    /// by one name per coordinate; `None` gives `t,x0,...,x{n-1}`.
    pub fn to_csv(&self, header: Option<&[&str]>) -> String {
        let mut out = match header {
            Some(names) => names.join(","),
            None => std::iter::once("t".to_string()).chain((0..self.dim).map(|i| format!("x{i}"))).collect::<Vec<_>>().join(","),
        };
        out.push('\n');
        for (t, x) in self.times.iter().zip(self.states()) {
            out.push_str(&t.to_string());
            for v in x {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of a first-crossing search; `time` is infinite when nothing
/// crossed before the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingResult {
    pub crossed: bool,
    pub time: f64,
    pub state: Option<Vec<f64>>,
}

impl CrossingResult {
    fn none() -> Self {
        Self { crossed: false, time: f64::INFINITY, state: None }
    }

    fn at(time: f64, state: Vec<f64>) -> Self {
        Self { crossed: true, time, state: Some(state) }
    }
}

/// Classical fourth-order Runge–Kutta with reusable stage buffers.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(dim: usize) -> Self {
        Self { k1: vec![0.0; dim], k2: vec![0.0; dim], k3: vec![0.0; dim], k4: vec![0.0; dim], tmp: vec![0.0; dim] }
    }

    /// Advances `x` from `t` by `h` (negative `h` integrates backwards).
    pub(crate) fn step(&mut self, system: &SystemSpec, x: &mut [f64], t: f64, h: f64) {
        let n = x.len();
        system.drift(x, t, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        system.drift(&self.tmp, t + 0.5 * h, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        system.drift(&self.tmp, t + 0.5 * h, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        system.drift(&self.tmp, t + h, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Euler–Maruyama step `x ← x + b dt + ε σ √dt η`.
pub(crate) struct EulerMaruyama {
    noise: Option<NoiseStream>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    eta: Vec<f64>,
    epsilon: f64,
    channels: usize,
}

impl EulerMaruyama {
    /// `noise = None` (or `ε = 0`) degenerates to explicit Euler.
    pub(crate) fn new(system: &SystemSpec, noise: Option<(u64, u64)>) -> Self {
        let m = system.channels();
        let stochastic = system.epsilon() > 0.0;
        Self {
            noise: noise.filter(|_| stochastic).map(|(seed, stream)| NoiseStream::new(seed, stream, m)),
            drift: vec![0.0; system.dim()],
            sigma: vec![0.0; system.dim() * m],
            eta: vec![0.0; m],
            epsilon: system.epsilon(),
            channels: m,
        }
    }

    #[inline]
    pub(crate) fn step(&mut self, system: &SystemSpec, x: &mut [f64], t: f64, dt: f64) {
        system.drift(x, t, &mut self.drift);
        match self.noise.as_mut() {
            None => {
                for (xi, bi) in x.iter_mut().zip(&self.drift) {
                    *xi += bi * dt;
                }
            }
            Some(stream) => {
                stream.fill(&mut self.eta);
                system.noise(x, &mut self.sigma);
                let scale = self.epsilon * dt.sqrt();
                let m = self.channels;
                for (i, xi) in x.iter_mut().enumerate() {
                    let kick: f64 = self.sigma[i * m..(i + 1) * m].iter().zip(&self.eta).map(|(s, e)| s * e).sum();
                    *xi += self.drift[i] * dt + scale * kick;
                }
            }
        }
    }
}

fn check_interval(system: &SystemSpec, x0: &[f64], t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if x0.len() != system.dim() {
        return Err(Error::config(format!("initial state has length {}, system dimension is {}", x0.len(), system.dim())));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("step size {dt} must be positive")));
    }
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::config(format!("time interval [{t0}, {t1}] is invalid")));
    }
    Ok(((t1 - t0) / dt).round() as usize)
}

/// Deterministic RK4 integration of the drift on `[t0, t1]` with fixed `dt`
/// (ε is ignored). The final time is the grid point closest to `t1`.
pub fn integrate_ode(system: &SystemSpec, x0: &[f64], t0: f64, t1: f64, dt: f64) -> Result<Path> {
    let steps = check_interval(system, x0, t0, t1, dt)?;
    let mut path = Path::new(system.dim(), dt, None);
    let mut x = x0.to_vec();
    path.push(t0, &x);
    let mut rk = Rk4::new(system.dim());
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        rk.step(system, &mut x, t, dt);
        let t_next = t0 + (k + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t_next });
        }
        path.push(t_next, &x);
    }
    Ok(path)
}

/// Euler–Maruyama integration with noise addressed by `(seed, step)`.
pub fn integrate_sde(system: &SystemSpec, x0: &[f64], t0: f64, t1: f64, dt: f64, seed: u64) -> Result<Path> {
    integrate_sde_stream(system, x0, t0, t1, dt, seed, 0)
}

/// As [`integrate_sde`] on an explicit noise stream.
pub fn integrate_sde_stream(system: &SystemSpec, x0: &[f64], t0: f64, t1: f64, dt: f64, seed: u64, stream: u64) -> Result<Path> {
    let steps = check_interval(system, x0, t0, t1, dt)?;
    let mut path = Path::new(system.dim(), dt, Some(seed));
    let mut x = x0.to_vec();
    path.push(t0, &x);
    let mut em = EulerMaruyama::new(system, Some((seed, stream)));
    for k in 0..steps {
        em.step(system, &mut x, t0 + k as f64 * dt, dt);
        let t_next = t0 + (k + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t_next });
        }
        path.push(t_next, &x);
    }
    Ok(path)
}

/// Time to the first crossing of `surface` into its capsize side, with
/// `T = ∞` when it is not reached before `horizon`.
///
/// Integration is stochastic (Euler–Maruyama) when `seed` is given and
/// `ε > 0`, deterministic RK4 otherwise. A crossing counts once the state is
/// on the capsize side with drift pointing further out (`⟨b, ∇g⟩ > 0`); the
/// reported time is that of the most recent sign change of `g`, located by
/// bisection within its step.
pub fn first_crossing(
    system: &SystemSpec,
    x0: &[f64],
    surface: &DividingSurface,
    horizon: f64,
    dt: f64,
    seed: Option<u64>,
) -> Result<CrossingResult> {
    first_crossing_stream(system, x0, surface, horizon, dt, seed.map(|s| (s, 0)))
}

pub(crate) fn first_crossing_stream(
    system: &SystemSpec,
    x0: &[f64],
    surface: &DividingSurface,
    horizon: f64,
    dt: f64,
    noise: Option<(u64, u64)>,
) -> Result<CrossingResult> {
    if !(horizon > 0.0) {
        return Err(Error::config(format!("horizon {horizon} must be positive")));
    }
    check_interval(system, x0, 0.0, horizon, dt)?;
    if surface.level(x0, 0.0) > 0.0 {
        return Ok(CrossingResult::at(0.0, x0.to_vec()));
    }
    let stochastic = noise.is_some() && system.epsilon() > 0.0;
    let n = system.dim();
    let mut x = x0.to_vec();
    let mut prev = x0.to_vec();
    let mut rk = Rk4::new(n);
    let mut em = EulerMaruyama::new(system, noise);
    let mut drift = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut g_prev = surface.level(&x, 0.0);
    let mut entry: Option<f64> = None;
    let mut k: u64 = 0;
    loop {
        let t = k as f64 * dt;
        if t >= horizon {
            return Ok(CrossingResult::none());
        }
        prev.copy_from_slice(&x);
        if stochastic {
            em.step(system, &mut x, t, dt);
        } else {
            rk.step(system, &mut x, t, dt);
        }
        k += 1;
        let t_next = k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t_next });
        }
        let g = surface.level(&x, t_next);
        if g > 0.0 {
            if g_prev <= 0.0 {
                let s = if stochastic {
                    bisect_linear(surface, &prev, &x, t, dt)
                } else {
                    bisect_rk4(system, surface, &prev, t, dt, &mut rk)
                };
                entry = Some(t + s);
            }
            system.drift(&x, t_next, &mut drift);
            surface.gradient(&x, t_next, &mut grad);
            let outward: f64 = drift.iter().zip(&grad).map(|(b, g)| b * g).sum();
            if outward > 0.0 {
                let time = entry.expect("entry recorded on sign change");
                if time < horizon {
                    return Ok(CrossingResult::at(time, x));
                }
                return Ok(CrossingResult::none());
            }
        } else {
            entry = None;
        }
        g_prev = g;
    }
}

const BISECTION_REL_TOL: f64 = 1e-8;

/// Offset `s ∈ (0, dt]` where the straight segment `prev → next` meets `g = 0`.
fn bisect_linear(surface: &DividingSurface, prev: &[f64], next: &[f64], t: f64, dt: f64) -> f64 {
    let mut y = prev.to_vec();
    let mut at = |s: f64| {
        let w = s / dt;
        for ((yi, a), b) in y.iter_mut().zip(prev).zip(next) {
            *yi = a + w * (b - a);
        }
        surface.level(&y, t + s)
    };
    bisect(&mut at, dt)
}

/// Offset where the RK4 sub-step of length `s` from `prev` meets `g = 0`.
fn bisect_rk4(system: &SystemSpec, surface: &DividingSurface, prev: &[f64], t: f64, dt: f64, rk: &mut Rk4) -> f64 {
    let mut y = prev.to_vec();
    let mut at = |s: f64| {
        y.copy_from_slice(prev);
        rk.step(system, &mut y, t, s);
        surface.level(&y, t + s)
    };
    bisect(&mut at, dt)
}

fn bisect(g: &mut impl FnMut(f64) -> f64, dt: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, dt);
    while hi - lo > BISECTION_REL_TOL * dt {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mechanical_oscillator, toy_roll_system, FilterSpec, RollModelParams};

    fn toy(eps: f64) -> SystemSpec {
        toy_roll_system(RollModelParams::new(1.0, 1.0, 0.5, eps)).unwrap()
    }

    fn theta_surface(level: f64) -> DividingSurface {
        DividingSurface::hyperplane(vec![level, 0.0], vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn harmonic_quarter_period() {
        let sys = mechanical_oscillator(1.0, 0.0, 0.0, 0.0).unwrap();
        let path = integrate_ode(&sys, &[1.0, 0.0], 0.0, std::f64::consts::FRAC_PI_2, 1e-3).unwrap();
        // grid point nearest π/2 is 1.571; compare against the exact solution there
        let t = path.final_time().unwrap();
        assert!((t - std::f64::consts::FRAC_PI_2).abs() <= 0.5e-3);
        let x = path.last_state().unwrap();
        assert!((x[0] - t.cos()).abs() < 1e-6);
        assert!((x[1] + t.sin()).abs() < 1e-6);
        assert!(x[0].abs() < 1e-3 && (x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_interval_gives_single_state() {
        let sys = toy(0.4);
        let p = integrate_ode(&sys, &[0.3, 0.1], 2.0, 2.0, 0.01).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.state(0), &[0.3, 0.1]);
        let p = integrate_sde(&sys, &[0.3, 0.1], 2.0, 2.0, 0.01, 9).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn damped_relaxation_to_upright() {
        let sys = toy(0.0);
        let a = integrate_ode(&sys, &[0.2, 0.0], 0.0, 50.0, 1e-2).unwrap();
        let b = integrate_ode(&sys, &[0.2, 0.0], 0.0, 50.0, 5e-3).unwrap();
        let (xa, xb) = (a.last_state().unwrap(), b.last_state().unwrap());
        assert!(xa.iter().all(|v| v.abs() < 1e-4));
        assert!(xa.iter().zip(xb).all(|(p, q)| (p - q).abs() < 1e-9));
    }

    #[test]
    fn invalid_inputs() {
        let sys = toy(0.0);
        assert!(integrate_ode(&sys, &[0.0, 0.0], 0.0, 1.0, 0.0).unwrap_err().is_config());
        assert!(integrate_ode(&sys, &[0.0, 0.0], 1.0, 0.0, 0.1).unwrap_err().is_config());
        assert!(integrate_ode(&sys, &[0.0], 0.0, 1.0, 0.1).unwrap_err().is_config());
    }

    #[test]
    fn divergence_reports_time() {
        // θ̈ = θ³ - θ blows up in finite time from well past the saddle
        let sys = toy(0.0);
        match integrate_ode(&sys, &[3.0, 3.0], 0.0, 10.0, 1e-2) {
            Err(Error::Divergence { time }) => assert!(time > 0.0 && time < 10.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_noise_sde_is_explicit_euler() {
        let sys = toy(0.0);
        let p = integrate_sde(&sys, &[0.5, -0.2], 0.0, 1.0, 0.01, 3).unwrap();
        let mut x = [0.5, -0.2];
        let mut b = [0.0; 2];
        for k in 0..100 {
            sys.drift(&x, k as f64 * 0.01, &mut b);
            x[0] += b[0] * 0.01;
            x[1] += b[1] * 0.01;
        }
        assert_eq!(p.last_state().unwrap(), &x);
    }

    #[test]
    fn seeded_paths_are_bitwise_reproducible() {
        let sys = toy(0.4);
        let a = integrate_sde(&sys, &[0.1, 0.0], 0.0, 5.0, 1e-3, 11).unwrap();
        let b = integrate_sde(&sys, &[0.1, 0.0], 0.0, 5.0, 1e-3, 11).unwrap();
        assert_eq!(a, b);
        let c = integrate_sde(&sys, &[0.1, 0.0], 0.0, 5.0, 1e-3, 12).unwrap();
        assert_ne!(a.last_state(), c.last_state());
    }

    #[test]
    fn path_csv_layout() {
        let mut p = Path::new(2, 0.5, None);
        p.push(0.0, &[1.0, -0.25]);
        p.push(0.5, &[0.1, 2.0]);
        assert_eq!(p.to_csv(None), "t,x0,x1\n0,1,-0.25\n0.5,0.1,2\n");
        assert!(p.to_csv(Some(&["t", "theta", "v"])).starts_with("t,theta,v\n"));
    }

    #[test]
    fn crossing_from_equilibrium_never_happens() {
        let sys = toy(0.0);
        let r = first_crossing(&sys, &[0.0, 0.0], &theta_surface(1.0), 50.0, 1e-2, None).unwrap();
        assert!(!r.crossed);
        assert_eq!(r.time, f64::INFINITY);
        assert!(r.state.is_none());
    }

    #[test]
    fn crossing_at_time_zero_when_already_past() {
        let sys = toy(0.0);
        let r = first_crossing(&sys, &[1.2, 0.1], &theta_surface(1.0), 10.0, 1e-2, None).unwrap();
        assert!(r.crossed);
        assert_eq!(r.time, 0.0);
    }

    #[test]
    fn energetic_start_crosses_consistently_under_step_halving() {
        let sys = toy(0.0);
        let s = theta_surface(1.0);
        let a = first_crossing(&sys, &[0.99, 2.0], &s, 10.0, 1e-2, None).unwrap();
        let b = first_crossing(&sys, &[0.99, 2.0], &s, 10.0, 5e-3, None).unwrap();
        assert!(a.crossed && b.crossed);
        assert!(a.time > 0.0 && a.time < 0.01);
        assert!((a.time - b.time).abs() < 1e-3);
        // v ≈ 2 at the start, so θ reaches 1 after ≈ 0.005
        assert!((a.time - 0.005).abs() < 2e-4);
    }

    #[test]
    fn stochastic_crossing_is_reproducible() {
        let sys = toy(0.4);
        let s = DividingSurface::any_of(vec![
            theta_surface(1.0),
            DividingSurface::hyperplane(vec![-1.0, 0.0], vec![-1.0, 0.0]).unwrap(),
        ]);
        let a = first_crossing(&sys, &[0.0, 0.0], &s, 200.0, 1e-2, Some(4)).unwrap();
        let b = first_crossing(&sys, &[0.0, 0.0], &s, 200.0, 1e-2, Some(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.crossed, "escape within 200 time units is nearly certain at eps = 0.4");
    }

    #[test]
    fn augmented_zero_noise_matches_ship() {
        let ship = toy(0.0);
        let f = FilterSpec::velocity_forcing(1, &[-1.0], &[2.0], 0.0, 2, 1).unwrap();
        let aug = crate::model::couple_filter(&ship, &f).unwrap();
        let a = integrate_ode(&ship, &[0.4, 0.3], 0.0, 20.0, 1e-2).unwrap();
        let b = integrate_sde(&aug, &[0.4, 0.3, 0.0], 0.0, 20.0, 1e-2, 1).unwrap();
        let c = integrate_ode(&aug, &[0.4, 0.3, 0.0], 0.0, 20.0, 1e-2).unwrap();
        assert_eq!(&c.last_state().unwrap()[..2], a.last_state().unwrap());
        assert_eq!(b.last_state().unwrap()[2], 0.0);
    }
}
