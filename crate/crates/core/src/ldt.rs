//! Discretized Freidlin–Wentzell action and minimum-action paths.
//!
//! The action is posed on the forced (non-position) coordinates only. Each
//! position of a kinematic pair is integrated from its velocity with the
//! trapezoid rule, so `θ̇ = v` holds exactly on the grid and the end position
//! is enforced by eliminating the middle velocity.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::integrate::Path;
use crate::model::SystemSpec;

/// Uniformly spaced path on `[0, duration]`, states row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub duration: f64,
    pub dim: usize,
    pub states: Vec<f64>,
    pub fixed_start: bool,
    /// `false` when the non-position coordinates of the last state were free.
    pub fixed_end: bool,
}

impl DiscretePath {
    pub fn new(duration: f64, dim: usize, states: Vec<f64>) -> Result<Self> {
        if dim == 0 || !states.len().is_multiple_of(dim) || states.len() / dim < 2 {
            return Err(Error::config("a discrete path needs at least two states of the given dimension"));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::config(format!("path duration {duration} must be positive")));
        }
        Ok(Self { duration, dim, states, fixed_start: true, fixed_end: true })
    }

    pub fn n_points(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn dt(&self) -> f64 {
        self.duration / (self.n_points() - 1) as f64
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    /// Image under `x ↦ −x`.
    pub fn reflected(&self) -> Self {
        Self { states: self.states.iter().map(|v| -v).collect(), ..self.clone() }
    }

    /// Planar distance from `p` to the polyline through the first two
    /// coordinates.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let n = self.n_points();
        let mut best = f64::INFINITY;
        for i in 0..n.saturating_sub(1) {
            let a = self.state(i);
            let b = self.state(i + 1);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let s = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (ex, ey) = (a[0] + s * dx - p[0], a[1] + s * dy - p[1]);
            best = best.min((ex * ex + ey * ey).sqrt());
        }
        best
    }

    pub fn to_path(&self) -> Path {
        let mut p = Path::new(self.dim, self.dt(), None);
        for i in 0..self.n_points() {
            p.push(self.time(i), self.state(i));
        }
        p
    }

    pub fn to_csv(&self, header: Option<&[&str]>) -> String {
        self.to_path().to_csv(header)
    }
}

/// Pointwise evaluation of the discrete action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEvaluation {
    pub value: f64,
    /// Largest violation of the kinematic equations `ẋ_pos = x_vel`.
    pub infeasibility: f64,
    /// Contribution of each segment `[tᵢ, tᵢ₊₁]`.
    pub segments: Vec<f64>,
}

impl ActionEvaluation {
    /// Action accumulated from node `from` to the end.
    pub fn tail(&self, from: usize) -> f64 {
        self.segments.iter().skip(from).sum()
    }
}

struct NoiseMetric {
    forced: Vec<usize>,
    weight: DMatrix<f64>,
}

fn noise_metric(system: &SystemSpec, x: &[f64]) -> Result<NoiseMetric> {
    let n = system.dim();
    let m = system.channels();
    let mut is_pos = vec![false; n];
    let mut is_vel = vec![false; n];
    for k in system.kinematics() {
        if is_pos[k.position] || is_vel[k.velocity] || is_vel[k.position] || is_pos[k.velocity] {
            return Err(Error::config("kinematic pairs must use distinct coordinates"));
        }
        is_pos[k.position] = true;
        is_vel[k.velocity] = true;
    }
    let mut sigma = vec![0.0; n * m];
    system.noise(x, &mut sigma);
    for (i, _) in is_pos.iter().enumerate().filter(|(_, &p)| p) {
        if sigma[i * m..(i + 1) * m].iter().any(|&s| s != 0.0) {
            return Err(Error::config(format!("position coordinate {i} of a kinematic pair cannot carry noise")));
        }
    }
    let forced: Vec<usize> = (0..n).filter(|&i| !is_pos[i]).collect();
    let cov = DMatrix::from_fn(forced.len(), forced.len(), |a, b| {
        (0..m).map(|j| sigma[forced[a] * m + j] * sigma[forced[b] * m + j]).sum::<f64>()
    });
    let chol = cov.clone().cholesky().ok_or_else(|| {
        Error::config("noise covariance is singular on the non-position coordinates; every such coordinate must be forced")
    })?;
    let weight = chol.inverse();
    let scale = cov.amax();
    if !(weight.amax() * scale < 1e12) {
        return Err(Error::config("noise covariance on the forced coordinates is numerically singular"));
    }
    Ok(NoiseMetric { forced, weight })
}

fn check_additive(system: &SystemSpec, a: &[f64], b: &[f64]) -> Result<()> {
    let len = system.dim() * system.channels();
    let (mut sa, mut sb) = (vec![0.0; len], vec![0.0; len]);
    system.noise(a, &mut sa);
    system.noise(b, &mut sb);
    if sa.iter().zip(&sb).any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + x.abs())) {
        return Err(Error::config("the action requires state-independent noise"));
    }
    Ok(())
}

/// `S[φ] = ½ Σ Δt (φ̇ − b)ᵀ (σσᵀ)⁻¹ (φ̇ − b)` over forced coordinates, at
/// segment midpoints, with unit noise amplitude.
pub fn action(path: &DiscretePath, system: &SystemSpec) -> Result<f64> {
    Ok(evaluate_action(path, system)?.value)
}

pub fn evaluate_action(path: &DiscretePath, system: &SystemSpec) -> Result<ActionEvaluation> {
    if path.dim != system.dim() {
        return Err(Error::config(format!("path dimension {} does not match system dimension {}", path.dim, system.dim())));
    }
    let metric = noise_metric(system, path.state(0))?;
    let n = path.dim;
    let dt = path.dt();
    let mut xm = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut r = DVector::zeros(metric.forced.len());
    let mut segments = Vec::with_capacity(path.n_points() - 1);
    let mut infeasibility: f64 = 0.0;
    for i in 0..path.n_points() - 1 {
        let (x0, x1) = (path.state(i), path.state(i + 1));
        for d in 0..n {
            xm[d] = 0.5 * (x0[d] + x1[d]);
        }
        system.drift(&xm, (i as f64 + 0.5) * dt, &mut b);
        for (a, &c) in metric.forced.iter().enumerate() {
            r[a] = (x1[c] - x0[c]) / dt - b[c];
        }
        segments.push(0.5 * dt * r.dot(&(&metric.weight * &r)));
        for k in system.kinematics() {
            let v = (x1[k.position] - x0[k.position]) / dt - 0.5 * (x0[k.velocity] + x1[k.velocity]);
            infeasibility = infeasibility.max(v.abs());
        }
    }
    Ok(ActionEvaluation { value: segments.iter().sum(), infeasibility, segments })
}

/// The action as a function of the free path coordinates, for fixed
/// endpoints and duration.
#[derive(Debug)]
pub struct ReducedAction<'a> {
    system: &'a SystemSpec,
    n: usize,
    n_points: usize,
    dt: f64,
    start: Vec<f64>,
    end: Vec<f64>,
    free_end: bool,
    mid: usize,
    pairs: Vec<(usize, usize)>,
    forced: Vec<usize>,
    weight: DMatrix<f64>,
    var_index: Vec<Option<usize>>,
    n_vars: usize,
}

impl<'a> ReducedAction<'a> {
    pub fn new(
        system: &'a SystemSpec,
        start: &[f64],
        end: &[f64],
        n_points: usize,
        duration: f64,
        free_end: bool,
    ) -> Result<Self> {
        let n = system.dim();
        if start.len() != n || end.len() != n {
            return Err(Error::config("endpoints must match the system dimension"));
        }
        if n_points < 50 {
            return Err(Error::config(format!("n_points {n_points} must be at least 50")));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::config(format!("duration {duration} must be positive")));
        }
        if !system.in_domain(start) || !system.in_domain(end) {
            return Err(Error::config("endpoints must lie in the system domain"));
        }
        let metric = noise_metric(system, start)?;
        check_additive(system, start, end)?;
        let pairs: Vec<(usize, usize)> = system.kinematics().iter().map(|k| (k.position, k.velocity)).collect();
        if free_end && pairs.is_empty() {
            return Err(Error::config("a free end velocity needs a kinematic pair"));
        }
        let mid = (n_points - 1) / 2;
        let eliminated = |k: usize, c: usize| k == mid && pairs.iter().any(|p| p.1 == c);
        let mut var_index = vec![None; n_points * n];
        let mut n_vars = 0;
        for k in 1..n_points {
            if k == n_points - 1 && !free_end {
                break;
            }
            for &c in &metric.forced {
                if !eliminated(k, c) {
                    var_index[k * n + c] = Some(n_vars);
                    n_vars += 1;
                }
            }
        }
        Ok(Self {
            system,
            n,
            n_points,
            dt: duration / (n_points - 1) as f64,
            start: start.to_vec(),
            end: end.to_vec(),
            free_end,
            mid,
            pairs,
            forced: metric.forced,
            weight: metric.weight,
            var_index,
            n_vars,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.n_points - 1) as f64
    }

    fn fill(&self, u: &[f64], x: &mut [f64]) {
        let (n, np, dt) = (self.n, self.n_points, self.dt);
        x[..n].copy_from_slice(&self.start);
        for k in 1..np {
            for &c in &self.forced {
                x[k * n + c] = match self.var_index[k * n + c] {
                    Some(j) => u[j],
                    None if k == np - 1 => self.end[c],
                    None => 0.0,
                };
            }
        }
        for &(p, c) in &self.pairs {
            let inner: f64 = (1..np - 1).filter(|&k| k != self.mid).map(|k| x[k * n + c]).sum();
            x[self.mid * n + c] = (self.end[p] - self.start[p]) / dt - 0.5 * (x[c] + x[(np - 1) * n + c]) - inner;
            for k in 1..np {
                x[k * n + p] = x[(k - 1) * n + p] + 0.5 * dt * (x[(k - 1) * n + c] + x[k * n + c]);
            }
            x[(np - 1) * n + p] = self.end[p];
        }
    }

    pub fn path(&self, u: &[f64]) -> DiscretePath {
        let mut x = vec![0.0; self.n_points * self.n];
        self.fill(u, &mut x);
        DiscretePath { duration: self.duration(), dim: self.n, states: x, fixed_start: true, fixed_end: !self.free_end }
    }

    fn segment_residual(&self, x: &[f64], i: usize, xm: &mut [f64], b: &mut [f64], r: &mut DVector<f64>) {
        let n = self.n;
        for d in 0..n {
            xm[d] = 0.5 * (x[i * n + d] + x[(i + 1) * n + d]);
        }
        self.system.drift(xm, (i as f64 + 0.5) * self.dt, b);
        for (a, &c) in self.forced.iter().enumerate() {
            r[a] = (x[(i + 1) * n + c] - x[i * n + c]) / self.dt - b[c];
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        let n = self.n;
        let mut x = vec![0.0; self.n_points * n];
        self.fill(u, &mut x);
        let (mut xm, mut b) = (vec![0.0; n], vec![0.0; n]);
        let mut r = DVector::zeros(self.forced.len());
        let mut s = 0.0;
        for i in 0..self.n_points - 1 {
            self.segment_residual(&x, i, &mut xm, &mut b, &mut r);
            s += 0.5 * self.dt * r.dot(&(&self.weight * &r));
        }
        s
    }

    /// Returns the value and writes the gradient with respect to `u`.
    pub fn value_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let (n, np, dt) = (self.n, self.n_points, self.dt);
        let nf = self.forced.len();
        let mut x = vec![0.0; np * n];
        self.fill(u, &mut x);
        let mut g = vec![0.0; np * n];
        let (mut xm, mut b) = (vec![0.0; n], vec![0.0; n]);
        let (mut bp, mut bm) = (vec![0.0; n], vec![0.0; n]);
        let mut r = DVector::zeros(nf);
        let mut jac = vec![0.0; nf * n];
        let mut s = 0.0;
        for i in 0..np - 1 {
            self.segment_residual(&x, i, &mut xm, &mut b, &mut r);
            let w = &self.weight * &r;
            s += 0.5 * dt * r.dot(&w);
            let t = (i as f64 + 0.5) * dt;
            for d in 0..n {
                let h = 1e-6 * (1.0 + xm[d].abs());
                let keep = xm[d];
                xm[d] = keep + h;
                self.system.drift(&xm, t, &mut bp);
                xm[d] = keep - h;
                self.system.drift(&xm, t, &mut bm);
                xm[d] = keep;
                for (a, &c) in self.forced.iter().enumerate() {
                    jac[a * n + d] = (bp[c] - bm[c]) / (2.0 * h);
                }
            }
            for (a, &c) in self.forced.iter().enumerate() {
                g[(i + 1) * n + c] += w[a];
                g[i * n + c] -= w[a];
            }
            for d in 0..n {
                let jw: f64 = (0..nf).map(|a| jac[a * n + d] * w[a]).sum::<f64>() * 0.5 * dt;
                g[i * n + d] -= jw;
                g[(i + 1) * n + d] -= jw;
            }
        }
        // positions depend on all earlier velocities
        for &(p, c) in &self.pairs {
            let mut suffix = 0.0;
            for k in (1..np).rev() {
                g[k * n + c] += dt * (0.5 * g[k * n + p] + suffix);
                suffix += g[k * n + p];
            }
        }
        for k in 1..np {
            for &c in &self.forced {
                if let Some(j) = self.var_index[k * n + c] {
                    let mut d = g[k * n + c];
                    if self.pairs.iter().any(|pc| pc.1 == c) {
                        d -= if k == np - 1 { 0.5 } else { 1.0 } * g[self.mid * n + c];
                    }
                    grad[j] = d;
                }
            }
        }
        s
    }

    /// Central finite-difference gradient.
    pub fn numerical_gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut w = u.to_vec();
        (0..u.len())
            .map(|j| {
                let h = 1e-6 * (1.0 + u[j].abs());
                w[j] = u[j] + h;
                let fp = self.value(&w);
                w[j] = u[j] - h;
                let fm = self.value(&w);
                w[j] = u[j];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    /// Linear interpolation of the forced coordinates; kinematic velocities
    /// are offset uniformly so that the end position is reached.
    pub fn linear_guess(&self) -> Vec<f64> {
        self.guess_through(&[(0.0, self.start.clone()), (1.0, self.end.clone())])
    }

    /// Piecewise-linear guess through `via` at mid-time.
    pub fn via_guess(&self, via: &[f64]) -> Result<Vec<f64>> {
        if via.len() != self.n {
            return Err(Error::config("via point must match the system dimension"));
        }
        Ok(self.guess_through(&[(0.0, self.start.clone()), (0.5, via.to_vec()), (1.0, self.end.clone())]))
    }

    fn guess_through(&self, knots: &[(f64, Vec<f64>)]) -> Vec<f64> {
        let (n, np) = (self.n, self.n_points);
        let duration = self.duration();
        let mut u = vec![0.0; self.n_vars];
        for k in 1..np {
            let s = k as f64 / (np - 1) as f64;
            let seg = knots.windows(2).position(|w| s <= w[1].0).unwrap_or(knots.len() - 2);
            let (s0, x0) = &knots[seg];
            let (s1, x1) = &knots[seg + 1];
            let lam = (s - s0) / (s1 - s0);
            for &c in &self.forced {
                if let Some(j) = self.var_index[k * n + c] {
                    let mut val = (1.0 - lam) * x0[c] + lam * x1[c];
                    if let Some(&(p, _)) = self.pairs.iter().find(|pc| pc.1 == c) {
                        val = (x1[p] - x0[p]) / ((s1 - s0) * duration);
                    }
                    u[j] = val;
                }
            }
        }
        u
    }

    /// Largest violation of the kinematic equations and of the end position.
    pub fn infeasibility(&self, u: &[f64]) -> f64 {
        let path = self.path(u);
        let n = self.n;
        let mut worst: f64 = 0.0;
        for &(p, c) in &self.pairs {
            let mut pos = self.start[p];
            for k in 1..self.n_points {
                pos += 0.5 * self.dt * (path.states[(k - 1) * n + c] + path.states[k * n + c]);
            }
            worst = worst.max((pos - self.end[p]).abs());
            for k in 0..self.n_points - 1 {
                let v = (path.states[(k + 1) * n + p] - path.states[k * n + p]) / self.dt
                    - 0.5 * (path.states[k * n + c] + path.states[(k + 1) * n + c]);
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    /// Scales kinematic velocity variables of a solution for a path of
    /// duration `old` so that positions keep their shape in rescaled time.
    fn rescale(&self, u: &[f64], old: f64) -> Vec<f64> {
        let n = self.n;
        let mut out = u.to_vec();
        let ratio = old / self.duration();
        for k in 1..self.n_points {
            for &(_, c) in &self.pairs {
                if let Some(j) = self.var_index[k * n + c] {
                    out[j] *= ratio;
                }
            }
        }
        out
    }
}

/// How the path duration is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Duration {
    Fixed {
        duration: f64,
    },
    /// Log-spaced grid on `[lo, hi]` followed by golden-section refinement
    /// around the best grid point.
    Search {
        lo: f64,
        hi: f64,
        grid: usize,
    },
}

impl Default for Duration {
    fn default() -> Self {
        Duration::Search { lo: 5.0, hi: 100.0, grid: 9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOptions {
    pub n_points: usize,
    pub duration: Duration,
    /// Leave the non-position coordinates of the end state free.
    pub free_end_velocity: bool,
    /// Alternative initialization used when descent from the linear guess
    /// stalls.
    pub via: Option<Vec<f64>>,
    pub max_iterations: usize,
    /// Relative gradient tolerance, scaled by `max(1, S)`.
    pub tolerance: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            n_points: 200,
            duration: Duration::default(),
            free_end_velocity: false,
            via: None,
            max_iterations: 10_000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionResult {
    pub value: f64,
    pub path: DiscretePath,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub infeasibility: f64,
    /// `(T, S)` pairs visited by the duration search, sorted by `T`.
    pub t_profile: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct ResultJson<'a> {
    value: f64,
    #[serde(rename = "T")]
    duration: f64,
    n_points: usize,
    converged: bool,
    gradient_norm: f64,
    iterations: usize,
    infeasibility: f64,
    t_profile: &'a [(f64, f64)],
}

impl ActionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ResultJson {
            value: self.value,
            duration: self.path.duration,
            n_points: self.path.n_points(),
            converged: self.converged,
            gradient_norm: self.gradient_norm,
            iterations: self.iterations,
            infeasibility: self.infeasibility,
            t_profile: &self.t_profile,
        })
        .expect("result serialize")
    }

    pub fn to_csv(&self) -> String {
        let header: Vec<String> = if self.path.dim == 2 {
            vec!["theta".into(), "v".into()]
        } else {
            (0..self.path.dim).map(|i| format!("x{i}")).collect()
        };
        let mut h: Vec<&str> = vec!["t"];
        h.extend(header.iter().map(String::as_str));
        self.path.to_csv(Some(&h))
    }
}

struct Solution {
    u: Vec<f64>,
    value: f64,
    gradient_norm: f64,
    converged: bool,
    iterations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const LBFGS_MEMORY: usize = 10;
const PLATEAU_WINDOW: usize = 500;
const LBFGS_BUDGET: usize = 2_000;
/// Newton iterations allowed per duration-search evaluation; the selected
/// duration is then polished with the full budget.
const SEARCH_NEWTON_BUDGET: usize = 150;

enum Stop {
    Converged,
    Plateau,
    Budget,
}

fn lbfgs(f: &ReducedAction, u: &mut [f64], tol: f64, budget: usize) -> (f64, Vec<f64>, usize, Stop) {
    let nv = u.len();
    let mut g = vec![0.0; nv];
    let mut s_val = f.value_and_gradient(u, &mut g);
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut history: VecDeque<f64> = VecDeque::new();
    let mut g_new = vec![0.0; nv];
    let mut trial = vec![0.0; nv];
    for it in 0..budget {
        if norm(&g) < tol * s_val.max(1.0) {
            return (s_val, g, it, Stop::Converged);
        }
        history.push_back(s_val);
        if history.len() > PLATEAU_WINDOW {
            let old = history.pop_front().unwrap();
            if old - s_val < 1e-9 * s_val.max(1.0) {
                return (s_val, g, it, Stop::Plateau);
            }
        }
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * s.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let gamma =
            mem.back().map(|(s, y, _)| s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / y.iter().map(|v| v * v).sum::<f64>());
        let gamma = gamma.unwrap_or(1.0 / norm(&g).max(1e-300));
        d.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let bcoef = rho * y.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - bcoef) * si);
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            mem.clear();
            d = g.iter().map(|v| -v / norm(&g)).collect();
            slope = -norm(&g);
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..nv {
                trial[j] = u[j] + step * d[j];
            }
            let val = f.value(&trial);
            if val <= s_val + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if mem.is_empty() {
                return (s_val, g, it, Stop::Plateau);
            }
            mem.clear();
            continue;
        }
        let val = f.value_and_gradient(&trial, &mut g_new);
        let s: Vec<f64> = (0..nv).map(|j| trial[j] - u[j]).collect();
        let y: Vec<f64> = (0..nv).map(|j| g_new[j] - g[j]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if mem.len() == LBFGS_MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        u.copy_from_slice(&trial);
        std::mem::swap(&mut g, &mut g_new);
        s_val = val;
    }
    (s_val, g, budget, Stop::Budget)
}

/// Damped Newton with a finite-difference Hessian of the analytic gradient.
fn newton(f: &ReducedAction, u: &mut [f64], tol: f64, budget: usize) -> (f64, Vec<f64>, usize, bool) {
    let nv = u.len();
    let mut g = vec![0.0; nv];
    let mut s_val = f.value_and_gradient(u, &mut g);
    let mut lambda = 1e-6;
    let mut gp = vec![0.0; nv];
    let mut gm = vec![0.0; nv];
    let mut trial = vec![0.0; nv];
    let mut g_trial = vec![0.0; nv];
    let mut w = u.to_vec();
    for it in 0..budget {
        let gn = norm(&g);
        if gn < tol * s_val.max(1.0) {
            return (s_val, g, it, true);
        }
        let mut h = DMatrix::zeros(nv, nv);
        for j in 0..nv {
            let step = 1e-5 * (1.0 + u[j].abs());
            w[j] = u[j] + step;
            f.value_and_gradient(&w, &mut gp);
            w[j] = u[j] - step;
            f.value_and_gradient(&w, &mut gm);
            w[j] = u[j];
            for i in 0..nv {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let scale = h.diagonal().amax().max(1e-300);
        let rhs = DVector::from_iterator(nv, g.iter().map(|v| -v));
        let mut moved = false;
        while lambda < 1e10 {
            let mut damped = h.clone();
            for i in 0..nv {
                damped[(i, i)] += lambda * scale;
            }
            if let Some(chol) = damped.cholesky() {
                let d = chol.solve(&rhs);
                for j in 0..nv {
                    trial[j] = u[j] + d[j];
                }
                let val = f.value_and_gradient(&trial, &mut g_trial);
                let better = val < s_val || (val <= s_val + 1e-14 * s_val.abs() && norm(&g_trial) < gn);
                if better {
                    u.copy_from_slice(&trial);
                    g.copy_from_slice(&g_trial);
                    s_val = val;
                    lambda = (lambda * 0.25).max(1e-14);
                    moved = true;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !moved {
            return (s_val, g, it, false);
        }
    }
    let converged = norm(&g) < tol * s_val.max(1.0);
    (s_val, g, budget, converged)
}

fn solve_fixed(f: &ReducedAction, init: Vec<f64>, opts: &MinimizeOptions, newton_budget: usize) -> Solution {
    let run = |mut u: Vec<f64>| -> (Solution, bool) {
        let budget = opts.max_iterations.min(LBFGS_BUDGET);
        let (val, g, it, stop) = lbfgs(f, &mut u, opts.tolerance, budget);
        let plateau = matches!(stop, Stop::Plateau);
        if matches!(stop, Stop::Converged) {
            return (Solution { u, value: val, gradient_norm: norm(&g), converged: true, iterations: it }, false);
        }
        let (val, g, it2, converged) = newton(f, &mut u, opts.tolerance, newton_budget.min(opts.max_iterations - it));
        (Solution { u, value: val, gradient_norm: norm(&g), converged, iterations: it + it2 }, plateau)
    };
    let (sol, plateau) = run(init);
    match &opts.via {
        Some(via) if plateau => match f.via_guess(via) {
            Ok(guess) => {
                let (alt, _) = run(guess);
                if alt.value < sol.value {
                    alt
                } else {
                    sol
                }
            }
            Err(_) => sol,
        },
        _ => sol,
    }
}

/// Minimizes the action over paths from `x_start` to `x_end`.
pub fn minimize_action(system: &SystemSpec, x_start: &[f64], x_end: &[f64], opts: &MinimizeOptions) -> Result<ActionResult> {
    if !(opts.tolerance > 0.0) || opts.max_iterations == 0 {
        return Err(Error::config("tolerance and max_iterations must be positive"));
    }
    if let Some(via) = &opts.via {
        if via.len() != system.dim() {
            return Err(Error::config("via point must match the system dimension"));
        }
    }
    let finish = |f: &ReducedAction, sol: Solution, profile: Vec<(f64, f64)>| ActionResult {
        value: sol.value.max(0.0),
        path: f.path(&sol.u),
        converged: sol.converged,
        gradient_norm: sol.gradient_norm,
        iterations: sol.iterations,
        infeasibility: f.infeasibility(&sol.u),
        t_profile: profile,
    };
    match opts.duration {
        Duration::Fixed { duration } => {
            let f = ReducedAction::new(system, x_start, x_end, opts.n_points, duration, opts.free_end_velocity)?;
            verify_gradient(&f, &f.linear_guess())?;
            let sol = solve_fixed(&f, f.linear_guess(), opts, usize::MAX);
            let profile = vec![(duration, sol.value)];
            Ok(finish(&f, sol, profile))
        }
        Duration::Search { lo, hi, grid } => {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) || grid < 2 {
                return Err(Error::config("duration search needs 0 < lo < hi and at least two grid points"));
            }
            let grid_t: Vec<f64> = (0..grid).map(|k| lo * (hi / lo).powf(k as f64 / (grid - 1) as f64)).collect();
            let probe = ReducedAction::new(system, x_start, x_end, opts.n_points, grid_t[0], opts.free_end_velocity)?;
            verify_gradient(&probe, &probe.linear_guess())?;
            let solved: Vec<Result<(f64, Solution)>> = grid_t
                .par_iter()
                .map(|&t| {
                    let f = ReducedAction::new(system, x_start, x_end, opts.n_points, t, opts.free_end_velocity)?;
                    Ok((t, solve_fixed(&f, f.linear_guess(), opts, SEARCH_NEWTON_BUDGET)))
                })
                .collect();
            let mut evaluated: Vec<(f64, Solution)> = solved.into_iter().collect::<Result<_>>()?;
            let best = (0..evaluated.len())
                .min_by(|&a, &b| evaluated[a].1.value.total_cmp(&evaluated[b].1.value))
                .expect("nonempty grid");
            let (mut a, mut b) = (grid_t[best.saturating_sub(1)], grid_t[(best + 1).min(grid - 1)]);
            let ratio = (5f64.sqrt() - 1.0) / 2.0;
            let warm = |evaluated: &Vec<(f64, Solution)>, t: f64| -> Result<(f64, Solution)> {
                let f = ReducedAction::new(system, x_start, x_end, opts.n_points, t, opts.free_end_velocity)?;
                let near = evaluated
                    .iter()
                    .min_by(|x, y| (x.0.ln() - t.ln()).abs().total_cmp(&(y.0.ln() - t.ln()).abs()))
                    .expect("nonempty");
                Ok((t, solve_fixed(&f, f.rescale(&near.1.u, near.0), opts, SEARCH_NEWTON_BUDGET)))
            };
            let mut c = b - ratio * (b - a);
            let mut d = a + ratio * (b - a);
            let e = warm(&evaluated, c)?;
            let mut fc = e.1.value;
            evaluated.push(e);
            let e = warm(&evaluated, d)?;
            let mut fd = e.1.value;
            evaluated.push(e);
            for _ in 0..30 {
                if (b - a) < 5e-3 * (a + b) {
                    break;
                }
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - ratio * (b - a);
                    let e = warm(&evaluated, c)?;
                    fc = e.1.value;
                    evaluated.push(e);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + ratio * (b - a);
                    let e = warm(&evaluated, d)?;
                    fd = e.1.value;
                    evaluated.push(e);
                }
            }
            let mut profile: Vec<(f64, f64)> = evaluated.iter().map(|(t, s)| (*t, s.value)).collect();
            profile.sort_by(|x, y| x.0.total_cmp(&y.0));
            let best =
                (0..evaluated.len()).min_by(|&x, &y| evaluated[x].1.value.total_cmp(&evaluated[y].1.value)).expect("nonempty");
            let (t, mut sol) = evaluated.swap_remove(best);
            let f = ReducedAction::new(system, x_start, x_end, opts.n_points, t, opts.free_end_velocity)?;
            if !sol.converged && sol.iterations < opts.max_iterations {
                let (val, g, it, converged) = newton(&f, &mut sol.u, opts.tolerance, opts.max_iterations - sol.iterations);
                sol = Solution { value: val, gradient_norm: norm(&g), converged, iterations: sol.iterations + it, u: sol.u };
            }
            Ok(finish(&f, sol, profile))
        }
    }
}

/// Relative error tolerated between the analytic and the finite-difference
/// gradient at the initial guess.
const GRADIENT_CHECK_TOL: f64 = 1e-5;

/// Largest relative deviation between analytic and central-difference
/// gradients, normalized by the largest gradient component.
pub fn gradient_check(f: &ReducedAction, u: &[f64]) -> f64 {
    let mut g = vec![0.0; u.len()];
    f.value_and_gradient(u, &mut g);
    let fd = f.numerical_gradient(u);
    let scale = g.iter().chain(&fd).fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    g.iter().zip(&fd).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

fn verify_gradient(f: &ReducedAction, u: &[f64]) -> Result<()> {
    let err = gradient_check(f, u);
    if err > GRADIENT_CHECK_TOL {
        return Err(Error::Solver(format!("action gradient disagrees with finite differences (relative error {err:.2e})")));
    }
    Ok(())
}

/// `log k ≈ −S/ε²` (exponential order only).
pub fn rate_asymptotic(min_action: f64, epsilon: f64) -> Result<f64> {
    if !(min_action >= 0.0) || !(epsilon > 0.0) {
        return Err(Error::config("rate asymptotic needs min_action >= 0 and epsilon > 0"));
    }
    Ok(-min_action / (epsilon * epsilon))
}

/// Least-squares fit `log k = intercept + slope / ε²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LdpFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn ldp_slope(epsilons: &[f64], rates: &[f64]) -> Result<LdpFit> {
    if epsilons.len() != rates.len() || epsilons.len() < 2 {
        return Err(Error::config("slope fit needs at least two (epsilon, rate) pairs"));
    }
    if epsilons.iter().any(|&e| !(e > 0.0)) || rates.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::config("slope fit needs positive noise levels and rates"));
    }
    let xs: Vec<f64> = epsilons.iter().map(|e| 1.0 / (e * e)).collect();
    let ys: Vec<f64> = rates.iter().map(|k| k.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::config("slope fit needs distinct noise levels"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(LdpFit { slope, intercept: my - slope * mx })
}

/// Fraction of the trapezoid mass of `field` at nodes within `radius` of
/// any of `paths`.
pub fn tube_fraction(field: &ScalarField, paths: &[&DiscretePath], radius: f64) -> Result<f64> {
    if paths.is_empty() || !(radius >= 0.0) {
        return Err(Error::config("tube fraction needs at least one path and radius >= 0"));
    }
    let g = &field.grid;
    let (mut inside, mut total) = (0.0, 0.0);
    for k in 0..g.len() {
        let m = field.values[k] * g.volume(k);
        total += m;
        let p = g.node(k);
        if paths.iter().any(|path| path.distance_to(p) <= radius) {
            inside += m;
        }
    }
    if !(total > 0.0) {
        return Err(Error::config("tube fraction needs a field with positive mass"));
    }
    Ok(inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::integrate_ode;
    use crate::model::{toy_roll_system, RollModelParams};

    fn toy() -> SystemSpec {
        toy_roll_system(RollModelParams::new(1.0, 1.0, 0.5, 0.4)).unwrap()
    }

    fn fixed(t: f64, n: usize) -> MinimizeOptions {
        MinimizeOptions { n_points: n, duration: Duration::Fixed { duration: t }, ..Default::default() }
    }

    #[test]
    fn deterministic_trajectory_costs_nothing() {
        let sys = toy();
        for &(x0, t) in &[([0.5, 0.3], 10.0), ([1.0 + 1e-3, 0.0], 5.0)] {
            let p = integrate_ode(&sys, &x0, 0.0, t, 1e-3).unwrap();
            let stride = 50;
            let states: Vec<f64> = (0..p.len()).step_by(stride).flat_map(|i| p.state(i).to_vec()).collect();
            let dp = DiscretePath::new(((p.len() - 1) / stride * stride) as f64 * 1e-3, 2, states).unwrap();
            let e = evaluate_action(&dp, &sys).unwrap();
            assert!(e.value < 1e-5, "{}", e.value);
            assert!(e.infeasibility < 1e-3);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sys = toy();
        for &free in &[false, true] {
            let f = ReducedAction::new(&sys, &[0.0, 0.0], &[1.5, 0.0], 60, 12.0, free).unwrap();
            let mut u = f.linear_guess();
            for (j, v) in u.iter_mut().enumerate() {
                *v += 0.3 * (j as f64 * 0.7).sin();
            }
            assert!(gradient_check(&f, &u) < 1e-6);
            assert!(f.infeasibility(&u) < 1e-12);
        }
    }

    #[test]
    fn reduced_path_respects_endpoints() {
        let sys = toy();
        let f = ReducedAction::new(&sys, &[0.1, -0.2], &[1.5, 0.3], 51, 7.0, false).unwrap();
        let p = f.path(&f.linear_guess());
        assert_eq!(p.state(0), &[0.1, -0.2]);
        assert_eq!(p.state(50), &[1.5, 0.3]);
        assert!((p.dt() - 7.0 / 50.0).abs() < 1e-15);
        assert!((action(&p, &sys).unwrap() - f.value(&f.linear_guess())).abs() < 1e-12);
    }

    #[test]
    fn equal_endpoints_give_zero_action() {
        let sys = toy();
        let r = minimize_action(&sys, &[0.0, 0.0], &[0.0, 0.0], &fixed(10.0, 50)).unwrap();
        assert!(r.value < 1e-14);
        assert!(r.converged);
    }

    #[test]
    fn minimizer_descends_from_the_initial_guess() {
        let sys = toy();
        let opts = fixed(15.0, 80);
        let f = ReducedAction::new(&sys, &[0.0, 0.0], &[0.8, 0.0], 80, 15.0, false).unwrap();
        let r = minimize_action(&sys, &[0.0, 0.0], &[0.8, 0.0], &opts).unwrap();
        assert!(r.value <= f.value(&f.linear_guess()));
        assert!(r.converged);
        assert!(r.gradient_norm < 1e-6 * r.value.max(1.0));
    }

    #[test]
    fn reflected_endpoint_gives_reflected_minimizer() {
        let sys = toy();
        let opts = MinimizeOptions { free_end_velocity: true, ..fixed(25.0, 80) };
        let p = minimize_action(&sys, &[0.0, 0.0], &[1.5, 0.0], &opts).unwrap();
        let m = minimize_action(&sys, &[0.0, 0.0], &[-1.5, 0.0], &opts).unwrap();
        assert!((p.value - m.value).abs() < 1e-9);
        let r = p.path.reflected();
        for (a, b) in r.states.iter().zip(&m.path.states) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn noisy_positions_and_singular_noise_rejected() {
        let bad = SystemSpec::new(
            2,
            1,
            |x, _, o| {
                o[0] = x[1];
                o[1] = -x[0];
            },
            |_, s| {
                s[0] = 1.0;
                s[1] = 1.0;
            },
        )
        .unwrap()
        .with_kinematic(0, 1)
        .unwrap();
        assert!(ReducedAction::new(&bad, &[0.0, 0.0], &[1.0, 0.0], 50, 5.0, false).unwrap_err().is_config());
        let degenerate = SystemSpec::new(
            2,
            1,
            |x, _, o| {
                o[0] = x[1];
                o[1] = -x[0];
            },
            |_, s| {
                s[0] = 0.0;
                s[1] = 1.0;
            },
        )
        .unwrap();
        assert!(ReducedAction::new(&degenerate, &[0.0, 0.0], &[1.0, 0.0], 50, 5.0, false).unwrap_err().is_config());
        assert!(ReducedAction::new(&toy(), &[0.0, 0.0], &[1.0, 0.0], 49, 5.0, false).unwrap_err().is_config());
    }

    #[test]
    fn elliptic_ou_action_matches_closed_form() {
        // dx = -x dt + dW: cheapest path from 0 to a in time T costs a²/(1 - e^{-2T})
        let ou = SystemSpec::new(1, 1, |x, _, o| o[0] = -x[0], |_, s| s[0] = 1.0).unwrap();
        let (a, t) = (1.0_f64, 3.0_f64);
        let r = minimize_action(&ou, &[0.0], &[a], &fixed(t, 400)).unwrap();
        let exact = a * a / (1.0 - (-2.0 * t).exp());
        assert!((r.value - exact).abs() < 1e-3 * exact, "{} vs {exact}", r.value);
    }

    #[test]
    fn rate_asymptotic_arithmetic() {
        assert_eq!(rate_asymptotic(0.0, 0.3).unwrap(), 0.0);
        assert!((rate_asymptotic(0.25, 0.5).unwrap() + 1.0).abs() < 1e-15);
        assert!(rate_asymptotic(-1.0, 0.5).is_err());
        assert!(rate_asymptotic(0.1, 0.0).is_err());
    }

    #[test]
    fn slope_of_exact_exponential() {
        let eps = [0.35_f64, 0.4, 0.45, 0.5];
        let k: Vec<f64> = eps.iter().map(|e| 2.0 * (-0.25 / (e * e)).exp()).collect();
        let fit = ldp_slope(&eps, &k).unwrap();
        assert!((fit.slope + 0.25).abs() < 1e-12);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn polyline_distance() {
        let p = DiscretePath::new(1.0, 2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((p.distance_to([0.5, 0.3]) - 0.3).abs() < 1e-15);
        assert!((p.distance_to([2.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
