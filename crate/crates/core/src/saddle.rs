//! Saddles, stable manifolds, dividing surfaces and time-to-capsize ensembles.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{first_crossing_stream, Path, Rk4};
use crate::model::{sym_sqrt, SystemSpec};
use crate::rng::derive_seed;
use crate::stats::CapsizeStats;

/// Equilibrium with exactly one unstable direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleInfo {
    pub point: Vec<f64>,
    /// Eigenvalues of the drift Jacobian as `(re, im)`, sorted by real part
    /// (descending).
    pub eigenvalues: Vec<(f64, f64)>,
    /// Unit eigenvector of the positive eigenvalue.
    pub unstable_direction: Vec<f64>,
    /// Unit left eigenvector of the positive eigenvalue; orthogonal to every
    /// stable direction, so `⟨w, x − point⟩` is the unstable coordinate.
    pub unstable_covector: Vec<f64>,
    /// Unit eigenvector of the negative eigenvalue (two-dimensional systems).
    pub stable_direction: Option<Vec<f64>>,
}

impl SaddleInfo {
    pub fn unstable_eigenvalue(&self) -> f64 {
        self.eigenvalues[0].0
    }
}

/// Central finite-difference Jacobian of the drift, step `1e-6·(1 + |x_j|)`.
pub fn drift_jacobian(system: &SystemSpec, x: &[f64], t: f64) -> DMatrix<f64> {
    let n = system.dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        system.drift(&xp, t, &mut fp);
        xp[j] = x[j] - h;
        system.drift(&xp, t, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;

/// Damped Newton iteration on the drift from `guess`, classified by the
/// spectrum of the Jacobian at the root.
pub fn find_saddle(system: &SystemSpec, guess: &[f64]) -> Result<SaddleInfo> {
    if !system.is_autonomous() {
        return Err(Error::config("saddle search needs an autonomous system"));
    }
    if guess.len() != system.dim() || !system.in_domain(guess) {
        return Err(Error::config(format!("saddle guess {guess:?} is outside the domain")));
    }
    let n = system.dim();
    let mut x = guess.to_vec();
    let mut f = system.drift_vec(&x, 0.0);
    let mut res = norm(&f);
    let mut iterations = 0;
    while res >= NEWTON_TOL {
        if iterations == NEWTON_MAX_ITER {
            return Err(Error::NotConverged { iterations, residual: res, last: x });
        }
        iterations += 1;
        let jac = drift_jacobian(system, &x, 0.0);
        let step = jac.lu().solve(&DVector::from_iterator(n, f.iter().map(|v| -v))).ok_or_else(|| Error::NotConverged {
            iterations,
            residual: res,
            last: x.clone(),
        })?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + lambda * s).collect();
            let ft = system.drift_vec(&trial, 0.0);
            let rt = norm(&ft);
            if rt < res || lambda < 1e-4 {
                x = trial;
                f = ft;
                res = rt;
                break;
            }
            lambda *= 0.5;
        }
        if !res.is_finite() {
            return Err(Error::NotConverged { iterations, residual: res, last: x });
        }
    }
    classify(system, x)
}

fn classify(system: &SystemSpec, point: Vec<f64>) -> Result<SaddleInfo> {
    let n = system.dim();
    let jac = drift_jacobian(system, &point, 0.0);
    let mut eigenvalues: Vec<(f64, f64)> = jac.complex_eigenvalues().iter().map(|l| (l.re, l.im)).collect();
    eigenvalues.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let unstable = eigenvalues.iter().filter(|l| l.0 > 0.0).count();
    if unstable != 1 {
        return Err(Error::WrongIndex { point, unstable });
    }
    let unstable_direction = real_eigenvector(&jac, eigenvalues[0].0);
    let mut unstable_covector = real_eigenvector(&jac.transpose(), eigenvalues[0].0);
    if unstable_covector.iter().zip(&unstable_direction).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
        unstable_covector.iter_mut().for_each(|x| *x = -*x);
    }
    let stable_direction = (n == 2 && eigenvalues[1].1 == 0.0).then(|| real_eigenvector(&jac, eigenvalues[1].0));
    Ok(SaddleInfo { point, eigenvalues, unstable_direction, unstable_covector, stable_direction })
}

/// Unit null vector of `J − λI`, sign fixed so the largest component is
/// positive.
fn real_eigenvector(jac: &DMatrix<f64>, lambda: f64) -> Vec<f64> {
    let n = jac.nrows();
    let shifted = jac - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (k, _) = svd.singular_values.argmin();
    let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let lead = v.iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Two-branch stable manifold polyline; `truncated` is set when a branch
/// left the domain box (or stalled) before reaching the requested length.
#[derive(Debug, Clone)]
pub struct ManifoldCurve {
    /// "Time" column is the signed arclength from the saddle.
    pub curve: Path,
    pub truncated: bool,
}

impl ManifoldCurve {
    pub fn to_csv(&self) -> String {
        self.curve.to_csv(Some(&["s", "theta", "theta_dot"]))
    }
}

const MANIFOLD_DS: f64 = 1e-4;
const MANIFOLD_MAX_DT: f64 = 0.05;
const MANIFOLD_MAX_STEPS: usize = 1_000_000;

/// Traces `W⁺` of a planar saddle by integrating backwards in time from
/// `saddle ± h·stable_direction` until each branch has `arclength`.
pub fn stable_manifold_2d(system: &SystemSpec, saddle: &SaddleInfo, arclength: f64, h: f64) -> Result<ManifoldCurve> {
    if system.dim() != 2 || !system.is_autonomous() {
        return Err(Error::config("stable manifold tracing needs an autonomous planar system"));
    }
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::config(format!("seed offset h = {h} must be in (0, 0.01]")));
    }
    if !(arclength >= 0.0 && arclength.is_finite()) {
        return Err(Error::config(format!("arclength {arclength} must be finite and >= 0")));
    }
    let dir = saddle.stable_direction.as_ref().ok_or_else(|| Error::config("saddle has no real stable direction"))?;
    let mut curve = Path::new(2, 0.0, None);
    if arclength == 0.0 {
        curve.push(0.0, &saddle.point);
        return Ok(ManifoldCurve { curve, truncated: false });
    }
    let mut truncated = false;
    let mut branches = Vec::with_capacity(2);
    for sign in [-1.0, 1.0] {
        let (pts, cut) = trace_branch(system, &saddle.point, &[sign * dir[0], sign * dir[1]], arclength, h);
        truncated |= cut;
        branches.push(pts);
    }
    for (s, p) in branches[0].iter().rev() {
        curve.push(-s, p);
    }
    curve.push(0.0, &saddle.point);
    for (s, p) in &branches[1] {
        curve.push(*s, p);
    }
    Ok(ManifoldCurve { curve, truncated })
}

/// Points of one branch with their arclength from the saddle (excluding the
/// saddle itself).
fn trace_branch(system: &SystemSpec, saddle: &[f64], dir: &[f64], arclength: f64, h: f64) -> (Vec<(f64, [f64; 2])>, bool) {
    let mut out = Vec::new();
    let mut x = [saddle[0] + h.min(arclength) * dir[0], saddle[1] + h.min(arclength) * dir[1]];
    let mut s = h.min(arclength);
    out.push((s, x));
    if s >= arclength {
        return (out, false);
    }
    let mut rk = Rk4::new(2);
    let mut b = [0.0; 2];
    for _ in 0..MANIFOLD_MAX_STEPS {
        system.drift(&x, 0.0, &mut b);
        let speed = norm(&b);
        if !(speed > 0.0) {
            return (out, true);
        }
        let dt = (MANIFOLD_DS / speed).min(MANIFOLD_MAX_DT);
        let prev = x;
        rk.step(system, &mut x, 0.0, -dt);
        if !x.iter().all(|v| v.is_finite()) || !system.in_domain(&x) {
            return (out, true);
        }
        let ds = ((x[0] - prev[0]).powi(2) + (x[1] - prev[1]).powi(2)).sqrt();
        if ds == 0.0 {
            return (out, true);
        }
        if s + ds >= arclength {
            let w = (arclength - s) / ds;
            let end = [prev[0] + w * (x[0] - prev[0]), prev[1] + w * (x[1] - prev[1])];
            if arclength > s {
                out.push((arclength, end));
            }
            return (out, false);
        }
        s += ds;
        out.push((s, x));
    }
    (out, true)
}

type LevelFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Implicit surface `g(x, t) = 0`; states with `g > 0` are capsized.
#[derive(Clone)]
pub enum DividingSurface {
    /// `g(x) = ⟨normal, x − point⟩`.
    Hyperplane { point: Vec<f64>, normal: Vec<f64> },
    /// Union of capsize sides, `g = max gᵢ`.
    AnyOf(Vec<DividingSurface>),
    /// User level function; gradients by central differences.
    Function(Arc<LevelFn>),
}

impl fmt::Debug for DividingSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hyperplane { point, normal } => {
                f.debug_struct("Hyperplane").field("point", point).field("normal", normal).finish()
            }
            Self::AnyOf(parts) => f.debug_tuple("AnyOf").field(parts).finish(),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl DividingSurface {
    pub fn hyperplane(point: Vec<f64>, normal: Vec<f64>) -> Result<Self> {
        if point.len() != normal.len() || norm(&normal) == 0.0 {
            return Err(Error::config("hyperplane needs a nonzero normal matching the point dimension"));
        }
        Ok(Self::Hyperplane { point, normal })
    }

    pub fn any_of(parts: Vec<DividingSurface>) -> Self {
        Self::AnyOf(parts)
    }

    pub fn function<F>(g: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self::Function(Arc::new(g))
    }

    pub fn level(&self, x: &[f64], t: f64) -> f64 {
        match self {
            Self::Hyperplane { point, normal } => normal.iter().zip(x).zip(point).map(|((n, xi), p)| n * (xi - p)).sum(),
            Self::AnyOf(parts) => parts.iter().map(|p| p.level(x, t)).fold(f64::NEG_INFINITY, f64::max),
            Self::Function(g) => g(x, t),
        }
    }

    pub fn gradient(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            Self::Hyperplane { normal, .. } => out.copy_from_slice(normal),
            Self::AnyOf(parts) => {
                let best =
                    parts.iter().max_by(|a, b| a.level(x, t).total_cmp(&b.level(x, t))).expect("union of at least one surface");
                best.gradient(x, t, out);
            }
            Self::Function(g) => {
                let mut y = x.to_vec();
                for j in 0..x.len() {
                    let h = 1e-6 * (1.0 + x[j].abs());
                    y[j] = x[j] + h;
                    let gp = g(&y, t);
                    y[j] = x[j] - h;
                    let gm = g(&y, t);
                    y[j] = x[j];
                    out[j] = (gp - gm) / (2.0 * h);
                }
            }
        }
    }

    /// Planar hyperplanes rotated by `angle` radians about their base point;
    /// other surfaces are returned unchanged.
    pub fn tilted(&self, angle: f64) -> Self {
        match self {
            Self::Hyperplane { point, normal } if normal.len() == 2 => {
                let (s, c) = angle.sin_cos();
                Self::Hyperplane {
                    point: point.clone(),
                    normal: vec![c * normal[0] - s * normal[1], s * normal[0] + c * normal[1]],
                }
            }
            Self::AnyOf(parts) => Self::AnyOf(parts.iter().map(|p| p.tilted(angle)).collect()),
            other => other.clone(),
        }
    }
}

/// Hyperplane through the saddle spanned by its stable directions (normal is
/// the left unstable eigenvector), with the capsize side facing away from the
/// origin.
pub fn default_dividing_surface(saddle: &SaddleInfo) -> DividingSurface {
    let mut normal = saddle.unstable_covector.clone();
    let outward: f64 = normal.iter().zip(&saddle.point).map(|(n, p)| n * p).sum();
    if outward < 0.0 {
        normal.iter_mut().for_each(|x| *x = -*x);
    }
    DividingSurface::Hyperplane { point: saddle.point.clone(), normal }
}

/// Distribution of initial states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSampler {
    Point {
        state: Vec<f64>,
    },
    /// Mean and row-major covariance.
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<f64>,
    },
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl InitialSampler {
    pub fn dim(&self) -> usize {
        match self {
            Self::Point { state } => state.len(),
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Uniform { lo, .. } => lo.len(),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::config(format!("initial sampler has dimension {}, system has {dim}", self.dim())));
        }
        match self {
            Self::Point { state } if state.iter().any(|v| !v.is_finite()) => Err(Error::config("initial state must be finite")),
            Self::Gaussian { covariance, .. } => {
                if covariance.len() != dim * dim {
                    return Err(Error::config(format!("covariance must have {} entries", dim * dim)));
                }
                let c = DMatrix::from_row_slice(dim, dim, covariance);
                if (&c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) || c.symmetric_eigenvalues().min() < -1e-12 {
                    return Err(Error::config("covariance must be symmetric positive semi-definite"));
                }
                Ok(())
            }
            Self::Uniform { lo, hi } if hi.len() != lo.len() || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) => {
                Err(Error::config("uniform box needs lo <= hi componentwise"))
            }
            _ => Ok(()),
        }
    }

    /// Draw number `index` of the stream keyed by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
        rng.set_stream(1);
        match self {
            Self::Point { state } => state.clone(),
            Self::Gaussian { mean, covariance } => {
                let n = mean.len();
                let root = sym_sqrt(&DMatrix::from_row_slice(n, n, covariance));
                let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
                let x = root * z;
                mean.iter().zip(x.iter()).map(|(m, d)| m + d).collect()
            }
            Self::Uniform { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| if a == b { a } else { Uniform::new(a, b).expect("checked bounds").sample(&mut rng) })
                .collect(),
        }
    }
}

/// Runs [`first_crossing`](crate::integrate::first_crossing) from
/// `n_samples` initial draws. Sample `i` uses initial-state and noise streams
/// derived from `(seed, i)`, so results do not depend on thread count.
/// Diverged samples are excluded from the statistics and counted in
/// `n_failed`.
#[allow(clippy::too_many_arguments)]
pub fn capsize_time_ensemble(
    system: &SystemSpec,
    sampler: &InitialSampler,
    surface: &DividingSurface,
    horizon: f64,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CapsizeStats> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    sampler.validate(system.dim())?;
    let outcomes: Vec<Result<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let x0 = sampler.sample(seed, i);
            first_crossing_stream(system, &x0, surface, horizon, dt, Some((derive_seed(seed, i), 0))).map(|r| r.time)
        })
        .collect();
    let mut times = Vec::with_capacity(n_samples);
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(t) => times.push(t),
            Err(Error::Divergence { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(CapsizeStats::from_times(&times, horizon, failed))
}
