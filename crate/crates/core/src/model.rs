//! System abstraction, the toy roll model and the linear noise filter.
//!
//! A [`SystemSpec`] describes `dx = b(x, t) dt + ε σ(x) dW` with `x ∈ ℝⁿ` and
//! `m ≤ n` noise channels. Drift and noise are closures over parameters only;
//! evaluation writes into caller buffers so the hot integration loops do not
//! allocate.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `drift(x, t, out)` writes `b(x, t)` into `out` (length `n`).
pub type DriftFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
/// `noise(x, out)` writes the unscaled `n × m` noise matrix `σ(x)` row-major.
pub type NoiseFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
/// `coupling(x, z, t, out)` writes the forcing that filter state `z` adds to
/// the ship drift.
pub type CouplingFn = dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync;

/// A position coordinate whose equation of motion is exactly `ẋ_pos = x_vel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kinematic {
    pub position: usize,
    pub velocity: usize,
}

#[derive(Clone)]
pub struct SystemSpec {
    dim: usize,
    channels: usize,
    drift: Arc<DriftFn>,
    noise: Arc<NoiseFn>,
    epsilon: f64,
    autonomous: bool,
    kinematics: Vec<Kinematic>,
    domain: Vec<(f64, f64)>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("dim", &self.dim)
            .field("channels", &self.channels)
            .field("epsilon", &self.epsilon)
            .field("autonomous", &self.autonomous)
            .field("kinematics", &self.kinematics)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl SystemSpec {
    /// Autonomous, noiseless system on an unbounded domain.
    pub fn new<D, N>(dim: usize, channels: usize, drift: D, noise: N) -> Result<Self>
    where
        D: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        N: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::config("state dimension must be positive"));
        }
        if channels == 0 || channels > dim {
            return Err(Error::config(format!("noise channel count {channels} must be in 1..={dim}")));
        }
        Ok(Self {
            dim,
            channels,
            drift: Arc::new(drift),
            noise: Arc::new(noise),
            epsilon: 0.0,
            autonomous: true,
            kinematics: Vec::new(),
            domain: vec![(f64::NEG_INFINITY, f64::INFINITY); dim],
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!("noise amplitude {epsilon} must be finite and >= 0")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Marks the drift as explicitly time dependent.
    pub fn time_dependent(mut self) -> Self {
        self.autonomous = false;
        self
    }

    pub fn with_kinematic(mut self, position: usize, velocity: usize) -> Result<Self> {
        if position >= self.dim || velocity >= self.dim || position == velocity {
            return Err(Error::config(format!(
                "kinematic pair ({position}, {velocity}) out of range for dimension {}",
                self.dim
            )));
        }
        self.kinematics.push(Kinematic { position, velocity });
        Ok(self)
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        if domain.len() != self.dim || domain.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::config("domain box must have one nonempty interval per coordinate"));
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn kinematics(&self) -> &[Kinematic] {
        &self.kinematics
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.domain).all(|(&xi, &(lo, hi))| xi >= lo && xi <= hi)
    }

    #[inline]
    pub fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }

    pub fn drift_vec(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift(x, t, &mut out);
        out
    }

    /// Unscaled noise matrix `σ(x)`, `n × m` row-major.
    #[inline]
    pub fn noise(&self, x: &[f64], out: &mut [f64]) {
        (self.noise)(x, out)
    }

    /// Diffusion matrix `ε σ(x)`, `n × m` row-major.
    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.channels];
        self.noise(x, &mut out);
        out.iter_mut().for_each(|s| *s *= self.epsilon);
        out
    }

    /// Coordinates whose row of `σ` is nonzero at the reference state (the
    /// origin clipped into the domain box).
    pub fn forced_channels(&self) -> Vec<usize> {
        let reference: Vec<f64> = self.domain.iter().map(|&(lo, hi)| 0.0_f64.clamp(lo, hi)).collect();
        let mut sigma = vec![0.0; self.dim * self.channels];
        self.noise(&reference, &mut sigma);
        (0..self.dim).filter(|&i| sigma[i * self.channels..(i + 1) * self.channels].iter().any(|&s| s != 0.0)).collect()
    }
}

/// Parameters of the softening roll model
/// `θ̈ = −δ θ̇ − ω₀² θ + α θ³ + ε ξ`, potential `V(θ) = ½ω₀²θ² − ¼αθ⁴`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollModelParams {
    pub omega0_sq: f64,
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for RollModelParams {
    fn default() -> Self {
        Self { omega0_sq: 1.0, alpha: 1.0, delta: 0.5, epsilon: 0.4 }
    }
}

impl RollModelParams {
    pub fn new(omega0_sq: f64, alpha: f64, delta: f64, epsilon: f64) -> Self {
        Self { omega0_sq, alpha, delta, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega0_sq, self.alpha, self.delta, self.epsilon].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("roll model parameters must be finite"));
        }
        if self.omega0_sq <= 0.0 {
            return Err(Error::config(format!("omega0_sq = {} must be > 0", self.omega0_sq)));
        }
        if self.alpha <= 0.0 {
            return Err(Error::config(format!("alpha = {} must be > 0", self.alpha)));
        }
        if self.delta < 0.0 {
            return Err(Error::config(format!("delta = {} must be >= 0", self.delta)));
        }
        if self.epsilon < 0.0 {
            return Err(Error::config(format!("epsilon = {} must be >= 0", self.epsilon)));
        }
        Ok(())
    }

    /// Capsize threshold `ω₀/√α`; the saddles sit at `(±angle, 0)`.
    pub fn saddle_angle(&self) -> f64 {
        (self.omega0_sq / self.alpha).sqrt()
    }

    pub fn potential(&self, theta: f64) -> f64 {
        0.5 * self.omega0_sq * theta * theta - 0.25 * self.alpha * theta.powi(4)
    }

    pub fn energy(&self, theta: f64, v: f64) -> f64 {
        0.5 * v * v + self.potential(theta)
    }

    /// Barrier height `V(saddle) − V(0) = ω₀⁴ / (4α)`.
    pub fn barrier(&self) -> f64 {
        self.omega0_sq * self.omega0_sq / (4.0 * self.alpha)
    }

    /// Quasipotential at the saddle for Langevin dynamics, `2δ·ΔE`.
    pub fn quasipotential_barrier(&self) -> f64 {
        2.0 * self.delta * self.barrier()
    }
}

/// The two-dimensional roll model in `(θ, θ̇)` with additive noise on the
/// angular acceleration.
pub fn toy_roll_system(params: RollModelParams) -> Result<SystemSpec> {
    params.validate()?;
    mechanical_oscillator(params.omega0_sq, params.alpha, params.delta, params.epsilon)
}

/// `θ̈ = −δθ̇ − ω₀²θ + αθ³ + εξ` without the parameter-range checks of
/// [`toy_roll_system`]; `alpha = 0` gives the damped linear oscillator.
pub fn mechanical_oscillator(omega0_sq: f64, alpha: f64, delta: f64, epsilon: f64) -> Result<SystemSpec> {
    let drift = move |x: &[f64], _t: f64, out: &mut [f64]| {
        let (theta, v) = (x[0], x[1]);
        out[0] = v;
        out[1] = -delta * v - omega0_sq * theta + alpha * theta * theta * theta;
    };
    let noise = |_x: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[1] = 1.0;
    };
    SystemSpec::new(2, 1, drift, noise)?
        .with_epsilon(epsilon)?
        .with_kinematic(0, 1)?
        .with_domain(vec![(-4.0, 4.0), (-10.0, 10.0)])
}

/// Linear filter `ż = A z + ε ξ`, `⟨ξ(t)ξ(s)ᵀ⟩ = C δ(t − s)`, whose state
/// forces a ship model through `coupling`.
#[derive(Clone)]
pub struct FilterSpec {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    epsilon: f64,
    target_dim: usize,
    coupling: Arc<CouplingFn>,
}

impl fmt::Debug for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterSpec")
            .field("a", &self.a)
            .field("c", &self.c)
            .field("epsilon", &self.epsilon)
            .field("target_dim", &self.target_dim)
            .finish_non_exhaustive()
    }
}

impl FilterSpec {
    /// `a` and `c` are dense `k × k` row-major; `coupling` targets a ship of
    /// dimension `target_dim`.
    pub fn new<F>(k: usize, a: &[f64], c: &[f64], epsilon: f64, target_dim: usize, coupling: F) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        if k == 0 || a.len() != k * k || c.len() != k * k {
            return Err(Error::config(format!("filter matrices must be {k}x{k} row-major")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config("filter epsilon must be finite and >= 0"));
        }
        let a = DMatrix::from_row_slice(k, k, a);
        let c = DMatrix::from_row_slice(k, k, c);
        let max_real = spectral_abscissa(&a);
        if !(max_real < 0.0) {
            return Err(Error::Unstable { max_real });
        }
        let scale = c.amax().max(1.0);
        if (&c - c.transpose()).amax() > 1e-12 * scale {
            return Err(Error::config("filter covariance C must be symmetric"));
        }
        let min_eig = c.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * scale {
            return Err(Error::config(format!(
                "filter covariance C must be positive semi-definite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { a, c, epsilon, target_dim, coupling: Arc::new(coupling) })
    }

    /// Default coupling: the first filter coordinate adds to the drift of
    /// coordinate `velocity` of the ship.
    pub fn velocity_forcing(k: usize, a: &[f64], c: &[f64], epsilon: f64, target_dim: usize, velocity: usize) -> Result<Self> {
        if velocity >= target_dim {
            return Err(Error::config(format!("forced coordinate {velocity} out of range for dimension {target_dim}")));
        }
        Self::new(k, a, c, epsilon, target_dim, move |_x, z, _t, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[velocity] = z[0];
        })
    }

    /// Filter that leaves the ship drift untouched.
    pub fn uncoupled(k: usize, a: &[f64], c: &[f64], epsilon: f64, target_dim: usize) -> Result<Self> {
        Self::new(k, a, c, epsilon, target_dim, |_x, _z, _t, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
        })
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }
}

fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Symmetric principal square root of a positive semi-definite matrix.
/// Slightly negative eigenvalues from rounding are treated as zero.
pub fn sym_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = c.clone().symmetric_eigen();
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Augments a ship model with filter state: `ẋ = G(x, z, t)`, `ż = A z + ε ξ`
/// where `G = ship drift + coupling`. Noise acts on the `z` block only.
pub fn couple_filter(ship: &SystemSpec, filter: &FilterSpec) -> Result<SystemSpec> {
    let n = ship.dim();
    let k = filter.k();
    if filter.target_dim() != n {
        return Err(Error::config(format!(
            "filter coupling targets dimension {} but ship has dimension {n}",
            filter.target_dim()
        )));
    }
    let ship_drift = Arc::clone(&ship.drift);
    let coupling = Arc::clone(&filter.coupling);
    let a = filter.a.clone();
    let drift = move |x: &[f64], t: f64, out: &mut [f64]| {
        let (xs, z) = x.split_at(n);
        let (head, tail) = out.split_at_mut(n);
        ship_drift(xs, t, head);
        let mut forcing = [0.0_f64; 16];
        if n <= forcing.len() {
            coupling(xs, z, t, &mut forcing[..n]);
            head.iter_mut().zip(&forcing[..n]).for_each(|(h, f)| *h += f);
        } else {
            let mut forcing = vec![0.0; n];
            coupling(xs, z, t, &mut forcing);
            head.iter_mut().zip(&forcing).for_each(|(h, f)| *h += f);
        }
        for (i, ti) in tail.iter_mut().enumerate() {
            *ti = (0..k).map(|j| a[(i, j)] * z[j]).sum();
        }
    };
    let root = sym_sqrt(&filter.c);
    let noise = move |_x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..k {
            for j in 0..k {
                out[(n + i) * k + j] = root[(i, j)];
            }
        }
    };
    let mut domain = ship.domain().to_vec();
    domain.extend(std::iter::repeat_n((f64::NEG_INFINITY, f64::INFINITY), k));
    let mut system = SystemSpec::new(n + k, k, drift, noise)?.with_epsilon(filter.epsilon())?.with_domain(domain)?;
    if !ship.is_autonomous() {
        system = system.time_dependent();
    }
    for kin in ship.kinematics() {
        system = system.with_kinematic(kin.position, kin.velocity)?;
    }
    Ok(system)
}

/// Stationary covariance `Σ` of the filter: `AΣ + ΣAᵀ + ε²C = 0`.
pub fn ou_stationary_covariance(filter: &FilterSpec) -> Result<DMatrix<f64>> {
    let a = filter.a();
    let k = a.nrows();
    let max_real = spectral_abscissa(a);
    if !(max_real < 0.0) {
        return Err(Error::Unstable { max_real });
    }
    // Column-major vec: vec(AΣ + ΣAᵀ) = (I ⊗ A + A ⊗ I) vec(Σ).
    let eye = DMatrix::<f64>::identity(k, k);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -filter.epsilon().powi(2) * DVector::from_column_slice(filter.c().as_slice());
    let sol = op.lu().solve(&rhs).ok_or_else(|| Error::Solver("Lyapunov operator is singular".into()))?;
    let sigma = DMatrix::from_column_slice(k, k, sol.as_slice());
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// `max |AΣ + ΣAᵀ + ε²C|`.
pub fn lyapunov_residual(filter: &FilterSpec, sigma: &DMatrix<f64>) -> f64 {
    let a = filter.a();
    (a * sigma + sigma * a.transpose() + filter.c() * filter.epsilon().powi(2)).amax()
}
