//! Transition path theory on a `(θ, v)` grid.
//!
//! The Fokker–Planck operator is discretized as a continuous-time Markov
//! chain on the grid nodes (rates `Q_ab ≥ 0` off the diagonal, so every
//! committor solve is an M-matrix problem). The stationary density solves
//! `Qᵀπ = 0`; committors solve the backward equation of `Q` or of its
//! discrete time reversal.
//!
//! For mechanical systems (`θ̇ = v`, noise on `v` only) the chain is built
//! from the energy `H = ½v² + V(θ)`. Transport along the Hamiltonian flow is
//! upwinded with exact face fluxes of the weight `exp(−βH)`, the dissipative
//! part uses Scharfetter–Gummel (Chang–Cooper) fluxes in `v`, and boundary
//! outflow is returned at the mirrored velocity. For Langevin dynamics the
//! discrete stationary density is then the Gibbs density up to round-off.
//! Other planar systems use Scharfetter–Gummel fluxes in noisy directions,
//! upwinding elsewhere, and no-flux walls.

use crate::error::{Error, Result};
use crate::grid::{region_masks, FieldKind, Grid2D, RegionSpec, ScalarField};
use crate::model::SystemSpec;
use crate::sparse::SparseBuilder;

/// Nodes with density below this are reported by the backward committor.
pub const RHO_FLOOR: f64 = 1e-12;
/// Round-off allowance on the committor range `[0, 1]`.
pub const COMMITTOR_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Energy-based scheme for mechanical systems.
    Mechanical,
    /// Scharfetter–Gummel in noisy directions, upwind elsewhere.
    Generic,
}

/// Noise-carrying face between nodes `a < b`, used for the Dirichlet form.
#[derive(Debug, Clone, Copy)]
struct NoiseFace {
    a: usize,
    b: usize,
    /// `D·L/h`.
    conductance: f64,
    /// `B(−P)` and `B(P)`.
    bm: f64,
    bp: f64,
}

/// Discrete generator of a planar diffusion on a grid.
#[derive(Debug, Clone)]
pub struct Generator {
    grid: Grid2D,
    scheme: Scheme,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    exit: Vec<f64>,
    noise_faces: Vec<NoiseFace>,
    epsilon: f64,
    /// `D = ε²σσᵀ/2` at each node, row-major 2×2.
    diffusion: Vec<[f64; 4]>,
}

/// Bernoulli function `x / (eˣ − 1)`.
#[inline]
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-10 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// `(1 − e^{−x}) / x`.
#[inline]
fn phi(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Scharfetter–Gummel coefficients per unit face length `(a→b, b→a)` for
/// drift `f` along `a→b`; upwinding when `d = 0`.
#[inline]
fn sg(d: f64, h: f64, f: f64) -> (f64, f64, f64, f64) {
    if d > 0.0 {
        let p = f * h / d;
        let (bm, bp) = (bernoulli(-p), bernoulli(p));
        (d / h * bm, d / h * bp, bm, bp)
    } else {
        (f.max(0.0), (-f).max(0.0), 0.0, 0.0)
    }
}

struct Rates {
    per_node: Vec<Vec<(usize, f64)>>,
}

impl Rates {
    fn new(n: usize) -> Self {
        Self { per_node: vec![Vec::new(); n] }
    }

    #[inline]
    fn add(&mut self, from: usize, to: usize, r: f64) {
        if r > 0.0 && from != to {
            self.per_node[from].push((to, r));
        }
    }
}

fn check_planar(system: &SystemSpec, grid: &Grid2D) -> Result<()> {
    grid.validate()?;
    if system.dim() != 2 {
        return Err(Error::config(format!("grid solvers need a planar system, got dimension {}", system.dim())));
    }
    if !system.is_autonomous() {
        return Err(Error::config("grid solvers need an autonomous system"));
    }
    Ok(())
}

fn is_mechanical(system: &SystemSpec) -> bool {
    system.kinematics().iter().any(|k| k.position == 0 && k.velocity == 1) && system.forced_channels() == vec![1]
}

/// Nodes of 4-point Gauss–Legendre on `[-1, 1]`.
const GL: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
];

impl Generator {
    pub fn assemble(system: &SystemSpec, grid: &Grid2D) -> Result<Self> {
        check_planar(system, grid)?;
        let scheme = if is_mechanical(system) { Scheme::Mechanical } else { Scheme::Generic };
        let n = grid.len();
        let mut rates = Rates::new(n);
        let mut noise_faces = Vec::new();
        match scheme {
            Scheme::Mechanical => assemble_mechanical(system, grid, &mut rates, &mut noise_faces),
            Scheme::Generic => assemble_generic(system, grid, &mut rates, &mut noise_faces),
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut exit = vec![0.0; n];
        row_ptr.push(0);
        for (a, mut row) in rates.per_node.into_iter().enumerate() {
            row.sort_unstable_by_key(|e| e.0);
            for (b, r) in row {
                match cols.last() {
                    Some(&last) if last == b && vals.len() > row_ptr[a] => *vals.last_mut().unwrap() += r,
                    _ => {
                        cols.push(b);
                        vals.push(r);
                    }
                }
                exit[a] += r;
            }
            row_ptr.push(cols.len());
        }
        if vals.iter().chain(&exit).any(|v| !v.is_finite()) {
            return Err(Error::Solver("generator has non-finite rates".into()));
        }
        let eps = system.epsilon();
        let mut sigma = vec![0.0; 2 * system.channels()];
        let m = system.channels();
        let diffusion = (0..n)
            .map(|k| {
                system.noise(&grid.node(k), &mut sigma);
                let mut d = [0.0; 4];
                for r in 0..2 {
                    for c in 0..2 {
                        d[2 * r + c] = 0.5 * eps * eps * (0..m).map(|l| sigma[r * m + l] * sigma[c * m + l]).sum::<f64>();
                    }
                }
                d
            })
            .collect();
        Ok(Self { grid: *grid, scheme, row_ptr, cols, rates: vals, exit, noise_faces, epsilon: eps, diffusion })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Outgoing `(target, rate)` pairs of node `a`.
    pub fn row(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[a]..self.row_ptr[a + 1];
        self.cols[r.clone()].iter().copied().zip(self.rates[r].iter().copied())
    }

    /// Total exit rate `−Q_aa`.
    pub fn exit_rate(&self, a: usize) -> f64 {
        self.exit[a]
    }

    /// `(Qf)_a = Σ_b Q_ab (f_b − f_a)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.grid.len()).map(|a| self.row(a).map(|(b, r)| r * (f[b] - f[a])).sum()).collect()
    }

    /// `max_a |(Qᵀπ)_a|` relative to the largest outflow `π_a·exit_a`.
    pub fn stationarity_residual(&self, pi: &[f64]) -> f64 {
        let n = self.grid.len();
        let mut r: Vec<f64> = (0..n).map(|a| -pi[a] * self.exit[a]).collect();
        for a in 0..n {
            for (b, q) in self.row(a) {
                r[b] += pi[a] * q;
            }
        }
        let scale = (0..n).map(|a| pi[a] * self.exit[a]).fold(0.0, f64::max);
        r.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / scale
    }

    /// Stationary density `ρ = π / vol`, unit trapezoid mass.
    pub fn stationary_density(&self) -> Result<ScalarField> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("stationary density needs epsilon > 0"));
        }
        let n = self.grid.len();
        let g = &self.grid;
        // pin π at the node nearest the box centre, normalize afterwards
        let pin = g.nearest(0.5 * (g.theta.0 + g.theta.1), 0.5 * (g.v.0 + g.v.1));
        let mut m = SparseBuilder::new(n);
        for a in 0..n {
            if a != pin {
                m.add(a, a, -self.exit[a]);
            }
            for (b, r) in self.row(a) {
                if b != pin {
                    m.add(b, a, r);
                }
            }
        }
        m.add(pin, pin, 1.0);
        let mut rhs = vec![0.0; n];
        rhs[pin] = 1.0;
        let mut pi = m.solve(&rhs)?;
        let floor = -1e-12 * pi.iter().fold(0.0_f64, |a, b| a.max(*b));
        if let Some(bad) = pi.iter().copied().find(|&p| p < floor) {
            return Err(Error::Solver(format!("stationary vector has negative entry {bad:e}")));
        }
        pi.iter_mut().for_each(|p| *p = p.max(0.0));
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        let rho = pi.iter().enumerate().map(|(k, p)| p / self.grid.volume(k)).collect();
        ScalarField::new(self.grid, rho, FieldKind::Density)
    }

    /// Forward committor: `Qq = 0` off `A ∪ B`, `q|_A = 0`, `q|_B = 1`.
    pub fn committor_forward(&self, a: &RegionSpec, b: &RegionSpec) -> Result<ScalarField> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config("committors need epsilon > 0"));
        }
        let (ma, mb) = region_masks(&self.grid, a, b)?;
        let n = self.grid.len();
        let mut m = SparseBuilder::new(n);
        let mut rhs = vec![0.0; n];
        for k in 0..n {
            if ma[k] || mb[k] || self.exit[k] == 0.0 {
                m.add(k, k, 1.0);
                rhs[k] = if mb[k] { 1.0 } else { 0.0 };
                continue;
            }
            m.add(k, k, -1.0);
            for (j, r) in self.row(k) {
                m.add(k, j, r / self.exit[k]);
            }
        }
        let q = m.solve(&rhs)?;
        check_committor(&q)?;
        ScalarField::new(self.grid, q, FieldKind::CommittorForward)
    }

    /// Backward committor from the time-reversed chain,
    /// `Σ_j π_j Q_ji (q_j − q_i) = 0` off `A ∪ B`, `q|_A = 1`, `q|_B = 0`.
    pub fn committor_backward(&self, a: &RegionSpec, b: &RegionSpec, rho: &ScalarField) -> Result<BackwardCommittor> {
        if rho.grid != self.grid {
            return Err(Error::config("density lives on a different grid"));
        }
        let (ma, mb) = region_masks(&self.grid, a, b)?;
        let n = self.grid.len();
        let pi: Vec<f64> = rho.values.iter().enumerate().map(|(k, r)| r * self.grid.volume(k)).collect();
        let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for j in 0..n {
            for (i, r) in self.row(j) {
                inflow[i].push((j, pi[j] * r));
            }
        }
        let mut m = SparseBuilder::new(n);
        let mut rhs = vec![0.0; n];
        let mut masked = Vec::new();
        let mut flagged = Vec::new();
        for i in 0..n {
            if ma[i] || mb[i] {
                m.add(i, i, 1.0);
                rhs[i] = if ma[i] { 1.0 } else { 0.0 };
                continue;
            }
            if rho.values[i] < RHO_FLOOR {
                flagged.push(i);
            }
            let total: f64 = inflow[i].iter().map(|e| e.1).sum();
            if !(total > 0.0) {
                masked.push(i);
                m.add(i, i, 1.0);
                continue;
            }
            m.add(i, i, -1.0);
            for &(j, w) in &inflow[i] {
                m.add(i, j, w / total);
            }
        }
        let q = m.solve(&rhs)?;
        check_committor(&q)?;
        Ok(BackwardCommittor { field: ScalarField::new(self.grid, q, FieldKind::CommittorBackward)?, masked, flagged })
    }

    /// Transition rate estimates from the stationary density and both
    /// committors.
    pub fn rate(&self, rho: &ScalarField, q_plus: &ScalarField, q_minus: &ScalarField, a: &RegionSpec) -> Result<RateEstimate> {
        for f in [rho, q_plus, q_minus] {
            if f.grid != self.grid {
                return Err(Error::config("fields live on a different grid"));
            }
        }
        let n = self.grid.len();
        let q = &q_plus.values;
        let r = &rho.values;
        let dirichlet: f64 = self
            .noise_faces
            .iter()
            .map(|f| {
                let dq = q[f.b] - q[f.a];
                0.5 * (r[f.a] * f.bm + r[f.b] * f.bp) * f.conductance * dq * dq
            })
            .sum();
        let reactive_mass: f64 = (0..n).map(|k| r[k] * q_minus.values[k] * self.grid.volume(k)).sum();
        let ma = a.mask(&self.grid);
        let outflux: f64 = (0..n)
            .filter(|&k| ma[k])
            .map(|k| r[k] * self.grid.volume(k) * self.row(k).map(|(j, rate)| rate * (q[j] - q[k])).sum::<f64>())
            .sum();
        let flux = self.probability_flux(rho, q_plus);
        let normalize = |x: f64| if reactive_mass > 0.0 { x / reactive_mass } else { 0.0 };
        Ok(RateEstimate {
            rate: normalize(dirichlet),
            dirichlet_form: dirichlet,
            outflux_rate: normalize(outflux),
            reactive_mass,
            flux,
        })
    }

    /// `j = ρ a ∇q` at the nodes, with `a = ε²σσᵀ/2` and central
    /// differences (one-sided at the edges).
    pub fn probability_flux(&self, rho: &ScalarField, q: &ScalarField) -> Vec<[f64; 2]> {
        let g = &self.grid;
        (0..g.len())
            .map(|k| {
                let (i, j) = g.split(k);
                let dq = [diff(q, g, i, j, true), diff(q, g, i, j, false)];
                let d = &self.diffusion[k];
                [rho.values[k] * (d[0] * dq[0] + d[1] * dq[1]), rho.values[k] * (d[2] * dq[0] + d[3] * dq[1])]
            })
            .collect()
    }
}

fn diff(f: &ScalarField, g: &Grid2D, i: usize, j: usize, along_theta: bool) -> f64 {
    let (n, h) = if along_theta { (g.n_theta, g.h_theta()) } else { (g.n_v, g.h_v()) };
    let pos = if along_theta { i } else { j };
    let at = |p: usize| if along_theta { f.at(p, j) } else { f.at(i, p) };
    if pos == 0 {
        (at(1) - at(0)) / h
    } else if pos == n - 1 {
        (at(n - 1) - at(n - 2)) / h
    } else {
        (at(pos + 1) - at(pos - 1)) / (2.0 * h)
    }
}

fn check_committor(q: &[f64]) -> Result<()> {
    match q.iter().copied().find(|v| !(*v >= -COMMITTOR_SLACK && *v <= 1.0 + COMMITTOR_SLACK)) {
        Some(bad) => Err(Error::Solver(format!("committor value {bad} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Backward committor with diagnostics: `masked` nodes receive no inflow and
/// were set to 0; `flagged` nodes have `ρ < RHO_FLOOR`.
#[derive(Debug, Clone)]
pub struct BackwardCommittor {
    pub field: ScalarField,
    pub masked: Vec<usize>,
    pub flagged: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RateEstimate {
    /// `ν / ∫ρq₋` with `ν = ∫ ∇q₊·a∇q₊ ρ` (discrete Dirichlet form).
    pub rate: f64,
    /// `ν`, transitions per unit time of the unconditioned process.
    pub dirichlet_form: f64,
    /// Discrete probability outflux from A, `Σ_A π (Qq₊)`, over `∫ρq₋`.
    pub outflux_rate: f64,
    /// `∫ρq₋`, the fraction of time last spent in A.
    pub reactive_mass: f64,
    /// `j = ρ a ∇q₊` at the nodes.
    pub flux: Vec<[f64; 2]>,
}

fn assemble_mechanical(system: &SystemSpec, grid: &Grid2D, rates: &mut Rates, faces: &mut Vec<NoiseFace>) {
    let (nt, nv) = (grid.n_theta, grid.n_v);
    let hv = grid.h_v();
    let eps = system.epsilon();
    let mut b = [0.0; 2];
    let mut force = |theta: f64, v: f64| {
        system.drift(&[theta, v], 0.0, &mut b);
        b[1]
    };
    let th: Vec<f64> = (0..nt).map(|i| grid.theta_at(i)).collect();
    let vv: Vec<f64> = (0..nv).map(|j| grid.v_at(j)).collect();
    let corners = |x: &[f64]| -> Vec<f64> {
        let mut c = Vec::with_capacity(x.len() + 1);
        c.push(x[0]);
        c.extend(x.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        c.push(x[x.len() - 1]);
        c
    };
    let tc = corners(&th);
    let vc = corners(&vv);

    // V(θ) = −∫ f(s, 0) ds at nodes and corners, referenced to θ_lo
    let mut pts: Vec<f64> = th.iter().chain(&tc).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut acc = 0.0;
    let mut pot = Vec::with_capacity(pts.len());
    pot.push((pts[0], 0.0));
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        acc -= half * GL.iter().map(|(x, wt)| wt * force(mid + half * x, 0.0)).sum::<f64>();
        pot.push((hi, acc));
    }
    let potential = |theta: f64| -> f64 {
        let k = pot.partition_point(|p| p.0 < theta);
        pot[k].1
    };
    let v_node: Vec<f64> = th.iter().map(|&t| potential(t)).collect();
    let v_corner: Vec<f64> = tc.iter().map(|&t| potential(t)).collect();

    let mut sigma = vec![0.0; 2 * system.channels()];
    let m = system.channels();
    let mut diff_v = |theta: f64, v: f64| {
        system.noise(&[theta, v], &mut sigma);
        0.5 * eps * eps * (0..m).map(|l| sigma[m + l] * sigma[m + l]).sum::<f64>()
    };
    let theta_ref = 0.0_f64.clamp(grid.theta.0, grid.theta.1);
    let d_ref = diff_v(theta_ref, 0.0);
    let dh = 1e-3;
    let slope = (force(theta_ref, dh) - force(theta_ref, -dh)) / (2.0 * dh);
    let beta = if d_ref > 0.0 { (-slope / d_ref).max(0.0) } else { 0.0 };

    let h_node = |i: usize, j: usize| 0.5 * vv[j] * vv[j] + v_node[i];
    let h_corner = |ci: usize, cj: usize| 0.5 * vc[cj] * vc[cj] + v_corner[ci];
    // exp(−βH) flux through the segment c1 → c2, divided by exp(−βH_ref)
    let seg = |h1: f64, h2: f64, h_ref: f64| {
        let dh = h2 - h1;
        (-beta * (h1 - h_ref)).exp() * dh * phi(beta * dh)
    };
    let vol = |i: usize, j: usize| grid.width_theta(i) * grid.width_v(j);
    // transport flux of sign `sign` through segment (c1, c2) between nodes (ia, ja) → (ib, jb)
    let transport =
        |rates: &mut Rates, a: (usize, usize), b: (usize, usize), c1: (usize, usize), c2: (usize, usize), sign: f64| {
            let (h1, h2) = (h_corner(c1.0, c1.1), h_corner(c2.0, c2.1));
            let ha = h_node(a.0, a.1);
            let g_a = sign * seg(h1, h2, ha);
            if g_a > 0.0 {
                rates.add(grid.index(a.0, a.1), grid.index(b.0, b.1), g_a / vol(a.0, a.1));
            } else {
                let hb = h_node(b.0, b.1);
                let g_b = sign * seg(h1, h2, hb);
                if g_b < 0.0 {
                    rates.add(grid.index(b.0, b.1), grid.index(a.0, a.1), -g_b / vol(b.0, b.1));
                }
            }
        };

    for i in 0..nt {
        for j in 0..nv {
            if i + 1 < nt {
                // face θ = tc[i+1] from corner (i+1, j) to (i+1, j+1); +θ flux
                transport(rates, (i, j), (i + 1, j), (i + 1, j), (i + 1, j + 1), 1.0);
            }
            if j + 1 < nv {
                // face v = vc[j+1] from corner (i, j+1) to (i+1, j+1); +v flux is −G
                transport(rates, (i, j), (i, j + 1), (i, j + 1), (i + 1, j + 1), -1.0);
                let vm = vc[j + 1];
                let fd = force(th[i], vm) - force(th[i], 0.0);
                let d = diff_v(th[i], vm);
                let len = grid.width_theta(i);
                let (fwd, bwd, bm, bp) = sg(d, hv, fd);
                let (a, b) = (grid.index(i, j), grid.index(i, j + 1));
                rates.add(a, b, fwd * len / vol(i, j));
                rates.add(b, a, bwd * len / vol(i, j + 1));
                if d > 0.0 {
                    faces.push(NoiseFace { a, b, conductance: d * len / hv, bm, bp });
                }
            }
        }
    }
    // outflow through the box walls re-enters at the mirrored velocity
    let mirror = |rates: &mut Rates, i: usize, j: usize, c1: (usize, usize), c2: (usize, usize), sign: f64| {
        let g = sign * seg(h_corner(c1.0, c1.1), h_corner(c2.0, c2.1), h_node(i, j));
        if g > 0.0 {
            rates.add(grid.index(i, j), grid.index(i, nv - 1 - j), g / vol(i, j));
        }
    };
    for j in 0..nv {
        mirror(rates, nt - 1, j, (nt, j), (nt, j + 1), 1.0);
        mirror(rates, 0, j, (0, j), (0, j + 1), -1.0);
    }
    for i in 0..nt {
        mirror(rates, i, nv - 1, (i, nv), (i + 1, nv), -1.0);
        mirror(rates, i, 0, (i, 0), (i + 1, 0), 1.0);
    }
}

fn assemble_generic(system: &SystemSpec, grid: &Grid2D, rates: &mut Rates, faces: &mut Vec<NoiseFace>) {
    let (nt, nv) = (grid.n_theta, grid.n_v);
    let eps = system.epsilon();
    let m = system.channels();
    let mut b = [0.0; 2];
    let mut sigma = vec![0.0; 2 * m];
    for i in 0..nt {
        for j in 0..nv {
            for dir in 0..2 {
                let (ni, nj) = if dir == 0 { (i + 1, j) } else { (i, j + 1) };
                if ni >= nt || nj >= nv {
                    continue;
                }
                let (h, len) = if dir == 0 { (grid.h_theta(), grid.width_v(j)) } else { (grid.h_v(), grid.width_theta(i)) };
                let mid = if dir == 0 {
                    [0.5 * (grid.theta_at(i) + grid.theta_at(ni)), grid.v_at(j)]
                } else {
                    [grid.theta_at(i), 0.5 * (grid.v_at(j) + grid.v_at(nj))]
                };
                system.drift(&mid, 0.0, &mut b);
                system.noise(&mid, &mut sigma);
                let d = 0.5 * eps * eps * (0..m).map(|l| sigma[dir * m + l].powi(2)).sum::<f64>();
                let (fwd, bwd, bm, bp) = sg(d, h, b[dir]);
                let (a, c) = (grid.index(i, j), grid.index(ni, nj));
                rates.add(a, c, fwd * len / grid.volume(a));
                rates.add(c, a, bwd * len / grid.volume(c));
                if d > 0.0 {
                    faces.push(NoiseFace { a, b: c, conductance: d * len / h, bm, bp });
                }
            }
        }
    }
}

/// Stationary Fokker–Planck density on `grid`.
pub fn solve_stationary_density(system: &SystemSpec, grid: &Grid2D) -> Result<ScalarField> {
    Generator::assemble(system, grid)?.stationary_density()
}

/// Probability of reaching B before A.
pub fn solve_committor_forward(system: &SystemSpec, grid: &Grid2D, a: &RegionSpec, b: &RegionSpec) -> Result<ScalarField> {
    Generator::assemble(system, grid)?.committor_forward(a, b)
}

/// Probability that the process last came from A rather than B.
pub fn solve_committor_backward(
    system: &SystemSpec,
    grid: &Grid2D,
    a: &RegionSpec,
    b: &RegionSpec,
    rho: &ScalarField,
) -> Result<ScalarField> {
    Ok(Generator::assemble(system, grid)?.committor_backward(a, b, rho)?.field)
}

/// `ρ_R = q₊ ρ q₋` (unnormalized).
pub fn reactive_density(rho: &ScalarField, q_plus: &ScalarField, q_minus: &ScalarField) -> Result<ScalarField> {
    if rho.grid != q_plus.grid || rho.grid != q_minus.grid {
        return Err(Error::config("fields live on different grids"));
    }
    let values = (0..rho.values.len()).map(|k| q_plus.values[k] * rho.values[k] * q_minus.values[k]).collect();
    ScalarField::new(rho.grid, values, FieldKind::ReactiveDensity)
}

/// Rate `k_AB` and flux field; see [`Generator::rate`].
pub fn transition_rate_tpt(
    system: &SystemSpec,
    grid: &Grid2D,
    rho: &ScalarField,
    q_plus: &ScalarField,
    q_minus: &ScalarField,
    a: &RegionSpec,
) -> Result<RateEstimate> {
    Generator::assemble(system, grid)?.rate(rho, q_plus, q_minus, a)
}
