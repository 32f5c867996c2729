//! Direct Monte Carlo: transition counting, reactive segments, first-hit
//! committors and survivability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{FieldKind, Grid2D, RegionLabel, RegionSpec, ScalarField, Shape};
use crate::integrate::{EulerMaruyama, Path};
use crate::model::SystemSpec;
use crate::rng::derive_seed;
use crate::saddle::{DividingSurface, InitialSampler};
use crate::stats::CapsizeStats;

/// Default cap on stored reactive segments.
pub const DEFAULT_MAX_SEGMENTS: usize = 10_000;

/// A→B transitions of one long trajectory (or a merge of several).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    /// Reactive segments, from the last state in A to the first state in B;
    /// a uniform sample when more than `max_segments` occurred.
    pub segments: Vec<Path>,
    pub total_time: f64,
    pub n_transitions: u64,
    pub max_segments: usize,
}

#[derive(Serialize)]
struct RecordJson {
    n_transitions: u64,
    total_time: f64,
    rate: f64,
    stderr: f64,
    rate_upper_95: f64,
    stored_segments: usize,
}

impl TransitionRecord {
    /// Transitions per unit time.
    pub fn rate(&self) -> f64 {
        self.n_transitions as f64 / self.total_time
    }

    /// Poisson standard error `√n / T`.
    pub fn stderr(&self) -> f64 {
        (self.n_transitions as f64).sqrt() / self.total_time
    }

    /// One-sided 95% upper bound; `3/T` when nothing was observed.
    pub fn rate_upper_bound(&self) -> f64 {
        if self.n_transitions == 0 {
            3.0 / self.total_time
        } else {
            self.rate() + 1.645 * self.stderr()
        }
    }

    pub fn mean_segment_duration(&self) -> f64 {
        if self.segments.is_empty() {
            return 0.0;
        }
        self.segments.iter().map(Path::duration).sum::<f64>() / self.segments.len() as f64
    }

    /// Concatenates segments and sums counts and times.
    pub fn merge(mut self, other: TransitionRecord) -> Self {
        self.segments.extend(other.segments);
        self.total_time += other.total_time;
        self.n_transitions += other.n_transitions;
        self.max_segments = self.max_segments.max(other.max_segments);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RecordJson {
            n_transitions: self.n_transitions,
            total_time: self.total_time,
            rate: self.rate(),
            stderr: self.stderr(),
            rate_upper_95: self.rate_upper_bound(),
            stored_segments: self.segments.len(),
        })
        .expect("record serialize")
    }
}

/// `|k₁ − k₂|` in units of the combined standard error.
pub fn rate_discrepancy(a: &TransitionRecord, b: &TransitionRecord) -> f64 {
    let se = (a.stderr().powi(2) + b.stderr().powi(2)).sqrt();
    if se == 0.0 {
        return if a.rate() == b.rate() { 0.0 } else { f64::INFINITY };
    }
    (a.rate() - b.rate()).abs() / se
}

fn check_regions(system: &SystemSpec, a: &RegionSpec, b: &RegionSpec, dt: f64) -> Result<[f64; 2]> {
    if system.dim() != 2 {
        return Err(Error::config("transition sampling uses planar regions; system must be planar"));
    }
    a.validate()?;
    b.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config(format!("step size {dt} must be positive")));
    }
    let center = a.center().ok_or_else(|| Error::config("region A needs an ellipse to define its center"))?;
    if !a.contains(&center) || b.contains(&center) {
        return Err(Error::config("center of A must lie in A and outside B"));
    }
    Ok(center)
}

/// One long trajectory from the center of A, re-injected there on every
/// entry into B. Noise stream `(seed, 0)`.
pub fn sample_transitions(
    system: &SystemSpec,
    a: &RegionSpec,
    b: &RegionSpec,
    total_time: f64,
    dt: f64,
    seed: u64,
) -> Result<TransitionRecord> {
    sample_transitions_capped(system, a, b, total_time, dt, seed, DEFAULT_MAX_SEGMENTS)
}

/// As [`sample_transitions`], storing at most `max_segments` segments
/// (reservoir sampling; counts stay exact).
pub fn sample_transitions_capped(
    system: &SystemSpec,
    a: &RegionSpec,
    b: &RegionSpec,
    total_time: f64,
    dt: f64,
    seed: u64,
    max_segments: usize,
) -> Result<TransitionRecord> {
    let center = check_regions(system, a, b, dt)?;
    if !(total_time >= 0.0 && total_time.is_finite()) {
        return Err(Error::config(format!("total_time {total_time} must be finite and >= 0")));
    }
    let steps = (total_time / dt).round() as u64;
    let mut em = EulerMaruyama::new(system, Some((seed, 0)));
    let mut reservoir = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let record = max_segments > 0;
    let mut x = center;
    let mut buffer: Vec<[f64; 2]> = vec![x];
    let mut start_step = 0u64;
    let mut segments = Vec::new();
    let mut n = 0u64;
    for k in 0..steps {
        em.step(system, &mut x, k as f64 * dt, dt);
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::Divergence { time: (k + 1) as f64 * dt });
        }
        if a.contains(&x) {
            if record {
                buffer.clear();
                buffer.push(x);
            }
            start_step = k + 1;
        } else if b.contains(&x) {
            n += 1;
            if record {
                buffer.push(x);
                let keep = if segments.len() < max_segments {
                    Some(segments.len())
                } else {
                    let j = reservoir.random_range(0..n) as usize;
                    (j < max_segments).then_some(j)
                };
                if let Some(slot) = keep {
                    let mut p = Path::new(2, dt, Some(seed));
                    for (i, s) in buffer.iter().enumerate() {
                        p.push((start_step + i as u64) as f64 * dt, s);
                    }
                    if slot == segments.len() {
                        segments.push(p);
                    } else {
                        segments[slot] = p;
                    }
                }
            }
            x = center;
            if record {
                buffer.clear();
                buffer.push(x);
            }
            start_step = k + 1;
        } else if record {
            buffer.push(x);
        }
    }
    Ok(TransitionRecord { segments, total_time: steps as f64 * dt, n_transitions: n, max_segments })
}

/// Splits `total_time` into `partitions` independent streams with seeds
/// derived from `(seed, p)` and merges them in partition order. The result
/// depends on `partitions` but not on the number of threads.
#[allow(clippy::too_many_arguments)]
pub fn sample_transitions_parallel(
    system: &SystemSpec,
    a: &RegionSpec,
    b: &RegionSpec,
    total_time: f64,
    dt: f64,
    seed: u64,
    partitions: usize,
    max_segments: usize,
) -> Result<TransitionRecord> {
    if partitions == 0 {
        return Err(Error::config("partitions must be at least 1"));
    }
    let share = total_time / partitions as f64;
    let cap = max_segments.div_ceil(partitions);
    let parts: Vec<Result<TransitionRecord>> = (0..partitions as u64)
        .into_par_iter()
        .map(|p| sample_transitions_capped(system, a, b, share, dt, derive_seed(seed, p), cap))
        .collect();
    let mut merged: Option<TransitionRecord> = None;
    for p in parts {
        let p = p?;
        merged = Some(match merged {
            None => p,
            Some(m) => m.merge(p),
        });
    }
    let mut merged = merged.expect("at least one partition");
    merged.segments.truncate(max_segments);
    merged.max_segments = max_segments;
    Ok(merged)
}

/// Time-weighted histogram of all segment states (nearest node, clamped to
/// the grid), as a density with unit trapezoid mass.
pub fn reactive_histogram(record: &TransitionRecord, grid: &Grid2D) -> Result<ScalarField> {
    grid.validate()?;
    if record.segments.is_empty() {
        return Err(Error::config("reactive histogram needs at least one segment"));
    }
    let mut counts = vec![0.0; grid.len()];
    let mut total = 0.0;
    for seg in &record.segments {
        for s in seg.states() {
            counts[grid.nearest(s[0], s[1])] += 1.0;
            total += 1.0;
        }
    }
    let values = counts.iter().enumerate().map(|(k, c)| c / total / grid.volume(k)).collect();
    ScalarField::new(*grid, values, FieldKind::ReactiveDensity)
}

/// First-hit estimate of `P(reach B before A | x₀)` with its binomial
/// standard error. Paths undecided after `max_time` count as misses and are
/// reported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommittorEstimate {
    pub value: f64,
    pub stderr: f64,
    pub undecided: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn committor_mc(
    system: &SystemSpec,
    x0: [f64; 2],
    a: &RegionSpec,
    b: &RegionSpec,
    n_samples: usize,
    dt: f64,
    max_time: f64,
    seed: u64,
) -> Result<CommittorEstimate> {
    if system.dim() != 2 || n_samples == 0 || !(dt > 0.0) {
        return Err(Error::config("committor sampling needs a planar system, samples and dt > 0"));
    }
    let max_steps = (max_time / dt).ceil() as u64;
    let outcomes: Vec<Result<Option<bool>>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut em = EulerMaruyama::new(system, Some((derive_seed(seed, i), 0)));
            let mut x = x0;
            for k in 0..max_steps {
                if b.contains(&x) {
                    return Ok(Some(true));
                }
                if a.contains(&x) {
                    return Ok(Some(false));
                }
                em.step(system, &mut x, k as f64 * dt, dt);
                if !(x[0].is_finite() && x[1].is_finite()) {
                    return Err(Error::Divergence { time: (k + 1) as f64 * dt });
                }
            }
            Ok(None)
        })
        .collect();
    let (mut hits, mut undecided) = (0usize, 0usize);
    for o in outcomes {
        match o? {
            Some(true) => hits += 1,
            Some(false) => {}
            None => undecided += 1,
        }
    }
    let p = hits as f64 / n_samples as f64;
    Ok(CommittorEstimate { value: p, stderr: (p * (1.0 - p) / n_samples as f64).sqrt(), undecided })
}

/// Region B on the positive side of a planar hyperplane or a union of them.
pub fn capsize_region(surface: &DividingSurface) -> Result<RegionSpec> {
    fn collect(s: &DividingSurface, out: &mut Vec<Shape>) -> Result<()> {
        match s {
            DividingSurface::Hyperplane { point, normal } if normal.len() == 2 => {
                out.push(Shape::HalfPlane {
                    normal: [normal[0], normal[1]],
                    offset: normal[0] * point[0] + normal[1] * point[1],
                });
                Ok(())
            }
            DividingSurface::AnyOf(parts) => parts.iter().try_for_each(|p| collect(p, out)),
            _ => Err(Error::config("only planar hyperplanes and their unions convert to a region")),
        }
    }
    let mut shapes = Vec::new();
    collect(surface, &mut shapes)?;
    RegionSpec::new(RegionLabel::B, shapes)
}

/// Capsize statistics with `T` the first step time inside `b`. Sample `i`
/// uses the same initial-state and noise streams as
/// [`capsize_time_ensemble`](crate::saddle::capsize_time_ensemble).
#[allow(clippy::too_many_arguments)]
pub fn survivability_mc(
    system: &SystemSpec,
    sampler: &InitialSampler,
    b: &RegionSpec,
    horizon: f64,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<CapsizeStats> {
    if n_samples == 0 {
        return Err(Error::config("n_samples must be at least 1"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) || !(dt > 0.0) {
        return Err(Error::config("horizon must be finite and >= 0 and dt > 0"));
    }
    sampler.validate(system.dim())?;
    b.validate()?;
    let steps = (horizon / dt).ceil() as u64;
    let outcomes: Vec<Result<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut x = sampler.sample(seed, i);
            if b.contains(&x) {
                return Ok(0.0);
            }
            let mut em = EulerMaruyama::new(system, Some((derive_seed(seed, i), 0)));
            for k in 0..steps {
                em.step(system, &mut x, k as f64 * dt, dt);
                let t = (k + 1) as f64 * dt;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence { time: t });
                }
                if b.contains(&x) {
                    return Ok(if t < horizon { t } else { f64::INFINITY });
                }
            }
            Ok(f64::INFINITY)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{RegionLabel, Shape};
    use crate::model::{toy_roll_system, RollModelParams};

    fn toy(eps: f64) -> SystemSpec {
        toy_roll_system(RollModelParams::new(1.0, 1.0, 0.5, eps)).unwrap()
    }

    fn regions() -> (RegionSpec, RegionSpec) {
        (RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.2).unwrap(), RegionSpec::both_sides(RegionLabel::B, 1.5).unwrap())
    }

    #[test]
    fn no_noise_no_transitions() {
        let (a, b) = regions();
        let r = sample_transitions(&toy(0.0), &a, &b, 100.0, 1e-2, 1).unwrap();
        assert_eq!(r.n_transitions, 0);
        assert_eq!(r.rate(), 0.0);
        assert!((r.rate_upper_bound() - 0.03).abs() < 1e-12);
    }

    #[test]
    fn segments_leave_a_once_and_touch_b_once() {
        let (a, b) = regions();
        let r = sample_transitions(&toy(0.5), &a, &b, 2_000.0, 1e-2, 7).unwrap();
        assert!(r.n_transitions > 10);
        assert_eq!(r.segments.len() as u64, r.n_transitions);
        for seg in &r.segments {
            let n = seg.len();
            assert!(a.contains(seg.state(0)));
            assert!(b.contains(seg.state(n - 1)));
            for i in 1..n - 1 {
                assert!(!a.contains(seg.state(i)) && !b.contains(seg.state(i)));
            }
        }
        assert!(1.0 / r.rate() >= r.mean_segment_duration());
    }

    #[test]
    fn reservoir_caps_storage_but_not_counts() {
        let (a, b) = regions();
        let full = sample_transitions_capped(&toy(0.5), &a, &b, 2_000.0, 1e-2, 7, 1000).unwrap();
        let capped = sample_transitions_capped(&toy(0.5), &a, &b, 2_000.0, 1e-2, 7, 5).unwrap();
        assert_eq!(full.n_transitions, capped.n_transitions);
        assert_eq!(capped.segments.len(), 5);
        for s in &capped.segments {
            assert!(full.segments.contains(s));
        }
        let none = sample_transitions_capped(&toy(0.5), &a, &b, 2_000.0, 1e-2, 7, 0).unwrap();
        assert!(none.segments.is_empty());
        assert_eq!(none.n_transitions, full.n_transitions);
    }

    #[test]
    fn parallel_sampling_is_deterministic() {
        let (a, b) = regions();
        let x = sample_transitions_parallel(&toy(0.5), &a, &b, 2_000.0, 1e-2, 3, 4, 100).unwrap();
        let y = sample_transitions_parallel(&toy(0.5), &a, &b, 2_000.0, 1e-2, 3, 4, 100).unwrap();
        assert_eq!(x, y);
        assert!((x.total_time - 2_000.0).abs() < 1e-9);
    }

    #[test]
    fn region_without_center_rejected() {
        let a = RegionSpec::new(RegionLabel::A, vec![Shape::HalfPlane { normal: [1.0, 0.0], offset: 3.0 }]).unwrap();
        let (_, b) = regions();
        assert!(sample_transitions(&toy(0.4), &a, &b, 1.0, 1e-2, 0).unwrap_err().is_config());
    }

    #[test]
    fn histogram_of_a_straight_segment() {
        let g = Grid2D::new((0.0, 1.0), (0.0, 1.0), 11, 11).unwrap();
        let mut p = Path::new(2, 0.1, None);
        for k in 0..=10 {
            p.push(k as f64 * 0.1, &[k as f64 * 0.1, 0.5]);
        }
        let r = TransitionRecord { segments: vec![p], total_time: 1.0, n_transitions: 1, max_segments: 1 };
        let h = reactive_histogram(&r, &g).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-12);
        for k in 0..g.len() {
            let (_, j) = g.split(k);
            if j != 5 {
                assert_eq!(h.values[k], 0.0);
            } else {
                assert!(h.values[k] > 0.0);
            }
        }
        let empty = TransitionRecord { segments: vec![], total_time: 1.0, n_transitions: 0, max_segments: 1 };
        assert!(reactive_histogram(&empty, &g).is_err());
    }

    #[test]
    fn committor_mc_boundary_cases() {
        let (a, b) = regions();
        let sys = toy(0.4);
        assert_eq!(committor_mc(&sys, [1.6, 0.0], &a, &b, 50, 1e-2, 10.0, 1).unwrap().value, 1.0);
        assert_eq!(committor_mc(&sys, [0.0, 0.0], &a, &b, 50, 1e-2, 10.0, 1).unwrap().value, 0.0);
    }

    #[test]
    fn region_from_surface_matches_level_sign() {
        let s = DividingSurface::any_of(vec![
            DividingSurface::hyperplane(vec![1.0, 0.0], vec![0.8, 0.6]).unwrap(),
            DividingSurface::hyperplane(vec![-1.0, 0.0], vec![-0.8, -0.6]).unwrap(),
        ]);
        let r = capsize_region(&s).unwrap();
        for &x in &[[1.2, 0.1], [-1.3, 0.4], [0.0, 0.0], [0.9, 0.1], [-0.5, -2.0]] {
            assert_eq!(r.contains(&x), s.level(&x, 0.0) >= 0.0);
        }
        assert!(capsize_region(&DividingSurface::function(|x, _| x[0])).is_err());
    }

    #[test]
    fn survivability_degenerate_cases() {
        let sys = toy(0.4);
        let (_, b) = regions();
        let origin = InitialSampler::Point { state: vec![0.0, 0.0] };
        let s = survivability_mc(&sys, &origin, &b, 0.0, 1e-2, 20, 1).unwrap();
        assert!(s.survivability.iter().all(|&v| v == 1.0));
        let everywhere = RegionSpec::new(RegionLabel::B, vec![Shape::HalfPlane { normal: [1.0, 0.0], offset: -100.0 }]).unwrap();
        let s = survivability_mc(&sys, &origin, &everywhere, 10.0, 1e-2, 20, 1).unwrap();
        assert_eq!(s.p_capsize, 1.0);
        assert!(s.survivability[1..].iter().all(|&v| v == 0.0));
    }
}
