//! Survivability curves and time-to-capsize histograms.

use serde::Serialize;

/// Uniform sample count of `S(t)` on `[0, horizon]`.
pub const SURVIVABILITY_POINTS: usize = 200;
/// Bins of the capsize-time histogram on `[0, horizon]`.
pub const HISTOGRAM_BINS: usize = 50;

/// Summary of an ensemble of capsize times `T ∈ [0, ∞]`. A sample capsizes
/// when `T < horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsizeStats {
    pub horizon: f64,
    /// Uniform grid `t_k = k·horizon/(SURVIVABILITY_POINTS − 1)`.
    pub times: Vec<f64>,
    /// `S(t_k) = P(T ≥ t_k)`.
    pub survivability: Vec<f64>,
    /// `−dS/dt` by finite differences (one-sided at the ends).
    pub rate_curve: Vec<f64>,
    pub histogram_edges: Vec<f64>,
    pub histogram_counts: Vec<u64>,
    pub n_samples: usize,
    /// Samples dropped because integration diverged.
    pub n_failed: usize,
    pub p_capsize: f64,
    /// Binomial standard error of `p_capsize`.
    pub stderr: f64,
    /// Sorted finite capsize times.
    pub capsize_times: Vec<f64>,
}

#[derive(Serialize)]
struct StatsJson {
    horizon: f64,
    s_curve: Vec<[f64; 2]>,
    histogram: Vec<[f64; 3]>,
    p_capsize: f64,
    stderr: f64,
}

impl CapsizeStats {
    /// Aggregates capsize times (`f64::INFINITY` for survivors).
    pub fn from_times(times: &[f64], horizon: f64, n_failed: usize) -> Self {
        let n = times.len();
        let mut capsize_times: Vec<f64> = times.iter().copied().filter(|t| *t < horizon).collect();
        capsize_times.sort_by(f64::total_cmp);
        let grid: Vec<f64> = (0..SURVIVABILITY_POINTS).map(|k| horizon * k as f64 / (SURVIVABILITY_POINTS - 1) as f64).collect();
        let mut sorted: Vec<f64> = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        let survivability: Vec<f64> = grid
            .iter()
            .map(|&t| {
                if n == 0 {
                    return 1.0;
                }
                // count of T >= t
                let below = sorted.partition_point(|&x| x < t);
                (n - below) as f64 / n as f64
            })
            .collect();
        let h = if SURVIVABILITY_POINTS > 1 { horizon / (SURVIVABILITY_POINTS - 1) as f64 } else { 0.0 };
        let rate_curve = rate_from_survivability(&survivability, h);
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS).map(|k| horizon * k as f64 / HISTOGRAM_BINS as f64).collect();
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &t in &capsize_times {
            let b = if horizon > 0.0 { ((t / horizon) * HISTOGRAM_BINS as f64).floor() as usize } else { 0 };
            counts[b.min(HISTOGRAM_BINS - 1)] += 1;
        }
        let p = if n == 0 { 0.0 } else { capsize_times.len() as f64 / n as f64 };
        let stderr = if n == 0 { 0.0 } else { (p * (1.0 - p) / n as f64).sqrt() };
        Self {
            horizon,
            times: grid,
            survivability,
            rate_curve,
            histogram_edges: edges,
            histogram_counts: counts,
            n_samples: n,
            n_failed,
            p_capsize: p,
            stderr,
            capsize_times,
        }
    }

    /// Trapezoid integral of `rate_curve` over `[0, horizon]`.
    pub fn integrated_rate(&self) -> f64 {
        let h = self.times.get(1).copied().unwrap_or(0.0);
        self.rate_curve.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
    }

    /// `|p − other.p|` in units of the combined standard error.
    pub fn discrepancy(&self, other: &CapsizeStats) -> f64 {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        let d = (self.p_capsize - other.p_capsize).abs();
        if se == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / se
        }
    }

    pub fn to_json(&self) -> String {
        let doc = StatsJson {
            horizon: self.horizon,
            s_curve: self.times.iter().zip(&self.survivability).map(|(&t, &s)| [t, s]).collect(),
            histogram: self
                .histogram_counts
                .iter()
                .enumerate()
                .map(|(k, &c)| [self.histogram_edges[k], self.histogram_edges[k + 1], c as f64])
                .collect(),
            p_capsize: self.p_capsize,
            stderr: self.stderr,
        };
        serde_json::to_string_pretty(&doc).expect("stats serialize")
    }
}

fn rate_from_survivability(s: &[f64], h: f64) -> Vec<f64> {
    let n = s.len();
    if n < 2 || h == 0.0 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            let d = if k == 0 {
                (s[1] - s[0]) / h
            } else if k == n - 1 {
                (s[n - 1] - s[n - 2]) / h
            } else {
                (s[k + 1] - s[k - 1]) / (2.0 * h)
            };
            -d
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_survive() {
        let s = CapsizeStats::from_times(&[f64::INFINITY; 5], 10.0, 0);
        assert!(s.survivability.iter().all(|&v| v == 1.0));
        assert_eq!(s.p_capsize, 0.0);
        assert_eq!(s.histogram_counts.iter().sum::<u64>(), 0);
    }

    #[test]
    fn immediate_capsize() {
        let s = CapsizeStats::from_times(&[0.0; 4], 10.0, 0);
        assert_eq!(s.survivability[0], 1.0);
        assert!(s.survivability[1..].iter().all(|&v| v == 0.0));
        assert_eq!(s.p_capsize, 1.0);
        assert_eq!(s.histogram_counts[0], 4);
    }

    #[test]
    fn horizon_zero_means_nobody_capsizes() {
        let s = CapsizeStats::from_times(&[0.0, 1.0], 0.0, 0);
        assert!(s.survivability.iter().all(|&v| v == 1.0));
        assert_eq!(s.p_capsize, 0.0);
    }

    #[test]
    fn json_schema() {
        let s = CapsizeStats::from_times(&[1.0, 2.5, f64::INFINITY], 5.0, 0);
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys.len(), 5);
        for k in ["horizon", "s_curve", "histogram", "p_capsize", "stderr"] {
            assert!(keys.contains(&k));
        }
        assert_eq!(v["s_curve"].as_array().unwrap().len(), SURVIVABILITY_POINTS);
        assert_eq!(v["histogram"].as_array().unwrap().len(), HISTOGRAM_BINS);
    }

    fn times_strategy() -> impl Strategy<Value = (Vec<f64>, f64)> {
        (1.0f64..100.0).prop_flat_map(|h| {
            (prop::collection::vec(prop_oneof![3 => 0.0..h * 1.5, 1 => Just(f64::INFINITY), 1 => Just(0.0)], 1..300), Just(h))
        })
    }

    proptest! {
        #[test]
        fn survivability_invariants((times, horizon) in times_strategy()) {
            let s = CapsizeStats::from_times(&times, horizon, 0);
            prop_assert_eq!(s.survivability[0], 1.0);
            prop_assert!(s.survivability.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(s.survivability.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((s.p_capsize - (1.0 - s.survivability[SURVIVABILITY_POINTS - 1])).abs() < 1e-12);
            prop_assert!((s.integrated_rate() - s.p_capsize).abs() < 1e-6);
            let finite = times.iter().filter(|t| **t < horizon).count() as u64;
            prop_assert_eq!(s.histogram_counts.iter().sum::<u64>(), finite);
        }
    }
}
