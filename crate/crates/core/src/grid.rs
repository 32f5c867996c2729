//! Rectangular `(θ, v)` grids, scalar fields on them, and A/B regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node grid on `[θ_lo, θ_hi] × [v_lo, v_hi]`, endpoints included. Node
/// `(i, j)` has flat index `i·n_v + j` (θ-major).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub theta: (f64, f64),
    pub v: (f64, f64),
    pub n_theta: usize,
    pub n_v: usize,
}

impl Default for Grid2D {
    fn default() -> Self {
        Self { theta: (-2.0, 2.0), v: (-2.5, 2.5), n_theta: 200, n_v: 200 }
    }
}

impl Grid2D {
    pub fn new(theta: (f64, f64), v: (f64, f64), n_theta: usize, n_v: usize) -> Result<Self> {
        let g = Self { theta, v, n_theta, n_v };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 3 || self.n_v < 3 {
            return Err(Error::config(format!("grid needs at least 3 nodes per axis, got {}x{}", self.n_theta, self.n_v)));
        }
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ok(self.theta) || !ok(self.v) {
            return Err(Error::config("grid bounds must be finite with lo < hi"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h_theta(&self) -> f64 {
        (self.theta.1 - self.theta.0) / (self.n_theta - 1) as f64
    }

    pub fn h_v(&self) -> f64 {
        (self.v.1 - self.v.0) / (self.n_v - 1) as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_v + j
    }

    #[inline]
    pub fn split(&self, k: usize) -> (usize, usize) {
        (k / self.n_v, k % self.n_v)
    }

    /// Node coordinates are `((n−1−i)·lo + i·hi)/(n−1)`, exactly
    /// antisymmetric on symmetric bounds.
    pub fn theta_at(&self, i: usize) -> f64 {
        axis(self.theta, self.n_theta, i)
    }

    pub fn v_at(&self, j: usize) -> f64 {
        axis(self.v, self.n_v, j)
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.split(k);
        [self.theta_at(i), self.v_at(j)]
    }

    /// Trapezoid-rule cell width along θ for node `i`.
    pub fn width_theta(&self, i: usize) -> f64 {
        let h = self.h_theta();
        if i == 0 || i == self.n_theta - 1 {
            0.5 * h
        } else {
            h
        }
    }

    pub fn width_v(&self, j: usize) -> f64 {
        let h = self.h_v();
        if j == 0 || j == self.n_v - 1 {
            0.5 * h
        } else {
            h
        }
    }

    /// Trapezoid weight (cell area) of node `k`.
    pub fn volume(&self, k: usize) -> f64 {
        let (i, j) = self.split(k);
        self.width_theta(i) * self.width_v(j)
    }

    pub fn contains(&self, theta: f64, v: f64) -> bool {
        theta >= self.theta.0 && theta <= self.theta.1 && v >= self.v.0 && v <= self.v.1
    }

    /// Node nearest to `(θ, v)`, clamped to the grid.
    pub fn nearest(&self, theta: f64, v: f64) -> usize {
        let i = ((theta - self.theta.0) / self.h_theta()).round().clamp(0.0, (self.n_theta - 1) as f64) as usize;
        let j = ((v - self.v.0) / self.h_v()).round().clamp(0.0, (self.n_v - 1) as f64) as usize;
        self.index(i, j)
    }

    /// Grid mirrored under `(θ, v) ↦ (−θ, −v)` onto itself.
    pub fn is_point_symmetric(&self) -> bool {
        self.theta.0 == -self.theta.1 && self.v.0 == -self.v.1
    }
}

fn axis((lo, hi): (f64, f64), n: usize, i: usize) -> f64 {
    let m = (n - 1) as f64;
    ((n - 1 - i) as f64 * lo + i as f64 * hi) / m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Density,
    CommittorForward,
    CommittorBackward,
    ReactiveDensity,
    /// Reactive density divided by its integral.
    ReactiveDensityNormalized,
    /// Arbitrary node values (diagnostics).
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
    pub kind: FieldKind,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    kind: FieldKind,
    bounds: [[f64; 2]; 2],
    shape: [usize; 2],
    order: &'a str,
    columns: [&'a str; 3],
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>, kind: FieldKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::config(format!("field has {} values for a grid of {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values, kind })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    /// Trapezoid-rule integral.
    pub fn integral(&self) -> f64 {
        self.values.iter().enumerate().map(|(k, v)| v * self.grid.volume(k)).sum()
    }

    /// Copy scaled to unit integral.
    pub fn normalized(&self) -> Self {
        let z = self.integral();
        let kind = match self.kind {
            FieldKind::ReactiveDensity => FieldKind::ReactiveDensityNormalized,
            k => k,
        };
        Self { grid: self.grid, values: self.values.iter().map(|v| v / z).collect(), kind }
    }

    /// Bilinear interpolation; points outside the grid are clamped.
    pub fn interpolate(&self, theta: f64, v: f64) -> f64 {
        let g = &self.grid;
        let x = ((theta - g.theta.0) / g.h_theta()).clamp(0.0, (g.n_theta - 1) as f64);
        let y = ((v - g.v.0) / g.h_v()).clamp(0.0, (g.n_v - 1) as f64);
        let i = (x.floor() as usize).min(g.n_theta - 2);
        let j = (y.floor() as usize).min(g.n_v - 2);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let f00 = self.at(i, j);
        let f10 = self.at(i + 1, j);
        let f01 = self.at(i, j + 1);
        let f11 = self.at(i + 1, j + 1);
        (1.0 - fx) * (1.0 - fy) * f00 + fx * (1.0 - fy) * f10 + (1.0 - fx) * fy * f01 + fx * fy * f11
    }

    /// Flat index and value of the maximum.
    pub fn argmax(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best })
    }

    /// Pearson correlation of node values with another field on the same
    /// grid.
    pub fn correlation(&self, other: &ScalarField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::config("fields live on different grids"));
        }
        let n = self.values.len() as f64;
        let ma = self.values.iter().sum::<f64>() / n;
        let mb = other.values.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in self.values.iter().zip(&other.values) {
            sab += (a - ma) * (b - mb);
            saa += (a - ma) * (a - ma);
            sbb += (b - mb) * (b - mb);
        }
        Ok(sab / (saa * sbb).sqrt())
    }

    /// `theta,v,value` rows in flat node order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,v,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let [t, w] = self.grid.node(k);
            out.push_str(&format!("{t},{w},{v}\n"));
        }
        out
    }

    pub fn sidecar_json(&self) -> String {
        let g = &self.grid;
        let s = Sidecar {
            kind: self.kind,
            bounds: [[g.theta.0, g.theta.1], [g.v.0, g.v.1]],
            shape: [g.n_theta, g.n_v],
            order: "theta-major",
            columns: ["theta", "v", "value"],
        };
        serde_json::to_string_pretty(&s).expect("sidecar serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionLabel {
    A,
    B,
}

/// Primitive region in the `(θ, v)` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `Σ ((x_k − c_k)/r_k)² ≤ 1`.
    Ellipse { center: [f64; 2], radii: [f64; 2] },
    /// `⟨normal, x⟩ ≥ offset`.
    HalfPlane { normal: [f64; 2], offset: f64 },
}

impl Shape {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Self::Ellipse { center, radii } => {
                let a = (x[0] - center[0]) / radii[0];
                let b = (x[1] - center[1]) / radii[1];
                a * a + b * b <= 1.0
            }
            Self::HalfPlane { normal, offset } => normal[0] * x[0] + normal[1] * x[1] >= *offset,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Ellipse { center, radii } => {
                if center.iter().chain(radii).any(|v| !v.is_finite()) || radii.iter().any(|r| *r <= 0.0) {
                    return Err(Error::config("ellipse needs finite center and positive radii"));
                }
            }
            Self::HalfPlane { normal, offset } => {
                if normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() || normal == &[0.0, 0.0] {
                    return Err(Error::config("half-plane needs a finite nonzero normal"));
                }
            }
        }
        Ok(())
    }
}

/// Union of shapes labelled as the upright set A or the unsafe set B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub label: RegionLabel,
    pub shapes: Vec<Shape>,
}

impl RegionSpec {
    pub fn new(label: RegionLabel, shapes: Vec<Shape>) -> Result<Self> {
        let r = Self { label, shapes };
        r.validate()?;
        Ok(r)
    }

    /// Disk of radius `r` about `center`.
    pub fn disk(label: RegionLabel, center: [f64; 2], r: f64) -> Result<Self> {
        Self::new(label, vec![Shape::Ellipse { center, radii: [r, r] }])
    }

    /// `{|θ| ≥ level}`.
    pub fn both_sides(label: RegionLabel, level: f64) -> Result<Self> {
        Self::new(
            label,
            vec![Shape::HalfPlane { normal: [1.0, 0.0], offset: level }, Shape::HalfPlane { normal: [-1.0, 0.0], offset: level }],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::config(format!("region {:?} has no shapes", self.label)));
        }
        self.shapes.iter().try_for_each(Shape::validate)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.shapes.iter().any(|s| s.contains(x))
    }

    /// Center of the first ellipse, used as the re-injection point.
    pub fn center(&self) -> Option<[f64; 2]> {
        self.shapes.iter().find_map(|s| match s {
            Shape::Ellipse { center, .. } => Some(*center),
            _ => None,
        })
    }

    /// Membership mask over grid nodes.
    pub fn mask(&self, grid: &Grid2D) -> Vec<bool> {
        (0..grid.len()).map(|k| self.contains(&grid.node(k))).collect()
    }
}

/// Masks of A and B on the grid, checking both are nonempty and disjoint.
pub fn region_masks(grid: &Grid2D, a: &RegionSpec, b: &RegionSpec) -> Result<(Vec<bool>, Vec<bool>)> {
    let ma = a.mask(grid);
    let mb = b.mask(grid);
    if !ma.iter().any(|&x| x) {
        return Err(Error::config("region A contains no grid nodes"));
    }
    if !mb.iter().any(|&x| x) {
        return Err(Error::config("region B contains no grid nodes"));
    }
    if ma.iter().zip(&mb).any(|(&x, &y)| x && y) {
        return Err(Error::config("regions A and B overlap on the grid"));
    }
    Ok((ma, mb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_geometry() {
        let g = Grid2D::default();
        assert_eq!(g.len(), 40_000);
        assert_eq!(g.theta_at(0), -2.0);
        assert_eq!(g.theta_at(199), 2.0);
        let area: f64 = (0..g.len()).map(|k| g.volume(k)).sum();
        assert!((area - 20.0).abs() < 1e-10);
        assert!(g.is_point_symmetric());
        let k = g.nearest(0.0, 0.0);
        let [t, v] = g.node(k);
        assert!(t.abs() <= 0.5 * g.h_theta() + 1e-15 && v.abs() <= 0.5 * g.h_v() + 1e-15);
    }

    #[test]
    fn invalid_grids() {
        assert!(Grid2D::new((0.0, 1.0), (0.0, 1.0), 2, 5).is_err());
        assert!(Grid2D::new((1.0, 1.0), (0.0, 1.0), 5, 5).is_err());
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_functions() {
        let g = Grid2D::new((-1.0, 2.0), (0.0, 1.0), 7, 5).unwrap();
        let f = |t: f64, v: f64| 1.0 + 2.0 * t - v + 0.5 * t * v;
        let vals = (0..g.len()).map(|k| {
            let [t, v] = g.node(k);
            f(t, v)
        });
        let s = ScalarField::new(g, vals.collect(), FieldKind::Generic).unwrap();
        for (t, v) in [(0.3, 0.7), (-1.0, 0.0), (2.0, 1.0), (1.234, 0.5)] {
            assert!((s.interpolate(t, v) - f(t, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn trapezoid_integral_of_linear_function() {
        let g = Grid2D::new((0.0, 2.0), (0.0, 1.0), 11, 6).unwrap();
        let vals = (0..g.len()).map(|k| g.node(k)[0] + g.node(k)[1]).collect();
        let s = ScalarField::new(g, vals, FieldKind::Generic).unwrap();
        assert!((s.integral() - 3.0).abs() < 1e-12);
        assert!((s.normalized().integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_and_sidecar() {
        let g = Grid2D::new((0.0, 1.0), (0.0, 2.0), 3, 3).unwrap();
        let s = ScalarField::new(g, (0..9).map(f64::from).collect(), FieldKind::Density).unwrap();
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "theta,v,value");
        assert_eq!(lines[1], "0,0,0");
        assert_eq!(lines[2], "0,1,1");
        assert_eq!(lines[4], "0.5,0,3");
        let j: serde_json::Value = serde_json::from_str(&s.sidecar_json()).unwrap();
        assert_eq!(j["kind"], "density");
        assert_eq!(j["shape"][0], 3);
    }

    #[test]
    fn regions() {
        let a = RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.2).unwrap();
        let b = RegionSpec::both_sides(RegionLabel::B, 1.5).unwrap();
        assert!(a.contains(&[0.1, 0.1]) && !a.contains(&[0.2, 0.1]));
        assert!(b.contains(&[1.5, 0.0]) && b.contains(&[-1.7, 3.0]) && !b.contains(&[1.4, 0.0]));
        let (ma, mb) = region_masks(&Grid2D::default(), &a, &b).unwrap();
        assert!(ma.iter().filter(|x| **x).count() > 10);
        assert!(mb.iter().filter(|x| **x).count() > 1000);
        assert!(region_masks(&Grid2D::default(), &a, &RegionSpec::disk(RegionLabel::B, [0.1, 0.0], 0.2).unwrap()).is_err());
        assert!(RegionSpec::disk(RegionLabel::A, [0.0, 0.0], 0.0).is_err());
        assert_eq!(a.center(), Some([0.0, 0.0]));
    }

    #[test]
    fn region_serde_roundtrip() {
        let b = RegionSpec::both_sides(RegionLabel::B, 1.5).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert!(s.contains("half_plane"));
        assert_eq!(serde_json::from_str::<RegionSpec>(&s).unwrap(), b);
        assert!(serde_json::from_str::<RegionSpec>(r#"{"label":"A","shapes":[],"extra":1}"#).is_err());
    }

    #[test]
    fn correlation_of_affine_copy_is_one() {
        let g = Grid2D::new((0.0, 1.0), (0.0, 1.0), 4, 4).unwrap();
        let a = ScalarField::new(g, (0..16).map(|k| (k as f64).sin()).collect(), FieldKind::Generic).unwrap();
        let b = ScalarField::new(g, a.values.iter().map(|v| 3.0 * v + 1.0).collect(), FieldKind::Generic).unwrap();
        assert!((a.correlation(&b).unwrap() - 1.0).abs() < 1e-12);
    }
}
