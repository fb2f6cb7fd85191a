//! Summary statistics of a sampled field, used as numerical evidence in
//! prompts.

use serde::{Deserialize, Serialize};

use crate::scenario::Domain;

const RADII: usize = 5;
const PROFILE_BINS: usize = 8;
const ANGLES: usize = 32;
const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub value: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub max: Extremum,
    pub min: Extremum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Radial {
    pub radial_symmetry_score: f64,
    pub decay_rate: f64,
    pub radial_profile: [f64; PROFILE_BINS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Symmetry {
    pub x_axis: bool,
    pub y_axis: bool,
    pub rotational_180: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroCrossings {
    pub flag: bool,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientStats {
    /// Means of (du/dx, du/dy).
    pub mean: [f64; 2],
    pub std: [f64; 2],
    /// max - min of (du/dx, du/dy).
    pub range: [f64; 2],
    pub magnitude_mean: f64,
    pub uniformity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatFeatures {
    pub extrema: Extrema,
    pub radial: Radial,
    pub symmetry: Symmetry,
    pub zero_crossings: ZeroCrossings,
    pub gradient: GradientStats,
    pub boundary: Boundary,
}

/// A square, cell-centred, row-major grid of samples over a domain.
#[derive(Clone, Copy, Debug)]
pub struct GridView<'a> {
    pub n: usize,
    pub domain: Domain,
    pub values: &'a [f64],
}

impl GridView<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.n + i]
    }

    fn cell(&self) -> (f64, f64) {
        (self.domain.width() / self.n as f64, self.domain.height() / self.n as f64)
    }

    fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let (dx, dy) = self.cell();
        (self.domain.x_min + (i as f64 + 0.5) * dx, self.domain.y_min + (j as f64 + 0.5) * dy)
    }

    /// Fractional node coordinates of `(x, y)`, clamped to the node hull.
    fn locate(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = self.cell();
        let last = (self.n - 1) as f64;
        let fx = ((x - self.domain.x_min) / dx - 0.5).clamp(0.0, last);
        let fy = ((y - self.domain.y_min) / dy - 0.5).clamp(0.0, last);
        (fx, fy)
    }

    fn split(f: f64, n: usize) -> (usize, f64) {
        let i = (f.floor() as usize).min(n - 2);
        (i, f - i as f64)
    }

    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = self.locate(x, y);
        let (i, tx) = Self::split(fx, self.n);
        let (j, ty) = Self::split(fy, self.n);
        let a = self.at(i, j) * (1.0 - tx) + self.at(i + 1, j) * tx;
        let b = self.at(i, j + 1) * (1.0 - tx) + self.at(i + 1, j + 1) * tx;
        a * (1.0 - ty) + b * ty
    }

    /// Catmull-Rom bicubic interpolation with clamped edge indices.
    pub fn bicubic(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = self.locate(x, y);
        let (i, tx) = Self::split(fx, self.n);
        let (j, ty) = Self::split(fy, self.n);
        let idx = |k: isize| k.clamp(0, self.n as isize - 1) as usize;
        let mut rows = [0.0; 4];
        for (r, row) in rows.iter_mut().enumerate() {
            let jj = idx(j as isize - 1 + r as isize);
            let p: Vec<f64> = (0..4).map(|c| self.at(idx(i as isize - 1 + c), jj)).collect();
            *row = catmull_rom(p[0], p[1], p[2], p[3], tx);
        }
        catmull_rom(rows[0], rows[1], rows[2], rows[3], ty)
    }
}

fn catmull_rom(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    0.5 * (2.0 * p1
        + (p2 - p0) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)))
}

fn extrema(g: &GridView) -> Extrema {
    let (mut imax, mut imin) = (0, 0);
    for (k, v) in g.values.iter().enumerate() {
        if *v > g.values[imax] {
            imax = k;
        }
        if *v < g.values[imin] {
            imin = k;
        }
    }
    let point = |k: usize| {
        let (x, y) = g.node(k % g.n, k / g.n);
        Extremum { value: g.values[k], x, y }
    };
    Extrema { max: point(imax), min: point(imin) }
}

fn ring(g: &GridView, r: f64) -> Vec<f64> {
    let (cx, cy) = g.domain.center();
    (0..ANGLES)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / ANGLES as f64;
            g.bicubic(cx + r * t.cos(), cy + r * t.sin())
        })
        .collect()
}

/// Rings are centred on the domain centre and reach a quarter of the smaller
/// extent.
fn radial(g: &GridView) -> Radial {
    let reach = 0.25 * g.domain.min_extent();
    let spread: f64 = (1..=RADII)
        .map(|k| {
            let vals = ring(g, reach * k as f64 / RADII as f64);
            std_dev(&vals) / (mean(&vals).abs() + 1e-9)
        })
        .sum::<f64>()
        / RADII as f64;
    let radii: Vec<f64> = (0..PROFILE_BINS).map(|k| reach * (k as f64 + 0.5) / PROFILE_BINS as f64).collect();
    let mut profile = [0.0; PROFILE_BINS];
    for (p, r) in profile.iter_mut().zip(&radii) {
        *p = mean(&ring(g, *r));
    }
    let logs: Vec<f64> = profile.iter().map(|p| (p.abs() + 1e-9).ln()).collect();
    let (mr, ml) = (mean(&radii), mean(&logs));
    let cov: f64 = radii.iter().zip(&logs).map(|(r, l)| (r - mr) * (l - ml)).sum();
    let var: f64 = radii.iter().map(|r| (r - mr) * (r - mr)).sum();
    Radial { radial_symmetry_score: (1.0 - spread).clamp(0.0, 1.0), decay_rate: cov / var, radial_profile: profile }
}

/// Mirrors are taken about the domain's centre lines.
fn symmetry(g: &GridView) -> Symmetry {
    let (lo, hi) = min_max(g.values);
    let tol = SYMMETRY_TOL * (hi - lo);
    let (cx, cy) = g.domain.center();
    let holds = |map: &dyn Fn(f64, f64) -> (f64, f64)| {
        (0..g.n * g.n).all(|k| {
            let (x, y) = g.node(k % g.n, k / g.n);
            let (mx, my) = map(x, y);
            (g.values[k] - g.bilinear(mx, my)).abs() <= tol
        })
    };
    Symmetry {
        x_axis: holds(&|x, y| (x, 2.0 * cy - y)),
        y_axis: holds(&|x, y| (2.0 * cx - x, y)),
        rotational_180: holds(&|x, y| (2.0 * cx - x, 2.0 * cy - y)),
    }
}

fn zero_crossings(g: &GridView) -> ZeroCrossings {
    let flips = |a: f64, b: f64| (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0);
    let mut count = 0;
    for j in 0..g.n {
        for i in 0..g.n {
            if i + 1 < g.n && flips(g.at(i, j), g.at(i + 1, j)) {
                count += 1;
            }
            if j + 1 < g.n && flips(g.at(i, j), g.at(i, j + 1)) {
                count += 1;
            }
        }
    }
    ZeroCrossings { flag: count > 0, count }
}

fn gradient(dx: &[f64], dy: &[f64]) -> GradientStats {
    let mag: Vec<f64> = dx.iter().zip(dy).map(|(a, b)| a.hypot(*b)).collect();
    let m = mean(&mag);
    let uniformity = if m == 0.0 { 0.0 } else { 1.0 - std_dev(&mag) / m };
    let (lx, hx) = min_max(dx);
    let (ly, hy) = min_max(dy);
    GradientStats {
        mean: [mean(dx), mean(dy)],
        std: [std_dev(dx), std_dev(dy)],
        range: [hx - lx, hy - ly],
        magnitude_mean: m,
        uniformity,
    }
}

fn boundary(g: &GridView) -> Boundary {
    let n = g.n;
    let col = |i: usize| (0..n).map(|j| g.at(i, j)).sum::<f64>() / n as f64;
    let row = |j: usize| (0..n).map(|i| g.at(i, j)).sum::<f64>() / n as f64;
    Boundary { left: col(0), right: col(n - 1), bottom: row(0), top: row(n - 1) }
}

/// Features of an `n x n` field with its two gradient grids.
pub fn compute_stat_features(n: usize, domain: Domain, u: &[f64], du_dx: &[f64], du_dy: &[f64]) -> StatFeatures {
    let g = GridView { n, domain, values: u };
    StatFeatures {
        extrema: extrema(&g),
        radial: radial(&g),
        symmetry: symmetry(&g),
        zero_crossings: zero_crossings(&g),
        gradient: gradient(du_dx, du_dy),
        boundary: boundary(&g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(domain: Domain, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        domain.cell_centered_grid(20).iter().map(|p| f(p.x, p.y)).collect()
    }

    fn features(domain: Domain, f: impl Fn(f64, f64) -> f64) -> StatFeatures {
        let u = sample(domain, &f);
        let h = 1e-6;
        let dx = sample(domain, |x, y| (f(x + h, y) - f(x - h, y)) / (2.0 * h));
        let dy = sample(domain, |x, y| (f(x, y + h) - f(x, y - h)) / (2.0 * h));
        compute_stat_features(20, domain, &u, &dx, &dy)
    }

    #[test]
    fn gaussian_is_radial_and_symmetric() {
        let f = features(Domain::from([-3.0, 3.0, -3.0, 3.0]), |x, y| (-x * x - y * y).exp());
        assert!(f.radial.radial_symmetry_score >= 0.99, "{}", f.radial.radial_symmetry_score);
        assert!(f.radial.decay_rate < 0.0);
        assert!(f.symmetry.x_axis && f.symmetry.y_axis && f.symmetry.rotational_180);
        assert!(!f.zero_crossings.flag);
        assert!((f.extrema.max.value - (-2.0 * 0.15f64 * 0.15).exp()).abs() < 1e-12);
    }

    #[test]
    fn linear_ramp() {
        let f = features(Domain::from([-1.0, 1.0, -1.0, 1.0]), |x, _| x);
        assert!(f.zero_crossings.flag);
        assert_eq!(f.zero_crossings.count, 20);
        // u = x is unchanged by y -> -y and odd under x -> -x
        assert!(f.symmetry.x_axis);
        assert!(!f.symmetry.y_axis);
        assert!(!f.symmetry.rotational_180);
        assert!((f.gradient.uniformity - 1.0).abs() < 1e-9);
        assert!((f.boundary.left + 0.95).abs() < 1e-12 && (f.boundary.right - 0.95).abs() < 1e-12);
    }

    #[test]
    fn constant_field_conventions() {
        let f = features(Domain::from([0.0, 1.0, 0.0, 1.0]), |_, _| 2.0);
        assert_eq!(f.gradient.magnitude_mean, 0.0);
        assert_eq!(f.gradient.uniformity, 0.0);
        assert!(f.symmetry.x_axis && f.symmetry.y_axis);
        assert_eq!(f.radial.radial_symmetry_score, 1.0);
    }

    #[test]
    fn interpolants_reproduce_nodes() {
        let d = Domain::from([0.0, 2.0, -1.0, 1.0]);
        let u = sample(d, |x, y| x * x - 3.0 * y);
        let g = GridView { n: 20, domain: d, values: &u };
        let (x, y) = g.node(7, 11);
        assert!((g.bilinear(x, y) - u[11 * 20 + 7]).abs() < 1e-12);
        assert!((g.bicubic(x, y) - u[11 * 20 + 7]).abs() < 1e-12);
        // Catmull-Rom is exact on quadratics away from the edges
        assert!((g.bicubic(0.93, 0.21) - (0.93 * 0.93 - 0.63)).abs() < 1e-12);
    }
}
