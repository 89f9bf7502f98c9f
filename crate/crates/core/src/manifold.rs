//! Centered circles and spheres embedded in ℝ², ℝ³: quadrature grids for the
//! volume measure, Laplace–Beltrami eigenstructure and curvature data.
//!
//! Points are stored in ambient coordinates as `[f64; 3]`; circle points keep
//! a zero third component. The Laplacian is taken with the nonnegative
//! (spectral) sign convention, so `Δ e = λ e` with `λ ≥ 0`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Ambient point. Circle points use the first two components only.
pub type Point = [f64; 3];

/// Relative tolerance for "point lies on M" checks.
pub const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Circle,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub radius: f64,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive, got {radius}"
            )));
        }
        Ok(Self { kind, radius })
    }

    pub fn circle(radius: f64) -> Result<Self> {
        Self::new(ManifoldKind::Circle, radius)
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        Self::new(ManifoldKind::Sphere, radius)
    }

    /// Dimension `m` of the enveloping Euclidean space.
    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle => 2,
            ManifoldKind::Sphere => 3,
        }
    }

    /// Dimension `d` of the manifold.
    pub fn intrinsic_dim(&self) -> usize {
        self.ambient_dim() - 1
    }

    pub fn volume(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle => 2.0 * PI * self.radius,
            ManifoldKind::Sphere => 4.0 * PI * self.radius * self.radius,
        }
    }

    pub fn check_point(&self, p: &Point) -> Result<()> {
        let norm = norm(p);
        let off_plane = self.kind == ManifoldKind::Circle && p[2] != 0.0;
        if off_plane || (norm - self.radius).abs() > ON_MANIFOLD_TOL * self.radius {
            return Err(Error::PointNotOnManifold {
                norm,
                radius: self.radius,
            });
        }
        Ok(())
    }

    /// Point on the circle at angle `theta`.
    pub fn circle_point(&self, theta: f64) -> Point {
        [self.radius * theta.cos(), self.radius * theta.sin(), 0.0]
    }

    /// Point on the sphere at colatitude `colat` and longitude `lon`.
    pub fn sphere_point(&self, colat: f64, lon: f64) -> Point {
        let r = self.radius;
        [
            r * colat.sin() * lon.cos(),
            r * colat.sin() * lon.sin(),
            r * colat.cos(),
        ]
    }

    /// Polar angle of a point in the plane, in `(-π, π]`.
    pub fn angle(p: &Point) -> f64 {
        p[1].atan2(p[0])
    }

    /// `(colatitude, longitude)` of a sphere point.
    pub fn colat_lon(&self, p: &Point) -> (f64, f64) {
        let cos = (p[2] / norm(p)).clamp(-1.0, 1.0);
        (cos.acos(), p[1].atan2(p[0]))
    }

    /// Basis functions up to `cap` (circle: mode `k ≤ cap`; sphere: degree `l ≤ cap`).
    pub fn eigen_indices(&self, cap: usize) -> Vec<EigenIndex> {
        match self.kind {
            ManifoldKind::Circle => {
                let mut out = vec![EigenIndex::Circle {
                    k: 0,
                    parity: Parity::Cos,
                }];
                for k in 1..=cap {
                    out.push(EigenIndex::Circle {
                        k,
                        parity: Parity::Cos,
                    });
                    out.push(EigenIndex::Circle {
                        k,
                        parity: Parity::Sin,
                    });
                }
                out
            }
            ManifoldKind::Sphere => (0..=cap)
                .flat_map(|l| (-(l as i64)..=l as i64).map(move |q| EigenIndex::Sphere { l, q }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

/// Label of a real Laplace–Beltrami eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EigenIndex {
    Circle { k: usize, parity: Parity },
    /// Real spherical harmonic; `q < 0` selects the sine branch.
    Sphere { l: usize, q: i64 },
}

impl EigenIndex {
    /// Mode number `k` or degree `l`.
    pub fn degree(&self) -> usize {
        match *self {
            EigenIndex::Circle { k, .. } => k,
            EigenIndex::Sphere { l, .. } => l,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Circle { n: usize },
    Sphere { n_colat: usize, n_lon: usize },
}

/// Quadrature nodes and weights for the volume measure of M.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    spec: ManifoldSpec,
    nodes: Vec<Point>,
    weights: Vec<f64>,
    resolution: Resolution,
    cap: usize,
}

impl QuadratureGrid {
    /// Builds the grid with the default eigenbasis cap.
    ///
    /// Circle: `n` equally spaced nodes, weight `2πr/n`. Sphere: Gauss–Legendre
    /// in `cos(colatitude)` times uniform longitude, ring-major node order.
    pub fn build(spec: ManifoldSpec, resolution: Resolution) -> Result<Self> {
        let cap = match resolution {
            Resolution::Circle { n } => n / 4,
            Resolution::Sphere { n_colat, .. } => (n_colat / 2).saturating_sub(1),
        };
        Self::build_with_cap(spec, resolution, cap)
    }

    pub fn build_with_cap(spec: ManifoldSpec, resolution: Resolution, cap: usize) -> Result<Self> {
        let r = spec.radius;
        let (nodes, weights) = match (spec.kind, resolution) {
            (ManifoldKind::Circle, Resolution::Circle { n }) => {
                if n < 8 {
                    return Err(Error::InvalidResolution(format!(
                        "circle needs n >= 8, got {n}"
                    )));
                }
                if 2 * cap >= n {
                    return Err(Error::InvalidResolution(format!(
                        "cap {cap} exceeds quadrature exactness for n = {n}"
                    )));
                }
                let nodes = (0..n)
                    .map(|j| spec.circle_point(2.0 * PI * j as f64 / n as f64))
                    .collect();
                (nodes, vec![2.0 * PI * r / n as f64; n])
            }
            (ManifoldKind::Sphere, Resolution::Sphere { n_colat, n_lon }) => {
                if n_colat < 8 || n_lon < 8 {
                    return Err(Error::InvalidResolution(format!(
                        "sphere needs n_colat, n_lon >= 8, got ({n_colat}, {n_lon})"
                    )));
                }
                if 2 * cap >= n_colat.min(n_lon) {
                    return Err(Error::InvalidResolution(format!(
                        "cap {cap} exceeds quadrature exactness for ({n_colat}, {n_lon})"
                    )));
                }
                // Descending cos(colat) puts ring 0 next to the north pole.
                let (x, w) = gauss_legendre(n_colat);
                let dlon = 2.0 * PI / n_lon as f64;
                let mut nodes = Vec::with_capacity(n_colat * n_lon);
                let mut weights = Vec::with_capacity(n_colat * n_lon);
                for i in (0..n_colat).rev() {
                    let colat = x[i].clamp(-1.0, 1.0).acos();
                    for j in 0..n_lon {
                        nodes.push(spec.sphere_point(colat, j as f64 * dlon));
                        weights.push(w[i] * dlon * r * r);
                    }
                }
                (nodes, weights)
            }
            _ => {
                return Err(Error::InvalidResolution(format!(
                    "resolution {resolution:?} does not match manifold {:?}",
                    spec.kind
                )))
            }
        };
        Ok(Self {
            spec,
            nodes,
            weights,
            resolution,
            cap,
        })
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Eigenbasis truncation used for spectral projections on this grid.
    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index pairs of neighbouring nodes (along each ring and between rings).
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        match self.resolution {
            Resolution::Circle { n } => (0..n).map(|j| (j, (j + 1) % n)).collect(),
            Resolution::Sphere { n_colat, n_lon } => {
                let mut pairs = Vec::with_capacity(2 * n_colat * n_lon);
                for i in 0..n_colat {
                    for j in 0..n_lon {
                        let a = i * n_lon + j;
                        pairs.push((a, i * n_lon + (j + 1) % n_lon));
                        if i + 1 < n_colat {
                            pairs.push((a, a + n_lon));
                        }
                    }
                }
                pairs
            }
        }
    }

    /// Index of the node closest to `p` in the chordal metric.
    pub fn nearest_node(&self, p: &Point) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, node) in self.nodes.iter().enumerate() {
            let d = chordal_sq(node, p);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }
}

/// Values of a function on the nodes of a [`QuadratureGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn from_fn(grid: &QuadratureGrid, f: impl Fn(&Point) -> f64) -> Self {
        Self::new(grid.nodes().iter().map(f).collect())
    }

    pub fn constant(grid: &QuadratureGrid, c: f64) -> Self {
        Self::new(vec![c; grid.len()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_i |self_i - other_i|`.
    pub fn sup_distance(&self, other: &GridFunction) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn check_grid(&self, grid: &QuadratureGrid) -> Result<()> {
        check_len(grid.len(), self.len())
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}

pub fn norm(p: &Point) -> f64 {
    dot(p, p).sqrt()
}

pub fn dot(p: &Point, q: &Point) -> f64 {
    p[0] * q[0] + p[1] * q[1] + p[2] * q[2]
}

/// Squared Euclidean distance `|p - q|²`.
pub fn chordal_sq(p: &Point, q: &Point) -> f64 {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    dot(&d, &d)
}

/// Great-circle distance `r · angle(p, q)`.
pub fn geodesic_distance(spec: &ManifoldSpec, p: &Point, q: &Point) -> Result<f64> {
    spec.check_point(p)?;
    spec.check_point(q)?;
    // atan2 of |p×q| and p·q stays accurate near 0 and π.
    let c = [
        p[1] * q[2] - p[2] * q[1],
        p[2] * q[0] - p[0] * q[2],
        p[0] * q[1] - p[1] * q[0],
    ];
    Ok(spec.radius * norm(&c).atan2(dot(p, q)))
}

pub fn eigenvalue(spec: &ManifoldSpec, idx: EigenIndex) -> f64 {
    let r2 = spec.radius * spec.radius;
    match idx {
        EigenIndex::Circle { k, .. } => (k * k) as f64 / r2,
        EigenIndex::Sphere { l, .. } => (l * (l + 1)) as f64 / r2,
    }
}

/// Orthonormal (w.r.t. the volume measure) real eigenfunction at `p`.
pub fn eigenfunction(spec: &ManifoldSpec, idx: EigenIndex, p: &Point) -> f64 {
    let r = spec.radius;
    match idx {
        EigenIndex::Circle { k: 0, .. } => 1.0 / (2.0 * PI * r).sqrt(),
        EigenIndex::Circle { k, parity } => {
            let theta = ManifoldSpec::angle(p);
            let trig = match parity {
                Parity::Cos => (k as f64 * theta).cos(),
                Parity::Sin => (k as f64 * theta).sin(),
            };
            trig / (PI * r).sqrt()
        }
        EigenIndex::Sphere { l, q } => {
            let (colat, lon) = spec.colat_lon(p);
            real_spherical_harmonic(l, q, colat, lon) / r
        }
    }
}

/// `sup_M |e_idx|`, used for sup-norm bounds of band-limited functions.
pub fn eigenfunction_sup(spec: &ManifoldSpec, idx: EigenIndex) -> f64 {
    let r = spec.radius;
    match idx {
        EigenIndex::Circle { k: 0, .. } => 1.0 / (2.0 * PI * r).sqrt(),
        EigenIndex::Circle { .. } => 1.0 / (PI * r).sqrt(),
        // Unsöld bound |Y_lm| ≤ sqrt((2l+1)/4π), times √2 for the real form.
        EigenIndex::Sphere { l, q } => {
            let factor = if q == 0 { 1.0 } else { 2f64.sqrt() };
            factor * ((2 * l + 1) as f64 / (4.0 * PI)).sqrt() / r
        }
    }
}

/// Fully normalized associated Legendre function P̄_l^m(cos θ) such that
/// P̄_l^m(cos θ)·e^{imφ} has unit L² norm on the unit sphere (no Condon–Shortley phase).
pub fn normalized_legendre(l: usize, m: usize, colat: f64) -> f64 {
    if m > l {
        return 0.0;
    }
    let x = colat.cos();
    let s = colat.sin();
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= ((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
    }
    if l == m {
        return pmm;
    }
    let mut p_prev = pmm;
    let mut p_cur = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let mf = m as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = a * (x * p_cur - b * p_prev);
        p_prev = p_cur;
        p_cur = next;
    }
    p_cur
}

/// Real spherical harmonic, orthonormal on the unit sphere.
pub fn real_spherical_harmonic(l: usize, q: i64, colat: f64, lon: f64) -> f64 {
    let m = q.unsigned_abs() as usize;
    let p = normalized_legendre(l, m, colat);
    match q.cmp(&0) {
        std::cmp::Ordering::Equal => p,
        std::cmp::Ordering::Greater => 2f64.sqrt() * p * (m as f64 * lon).cos(),
        std::cmp::Ordering::Less => 2f64.sqrt() * p * (m as f64 * lon).sin(),
    }
}

/// Scalar curvature; constant on these manifolds.
pub fn scalar_curvature(spec: &ManifoldSpec, p: &Point) -> Result<f64> {
    spec.check_point(p)?;
    Ok(match spec.kind {
        ManifoldKind::Circle => 0.0,
        ManifoldKind::Sphere => 2.0 / (spec.radius * spec.radius),
    })
}

/// `Δ_M Δ_M |· − y|²` evaluated at `y`.
///
/// In geodesic polar coordinates `|z − y|² = 2r²(1 − cos(ρ/r))`; applying the
/// radial Laplacian twice gives `−2/r²` on the circle and `−8/r²` on the sphere.
pub fn double_laplacian_chordal(spec: &ManifoldSpec, y: &Point) -> Result<f64> {
    spec.check_point(y)?;
    let r2 = spec.radius * spec.radius;
    Ok(match spec.kind {
        ManifoldKind::Circle => -2.0 / r2,
        ManifoldKind::Sphere => -8.0 / r2,
    })
}

/// Orthogonal projection of `v` onto the tangent space at `base`.
pub fn project_tangent(spec: &ManifoldSpec, base: &Point, v: &Point) -> Result<Point> {
    spec.check_point(base)?;
    let mut v = *v;
    if spec.kind == ManifoldKind::Circle {
        v[2] = 0.0;
    }
    let n = norm(base);
    let u = [base[0] / n, base[1] / n, base[2] / n];
    let c = dot(&v, &u);
    Ok([v[0] - c * u[0], v[1] - c * u[1], v[2] - c * u[2]])
}

/// `Σ_i w_i f(x_i)`.
pub fn integrate(grid: &QuadratureGrid, f: &GridFunction) -> Result<f64> {
    f.check_grid(grid)?;
    Ok(grid.weights().iter().zip(&f.values).map(|(w, v)| w * v).sum())
}
