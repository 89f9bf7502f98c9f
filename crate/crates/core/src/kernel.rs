//! The time-inhomogeneous Gaussian transition density, its normalized
//! restriction to M, and the discretized one-step operator Q_{s,t}.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    chordal_sq, norm, GridFunction, ManifoldKind, ManifoldSpec, Point, QuadratureGrid,
};
use crate::scaling::TimeScaling;

/// Kernel width must cover at least this many image-node spacings.
pub const RESOLUTION_FACTOR: f64 = 3.0;

fn check_order(s: f64, t: f64) -> Result<()> {
    if !(s < t) {
        return Err(Error::InvalidTimeOrder { s, t });
    }
    Ok(())
}

/// `p(s, x, t, y) = |det σ(t)| (2π(t−s))^{−m/2} exp(−|σ(t)y − σ(s)x|² / 2(t−s))`.
pub fn transition_density(
    scaling: &TimeScaling,
    ambient_dim: usize,
    s: f64,
    x: &Point,
    t: f64,
    y: &Point,
) -> Result<f64> {
    check_order(s, t)?;
    let h = t - s;
    let d2 = chordal_sq(&scaling.apply(ambient_dim, t, y), &scaling.apply(ambient_dim, s, x));
    let det = scaling.det(ambient_dim, t).abs();
    Ok(det * (2.0 * PI * h).powf(-(ambient_dim as f64) / 2.0) * (-d2 / (2.0 * h)).exp())
}

/// Standard Gaussian density `q(τ, a, b)` on ℝ^m with covariance `τ·I`.
pub fn gaussian_density(ambient_dim: usize, tau: f64, a: &Point, b: &Point) -> f64 {
    (2.0 * PI * tau).powf(-(ambient_dim as f64) / 2.0) * (-chordal_sq(a, b) / (2.0 * tau)).exp()
}

/// Outcome of [`resolution_check`] when it passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub width: f64,
    pub spacing: f64,
}

/// Largest distance between neighbouring image nodes σ(t)·x_j.
pub fn image_spacing(grid: &QuadratureGrid, scaling: &TimeScaling, t: f64) -> f64 {
    let m = grid.spec().ambient_dim();
    let image: Vec<Point> = grid.nodes().iter().map(|x| scaling.apply(m, t, x)).collect();
    grid.adjacent_pairs()
        .into_iter()
        .fold(0.0, |acc, (a, b)| acc.max(chordal_sq(&image[a], &image[b]).sqrt()))
}

/// Ok iff `√(t−s) / ‖σ(t)‖ ≥ 3 × (max spacing of adjacent image nodes)`.
pub fn resolution_check(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    t: f64,
) -> Result<Resolved> {
    check_order(s, t)?;
    let m = grid.spec().ambient_dim();
    let width = (t - s).sqrt() / scaling.max_singular_value(m, t);
    let spacing = image_spacing(grid, scaling, t);
    if width < RESOLUTION_FACTOR * spacing {
        return Err(Error::KernelUnderResolved {
            s,
            t,
            width,
            spacing,
        });
    }
    Ok(Resolved { width, spacing })
}

/// Row `w_j p(s,x,t,x_j) / Σ_j' w_j' p(s,x,t,x_j')`, summed in node order.
fn normalized_row(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    x: &Point,
    t: f64,
    out: &mut [f64],
) {
    let m = grid.spec().ambient_dim();
    let h = t - s;
    let xs = scaling.apply(m, s, x);
    let mut max_exponent = f64::NEG_INFINITY;
    for (o, node) in out.iter_mut().zip(grid.nodes()) {
        let e = -chordal_sq(&scaling.apply(m, t, node), &xs) / (2.0 * h);
        *o = e;
        max_exponent = max_exponent.max(e);
    }
    let mut total = 0.0;
    for (o, w) in out.iter_mut().zip(grid.weights()) {
        *o = w * (*o - max_exponent).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Density of p^M(s, x, t, ·) against the node weights: `Σ_i w_i p^M(x_i) = 1`.
pub fn normalized_manifold_density(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    x: &Point,
    t: f64,
) -> Result<GridFunction> {
    resolution_check(grid, scaling, s, t)?;
    let mut row = vec![0.0; grid.len()];
    normalized_row(grid, scaling, s, x, t, &mut row);
    for (v, w) in row.iter_mut().zip(grid.weights()) {
        *v /= w;
    }
    Ok(GridFunction::new(row))
}

/// Dense row-stochastic discretization of Q_{s,t}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelOperator {
    pub s: f64,
    pub t: f64,
    n: usize,
    entries: Vec<f64>,
}

impl KernelOperator {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks_exact(self.n)
    }

    /// `(Qf)_i = Σ_j K_ij f_j`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        crate::manifold::check_len(self.n, f.len())?;
        let values = self
            .entries
            .par_chunks_exact(self.n)
            .map(|row| row.iter().zip(&f.values).map(|(k, v)| k * v).sum())
            .collect();
        Ok(GridFunction::new(values))
    }

    /// `max_i |Σ_j K_ij − 1|`.
    pub fn row_sum_defect(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Assembles Q_{s,t} after checking resolution.
pub fn assemble_step_operator(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    t: f64,
) -> Result<KernelOperator> {
    resolution_check(grid, scaling, s, t)?;
    let n = grid.len();
    let mut entries = vec![0.0; n * n];
    entries
        .par_chunks_exact_mut(n)
        .zip(grid.nodes().par_iter())
        .for_each(|(row, x)| normalized_row(grid, scaling, s, x, t, row));
    Ok(KernelOperator { s, t, n, entries })
}

/// Both sides of the push-forward identity relating the M-integral of `p` to
/// a Gaussian integral over the image manifold `M_t = σ(t)M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PushforwardCheck {
    /// `∫_M p(s,x,t,y) f(y) λ_M(dy)` on the M-grid.
    pub lhs: f64,
    /// `|det σ(t)| ∫_{M_t} q(t−s, σ(s)x, y_t) f_t(y_t) J⁻¹ λ_{M_t}(dy_t)` on the image grid.
    pub rhs: f64,
    pub abs_diff: f64,
    /// The same image integral without the volume-element factor `J⁻¹`.
    pub unweighted_rhs: f64,
}

/// Volume-element ratio `dλ_{M_t}/dλ_M` of `y ↦ σ(t)y` at `x ∈ M`.
pub fn image_volume_element(spec: &ManifoldSpec, scaling: &TimeScaling, t: f64, x: &Point) -> f64 {
    let m = spec.ambient_dim();
    match spec.kind {
        ManifoldKind::Circle => {
            let r = norm(x);
            let tangent = [-x[1] / r, x[0] / r, 0.0];
            norm(&scaling.apply(m, t, &tangent))
        }
        ManifoldKind::Sphere => {
            let (colat, lon) = spec.colat_lon(x);
            let e1 = [colat.cos() * lon.cos(), colat.cos() * lon.sin(), -colat.sin()];
            let e2 = [-lon.sin(), lon.cos(), 0.0];
            let a = scaling.apply(m, t, &e1);
            let b = scaling.apply(m, t, &e2);
            let c = [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ];
            norm(&c)
        }
    }
}

pub fn pushforward_identity_check(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    x: &Point,
    t: f64,
    f: impl Fn(&Point) -> f64,
) -> Result<PushforwardCheck> {
    check_order(s, t)?;
    let spec = *grid.spec();
    let m = spec.ambient_dim();
    let mut lhs = 0.0;
    for (node, w) in grid.nodes().iter().zip(grid.weights()) {
        lhs += w * transition_density(scaling, m, s, x, t, node)? * f(node);
    }

    // Image grid: for c(t)·I an independently built grid of radius |c|·r,
    // otherwise the mapped nodes with Jacobian-scaled weights.
    let (image_nodes, image_weights): (Vec<Point>, Vec<f64>) = match scaling {
        TimeScaling::Scalar { profile } => {
            let c = profile.value(t);
            let image_spec = ManifoldSpec::new(spec.kind, c.abs() * spec.radius)?;
            let image = QuadratureGrid::build(image_spec, grid.resolution())?;
            (image.nodes().to_vec(), image.weights().to_vec())
        }
        TimeScaling::Diagonal { .. } => grid
            .nodes()
            .iter()
            .zip(grid.weights())
            .map(|(x, w)| {
                (
                    scaling.apply(m, t, x),
                    w * image_volume_element(&spec, scaling, t, x),
                )
            })
            .unzip(),
    };
    let det = scaling.det(m, t).abs();
    let xs = scaling.apply(m, s, x);
    let h = t - s;
    let mut rhs = 0.0;
    let mut unweighted = 0.0;
    for (y, w) in image_nodes.iter().zip(&image_weights) {
        let pre = scaling.apply_inverse(m, t, y);
        let jac = image_volume_element(&spec, scaling, t, &pre);
        let term = w * gaussian_density(m, h, &xs, y) * f(&pre);
        unweighted += term;
        rhs += term / jac;
    }
    rhs *= det;
    unweighted *= det;
    Ok(PushforwardCheck {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
        unweighted_rhs: unweighted,
    })
}
