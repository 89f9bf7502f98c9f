//! Short-time expansions of the Gaussian integral
//! `(2πt)^{−d/2} ∫_M g(z) e^{−|z−y|²/2t} λ_M(dz)` and of its normalized ratio:
//! first-order predictions from curvature data and least-squares measurements.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, weighted_least_squares};
use crate::kernel::resolution_check;
use crate::manifold::{
    chordal_sq, double_laplacian_chordal, geodesic_distance, scalar_curvature, ManifoldSpec, Point,
    QuadratureGrid,
};
use crate::scaling::TimeScaling;
use crate::spectral::SpectralFunction;

/// Largest tolerated condition number of the weighted design matrix.
pub const MAX_CONDITION: f64 = 1e8;
/// A fit passes the remainder check when the residual exponent reaches this.
pub const REMAINDER_EXPONENT_THRESHOLD: f64 = 1.4;
pub const MIN_SAMPLES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionSource {
    Unnormalized,
    Normalized,
}

/// Predicted `a0 + a1·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPrediction {
    pub a0: f64,
    pub a1: f64,
    pub source: ExpansionSource,
}

/// `a0 = g(y)`, `a1 = −½Δg(y) − g(y)(scal(y)/6 + ΔΔ|·−y|²|_y / 16)`.
pub fn predict_unnormalized(
    spec: &ManifoldSpec,
    g: &SpectralFunction,
    y: &Point,
) -> Result<ExpansionPrediction> {
    let gy = g.evaluate(y);
    let lap = g.laplacian().evaluate(y);
    let scal = scalar_curvature(spec, y)?;
    let dd = double_laplacian_chordal(spec, y)?;
    Ok(ExpansionPrediction {
        a0: gy,
        a1: -0.5 * lap - gy * (scal / 6.0 + dd / 16.0),
        source: ExpansionSource::Unnormalized,
    })
}

/// `a0 = g(x)`, `a1 = −½Δg(x)`: the curvature terms cancel in the ratio.
pub fn predict_normalized(
    spec: &ManifoldSpec,
    g: &SpectralFunction,
    x: &Point,
) -> Result<ExpansionPrediction> {
    spec.check_point(x)?;
    Ok(ExpansionPrediction {
        a0: g.evaluate(x),
        a1: -0.5 * g.laplacian().evaluate(x),
        source: ExpansionSource::Normalized,
    })
}

/// Least-squares fit of sampled values against `a0 + a1·t + b·t^{3/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub source: ExpansionSource,
    pub a0_hat: f64,
    pub a1_hat: f64,
    /// Coefficient of the `t^{3/2}` nuisance term.
    pub b_hat: f64,
    /// `max_t |value − â0 − â1 t| / t^{3/2}`.
    pub k_hat: f64,
    /// Power-law exponent of `|value − â0 − â1 t|`; infinite when the
    /// remainder is at roundoff level for every sample.
    pub remainder_exponent: f64,
    pub t_window: (f64, f64),
    pub residual_norm: f64,
    pub condition: f64,
    pub samples: Vec<(f64, f64)>,
}

fn check_samples(t_samples: &[f64]) -> Result<(f64, f64)> {
    if t_samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "expansion fit needs at least {MIN_SAMPLES} sample times, got {}",
            t_samples.len()
        )));
    }
    let t_min = t_samples.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = t_samples.iter().copied().fold(0.0, f64::max);
    if !(t_min > 0.0) || t_max < 10.0 * t_min * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "sample times must be positive and span a decade, got [{t_min}, {t_max}]"
        )));
    }
    Ok((t_min, t_max))
}

fn remainder_stats(samples: &[(f64, f64)], a0: f64, a1: f64) -> Result<(f64, f64)> {
    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let remainders: Vec<f64> = samples
        .iter()
        .map(|&(t, v)| (v - a0 - a1 * t).abs())
        .collect();
    let floor = 1e-12 * a0.abs().max(1.0);
    let exponent = if remainders.iter().all(|r| *r <= floor) {
        f64::INFINITY
    } else {
        fit_power_law(&ts, &remainders)?.slope
    };
    let k_hat = ts
        .iter()
        .zip(&remainders)
        .map(|(t, r)| r / t.powf(1.5))
        .fold(0.0, f64::max);
    Ok((exponent, k_hat))
}

/// Weighted fit (weights `1/t`, matching the growth of the remainder) and
/// remainder-exponent estimate.
pub fn fit_expansion(source: ExpansionSource, samples: &[(f64, f64)]) -> Result<ExpansionFit> {
    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let t_window = check_samples(&ts)?;
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let design: Vec<Vec<f64>> = ts.iter().map(|&t| vec![1.0, t, t.powf(1.5)]).collect();
    let weights: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
    let ls = weighted_least_squares(&design, &values, &weights, MAX_CONDITION)?;
    let (a0, a1, b) = (ls.coefficients[0], ls.coefficients[1], ls.coefficients[2]);
    let (remainder_exponent, k_hat) = remainder_stats(samples, a0, a1)?;
    Ok(ExpansionFit {
        source,
        a0_hat: a0,
        a1_hat: a1,
        b_hat: b,
        k_hat,
        remainder_exponent,
        t_window,
        residual_norm: ls.residual_norm,
        condition: ls.condition,
        samples: samples.to_vec(),
    })
}

fn gaussian_moments(
    grid: &QuadratureGrid,
    g_values: &[f64],
    y: &Point,
    t: f64,
) -> Result<(f64, f64)> {
    resolution_check(grid, &TimeScaling::identity(), 0.0, t)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((z, w), gz) in grid.nodes().iter().zip(grid.weights()).zip(g_values) {
        let k = w * (-chordal_sq(z, y) / (2.0 * t)).exp();
        num += k * gz;
        den += k;
    }
    Ok((num, den))
}

/// Samples `(2πt)^{−d/2} ∫_M g(z) e^{−|z−y|²/2t} λ_M(dz)` and fits the expansion.
pub fn measure_unnormalized(
    grid: &QuadratureGrid,
    g: &SpectralFunction,
    y: &Point,
    t_samples: &[f64],
) -> Result<ExpansionFit> {
    check_samples(t_samples)?;
    grid.spec().check_point(y)?;
    let d = grid.spec().intrinsic_dim() as f64;
    let g_values = g.to_grid(grid).values;
    let samples = t_samples
        .iter()
        .map(|&t| {
            let (num, _) = gaussian_moments(grid, &g_values, y, t)?;
            Ok((t, num * (2.0 * PI * t).powf(-d / 2.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_expansion(ExpansionSource::Unnormalized, &samples)
}

/// Samples the ratio `∫ g e^{−|·−x|²/2t} / ∫ e^{−|·−x|²/2t}` and fits the expansion.
pub fn measure_normalized(
    grid: &QuadratureGrid,
    g: &SpectralFunction,
    x: &Point,
    t_samples: &[f64],
) -> Result<ExpansionFit> {
    check_samples(t_samples)?;
    grid.spec().check_point(x)?;
    let g_values = g.to_grid(grid).values;
    let samples = t_samples
        .iter()
        .map(|&t| {
            let (num, den) = gaussian_moments(grid, &g_values, x, t)?;
            Ok((t, num / den))
        })
        .collect::<Result<Vec<_>>>()?;
    fit_expansion(ExpansionSource::Normalized, &samples)
}

impl ExpansionFit {
    /// Recomputes the remainder exponent and `K̂` against predicted
    /// coefficients instead of the fitted ones, so a first-order error in the
    /// prediction shows up as a remainder of order `t`.
    pub fn against_prediction(&self, prediction: &ExpansionPrediction) -> Result<ExpansionFit> {
        let (remainder_exponent, k_hat) =
            remainder_stats(&self.samples, prediction.a0, prediction.a1)?;
        Ok(ExpansionFit {
            remainder_exponent,
            k_hat,
            ..self.clone()
        })
    }
}

/// Pass iff the fitted remainder exponent is at least 1.4.
pub fn remainder_exponent_check(fit: &ExpansionFit) -> bool {
    fit.remainder_exponent >= REMAINDER_EXPONENT_THRESHOLD
}

/// Kernel mass `(2πt)^{−d/2} ∫_{d(y,z) > radius} e^{−|z−y|²/2t} λ_M(dz)` outside a geodesic ball.
pub fn tail_mass(grid: &QuadratureGrid, y: &Point, radius: f64, t: f64) -> Result<f64> {
    let spec = grid.spec();
    let d = spec.intrinsic_dim() as f64;
    let mut mass = 0.0;
    for (z, w) in grid.nodes().iter().zip(grid.weights()) {
        if geodesic_distance(spec, y, z)? > radius {
            mass += w * (-chordal_sq(z, y) / (2.0 * t)).exp();
        }
    }
    Ok(mass * (2.0 * PI * t).powf(-d / 2.0))
}

/// Largest candidate `t₀` such that the tail mass outside the ball of radius
/// `r/2` stays below `t^{3/2}` for every candidate `t ≤ t₀`.
pub fn tail_threshold(grid: &QuadratureGrid, y: &Point, candidates: &[f64]) -> Result<Option<f64>> {
    let radius = 0.5 * grid.spec().radius;
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut t0 = None;
    for t in sorted {
        if tail_mass(grid, y, radius, t)? < t.powf(1.5) {
            t0 = Some(t);
        } else {
            break;
        }
    }
    Ok(t0)
}

/// `n` log-spaced times in `[t_min, t_max]`.
pub fn log_spaced(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}
