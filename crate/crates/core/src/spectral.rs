//! Exact backward propagator `U(s,t) = exp(∫_s^t A_r dr)` for scalar scalings
//! `σ(t) = c(t)·I` on the centered circle and sphere.
//!
//! Here `A_t = −Δ_M / (2c(t)²)`: the generators commute and act diagonally on
//! the Laplace–Beltrami eigenbasis, so `U(s,t)` multiplies the coefficient of
//! eigenvalue `λ` by `exp(−λ I(s,t)/2)` with `I(s,t) = ∫_s^t c(r)⁻² dr`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{
    check_len, dot, eigenfunction, eigenfunction_sup, eigenvalue, norm, EigenIndex, GridFunction,
    ManifoldKind, ManifoldSpec, Point, QuadratureGrid, Resolution,
};
use crate::scaling::{ScalarProfile, TimeScaling};

/// A band-limited function: coefficients on the orthonormal eigenbasis up to `cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFunction {
    spec: ManifoldSpec,
    cap: usize,
    indices: Vec<EigenIndex>,
    coefficients: Vec<f64>,
}

impl SpectralFunction {
    pub fn zeros(spec: ManifoldSpec, cap: usize) -> Self {
        let indices = spec.eigen_indices(cap);
        let coefficients = vec![0.0; indices.len()];
        Self {
            spec,
            cap,
            indices,
            coefficients,
        }
    }

    pub fn from_coefficients(spec: ManifoldSpec, cap: usize, coefficients: Vec<f64>) -> Result<Self> {
        let mut f = Self::zeros(spec, cap);
        check_len(f.indices.len(), coefficients.len())?;
        f.coefficients = coefficients;
        Ok(f)
    }

    /// Quadrature projection of grid values onto the grid's eigenbasis.
    pub fn from_grid(grid: &QuadratureGrid, f: &GridFunction) -> Result<Self> {
        f.check_grid(grid)?;
        let mut out = Self::zeros(*grid.spec(), grid.cap());
        for (c, &idx) in out.coefficients.iter_mut().zip(&out.indices) {
            *c = grid
                .nodes()
                .iter()
                .zip(grid.weights())
                .zip(&f.values)
                .map(|((x, w), v)| w * v * eigenfunction(&out.spec, idx, x))
                .sum();
        }
        Ok(out)
    }

    /// Projection of `f` using an internal grid that is exact for degree `cap`.
    pub fn from_fn(spec: ManifoldSpec, cap: usize, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let resolution = match spec.kind {
            ManifoldKind::Circle => Resolution::Circle {
                n: 4 * cap + 8,
            },
            ManifoldKind::Sphere => Resolution::Sphere {
                n_colat: (2 * cap + 4).max(8),
                n_lon: 4 * cap + 8,
            },
        };
        let grid = QuadratureGrid::build_with_cap(spec, resolution, cap)?;
        Self::from_grid(&grid, &GridFunction::from_fn(&grid, f))
    }

    /// `amplitude·cos(kθ)` or `amplitude·sin(kθ)` on a circle.
    pub fn circle_mode(spec: ManifoldSpec, cap: usize, idx: EigenIndex, amplitude: f64) -> Result<Self> {
        let mut f = Self::zeros(spec, cap);
        let pos = f
            .indices
            .iter()
            .position(|&i| i == idx)
            .ok_or_else(|| Error::InvalidArgument(format!("{idx:?} is outside cap {cap}")))?;
        // Undo the orthonormalisation so the mode has the requested amplitude.
        let scale = match idx {
            EigenIndex::Circle { k: 0, .. } => (2.0 * std::f64::consts::PI * spec.radius).sqrt(),
            EigenIndex::Circle { .. } => (std::f64::consts::PI * spec.radius).sqrt(),
            EigenIndex::Sphere { .. } => spec.radius,
        };
        f.coefficients[pos] = amplitude * scale;
        Ok(f)
    }

    pub fn constant(spec: ManifoldSpec, cap: usize, value: f64) -> Self {
        let mut f = Self::zeros(spec, cap);
        f.coefficients[0] = value * spec.volume().sqrt();
        f
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn indices(&self) -> &[EigenIndex] {
        &self.indices
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn evaluate(&self, p: &Point) -> f64 {
        self.indices
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(&idx, c)| c * eigenfunction(&self.spec, idx, p))
            .sum()
    }

    pub fn to_grid(&self, grid: &QuadratureGrid) -> GridFunction {
        GridFunction::from_fn(grid, |p| self.evaluate(p))
    }

    /// `Σ |c_k| ‖e_k‖_∞`, an upper bound for the sup-norm.
    pub fn sup_norm_bound(&self) -> f64 {
        self.indices
            .iter()
            .zip(&self.coefficients)
            .map(|(&idx, c)| c.abs() * eigenfunction_sup(&self.spec, idx))
            .sum()
    }

    /// Coefficient-wise map `c_k ↦ m(λ_k) c_k`.
    pub fn map_spectrum(&self, multiplier: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for (c, &idx) in out.coefficients.iter_mut().zip(&self.indices) {
            *c *= multiplier(eigenvalue(&self.spec, idx));
        }
        out
    }

    /// Applies the (nonnegative) Laplace–Beltrami operator.
    pub fn laplacian(&self) -> Self {
        self.map_spectrum(|lambda| lambda)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_len(self.coefficients.len(), other.coefficients.len())?;
        let mut out = self.clone();
        for (a, b) in out.coefficients.iter_mut().zip(&other.coefficients) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn add_scaled(&self, other: &Self, factor: f64) -> Result<Self> {
        check_len(self.coefficients.len(), other.coefficients.len())?;
        let mut out = self.clone();
        for (a, b) in out.coefficients.iter_mut().zip(&other.coefficients) {
            *a += factor * b;
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map_spectrum(|_| factor)
    }

    /// Largest eigenvalue with a nonzero coefficient.
    pub fn max_active_eigenvalue(&self) -> f64 {
        self.indices
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(&idx, _)| eigenvalue(&self.spec, idx))
            .fold(0.0, f64::max)
    }

    pub fn max_coefficient_distance(&self, other: &Self) -> Result<f64> {
        check_len(self.coefficients.len(), other.coefficients.len())?;
        Ok(self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// Generator family `A_t = −Δ_M / (2c(t)²)` for `σ(t) = c(t)·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGeneratorModel {
    spec: ManifoldSpec,
    profile: ScalarProfile,
}

impl ScalarGeneratorModel {
    pub fn new(spec: ManifoldSpec, scaling: &TimeScaling) -> Result<Self> {
        let profile = scaling.scalar_profile().ok_or(Error::UnsupportedScaling)?;
        Ok(Self {
            spec,
            profile: profile.clone(),
        })
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    /// `I(s,t) = ∫_s^t c(r)⁻² dr`.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        self.profile.inverse_square_integral(s, t)
    }

    /// `A_t f`, the drift-free generator of the scaled diffusion.
    pub fn generator_apply(&self, t: f64, f: &SpectralFunction) -> SpectralFunction {
        let c = self.profile.value(t);
        f.map_spectrum(|lambda| -lambda / (2.0 * c * c))
    }

    /// `U(s,t) f`, multiplying each coefficient by `exp(−λ I(s,t)/2)`.
    pub fn propagate(&self, s: f64, t: f64, f: &SpectralFunction) -> Result<SpectralFunction> {
        if t < s {
            return Err(Error::InvalidTimeOrder { s, t });
        }
        if s == t {
            return Ok(f.clone());
        }
        let integral = self.integral(s, t);
        Ok(f.map_spectrum(|lambda| (-0.5 * lambda * integral).exp()))
    }

    /// `U(s,t)` applied to grid values through the grid's eigenbasis projection.
    pub fn propagate_grid(
        &self,
        grid: &QuadratureGrid,
        s: f64,
        t: f64,
        f: &GridFunction,
    ) -> Result<GridFunction> {
        let spectral = SpectralFunction::from_grid(grid, f)?;
        Ok(self.propagate(s, t, &spectral)?.to_grid(grid))
    }

    /// Max coefficient deviation between `U(s,τ)U(τ,t)f` and `U(s,t)f`.
    pub fn propagator_law_check(&self, s: f64, tau: f64, t: f64, f: &SpectralFunction) -> Result<f64> {
        let composed = self.propagate(s, tau, &self.propagate(tau, t, f)?)?;
        let direct = self.propagate(s, t, f)?;
        composed.max_coefficient_distance(&direct)
    }

    /// Residual of `∂_s u = −A_s u` by central differences, plus the terminal
    /// condition `u(s) → f` as `s ↑ t`.
    pub fn final_value_residual(
        &self,
        s: f64,
        t: f64,
        f: &SpectralFunction,
        delta: f64,
    ) -> Result<FinalValueReport> {
        if !(delta > 0.0 && s + delta <= t) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < δ and s + δ ≤ t (s = {s}, t = {t}, δ = {delta})"
            )));
        }
        let residual_at = |d: f64| -> Result<f64> {
            let ahead = self.propagate(s + d, t, f)?;
            let behind = self.propagate(s - d, t, f)?;
            let derivative = ahead.sub(&behind)?.scale(1.0 / (2.0 * d));
            let generator = self.generator_apply(s, &self.propagate(s, t, f)?);
            Ok(derivative.add_scaled(&generator, 1.0)?.sup_norm_bound())
        };
        let residual = residual_at(delta)?;
        let residual_half = residual_at(0.5 * delta)?;
        let terminal = self.propagate(t - delta, t, f)?.sub(f)?.sup_norm_bound();
        let terminal_bound =
            f.max_active_eigenvalue() * self.integral(t - delta, t) * f.sup_norm_bound();
        Ok(FinalValueReport {
            delta,
            residual,
            residual_half_delta: residual_half,
            halving_ratio: residual / residual_half,
            constant_estimate: residual / (delta * delta),
            terminal_deviation: terminal,
            terminal_bound,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalValueReport {
    pub delta: f64,
    /// Sup-norm bound of `(U(s+δ,t)f − U(s−δ,t)f)/2δ + A_s U(s,t)f`.
    pub residual: f64,
    pub residual_half_delta: f64,
    pub halving_ratio: f64,
    /// `residual / δ²`.
    pub constant_estimate: f64,
    /// Sup-norm bound of `U(t−δ,t)f − f`.
    pub terminal_deviation: f64,
    /// `λ_max · I(t−δ,t) · ‖f‖`.
    pub terminal_bound: f64,
}

/// `max_x |Pr_{T_{σ(t)x} M_t} σ′(t)x|` over the sample points.
///
/// The tangent space of `M_t = σ(t)M` at `σ(t)x` is spanned by `σ(t)` applied
/// to the tangent vectors of `M` at `x`.
pub fn drift_vanishes(
    spec: &ManifoldSpec,
    scaling: &TimeScaling,
    t: f64,
    samples: &[Point],
) -> Result<f64> {
    let m = spec.ambient_dim();
    let mut worst: f64 = 0.0;
    for x in samples {
        spec.check_point(x)?;
        let v = scaling.apply_derivative(m, t, x);
        let frame: Vec<Point> = tangent_frame(spec, x)
            .into_iter()
            .map(|e| scaling.apply(m, t, &e))
            .collect();
        worst = worst.max(norm(&project_onto_span(&frame, &v)));
    }
    Ok(worst)
}

fn tangent_frame(spec: &ManifoldSpec, x: &Point) -> Vec<Point> {
    match spec.kind {
        ManifoldKind::Circle => {
            let r = norm(x);
            vec![[-x[1] / r, x[0] / r, 0.0]]
        }
        ManifoldKind::Sphere => {
            // Any orthonormal pair orthogonal to x.
            let r = norm(x);
            let n = [x[0] / r, x[1] / r, x[2] / r];
            let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let c = dot(&helper, &n);
            let mut e1 = [helper[0] - c * n[0], helper[1] - c * n[1], helper[2] - c * n[2]];
            let l = norm(&e1);
            e1 = [e1[0] / l, e1[1] / l, e1[2] / l];
            let e2 = [
                n[1] * e1[2] - n[2] * e1[1],
                n[2] * e1[0] - n[0] * e1[2],
                n[0] * e1[1] - n[1] * e1[0],
            ];
            vec![e1, e2]
        }
    }
}

/// Orthogonal projection of `v` onto the span of `frame` (Gram–Schmidt).
fn project_onto_span(frame: &[Point], v: &Point) -> Point {
    let mut basis: Vec<Point> = Vec::with_capacity(frame.len());
    for e in frame {
        let mut u = *e;
        for b in &basis {
            let c = dot(&u, b);
            for k in 0..3 {
                u[k] -= c * b[k];
            }
        }
        let l = norm(&u);
        basis.push([u[0] / l, u[1] / l, u[2] / l]);
    }
    let mut out = [0.0; 3];
    for b in &basis {
        let c = dot(v, b);
        for k in 0..3 {
            out[k] += c * b[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Parity;
    use proptest::prelude::*;

    fn circle_spec() -> ManifoldSpec {
        ManifoldSpec::circle(1.0).unwrap()
    }

    fn cos_mode(k: usize) -> SpectralFunction {
        SpectralFunction::circle_mode(circle_spec(), 8, EigenIndex::Circle { k, parity: Parity::Cos }, 1.0)
            .unwrap()
    }

    fn factor(f: &SpectralFunction, g: &SpectralFunction) -> f64 {
        let p = circle_spec().circle_point(0.0);
        g.evaluate(&p) / f.evaluate(&p)
    }

    #[test]
    fn circle_mode_has_requested_amplitude() {
        let f = cos_mode(2);
        let spec = circle_spec();
        for theta in [0.0, 0.4, 2.0] {
            assert!((f.evaluate(&spec.circle_point(theta)) - (2.0 * theta).cos()).abs() < 1e-14);
        }
        let c = SpectralFunction::constant(spec, 4, 3.0);
        assert!((c.evaluate(&spec.circle_point(1.0)) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn low_degree_projection_on_sphere() {
        let spec = ManifoldSpec::sphere(2.0).unwrap();
        for cap in 0..3 {
            let f = SpectralFunction::from_fn(spec, cap, |p| 1.5 + p[2] * (cap as f64).min(1.0)).unwrap();
            let p = spec.sphere_point(0.7, 2.1);
            assert!((f.evaluate(&p) - 1.5 - p[2] * (cap as f64).min(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_round_trip_is_identity() {
        let spec = ManifoldSpec::sphere(1.3).unwrap();
        let grid = QuadratureGrid::build(spec, Resolution::Sphere { n_colat: 16, n_lon: 32 }).unwrap();
        let coeffs: Vec<f64> = (0..spec.eigen_indices(grid.cap()).len())
            .map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0)
            .collect();
        let f = SpectralFunction::from_coefficients(spec, grid.cap(), coeffs).unwrap();
        let back = SpectralFunction::from_grid(&grid, &f.to_grid(&grid)).unwrap();
        assert!(back.max_coefficient_distance(&f).unwrap() < 1e-10);
    }

    #[test]
    fn generator_examples() {
        let spec = circle_spec();
        let unit = ScalarGeneratorModel::new(spec, &TimeScaling::identity()).unwrap();
        let f = cos_mode(1);
        assert!((factor(&f, &unit.generator_apply(0.3, &f)) + 0.5).abs() < 1e-14);
        let c = SpectralFunction::constant(spec, 8, 1.0);
        assert_eq!(unit.generator_apply(0.0, &c).sup_norm_bound(), 0.0);
        let affine = ScalarGeneratorModel::new(spec, &TimeScaling::affine(1.0, 1.0)).unwrap();
        let f2 = cos_mode(2);
        assert!((factor(&f2, &affine.generator_apply(1.0, &f2)) + 0.5).abs() < 1e-14);
        let diag = TimeScaling::diagonal(vec![
            ScalarProfile::Constant { value: 1.0 },
            ScalarProfile::Constant { value: 2.0 },
        ]);
        assert_eq!(ScalarGeneratorModel::new(spec, &diag), Err(Error::UnsupportedScaling));
    }

    #[test]
    fn propagate_examples() {
        let spec = circle_spec();
        let f = cos_mode(1);
        let unit = ScalarGeneratorModel::new(spec, &TimeScaling::identity()).unwrap();
        assert_eq!(unit.propagate(0.4, 0.4, &f).unwrap(), f);
        let g = unit.propagate(0.0, 1.0, &f).unwrap();
        assert!((factor(&f, &g) - 0.606_530_659_7).abs() < 1e-10);
        let affine = ScalarGeneratorModel::new(spec, &TimeScaling::affine(1.0, 1.0)).unwrap();
        let g = affine.propagate(0.0, 1.0, &f).unwrap();
        assert!((factor(&f, &g) - 0.778_800_783_1).abs() < 1e-10);
        assert!(matches!(unit.propagate(1.0, 0.5, &f), Err(Error::InvalidTimeOrder { .. })));
    }

    #[test]
    fn propagator_law_and_commutation() {
        let spec = circle_spec();
        let f = SpectralFunction::from_coefficients(spec, 4, (0..9).map(|i| 1.0 / (1.0 + i as f64)).collect())
            .unwrap();
        let unit = ScalarGeneratorModel::new(spec, &TimeScaling::identity()).unwrap();
        assert_eq!(unit.propagator_law_check(0.0, 0.0, 1.0, &f).unwrap(), 0.0);
        assert_eq!(unit.propagator_law_check(0.0, 1.0, 1.0, &f).unwrap(), 0.0);
        assert!(unit.propagator_law_check(0.0, 0.3, 1.0, &f).unwrap() <= 1e-13);
        let a = unit.propagate(0.0, 0.3, &unit.propagate(0.3, 1.0, &f).unwrap()).unwrap();
        let b = unit.propagate(0.3, 1.0, &unit.propagate(0.0, 0.3, &f).unwrap()).unwrap();
        assert!(a.max_coefficient_distance(&b).unwrap() <= 1e-15);
    }

    #[test]
    fn drift_vanishes_for_scalar_scaling() {
        let spec = circle_spec();
        let samples: Vec<Point> = (0..64).map(|j| spec.circle_point(0.1 * j as f64)).collect();
        assert_eq!(drift_vanishes(&spec, &TimeScaling::constant(3.0), 0.5, &samples).unwrap(), 0.0);
        let d = drift_vanishes(&spec, &TimeScaling::affine(1.0, 1.0), 0.5, &samples).unwrap();
        assert!(d <= 1e-12);
        let sphere = ManifoldSpec::sphere(1.0).unwrap();
        let d = drift_vanishes(&sphere, &TimeScaling::exponential(1.0, 1.0), 0.0, &[[0.0, 0.0, 1.0]]).unwrap();
        assert!(d <= 1e-15);
        // A genuinely anisotropic σ has a tangential drift component.
        let diag = TimeScaling::diagonal(vec![
            ScalarProfile::Affine { intercept: 1.0, slope: 1.0 },
            ScalarProfile::Constant { value: 1.0 },
        ]);
        assert!(drift_vanishes(&spec, &diag, 0.5, &samples).unwrap() > 0.1);
    }

    #[test]
    fn final_value_problem_residual() {
        let spec = circle_spec();
        let unit = ScalarGeneratorModel::new(spec, &TimeScaling::identity()).unwrap();
        let c = SpectralFunction::constant(spec, 8, 2.0);
        assert_eq!(unit.final_value_residual(0.5, 1.0, &c, 1e-3).unwrap().residual, 0.0);
        let r = unit.final_value_residual(0.5, 1.0, &cos_mode(1), 1e-3).unwrap();
        assert!(r.residual <= 1e-6, "{r:?}");
        assert!((r.halving_ratio - 4.0).abs() <= 0.4, "{r:?}");
        assert!(r.terminal_deviation <= r.terminal_bound);
    }

    #[test]
    fn left_derivative_recovers_generator() {
        let spec = circle_spec();
        let model = ScalarGeneratorModel::new(spec, &TimeScaling::affine(1.0, 1.0)).unwrap();
        let f = cos_mode(2);
        let t = 0.7;
        let defect = |h: f64| {
            let diff = model.propagate(t - h, t, &f).unwrap().sub(&f).unwrap().scale(1.0 / h);
            diff.sub(&model.generator_apply(t, &f)).unwrap().sup_norm_bound()
        };
        let d = [defect(1e-2), defect(5e-3), defect(2.5e-3)];
        assert!((d[0] / d[1] - 2.0).abs() < 0.2 && (d[1] / d[2] - 2.0).abs() < 0.2, "{d:?}");
    }

    proptest! {
        #[test]
        fn integral_is_additive_and_increasing(
            s in 0.0f64..0.4, mid in 0.4f64..0.6, t in 0.6f64..1.0, rate in -1.0f64..1.0,
        ) {
            for scaling in [TimeScaling::exponential(1.2, rate), TimeScaling::affine(1.0, rate * 0.5)] {
                let model = ScalarGeneratorModel::new(circle_spec(), &scaling).unwrap();
                prop_assert_eq!(model.integral(s, s), 0.0);
                let sum = model.integral(s, mid) + model.integral(mid, t);
                prop_assert!((sum - model.integral(s, t)).abs() < 1e-12);
                prop_assert!(model.integral(s, mid) < model.integral(s, t));
            }
        }

        #[test]
        fn propagator_law_random_tau(tau in 0.0f64..1.0) {
            let spec = circle_spec();
            let f = SpectralFunction::from_coefficients(spec, 6, (0..13).map(|i| (i as f64).sin()).collect()).unwrap();
            let model = ScalarGeneratorModel::new(spec, &TimeScaling::exponential(1.0, 1.0)).unwrap();
            prop_assert!(model.propagator_law_check(0.0, tau, 1.0, &f).unwrap() <= 1e-12);
        }

        #[test]
        fn multipliers_contract(s in 0.0f64..0.5, t in 0.5f64..1.0) {
            let spec = ManifoldSpec::sphere(0.8).unwrap();
            let model = ScalarGeneratorModel::new(spec, &TimeScaling::affine(0.5, 1.0)).unwrap();
            let f = SpectralFunction::from_coefficients(spec, 3, vec![1.0; 16]).unwrap();
            let g = model.propagate(s, t, &f).unwrap();
            for (a, b) in g.coefficients().iter().zip(f.coefficients()) {
                prop_assert!(*a > 0.0 && a <= b);
            }
            prop_assert!(g.sup_norm_bound() <= f.sup_norm_bound());
        }
    }
}
