//! Time-dependent diagonal scalings σ(t) with closed-form derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Point;
use crate::quadrature::adaptive_gauss_kronrod;

/// One diagonal entry `c(t)` of σ(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScalarProfile {
    /// `c(t) = value`
    Constant { value: f64 },
    /// `c(t) = intercept + slope·t`
    Affine { intercept: f64, slope: f64 },
    /// `c(t) = amplitude·exp(rate·t)`
    Exponential { amplitude: f64, rate: f64 },
    /// Piecewise-linear interpolation of `(t, c)` knots, constant outside.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl ScalarProfile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            ScalarProfile::Constant { value } => *value,
            ScalarProfile::Affine { intercept, slope } => intercept + slope * t,
            ScalarProfile::Exponential { amplitude, rate } => amplitude * (rate * t).exp(),
            ScalarProfile::Tabulated { knots } => {
                let (i, frac) = locate(knots, t);
                let c0 = knots[i].1;
                let c1 = knots[(i + 1).min(knots.len() - 1)].1;
                c0 + frac * (c1 - c0)
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            ScalarProfile::Constant { .. } => 0.0,
            ScalarProfile::Affine { slope, .. } => *slope,
            ScalarProfile::Exponential { amplitude, rate } => amplitude * rate * (rate * t).exp(),
            ScalarProfile::Tabulated { knots } => {
                if knots.len() < 2 || t < knots[0].0 || t > knots[knots.len() - 1].0 {
                    return 0.0;
                }
                let (i, _) = locate(knots, t);
                let j = (i + 1).min(knots.len() - 1);
                if i == j {
                    return 0.0;
                }
                (knots[j].1 - knots[i].1) / (knots[j].0 - knots[i].0)
            }
        }
    }

    /// `∫_s^t c(r)⁻² dr`; closed form except for tabulated profiles.
    pub fn inverse_square_integral(&self, s: f64, t: f64) -> f64 {
        match self {
            ScalarProfile::Constant { value } => (t - s) / (value * value),
            ScalarProfile::Affine { intercept, slope } => {
                if *slope == 0.0 {
                    (t - s) / (intercept * intercept)
                } else {
                    (1.0 / (intercept + slope * s) - 1.0 / (intercept + slope * t)) / slope
                }
            }
            ScalarProfile::Exponential { amplitude, rate } => {
                if *rate == 0.0 {
                    (t - s) / (amplitude * amplitude)
                } else {
                    ((-2.0 * rate * s).exp() - (-2.0 * rate * t).exp())
                        / (2.0 * rate * amplitude * amplitude)
                }
            }
            ScalarProfile::Tabulated { .. } => self.inverse_square_integral_numeric(s, t),
        }
    }

    /// Adaptive Gauss–Kronrod evaluation of `∫_s^t c(r)⁻² dr` at 1e-13 tolerance.
    pub fn inverse_square_integral_numeric(&self, s: f64, t: f64) -> f64 {
        let f = |r: f64| self.value(r).powi(-2);
        // Split at knots so every panel is smooth.
        let mut cuts = vec![s];
        if let ScalarProfile::Tabulated { knots } = self {
            cuts.extend(knots.iter().map(|k| k.0).filter(|&k| k > s && k < t));
        }
        cuts.push(t);
        cuts.windows(2)
            .map(|w| adaptive_gauss_kronrod(f, w[0], w[1], 1e-13))
            .sum()
    }

    fn validate(&self) -> Result<()> {
        match self {
            ScalarProfile::Tabulated { knots } => {
                if knots.is_empty() {
                    return Err(Error::InvalidScaling("tabulated profile has no knots".into()));
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidScaling(
                        "tabulated knots must be strictly increasing in t".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn locate(knots: &[(f64, f64)], t: f64) -> (usize, f64) {
    if knots.len() == 1 || t <= knots[0].0 {
        return (0, 0.0);
    }
    let last = knots.len() - 1;
    if t >= knots[last].0 {
        return (last, 0.0);
    }
    let i = knots.partition_point(|k| k.0 <= t) - 1;
    let (t0, _) = knots[i];
    let (t1, _) = knots[i + 1];
    (i, (t - t0) / (t1 - t0))
}

/// The matrix family σ(t): either `c(t)·I` or `diag(c_1(t), …, c_m(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeScaling {
    Scalar { profile: ScalarProfile },
    Diagonal { profiles: Vec<ScalarProfile> },
}

impl TimeScaling {
    pub fn identity() -> Self {
        Self::scalar(ScalarProfile::Constant { value: 1.0 })
    }

    pub fn scalar(profile: ScalarProfile) -> Self {
        TimeScaling::Scalar { profile }
    }

    pub fn constant(c: f64) -> Self {
        Self::scalar(ScalarProfile::Constant { value: c })
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        Self::scalar(ScalarProfile::Affine { intercept, slope })
    }

    pub fn exponential(amplitude: f64, rate: f64) -> Self {
        Self::scalar(ScalarProfile::Exponential { amplitude, rate })
    }

    pub fn diagonal(profiles: Vec<ScalarProfile>) -> Self {
        TimeScaling::Diagonal { profiles }
    }

    /// Checks the dimension against `m` and that `det σ(t) ≠ 0` on sampled
    /// times of `[t_start, t_end]`.
    pub fn validate(&self, ambient_dim: usize, t_start: f64, t_end: f64) -> Result<()> {
        match self {
            TimeScaling::Scalar { profile } => profile.validate()?,
            TimeScaling::Diagonal { profiles } => {
                if profiles.len() != ambient_dim {
                    return Err(Error::InvalidScaling(format!(
                        "diagonal scaling has {} entries, ambient dimension is {ambient_dim}",
                        profiles.len()
                    )));
                }
                for p in profiles {
                    p.validate()?;
                }
            }
        }
        const SAMPLES: usize = 257;
        for k in 0..SAMPLES {
            let t = t_start + (t_end - t_start) * k as f64 / (SAMPLES - 1) as f64;
            let smallest = self.min_abs_entry(ambient_dim, t);
            if !(smallest > 0.0 && smallest.is_finite()) {
                return Err(Error::InvalidScaling(format!("σ({t}) is singular")));
            }
        }
        Ok(())
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, TimeScaling::Scalar { .. })
    }

    pub fn scalar_profile(&self) -> Option<&ScalarProfile> {
        match self {
            TimeScaling::Scalar { profile } => Some(profile),
            TimeScaling::Diagonal { .. } => None,
        }
    }

    /// True when σ does not depend on time.
    pub fn is_time_invariant(&self) -> bool {
        let constant = |p: &ScalarProfile| match p {
            ScalarProfile::Constant { .. } => true,
            ScalarProfile::Affine { slope, .. } => *slope == 0.0,
            ScalarProfile::Exponential { rate, .. } => *rate == 0.0,
            ScalarProfile::Tabulated { knots } => knots.windows(2).all(|w| w[0].1 == w[1].1),
        };
        match self {
            TimeScaling::Scalar { profile } => constant(profile),
            TimeScaling::Diagonal { profiles } => profiles.iter().all(constant),
        }
    }

    /// Diagonal entry `i` of σ(t).
    pub fn entry(&self, i: usize, t: f64) -> f64 {
        match self {
            TimeScaling::Scalar { profile } => profile.value(t),
            TimeScaling::Diagonal { profiles } => profiles[i].value(t),
        }
    }

    /// Diagonal entry `i` of σ′(t).
    pub fn entry_derivative(&self, i: usize, t: f64) -> f64 {
        match self {
            TimeScaling::Scalar { profile } => profile.derivative(t),
            TimeScaling::Diagonal { profiles } => profiles[i].derivative(t),
        }
    }

    /// σ(t)·x; components beyond `m` are left at zero.
    pub fn apply(&self, ambient_dim: usize, t: f64, x: &Point) -> Point {
        let mut out = [0.0; 3];
        for i in 0..ambient_dim {
            out[i] = self.entry(i, t) * x[i];
        }
        out
    }

    /// σ′(t)·x.
    pub fn apply_derivative(&self, ambient_dim: usize, t: f64, x: &Point) -> Point {
        let mut out = [0.0; 3];
        for i in 0..ambient_dim {
            out[i] = self.entry_derivative(i, t) * x[i];
        }
        out
    }

    /// σ(t)⁻¹·y.
    pub fn apply_inverse(&self, ambient_dim: usize, t: f64, y: &Point) -> Point {
        let mut out = [0.0; 3];
        for i in 0..ambient_dim {
            out[i] = y[i] / self.entry(i, t);
        }
        out
    }

    pub fn det(&self, ambient_dim: usize, t: f64) -> f64 {
        (0..ambient_dim).map(|i| self.entry(i, t)).product()
    }

    pub fn max_singular_value(&self, ambient_dim: usize, t: f64) -> f64 {
        (0..ambient_dim).fold(0.0, |m, i| m.max(self.entry(i, t).abs()))
    }

    pub fn min_abs_entry(&self, ambient_dim: usize, t: f64) -> f64 {
        (0..ambient_dim).fold(f64::INFINITY, |m, i| m.min(self.entry(i, t).abs()))
    }
}
