//! Least-squares fits shared by the convergence and asymptotics studies.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Ordinary least-squares line `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence band for the slope (Student t, n − 2 dof); equal to the
    /// slope itself when the fit has no spare degrees of freedom.
    pub slope_ci95: (f64, f64),
    pub residuals: Vec<f64>,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "line fit needs at least two paired samples, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("line fit needs distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let (slope_stderr, slope_ci95) = if x.len() > 2 {
        let dof = n - 2.0;
        let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / dof;
        let se = (s2 / sxx).sqrt();
        let quantile = StudentsT::new(0.0, 1.0, dof)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(f64::NAN);
        (se, (slope - quantile * se, slope + quantile * se))
    } else {
        (0.0, (slope, slope))
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        slope_ci95,
        residuals,
    })
}

/// Slope of `log y` against `log x` over the samples with `y > 0`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    fit_line(&lx, &ly)
}

/// Solution of a weighted least-squares problem together with the 2-norm
/// condition number of the weighted design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub condition: f64,
    pub residual_norm: f64,
}

/// Minimises `Σ_i (w_i (Σ_k A_ik c_k − y_i))²` by SVD.
pub fn weighted_least_squares(
    design: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    max_condition: f64,
) -> Result<LeastSquares> {
    let rows = design.len();
    let cols = design.first().map_or(0, Vec::len);
    if rows != y.len() || rows != weights.len() || rows < cols || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "least squares needs at least {cols} rows with matching lengths"
        )));
    }
    let a = DMatrix::from_fn(rows, cols, |i, k| weights[i] * design[i][k]);
    let b = DVector::from_fn(rows, |i, _| weights[i] * y[i]);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > max_condition {
        return Err(Error::IllConditionedFit(condition));
    }
    let c = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let residual_norm = (&a * &c - &b).norm();
    Ok(LeastSquares {
        coefficients: c.iter().copied().collect(),
        condition,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14 && (f.intercept - 0.5).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-14);
    }

    #[test]
    fn power_law_exponent() {
        let x = [0.1, 0.05, 0.025, 0.0125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        let f = fit_power_law(&x, &y).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
    }

    #[test]
    fn noisy_line_band_contains_truth() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| 1.0 + 0.7 * v + if i % 2 == 0 { 0.05 } else { -0.05 }).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!(f.slope_ci95.0 < 0.7 && 0.7 < f.slope_ci95.1);
    }

    #[test]
    fn weighted_least_squares_recovers_polynomial() {
        let t: Vec<f64> = (1..=8).map(|k| 1e-3 * k as f64).collect();
        let design: Vec<Vec<f64>> = t.iter().map(|&v| vec![1.0, v, v.powf(1.5)]).collect();
        let y: Vec<f64> = t.iter().map(|&v| 2.0 - 0.3 * v + 5.0 * v.powf(1.5)).collect();
        let w: Vec<f64> = t.iter().map(|v| 1.0 / v).collect();
        let ls = weighted_least_squares(&design, &y, &w, 1e8).unwrap();
        assert!((ls.coefficients[0] - 2.0).abs() < 1e-10);
        assert!((ls.coefficients[1] + 0.3).abs() < 1e-7);
        assert!(matches!(
            weighted_least_squares(&design, &y, &w, 10.0),
            Err(Error::IllConditionedFit(_))
        ));
    }
}
