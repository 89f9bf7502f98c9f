//! Chernoff products `Q_{t0,t1} Q_{t1,t2} ⋯ Q_{t(n-1),tn}` over partitions and
//! their convergence to the backward propagator.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_power_law, LineFit};
use crate::kernel::{assemble_step_operator, KernelOperator};
use crate::manifold::{GridFunction, QuadratureGrid};
use crate::scaling::TimeScaling;
use crate::spectral::{ScalarGeneratorModel, SpectralFunction};

/// Strictly increasing times `t0 < t1 < … < tn`, `n ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidPartition("need at least two times".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPartition(
                "times must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Number of steps `n`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn mesh(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Index of a partition point equal to `t` up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * (self.end() - self.start()).abs().max(1.0);
        self.times.iter().position(|&p| (p - t).abs() <= tol)
    }
}

/// `t_j = s + j(t − s)/n`.
pub fn uniform_partition(s: f64, t: f64, n: usize) -> Result<Partition> {
    if n == 0 || !(s < t) {
        return Err(Error::InvalidPartition(format!(
            "uniform partition needs n >= 1 and s < t (n = {n}, s = {s}, t = {t})"
        )));
    }
    let mut times: Vec<f64> = (0..=n).map(|j| s + j as f64 * (t - s) / n as f64).collect();
    times[n] = t;
    Partition::new(times)
}

/// Step operators `Q_{t_j, t_{j+1}}` of a partition; identical operators are
/// shared when σ is time-invariant and step lengths agree.
pub fn step_operators(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    partition: &Partition,
) -> Result<Vec<Arc<KernelOperator>>> {
    let reuse = scaling.is_time_invariant();
    let mut cache: Vec<(f64, Arc<KernelOperator>)> = Vec::new();
    let mut out = Vec::with_capacity(partition.steps());
    for w in partition.times().windows(2) {
        let h = w[1] - w[0];
        if reuse {
            if let Some((_, op)) = cache.iter().find(|(hc, _)| (hc - h).abs() <= 1e-13 * h) {
                out.push(Arc::clone(op));
                continue;
            }
        }
        let op = Arc::new(assemble_step_operator(grid, scaling, w[0], w[1])?);
        if reuse {
            cache.push((h, Arc::clone(&op)));
        }
        out.push(op);
    }
    Ok(out)
}

/// `Q_{t0,t1} ⋯ Q_{t(n-1),tn} f`: the last-time operator acts on `f` first.
pub fn apply_product(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    partition: &Partition,
    f: &GridFunction,
) -> Result<GridFunction> {
    f.check_grid(grid)?;
    let mut v = f.clone();
    if scaling.is_time_invariant() {
        for op in step_operators(grid, scaling, partition)?.iter().rev() {
            v = op.apply(&v)?;
        }
    } else {
        for w in partition.times().windows(2).rev() {
            v = assemble_step_operator(grid, scaling, w[0], w[1])?.apply(&v)?;
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub mesh: f64,
    pub sup_error: f64,
}

/// Sup-norm errors against a reference and the fitted order `error ∝ mesh^p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Log-log regression of error on mesh; absent when fewer than two errors are positive.
    pub fit: Option<LineFit>,
    /// Mesh of the reference product for self-convergence studies.
    pub reference_mesh: Option<f64>,
    /// Order fitted to `error = C (mesh^p − reference_mesh^p)`, which removes the
    /// bias of comparing against a finite-step reference.
    pub corrected_order: Option<f64>,
}

impl ConvergenceTable {
    fn from_rows(mut rows: Vec<ConvergenceRow>) -> Self {
        rows.sort_by_key(|r| r.n);
        let mesh: Vec<f64> = rows.iter().map(|r| r.mesh).collect();
        let err: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
        let fit = fit_power_law(&mesh, &err).ok();
        Self {
            rows,
            fit,
            reference_mesh: None,
            corrected_order: None,
        }
    }

    fn with_reference_mesh(mut self, reference_mesh: f64) -> Self {
        self.reference_mesh = Some(reference_mesh);
        self.corrected_order = corrected_order(&self.rows, reference_mesh);
        self
    }

    /// Fitted order `p` (reference-corrected for self-convergence), or NaN.
    pub fn order(&self) -> f64 {
        self.corrected_order
            .or_else(|| self.fit.as_ref().map(|f| f.slope))
            .unwrap_or(f64::NAN)
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error)
    }
}

/// Least-squares `p` for `log e = log C + log(mesh^p − ref^p)`, golden section on `[0.05, 4]`.
fn corrected_order(rows: &[ConvergenceRow], reference_mesh: f64) -> Option<f64> {
    let samples: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.sup_error > 0.0 && r.mesh > reference_mesh)
        .map(|r| (r.mesh, r.sup_error.ln()))
        .collect();
    if samples.len() < 2 {
        return None;
    }
    let sse = |p: f64| {
        let shifted: Vec<f64> = samples
            .iter()
            .map(|(m, le)| le - (m.powf(p) - reference_mesh.powf(p)).ln())
            .collect();
        let log_c = shifted.iter().sum::<f64>() / shifted.len() as f64;
        shifted.iter().map(|v| (v - log_c).powi(2)).sum::<f64>()
    };
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.05, 4.0);
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    for _ in 0..200 {
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - golden * (b - a);
        d = a + golden * (b - a);
    }
    Some(0.5 * (a + b))
}

fn check_n_list(n_list: &[usize]) -> Result<()> {
    if n_list.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "convergence study needs at least 3 partition sizes, got {}",
            n_list.len()
        )));
    }
    if n_list[0] == 0 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "partition sizes must be positive and ascending".into(),
        ));
    }
    Ok(())
}

pub fn convergence_study(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    t: f64,
    f: &GridFunction,
    n_list: &[usize],
    reference: &GridFunction,
) -> Result<ConvergenceTable> {
    check_n_list(n_list)?;
    reference.check_grid(grid)?;
    let rows = n_list
        .par_iter()
        .map(|&n| {
            let partition = uniform_partition(s, t, n)?;
            let product = apply_product(grid, scaling, &partition, f)?;
            Ok(ConvergenceRow {
                n,
                mesh: partition.mesh(),
                sup_error: product.sup_distance(reference)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable::from_rows(rows))
}

/// Convergence against the product at `2·max(n_list)` steps.
pub fn self_convergence_study(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    t: f64,
    f: &GridFunction,
    n_list: &[usize],
) -> Result<ConvergenceTable> {
    check_n_list(n_list)?;
    let (first, last) = (n_list[0], n_list[n_list.len() - 1]);
    if last < 4 * first {
        return Err(Error::InvalidArgument(format!(
            "self-convergence needs the largest n ({last}) to be at least 4x the smallest ({first})"
        )));
    }
    let reference_partition = uniform_partition(s, t, 2 * last)?;
    let reference = apply_product(grid, scaling, &reference_partition, f)?;
    Ok(convergence_study(grid, scaling, s, t, f, n_list, &reference)?
        .with_reference_mesh(reference_partition.mesh()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDefect {
    pub h: f64,
    pub defect: f64,
}

/// Defects `‖(Q_{t−h,t} f − f)/h − A_t f‖_∞` and the fitted exponent in `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConsistency {
    pub t: f64,
    pub rows: Vec<GeneratorDefect>,
    pub fit: Option<LineFit>,
}

impl GeneratorConsistency {
    pub fn exponent(&self) -> f64 {
        self.fit.as_ref().map_or(f64::NAN, |f| f.slope)
    }

    /// Defects shrink along the (descending) `h` list.
    pub fn decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].defect < w[0].defect)
    }
}

pub fn generator_consistency_check(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    t: f64,
    f: &SpectralFunction,
    h_list: &[f64],
) -> Result<GeneratorConsistency> {
    if h_list.is_empty() || h_list.windows(2).any(|w| w[1] >= w[0]) || h_list[0] <= 0.0 {
        return Err(Error::InvalidArgument("h list must be positive and descending".into()));
    }
    let model = ScalarGeneratorModel::new(*grid.spec(), scaling)?;
    let f_grid = f.to_grid(grid);
    let generator = model.generator_apply(t, f).to_grid(grid);
    let rows = h_list
        .iter()
        .map(|&h| {
            let qf = assemble_step_operator(grid, scaling, t - h, t)?.apply(&f_grid)?;
            let defect = qf
                .values
                .iter()
                .zip(&f_grid.values)
                .zip(&generator.values)
                .map(|((q, v), a)| ((q - v) / h - a).abs())
                .fold(0.0, f64::max);
            Ok(GeneratorDefect { h, defect })
        })
        .collect::<Result<Vec<_>>>()?;
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.defect).collect();
    let fit = fit_power_law(&hs, &ds).ok();
    Ok(GeneratorConsistency { t, rows, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{ManifoldSpec, Parity, Resolution};
    use crate::scaling::ScalarProfile;
    use crate::EigenIndex;

    fn circle(n: usize) -> QuadratureGrid {
        QuadratureGrid::build(ManifoldSpec::circle(1.0).unwrap(), Resolution::Circle { n }).unwrap()
    }

    fn cos_theta(g: &QuadratureGrid) -> GridFunction {
        GridFunction::from_fn(g, |p| ManifoldSpec::angle(p).cos())
    }

    #[test]
    fn uniform_partition_examples() {
        assert_eq!(uniform_partition(0.0, 1.0, 1).unwrap().times(), &[0.0, 1.0]);
        assert_eq!(
            uniform_partition(0.0, 1.0, 4).unwrap().times(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(uniform_partition(0.5, 1.5, 2).unwrap().mesh(), 0.5);
        assert!(matches!(uniform_partition(0.0, 1.0, 0), Err(Error::InvalidPartition(_))));
        assert!(matches!(uniform_partition(1.0, 1.0, 3), Err(Error::InvalidPartition(_))));
        assert!(Partition::new(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn product_preserves_constants_and_contracts() {
        let g = circle(512);
        for scaling in [TimeScaling::identity(), TimeScaling::affine(1.0, 1.0)] {
            let p = uniform_partition(0.0, 1.0, 16).unwrap();
            let c = apply_product(&g, &scaling, &p, &GridFunction::constant(&g, 2.5)).unwrap();
            assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
            let f = GridFunction::from_fn(&g, |x| (3.0 * ManifoldSpec::angle(x)).sin() + x[0]);
            assert!(apply_product(&g, &scaling, &p, &f).unwrap().sup_norm() <= f.sup_norm());
        }
    }

    #[test]
    fn single_step_product_matches_operator() {
        let g = circle(64);
        let s = TimeScaling::exponential(1.0, 0.3);
        let f = cos_theta(&g);
        let p = uniform_partition(0.2, 0.7, 1).unwrap();
        let a = apply_product(&g, &s, &p, &f).unwrap();
        let b = assemble_step_operator(&g, &s, 0.2, 0.7).unwrap().apply(&f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn product_approaches_heat_semigroup() {
        let g = circle(512);
        let f = cos_theta(&g);
        let p = uniform_partition(0.0, 1.0, 128).unwrap();
        let v = apply_product(&g, &TimeScaling::identity(), &p, &f).unwrap();
        let factor = (-0.5f64).exp();
        let err = f.values.iter().zip(&v.values).map(|(a, b)| (factor * a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-2, "{err}");
    }

    /// Reversing the composition converges to a different object when σ is
    /// anisotropic and time dependent.
    #[test]
    fn composition_order_is_distinguishable() {
        let g = circle(256);
        let scaling = TimeScaling::diagonal(vec![
            ScalarProfile::Affine { intercept: 1.0, slope: 1.0 },
            ScalarProfile::Constant { value: 1.0 },
        ]);
        let p = uniform_partition(0.0, 1.0, 8).unwrap();
        let f = GridFunction::from_fn(&g, |x| (2.0 * ManifoldSpec::angle(x)).cos() + x[1]);
        let ordered = apply_product(&g, &scaling, &p, &f).unwrap();
        let mut reversed = f.clone();
        for w in p.times().windows(2) {
            reversed = assemble_step_operator(&g, &scaling, w[0], w[1]).unwrap().apply(&reversed).unwrap();
        }
        let mut manual = f.clone();
        for w in p.times().windows(2).rev() {
            manual = assemble_step_operator(&g, &scaling, w[0], w[1]).unwrap().apply(&manual).unwrap();
        }
        assert_eq!(ordered, manual);
        assert!(ordered.sup_distance(&reversed).unwrap() > 1e-3);
    }

    #[test]
    fn studies_against_self_are_exact() {
        let g = circle(128);
        let f = cos_theta(&g);
        let p = uniform_partition(0.0, 1.0, 16).unwrap();
        let reference = apply_product(&g, &TimeScaling::identity(), &p, &f).unwrap();
        let t = convergence_study(&g, &TimeScaling::identity(), 0.0, 1.0, &f, &[4, 8, 16], &reference).unwrap();
        assert_eq!(t.rows[2].sup_error, 0.0);
        let c = GridFunction::constant(&g, 1.0);
        let t = self_convergence_study(&g, &TimeScaling::identity(), 0.0, 1.0, &c, &[4, 8, 16]).unwrap();
        assert!(t.rows.iter().all(|r| r.sup_error < 1e-12));
        assert!(convergence_study(&g, &TimeScaling::identity(), 0.0, 1.0, &f, &[4, 8], &reference).is_err());
        assert!(self_convergence_study(&g, &TimeScaling::identity(), 0.0, 1.0, &f, &[4, 8, 12]).is_err());
    }

    #[test]
    fn self_convergence_diagonal_scaling_decreases() {
        let g = circle(512);
        let scaling = TimeScaling::diagonal(vec![
            ScalarProfile::Affine { intercept: 1.0, slope: 1.0 },
            ScalarProfile::Constant { value: 1.0 },
        ]);
        let t = self_convergence_study(&g, &scaling, 0.0, 1.0, &cos_theta(&g), &[4, 8, 16]).unwrap();
        assert!(t.strictly_decreasing(), "{t:?}");
    }

    #[test]
    fn self_and_reference_orders_agree() {
        let g = circle(512);
        let f = cos_theta(&g);
        let n_list = [8, 16, 32, 64];
        let factor = (-0.5f64).exp();
        let reference = GridFunction::new(f.values.iter().map(|v| factor * v).collect());
        let a = convergence_study(&g, &TimeScaling::identity(), 0.0, 1.0, &f, &n_list, &reference).unwrap();
        let b = self_convergence_study(&g, &TimeScaling::identity(), 0.0, 1.0, &f, &n_list).unwrap();
        assert!((a.order() - b.order()).abs() <= 0.2, "{} vs {}", a.order(), b.order());
    }

    #[test]
    fn generator_consistency_examples() {
        let g = circle(1024);
        let spec = *g.spec();
        let cap = 8;
        let one = SpectralFunction::constant(spec, cap, 1.0);
        let r = generator_consistency_check(&g, &TimeScaling::identity(), 0.5, &one, &[0.04, 0.02]).unwrap();
        assert!(r.rows.iter().all(|d| d.defect < 1e-12));

        let cos = SpectralFunction::circle_mode(spec, cap, EigenIndex::Circle { k: 1, parity: Parity::Cos }, 1.0).unwrap();
        let r = generator_consistency_check(&g, &TimeScaling::identity(), 0.5, &cos, &[0.04, 0.02, 0.01]).unwrap();
        assert!(r.rows[2].defect <= 5e-2);
        assert!(r.decreasing() && r.exponent() >= 0.4, "{r:?}");

        let model = ScalarGeneratorModel::new(spec, &TimeScaling::constant(2.0)).unwrap();
        let a = model.generator_apply(0.3, &cos);
        let p = spec.circle_point(0.0);
        assert!((a.evaluate(&p) + 1.0 / 8.0).abs() < 1e-14);
    }
}
