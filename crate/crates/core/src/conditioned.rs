//! The process conditioned to return to M at partition times: one-step
//! sampling over grid nodes, exact chain expectations, the off-partition
//! density and the shell-conditioned limit.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::chernoff::{step_operators, Partition};
use crate::error::{Error, Result};
use crate::kernel::{assemble_step_operator, resolution_check, transition_density, KernelOperator};
use crate::manifold::{GridFunction, ManifoldKind, Point, QuadratureGrid};
use crate::quadrature::gauss_legendre_on;
use crate::scaling::TimeScaling;
use crate::spectral::{ScalarGeneratorModel, SpectralFunction};

/// Smallest path count accepted by [`fdd_estimate`].
pub const MIN_PATHS: usize = 10_000;

/// Draws the next node from row `x` of `Q_{s,t}`.
pub fn sample_step<R: Rng + ?Sized>(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    x: usize,
    t: f64,
    rng: &mut R,
) -> Result<usize> {
    check_node(grid, x)?;
    let op = assemble_step_operator(grid, scaling, s, t)?;
    let dist = WeightedIndex::new(op.row(x)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.sample(rng))
}

fn check_node(grid: &QuadratureGrid, x: usize) -> Result<()> {
    if x >= grid.len() {
        return Err(Error::InvalidArgument(format!(
            "node index {x} out of range for a grid of {} nodes",
            grid.len()
        )));
    }
    Ok(())
}

/// Per-row categorical samplers for every step of a partition; tables are
/// shared between steps that share an operator.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    partition: Partition,
    operators: Vec<Arc<KernelOperator>>,
    tables: Vec<Arc<Vec<WeightedIndex<f64>>>>,
}

impl ChainSampler {
    pub fn new(grid: &QuadratureGrid, scaling: &TimeScaling, partition: &Partition) -> Result<Self> {
        let operators = step_operators(grid, scaling, partition)?;
        let mut tables: Vec<Arc<Vec<WeightedIndex<f64>>>> = Vec::with_capacity(operators.len());
        for (j, op) in operators.iter().enumerate() {
            if let Some(k) = (0..j).find(|&k| Arc::ptr_eq(&operators[k], op)) {
                tables.push(Arc::clone(&tables[k]));
                continue;
            }
            let rows = (0..op.size())
                .into_par_iter()
                .map(|i| WeightedIndex::new(op.row(i)))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            tables.push(Arc::new(rows));
        }
        Ok(Self {
            partition: partition.clone(),
            operators,
            tables,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn operators(&self) -> &[Arc<KernelOperator>] {
        &self.operators
    }

    /// Node after step `j` (from `t_j` to `t_{j+1}`) starting at node `x`.
    pub fn step<R: Rng + ?Sized>(&self, j: usize, x: usize, rng: &mut R) -> usize {
        self.tables[j][x].sample(rng)
    }

    /// Nodes at every partition time.
    pub fn path<R: Rng + ?Sized>(&self, x0: usize, rng: &mut R) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(self.tables.len() + 1);
        nodes.push(x0);
        let mut x = x0;
        for j in 0..self.tables.len() {
            x = self.step(j, x, rng);
            nodes.push(x);
        }
        nodes
    }
}

/// Values of the conditioned chain at the partition times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSkeleton {
    pub times: Vec<f64>,
    pub nodes: Vec<usize>,
    pub points: Vec<Point>,
    pub seed: Option<u64>,
}

pub fn sample_skeleton<R: Rng + ?Sized>(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    partition: &Partition,
    x0: usize,
    rng: &mut R,
) -> Result<PathSkeleton> {
    check_node(grid, x0)?;
    let nodes = ChainSampler::new(grid, scaling, partition)?.path(x0, rng);
    Ok(PathSkeleton {
        times: partition.times().to_vec(),
        points: nodes.iter().map(|&i| grid.nodes()[i]).collect(),
        nodes,
        seed: None,
    })
}

/// Generator for path `index` of a seeded run: one ChaCha8 stream per path.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `p^𝒫(r, z, τ, y) = p(r,z,τ,y) ∫_M p(τ,y,t_i,x̄) λ_M(dx̄) / ∫_M p(r,z,t_i,x̄) λ_M(dx̄)`
/// for `r < τ < t_i`, both manifold integrals by grid quadrature.
pub fn off_partition_density(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    r: f64,
    z: &Point,
    tau: f64,
    t_next: f64,
    y: &Point,
) -> Result<f64> {
    let normalizer = off_partition_normalizer(grid, scaling, r, z, tau, t_next)?;
    off_partition_density_with(grid, scaling, r, z, tau, t_next, y, normalizer)
}

/// `∫_M p(r,z,t_i,x̄) λ_M(dx̄)`, the denominator of [`off_partition_density`].
pub fn off_partition_normalizer(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    r: f64,
    z: &Point,
    tau: f64,
    t_next: f64,
) -> Result<f64> {
    if !(r < tau) {
        return Err(Error::InvalidTimeOrder { s: r, t: tau });
    }
    if !(tau < t_next) {
        return Err(Error::InvalidTimeOrder { s: tau, t: t_next });
    }
    grid.spec().check_point(z)?;
    resolution_check(grid, scaling, r, t_next)?;
    resolution_check(grid, scaling, tau, t_next)?;
    manifold_integral(grid, scaling, r, z, t_next)
}

fn manifold_integral(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    x: &Point,
    t: f64,
) -> Result<f64> {
    let m = grid.spec().ambient_dim();
    let mut total = 0.0;
    for (node, w) in grid.nodes().iter().zip(grid.weights()) {
        total += w * transition_density(scaling, m, s, x, t, node)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn off_partition_density_with(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    r: f64,
    z: &Point,
    tau: f64,
    t_next: f64,
    y: &Point,
    normalizer: f64,
) -> Result<f64> {
    let m = grid.spec().ambient_dim();
    let head = transition_density(scaling, m, r, z, tau, y)?;
    if head == 0.0 {
        return Ok(0.0);
    }
    Ok(head * manifold_integral(grid, scaling, tau, y, t_next)? / normalizer)
}

/// Integral of [`off_partition_density`] over ℝ² by a tensor Gauss–Legendre
/// rule on the box of ±`half_widths` standard deviations around the mean of
/// `p(r,z,τ,·)`. Circle only.
#[allow(clippy::too_many_arguments)]
pub fn off_partition_normalization(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    r: f64,
    z: &Point,
    tau: f64,
    t_next: f64,
    half_widths: f64,
    nodes_per_axis: usize,
) -> Result<f64> {
    require_circle(grid)?;
    let normalizer = off_partition_normalizer(grid, scaling, r, z, tau, t_next)?;
    let center = scaling.apply_inverse(2, tau, &scaling.apply(2, r, z));
    let (x_nodes, x_weights) = axis_rule(scaling, 0, r, tau, center[0], half_widths, nodes_per_axis);
    let (y_nodes, y_weights) = axis_rule(scaling, 1, r, tau, center[1], half_widths, nodes_per_axis);
    let rows = x_nodes
        .par_iter()
        .zip(&x_weights)
        .map(|(&a, &wa)| {
            let mut row = 0.0;
            for (&b, &wb) in y_nodes.iter().zip(&y_weights) {
                let y = [a, b, 0.0];
                row += wb * off_partition_density_with(grid, scaling, r, z, tau, t_next, &y, normalizer)?;
            }
            Ok(wa * row)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(rows.iter().sum())
}

fn axis_rule(
    scaling: &TimeScaling,
    axis: usize,
    r: f64,
    tau: f64,
    center: f64,
    half_widths: f64,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let std = (tau - r).sqrt() / scaling.entry(axis, tau).abs();
    gauss_legendre_on(n, center - half_widths * std, center + half_widths * std)
}

fn require_circle(grid: &QuadratureGrid) -> Result<()> {
    if grid.spec().kind != ManifoldKind::Circle {
        return Err(Error::InvalidArgument(
            "planar quadrature is implemented for the circle only".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellRow {
    pub eps: f64,
    pub shell: f64,
    pub limit: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellTable {
    pub rows: Vec<ShellRow>,
}

impl ShellTable {
    pub fn deviation_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].deviation < w[0].deviation)
    }
}

/// Radial Gauss–Legendre nodes per unit of shell thickness (at least 16 per shell).
const SHELL_RADIAL_NODES: usize = 64;

/// Expectation of `f(r·y/|y|)` under `p(s,x,t,·)` conditioned on the annulus
/// `r−ε ≤ |y| ≤ r+ε`, next to the limit `∫_M f p^M(s,x,t,·) λ_M`. Circle only.
pub fn shell_density_limit(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    s: f64,
    x: &Point,
    t: f64,
    eps_list: &[f64],
    f: &GridFunction,
) -> Result<ShellTable> {
    require_circle(grid)?;
    f.check_grid(grid)?;
    grid.spec().check_point(x)?;
    resolution_check(grid, scaling, s, t)?;
    let radius = grid.spec().radius;
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("eps list must be strictly decreasing".into()));
    }
    for &eps in eps_list {
        if !(eps > 0.0) || eps >= radius / 2.0 {
            return Err(Error::ShellTooThick {
                eps,
                limit: radius / 2.0,
            });
        }
    }
    let m = grid.spec().ambient_dim();
    let (mut num, mut den) = (0.0, 0.0);
    for ((node, w), fv) in grid.nodes().iter().zip(grid.weights()).zip(&f.values) {
        let p = w * transition_density(scaling, m, s, x, t, node)?;
        num += p * fv;
        den += p;
    }
    let limit = num / den;
    let rows = eps_list
        .iter()
        .map(|&eps| {
            let (rho, rho_w) = gauss_legendre_on(SHELL_RADIAL_NODES, radius - eps, radius + eps);
            let (mut num, mut den) = (0.0, 0.0);
            for ((node, w), fv) in grid.nodes().iter().zip(grid.weights()).zip(&f.values) {
                let mut radial = 0.0;
                for (&rh, &rw) in rho.iter().zip(&rho_w) {
                    let y = [node[0] * rh / radius, node[1] * rh / radius, 0.0];
                    radial += rw * rh * transition_density(scaling, m, s, x, t, &y)?;
                }
                num += w * radial * fv;
                den += w * radial;
            }
            let shell = num / den;
            Ok(ShellRow {
                eps,
                shell,
                limit,
                deviation: (shell - limit).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShellTable { rows })
}

/// `f(x_1, …, x_k) = Π f_i(x_i)` with each factor in the eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductTest {
    pub id: String,
    pub factors: Vec<SpectralFunction>,
}

impl ProductTest {
    pub fn new(id: impl Into<String>, factors: Vec<SpectralFunction>) -> Self {
        Self {
            id: id.into(),
            factors,
        }
    }

    pub fn arity(&self) -> usize {
        self.factors.len()
    }
}

/// Largest number of observation times for [`fdd_reference`].
pub const MAX_FDD_TIMES: usize = 3;

fn time_indices(partition: &Partition, times: &[f64], test: &ProductTest) -> Result<Vec<usize>> {
    if times.is_empty() || times.len() > MAX_FDD_TIMES {
        return Err(Error::InvalidArgument(format!(
            "between 1 and {MAX_FDD_TIMES} observation times are supported, got {}",
            times.len()
        )));
    }
    if times.len() != test.arity() {
        return Err(Error::InvalidArgument(format!(
            "test function {} has {} factors for {} times",
            test.id,
            test.arity(),
            times.len()
        )));
    }
    let indices = times
        .iter()
        .map(|&t| partition.index_of(t).ok_or(Error::TimesNotInPartition(t)))
        .collect::<Result<Vec<_>>>()?;
    if indices[0] == 0 || indices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "observation times must be strictly increasing and after the start".into(),
        ));
    }
    Ok(indices)
}

/// Exact expectation under the chain (`chain`) and under the limiting
/// diffusion (`diffusion`, scalar σ only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FddReference {
    pub chain: f64,
    pub diffusion: Option<f64>,
}

/// Nested contractions `E f = (P_{0,τ1}(f_1 · P_{τ1,τ2}(f_2 ⋯)))(x0)` with
/// `P` the kernel-matrix products (chain) or the spectral propagator (diffusion).
pub fn fdd_reference(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    partition: &Partition,
    x0: usize,
    times: &[f64],
    test: &ProductTest,
) -> Result<FddReference> {
    check_node(grid, x0)?;
    let indices = time_indices(partition, times, test)?;
    let operators = step_operators(grid, scaling, partition)?;
    let chain = nested_expectation(grid, &indices, test, x0, |from, to, v| {
        let mut v = v.clone();
        for op in operators[from..to].iter().rev() {
            v = op.apply(&v)?;
        }
        Ok(v)
    })?;
    let diffusion = match ScalarGeneratorModel::new(*grid.spec(), scaling) {
        Ok(model) => {
            let ts = partition.times();
            Some(nested_expectation(grid, &indices, test, x0, |from, to, v| {
                model.propagate_grid(grid, ts[from], ts[to], v)
            })?)
        }
        Err(Error::UnsupportedScaling) => None,
        Err(e) => return Err(e),
    };
    Ok(FddReference { chain, diffusion })
}

/// Diffusion-side reference only; fails for non-scalar σ.
pub fn fdd_diffusion_reference(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    partition: &Partition,
    x0: usize,
    times: &[f64],
    test: &ProductTest,
) -> Result<f64> {
    check_node(grid, x0)?;
    let indices = time_indices(partition, times, test)?;
    let model = ScalarGeneratorModel::new(*grid.spec(), scaling)?;
    let ts = partition.times();
    nested_expectation(grid, &indices, test, x0, |from, to, v| {
        model.propagate_grid(grid, ts[from], ts[to], v)
    })
}

fn nested_expectation(
    grid: &QuadratureGrid,
    indices: &[usize],
    test: &ProductTest,
    x0: usize,
    transport: impl Fn(usize, usize, &GridFunction) -> Result<GridFunction>,
) -> Result<f64> {
    let k = indices.len();
    let mut v = test.factors[k - 1].to_grid(grid);
    for i in (0..k - 1).rev() {
        let moved = transport(indices[i], indices[i + 1], &v)?;
        let factor = test.factors[i].to_grid(grid);
        v = GridFunction::new(moved.values.iter().zip(&factor.values).map(|(a, b)| a * b).collect());
    }
    Ok(transport(0, indices[0], &v)?.values[x0])
}

/// Monte Carlo estimate of `E f(X_{τ1}, …, X_{τk})` against both references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FddReport {
    pub times: Vec<f64>,
    pub test_id: String,
    pub paths: usize,
    pub seed: u64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub chain_reference: f64,
    pub diffusion_reference: Option<f64>,
    /// `|mc_mean − chain_reference| / mc_stderr`; zero when both vanish.
    pub z_score: f64,
}

impl FddReport {
    /// `|mc_mean − b| ≤ |a − b| + 3·stderr`, true when no diffusion reference exists.
    pub fn within_diffusion_band(&self) -> bool {
        match self.diffusion_reference {
            Some(b) => {
                (self.mc_mean - b).abs()
                    <= (self.chain_reference - b).abs() + 3.0 * self.mc_stderr
            }
            None => true,
        }
    }
}

/// Mean and standard error with the first sample as shift, summed in index order.
fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let shift = values[0];
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in values {
        let d = v - shift;
        s1 += d;
        s2 += d * d;
    }
    let mean_d = s1 / n;
    let var = if values.len() > 1 {
        ((s2 - n * mean_d * mean_d) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    (shift + mean_d, (var / n).sqrt())
}

/// Samples `n_paths` skeletons from `x0`, path `i` drawing from stream `i` of
/// the seeded generator, and compares the empirical mean to [`fdd_reference`].
#[allow(clippy::too_many_arguments)]
pub fn fdd_estimate(
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    partition: &Partition,
    x0: usize,
    times: &[f64],
    test: &ProductTest,
    n_paths: usize,
    seed: u64,
) -> Result<FddReport> {
    let sampler = ChainSampler::new(grid, scaling, partition)?;
    fdd_estimate_with(&sampler, grid, scaling, x0, times, test, n_paths, seed)
}

/// [`fdd_estimate`] reusing a prepared sampler.
#[allow(clippy::too_many_arguments)]
pub fn fdd_estimate_with(
    sampler: &ChainSampler,
    grid: &QuadratureGrid,
    scaling: &TimeScaling,
    x0: usize,
    times: &[f64],
    test: &ProductTest,
    n_paths: usize,
    seed: u64,
) -> Result<FddReport> {
    check_node(grid, x0)?;
    if n_paths < MIN_PATHS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_PATHS} paths are required, got {n_paths}"
        )));
    }
    let partition = sampler.partition();
    let indices = time_indices(partition, times, test)?;
    let reference = fdd_reference(grid, scaling, partition, x0, times, test)?;
    let factors: Vec<GridFunction> = test.factors.iter().map(|f| f.to_grid(grid)).collect();
    let last = *indices.last().expect("at least one time");
    let values: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = x0;
            let mut value = 1.0;
            let mut next = 0;
            for j in 0..last {
                x = sampler.step(j, x, &mut rng);
                if j + 1 == indices[next] {
                    value *= factors[next].values[x];
                    next += 1;
                }
            }
            value
        })
        .collect();
    let (mc_mean, mc_stderr) = mean_stderr(&values);
    let diff = (mc_mean - reference.chain).abs();
    let z_score = if mc_stderr > 0.0 {
        diff / mc_stderr
    } else if diff <= 1e-12 * reference.chain.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(FddReport {
        times: times.to_vec(),
        test_id: test.id.clone(),
        paths: n_paths,
        seed,
        mc_mean,
        mc_stderr,
        chain_reference: reference.chain,
        diffusion_reference: reference.diffusion,
        z_score,
    })
}

/// Exact law of the chain at partition index `j`: row `x0` of `Q_{t0,t1}⋯Q_{t(j−1),tj}`.
pub fn chain_marginal(operators: &[Arc<KernelOperator>], x0: usize, j: usize) -> Vec<f64> {
    let n = operators.first().map_or(x0 + 1, |op| op.size());
    let mut law = vec![0.0; n];
    law[x0] = 1.0;
    for op in &operators[..j] {
        let mut next = vec![0.0; n];
        for (i, &mass) in law.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (nj, k) in next.iter_mut().zip(op.row(i)) {
                *nj += mass * k;
            }
        }
        law = next;
    }
    law
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of the sampled marginal at partition index `j`
/// against [`chain_marginal`]; cells with expected count below 5 are pooled.
pub fn marginal_chi_square(
    sampler: &ChainSampler,
    x0: usize,
    j: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ChiSquareReport> {
    if j == 0 || j > sampler.partition().steps() {
        return Err(Error::InvalidArgument(format!("step index {j} out of range")));
    }
    let law = chain_marginal(sampler.operators(), x0, j);
    let finals: Vec<usize> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut x = x0;
            for step in 0..j {
                x = sampler.step(step, x, &mut rng);
            }
            x
        })
        .collect();
    let mut counts = vec![0usize; law.len()];
    for x in finals {
        counts[x] += 1;
    }
    let n = n_paths as f64;
    let (mut statistic, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&p, &c) in law.iter().zip(&counts) {
        let expected = p * n;
        if expected < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += expected;
        } else {
            statistic += (c as f64 - expected).powi(2) / expected;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        statistic += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let dof = cells.saturating_sub(1).max(1);
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(ChiSquareReport {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chernoff::uniform_partition;
    use crate::manifold::{EigenIndex, ManifoldSpec, Parity, Resolution};

    fn circle_grid(n: usize) -> QuadratureGrid {
        QuadratureGrid::build(ManifoldSpec::circle(1.0).unwrap(), Resolution::Circle { n }).unwrap()
    }

    fn cos_theta(grid: &QuadratureGrid) -> SpectralFunction {
        SpectralFunction::circle_mode(
            *grid.spec(),
            4,
            EigenIndex::Circle { k: 1, parity: Parity::Cos },
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn step_is_deterministic_given_seed() {
        let g = circle_grid(256);
        let id = TimeScaling::identity();
        let a = sample_step(&g, &id, 0.0, 3, 0.05, &mut path_rng(7, 0)).unwrap();
        let b = sample_step(&g, &id, 0.0, 3, 0.05, &mut path_rng(7, 0)).unwrap();
        assert_eq!(a, b);
        assert!(sample_step(&g, &id, 0.0, 256, 0.05, &mut path_rng(7, 0)).is_err());
    }

    #[test]
    fn step_mean_matches_row_mean() {
        let g = circle_grid(256);
        let id = TimeScaling::identity();
        let x0 = 40;
        let op = assemble_step_operator(&g, &id, 0.0, 0.05).unwrap();
        assert!((op.row(x0).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let cos: Vec<f64> = g.nodes().iter().map(|p| p[0]).collect();
        let exact: f64 = op.row(x0).iter().zip(&cos).map(|(k, c)| k * c).sum();
        let kappa = exact / cos[x0];
        let sampler = ChainSampler::new(&g, &id, &Partition::new(vec![0.0, 0.05]).unwrap()).unwrap();
        let mut rng = path_rng(11, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| cos[sampler.step(0, x0, &mut rng)]).collect();
        let (mean, se) = mean_stderr(&draws);
        assert!((mean - kappa * cos[x0]).abs() <= 3.0 * se, "{mean} vs {}", kappa * cos[x0]);
    }

    #[test]
    fn skeletons() {
        let g = circle_grid(128);
        let id = TimeScaling::identity();
        let p = uniform_partition(0.0, 1.0, 8).unwrap();
        let a = sample_skeleton(&g, &id, &p, 5, &mut path_rng(1, 2)).unwrap();
        let b = sample_skeleton(&g, &id, &p, 5, &mut path_rng(1, 2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nodes.len(), 9);
        assert_eq!(a.nodes[0], 5);
        for (i, pt) in a.nodes.iter().zip(&a.points) {
            assert_eq!(g.nodes()[*i], *pt);
        }
        let sampler = ChainSampler::new(&g, &id, &Partition::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(sampler.path(9, &mut path_rng(0, 0))[0], 9);
    }

    #[test]
    fn off_partition_density_normalizes() {
        let g = circle_grid(512);
        let id = TimeScaling::identity();
        let z = g.nodes()[0];
        let total = off_partition_normalization(&g, &id, 0.0, &z, 0.05, 0.1, 6.0, 96).unwrap();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
        let c = TimeScaling::affine(1.0, 1.0);
        let z = g.nodes()[37];
        let total = off_partition_normalization(&g, &c, 0.2, &z, 0.25, 0.3, 6.0, 96).unwrap();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn off_partition_density_is_reflection_symmetric_and_literal() {
        let g = circle_grid(256);
        let id = TimeScaling::identity();
        let z = g.nodes()[0];
        for y in [[0.9, 0.2, 0.0], [1.1, -0.05, 0.0], [0.7, 0.4, 0.0]] {
            let a = off_partition_density(&g, &id, 0.0, &z, 0.05, 0.1, &y).unwrap();
            let b = off_partition_density(&g, &id, 0.0, &z, 0.05, 0.1, &[y[0], -y[1], 0.0]).unwrap();
            assert!(a >= 0.0);
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            let mut num = 0.0;
            let mut den = 0.0;
            for (x, w) in g.nodes().iter().zip(g.weights()) {
                num += w * transition_density(&id, 2, 0.05, &y, 0.1, x).unwrap();
                den += w * transition_density(&id, 2, 0.0, &z, 0.1, x).unwrap();
            }
            let literal = transition_density(&id, 2, 0.0, &z, 0.05, &y).unwrap() * num / den;
            assert!((a - literal).abs() <= 1e-14 * literal.max(1e-300));
        }
        assert!(matches!(
            off_partition_density(&g, &id, 0.1, &z, 0.05, 0.2, &z),
            Err(Error::InvalidTimeOrder { .. })
        ));
    }

    #[test]
    fn shell_expectations_converge() {
        let g = circle_grid(512);
        let id = TimeScaling::identity();
        let x = g.nodes()[0];
        let one = GridFunction::constant(&g, 1.0);
        let table = shell_density_limit(&g, &id, 0.0, &x, 0.1, &[0.2, 0.1], &one).unwrap();
        for row in &table.rows {
            assert_eq!(row.shell, 1.0);
            assert_eq!(row.limit, 1.0);
        }
        let x = g.nodes()[60];
        let f = cos_theta(&g).to_grid(&g);
        let table = shell_density_limit(&g, &id, 0.0, &x, 0.1, &[0.2, 0.1, 0.05, 0.025], &f).unwrap();
        assert!(table.deviation_decreasing(), "{table:?}");
        assert!(table.rows[3].deviation <= 1e-3);
        assert!(matches!(
            shell_density_limit(&g, &id, 0.0, &x, 0.1, &[0.5], &f),
            Err(Error::ShellTooThick { .. })
        ));
    }

    #[test]
    fn references_for_constant_and_single_time() {
        let g = circle_grid(512);
        let id = TimeScaling::identity();
        let p = uniform_partition(0.0, 1.0, 128).unwrap();
        let c = ProductTest::new("const", vec![SpectralFunction::constant(*g.spec(), 4, 2.5)]);
        let r = fdd_reference(&g, &id, &p, 0, &[1.0], &c).unwrap();
        assert!((r.chain - 2.5).abs() < 1e-11 && (r.diffusion.unwrap() - 2.5).abs() < 1e-11);

        let f = ProductTest::new("cos", vec![cos_theta(&g)]);
        let r = fdd_reference(&g, &id, &p, 0, &[1.0], &f).unwrap();
        let limit = (-0.5f64).exp();
        assert!((r.diffusion.unwrap() - limit).abs() < 1e-12);
        assert!((r.chain - limit).abs() < 1e-2);

        let f2 = ProductTest::new("cos*cos", vec![cos_theta(&g), cos_theta(&g)]);
        let r = fdd_reference(&g, &id, &p, 0, &[0.5, 1.0], &f2).unwrap();
        // E[cos X_½ cos X_1] = e^{−1/4} E[cos² X_½] = e^{−1/4}(1 + e^{−1})/2.
        let exact = (-0.25f64).exp() * 0.5 * (1.0 + (-1.0f64).exp());
        assert!((r.diffusion.unwrap() - exact).abs() < 1e-12);
        assert!((r.chain - exact).abs() < 1e-2);

        assert!(matches!(
            fdd_reference(&g, &id, &p, 0, &[0.3], &f),
            Err(Error::TimesNotInPartition(_))
        ));
        let diag = TimeScaling::diagonal(vec![
            crate::scaling::ScalarProfile::Constant { value: 1.0 },
            crate::scaling::ScalarProfile::Constant { value: 1.2 },
            crate::scaling::ScalarProfile::Constant { value: 1.0 },
        ]);
        let r = fdd_reference(&g, &diag, &p, 0, &[1.0], &f).unwrap();
        assert!(r.diffusion.is_none());
        assert!(matches!(
            fdd_diffusion_reference(&g, &diag, &p, 0, &[1.0], &f),
            Err(Error::UnsupportedScaling)
        ));
    }

    #[test]
    fn chain_to_diffusion_gap_shrinks() {
        let g = circle_grid(512);
        let id = TimeScaling::identity();
        let f2 = ProductTest::new("cos*cos", vec![cos_theta(&g), cos_theta(&g)]);
        let gaps: Vec<f64> = [16, 64, 256]
            .iter()
            .map(|&n| {
                let p = uniform_partition(0.0, 1.0, n).unwrap();
                let r = fdd_reference(&g, &id, &p, 0, &[0.5, 1.0], &f2).unwrap();
                (r.chain - r.diffusion.unwrap()).abs()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn monte_carlo_estimates() {
        let g = circle_grid(256);
        let id = TimeScaling::identity();
        let p = uniform_partition(0.0, 1.0, 32).unwrap();
        let sampler = ChainSampler::new(&g, &id, &p).unwrap();
        let c = ProductTest::new("const", vec![SpectralFunction::constant(*g.spec(), 4, 0.7)]);
        let rep = fdd_estimate_with(&sampler, &g, &id, 0, &[1.0], &c, 10_000, 3).unwrap();
        assert_eq!(rep.mc_mean, c.factors[0].to_grid(&g).values[0]);
        assert_eq!(rep.mc_stderr, 0.0);

        let f = ProductTest::new("cos", vec![cos_theta(&g)]);
        let a = fdd_estimate_with(&sampler, &g, &id, 0, &[1.0], &f, 20_000, 5).unwrap();
        let b = fdd_estimate_with(&sampler, &g, &id, 0, &[1.0], &f, 40_000, 5).unwrap();
        assert!(a.z_score <= 3.0 && b.z_score <= 3.0, "{a:?} {b:?}");
        assert!(a.within_diffusion_band());
        let ratio = b.mc_stderr / a.mc_stderr;
        assert!((ratio * 2f64.sqrt() - 1.0).abs() <= 0.15, "{ratio}");
        assert_eq!(a, fdd_estimate_with(&sampler, &g, &id, 0, &[1.0], &f, 20_000, 5).unwrap());
        assert!(fdd_estimate_with(&sampler, &g, &id, 0, &[1.0], &f, 9_999, 5).is_err());
    }

    #[test]
    fn sampled_marginal_passes_chi_square() {
        let g = circle_grid(128);
        let id = TimeScaling::identity();
        let p = uniform_partition(0.0, 0.2, 4).unwrap();
        let sampler = ChainSampler::new(&g, &id, &p).unwrap();
        let law = chain_marginal(sampler.operators(), 0, 4);
        assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let rep = marginal_chi_square(&sampler, 0, 4, 100_000, 17).unwrap();
        assert!(rep.p_value > 1e-3, "{rep:?}");
    }
}
