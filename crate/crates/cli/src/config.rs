//! Experiment configuration files: JSON with a versioned schema.

use std::path::Path;

use chernoff_core::asymptotics::MIN_SAMPLES;
use chernoff_core::conditioned::{MAX_FDD_TIMES, MIN_PATHS};
use chernoff_core::manifold::real_spherical_harmonic;
use chernoff_core::{
    GridFunction, ManifoldKind, ManifoldSpec, Point, QuadratureGrid, Resolution, SpectralFunction,
    TimeScaling,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub manifold: ManifoldConfig,
    #[serde(default = "TimeScaling::identity")]
    pub scaling: TimeScaling,
    /// `[S, T]`
    pub interval: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldConfig {
    pub kind: ManifoldKind,
    #[serde(default = "one")]
    pub radius: f64,
    pub resolution: ResolutionConfig,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_colat: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_lon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Converge(ConvergeConfig),
    Asymptotics(AsymptoticsConfig),
    McFdd(McFddConfig),
    DensityCheck(DensityCheckConfig),
}

impl Experiment {
    pub fn command(&self) -> &'static str {
        match self {
            Experiment::Converge(_) => "converge",
            Experiment::Asymptotics(_) => "asymptotics",
            Experiment::McFdd(_) => "mc-fdd",
            Experiment::DensityCheck(_) => "density-check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Exact propagator in the eigenbasis (scalar σ only).
    Spectral,
    /// Product at twice the largest partition size.
    SelfConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub n_list: Vec<usize>,
    pub test_function: TestFunction,
    pub reference: ReferenceKind,
    #[serde(default = "default_min_order")]
    pub min_order: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_final_error: Option<f64>,
    #[serde(default = "yes")]
    pub require_decreasing: bool,
}

fn default_min_order() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticsConfig {
    pub point: PointConfig,
    pub test_function: TestFunction,
    pub t_samples: TSamples,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default = "default_relative")]
    pub relative_tolerance: f64,
    #[serde(default)]
    pub absolute_tolerance: f64,
    #[serde(default = "default_min_exponent")]
    pub min_remainder_exponent: f64,
}

fn default_relative() -> f64 {
    0.05
}

fn default_min_exponent() -> f64 {
    1.4
}

/// `count` log-spaced times in `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TSamples {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McFddConfig {
    pub partition_n: usize,
    pub x0: PointConfig,
    pub times: Vec<f64>,
    /// One factor per observation time.
    pub factors: Vec<TestFunction>,
    pub paths: usize,
    #[serde(default)]
    pub gap_n_list: Vec<usize>,
    #[serde(default = "default_z_max")]
    pub z_max: f64,
}

fn default_z_max() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityCheckConfig {
    pub normalization: NormalizationConfig,
    pub shell: ShellConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationConfig {
    pub r: f64,
    pub z: PointConfig,
    pub tau: f64,
    pub t_next: f64,
    #[serde(default = "default_half_widths")]
    pub half_widths: f64,
    #[serde(default = "default_axis_nodes")]
    pub nodes_per_axis: usize,
    #[serde(default = "default_density_tolerance")]
    pub tolerance: f64,
}

fn default_half_widths() -> f64 {
    6.0
}

fn default_axis_nodes() -> usize {
    96
}

fn default_density_tolerance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellConfig {
    pub s: f64,
    pub x: PointConfig,
    pub t: f64,
    pub eps_list: Vec<f64>,
    pub test_function: TestFunction,
    #[serde(default = "default_density_tolerance")]
    pub max_final_deviation: f64,
}

/// A point of M: a grid node, a circle angle, or spherical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointConfig {
    Node { index: usize },
    Angle { theta: f64 },
    Spherical { colat: f64, lon: f64 },
}

/// Test functions from a fixed catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Constant { value: f64 },
    /// `cos kθ` or `sin kθ`.
    CircleHarmonic { k: usize, parity: Parity },
    /// Real orthonormal spherical harmonic `Y_lq` of the unit sphere.
    SphereHarmonic { l: usize, q: i64 },
    /// Ambient coordinate divided by the radius.
    Coordinate { axis: usize },
    /// Pointwise product.
    Product { factors: Vec<TestFunction> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

impl TestFunction {
    pub fn degree(&self) -> usize {
        match self {
            TestFunction::Constant { .. } => 0,
            TestFunction::CircleHarmonic { k, .. } => *k,
            TestFunction::SphereHarmonic { l, .. } => *l,
            TestFunction::Coordinate { .. } => 1,
            TestFunction::Product { factors } => factors.iter().map(|f| f.degree()).sum(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            TestFunction::Constant { value } => format!("const({value})"),
            TestFunction::CircleHarmonic { k, parity } => {
                let name = match parity {
                    Parity::Cos => "cos",
                    Parity::Sin => "sin",
                };
                match k {
                    1 => format!("{name}(theta)"),
                    _ => format!("{name}({k}theta)"),
                }
            }
            TestFunction::SphereHarmonic { l, q } => format!("Y({l},{q})"),
            TestFunction::Coordinate { axis } => format!("coord({axis})"),
            TestFunction::Product { factors } => {
                factors.iter().map(|f| f.id()).collect::<Vec<_>>().join("*")
            }
        }
    }

    fn check(&self, spec: &ManifoldSpec, field: &str) -> Result<(), CliError> {
        match (self, spec.kind) {
            (TestFunction::CircleHarmonic { .. }, ManifoldKind::Sphere) => Err(CliError::config(
                field,
                "circle harmonics are defined on the circle only",
            )),
            (TestFunction::SphereHarmonic { l, q }, kind) => {
                if kind != ManifoldKind::Sphere {
                    return Err(CliError::config(field, "sphere harmonics are defined on the sphere only"));
                }
                if q.unsigned_abs() as usize > *l {
                    return Err(CliError::config(field, format!("|q| must not exceed l (l = {l}, q = {q})")));
                }
                Ok(())
            }
            (TestFunction::Coordinate { axis }, _) if *axis >= spec.ambient_dim() => Err(
                CliError::config(field, format!("axis {axis} outside the ambient dimension")),
            ),
            (TestFunction::Product { factors }, _) => {
                if factors.is_empty() {
                    return Err(CliError::config(field, "product needs at least one factor"));
                }
                for (i, f) in factors.iter().enumerate() {
                    f.check(spec, &format!("{field}.factors[{i}]"))?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, spec: &ManifoldSpec, p: &Point) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::CircleHarmonic { k, parity } => {
                let theta = ManifoldSpec::angle(p) * *k as f64;
                match parity {
                    Parity::Cos => theta.cos(),
                    Parity::Sin => theta.sin(),
                }
            }
            TestFunction::SphereHarmonic { l, q } => {
                let (colat, lon) = spec.colat_lon(p);
                real_spherical_harmonic(*l, *q, colat, lon)
            }
            TestFunction::Coordinate { axis } => p[*axis] / spec.radius,
            TestFunction::Product { factors } => {
                factors.iter().map(|f| f.evaluate(spec, p)).product()
            }
        }
    }

    pub fn spectral(&self, spec: &ManifoldSpec) -> Result<SpectralFunction, CliError> {
        let cap = self.degree().max(1);
        Ok(SpectralFunction::from_fn(*spec, cap, |p| self.evaluate(spec, p))?)
    }

    pub fn on_grid(&self, grid: &QuadratureGrid) -> GridFunction {
        GridFunction::from_fn(grid, |p| self.evaluate(grid.spec(), p))
    }
}

impl PointConfig {
    pub fn resolve(&self, grid: &QuadratureGrid, field: &str) -> Result<Point, CliError> {
        let spec = grid.spec();
        match (*self, spec.kind) {
            (PointConfig::Node { index }, _) => grid
                .nodes()
                .get(index)
                .copied()
                .ok_or_else(|| CliError::config(field, format!("node {index} outside a grid of {} nodes", grid.len()))),
            (PointConfig::Angle { theta }, ManifoldKind::Circle) => Ok(spec.circle_point(theta)),
            (PointConfig::Spherical { colat, lon }, ManifoldKind::Sphere) => {
                Ok(spec.sphere_point(colat, lon))
            }
            _ => Err(CliError::config(field, "point type does not match the manifold")),
        }
    }

    /// Grid node index: the node itself or the node nearest to the point.
    pub fn node(&self, grid: &QuadratureGrid, field: &str) -> Result<usize, CliError> {
        match *self {
            PointConfig::Node { index } => {
                self.resolve(grid, field)?;
                Ok(index)
            }
            _ => Ok(grid.nearest_node(&self.resolve(grid, field)?)),
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| CliError::config("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn spec(&self) -> Result<ManifoldSpec, CliError> {
        ManifoldSpec::new(self.manifold.kind, self.manifold.radius)
            .map_err(|e| CliError::config("manifold.radius", e.to_string()))
    }

    pub fn resolution(&self) -> Result<Resolution, CliError> {
        let r = self.manifold.resolution;
        match (self.manifold.kind, r.n, r.n_colat, r.n_lon) {
            (ManifoldKind::Circle, Some(n), None, None) => Ok(Resolution::Circle { n }),
            (ManifoldKind::Sphere, None, Some(n_colat), Some(n_lon)) => {
                Ok(Resolution::Sphere { n_colat, n_lon })
            }
            (ManifoldKind::Circle, ..) => Err(CliError::config(
                "manifold.resolution",
                "circle resolution takes exactly the field n",
            )),
            (ManifoldKind::Sphere, ..) => Err(CliError::config(
                "manifold.resolution",
                "sphere resolution takes exactly the fields n_colat and n_lon",
            )),
        }
    }

    pub fn grid(&self) -> Result<QuadratureGrid, CliError> {
        QuadratureGrid::build(self.spec()?, self.resolution()?)
            .map_err(|e| CliError::config("manifold.resolution", e.to_string()))
    }

    /// Checks every precondition that does not need a grid.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(CliError::config("name", "must be non-empty and use only [A-Za-z0-9_-]"));
        }
        let spec = self.spec()?;
        self.resolution()?;
        let [s, t] = self.interval;
        if !(s.is_finite() && t.is_finite() && s < t) {
            return Err(CliError::config("interval", format!("need S < T, got [{s}, {t}]")));
        }
        self.scaling
            .validate(spec.ambient_dim(), s, t)
            .map_err(|e| CliError::config("scaling", e.to_string()))?;
        match &self.experiment {
            Experiment::Converge(c) => {
                if c.n_list.len() < 3 {
                    return Err(CliError::config(
                        "experiment.n_list",
                        format!("need at least 3 partition sizes, got {}", c.n_list.len()),
                    ));
                }
                if c.n_list[0] == 0 || c.n_list.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(CliError::config("experiment.n_list", "must be positive and strictly ascending"));
                }
                if c.reference == ReferenceKind::SelfConvergence
                    && c.n_list[c.n_list.len() - 1] < 4 * c.n_list[0]
                {
                    return Err(CliError::config(
                        "experiment.n_list",
                        "self-convergence needs the largest n to be at least 4x the smallest",
                    ));
                }
                if c.reference == ReferenceKind::Spectral && !self.scaling.is_scalar() {
                    return Err(CliError::config(
                        "experiment.reference",
                        "the spectral reference needs a scalar scaling; use self_convergence",
                    ));
                }
                c.test_function.check(&spec, "experiment.test_function")?;
            }
            Experiment::Asymptotics(a) => {
                let ts = a.t_samples;
                if ts.count < MIN_SAMPLES {
                    return Err(CliError::config(
                        "experiment.t_samples.count",
                        format!("need at least {MIN_SAMPLES} samples, got {}", ts.count),
                    ));
                }
                if !(ts.min > 0.0 && ts.max >= 10.0 * ts.min) {
                    return Err(CliError::config(
                        "experiment.t_samples",
                        format!("need 0 < min and max >= 10 min, got [{}, {}]", ts.min, ts.max),
                    ));
                }
                if !(a.relative_tolerance >= 0.0 && a.absolute_tolerance >= 0.0) {
                    return Err(CliError::config("experiment.relative_tolerance", "tolerances must be nonnegative"));
                }
                a.test_function.check(&spec, "experiment.test_function")?;
            }
            Experiment::McFdd(m) => {
                if m.partition_n == 0 {
                    return Err(CliError::config("experiment.partition_n", "must be positive"));
                }
                if m.paths < MIN_PATHS {
                    return Err(CliError::config(
                        "experiment.paths",
                        format!("need at least {MIN_PATHS} paths, got {}", m.paths),
                    ));
                }
                if m.times.is_empty() || m.times.len() > MAX_FDD_TIMES {
                    return Err(CliError::config(
                        "experiment.times",
                        format!("need between 1 and {MAX_FDD_TIMES} times, got {}", m.times.len()),
                    ));
                }
                if m.times.iter().any(|&tau| !(tau > s && tau <= t))
                    || m.times.windows(2).any(|w| w[1] <= w[0])
                {
                    return Err(CliError::config(
                        "experiment.times",
                        "times must be strictly increasing within (S, T]",
                    ));
                }
                if m.factors.len() != m.times.len() {
                    return Err(CliError::config(
                        "experiment.factors",
                        format!("need one factor per time ({} times, {} factors)", m.times.len(), m.factors.len()),
                    ));
                }
                for (i, f) in m.factors.iter().enumerate() {
                    f.check(&spec, &format!("experiment.factors[{i}]"))?;
                }
                if m.gap_n_list.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(CliError::config("experiment.gap_n_list", "must be strictly ascending"));
                }
            }
            Experiment::DensityCheck(d) => {
                if spec.kind != ManifoldKind::Circle {
                    return Err(CliError::config("manifold.kind", "density checks support the circle only"));
                }
                let n = &d.normalization;
                if !(n.r < n.tau && n.tau < n.t_next) {
                    return Err(CliError::config(
                        "experiment.normalization",
                        format!("need r < tau < t_next, got {} < {} < {}", n.r, n.tau, n.t_next),
                    ));
                }
                if !(n.half_widths > 0.0) || n.nodes_per_axis < 8 {
                    return Err(CliError::config(
                        "experiment.normalization",
                        "need half_widths > 0 and nodes_per_axis >= 8",
                    ));
                }
                let sh = &d.shell;
                if !(sh.s < sh.t) {
                    return Err(CliError::config("experiment.shell", "need s < t"));
                }
                if sh.eps_list.is_empty() || sh.eps_list.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(CliError::config("experiment.shell.eps_list", "must be non-empty and strictly decreasing"));
                }
                sh.test_function.check(&spec, "experiment.shell.test_function")?;
            }
        }
        Ok(())
    }
}
