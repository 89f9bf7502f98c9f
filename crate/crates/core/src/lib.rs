//! Chernoff product approximations of backward propagators for
//! time-inhomogeneous diffusions on the circle and the sphere.

// `!(a < b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod chernoff;
pub mod conditioned;
pub mod error;
pub mod fit;
pub mod kernel;
pub mod manifold;
pub mod quadrature;
pub mod scaling;
pub mod spectral;

pub use asymptotics::{ExpansionFit, ExpansionPrediction, ExpansionSource};
pub use chernoff::{apply_product, uniform_partition, ConvergenceTable, Partition};
pub use conditioned::{ChainSampler, FddReport, PathSkeleton, ProductTest, ShellTable};
pub use error::{Error, Result};
pub use kernel::{assemble_step_operator, resolution_check, transition_density, KernelOperator};
pub use manifold::{
    EigenIndex, GridFunction, ManifoldKind, ManifoldSpec, Parity, Point, QuadratureGrid, Resolution,
};
pub use scaling::{ScalarProfile, TimeScaling};
pub use spectral::{ScalarGeneratorModel, SpectralFunction};
