//! Porous-medium and fast-diffusion equations driven by nonlinear conservative
//! rough transport noise.
//!
//! The crate follows the constructive route to pathwise kinetic solutions:
//! the equation is regularized by a small viscosity `eta` and driven by
//! piecewise-linear approximants of a rough signal, solved by a conservative
//! finite-volume scheme, and then examined through its kinetic function,
//! its defect measures and the transported weak formulation.
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`). The
//! `f64` aliases at the crate root are what the CLI and the experiment
//! runner use.

// `!(a < b)` comparisons deliberately reject NaN.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod characteristics;
pub mod coefficients;
pub mod experiments;
pub mod geometry;
pub mod kinetic;
pub mod pde;
pub mod quadrature;
pub mod roughpath;
mod scalar;

pub use scalar::Real;

pub type Domain = geometry::Domain<f64>;
pub type CutoffParams = geometry::CutoffParams<f64>;
pub type SmoothPath = roughpath::SmoothPath<f64>;
pub type Level2Path = roughpath::Level2Path<f64>;
pub type HolderMetricParams = roughpath::HolderMetricParams<f64>;
pub type Coefficient = coefficients::Coefficient<f64>;
pub type CharState = characteristics::CharState<f64>;
pub type FlowParams = characteristics::FlowParams<f64>;
pub type GridFunction = pde::GridFunction<f64>;
pub type SolverParams = pde::SolverParams<f64>;
pub type Trajectory = pde::Trajectory<f64>;
pub type XiGrid = kinetic::XiGrid<f64>;
pub type KineticField = kinetic::KineticField<f64>;
pub type DefectTally = kinetic::DefectTally<f64>;

pub type Domain32 = geometry::Domain<f32>;
pub type SmoothPath32 = roughpath::SmoothPath<f32>;
pub type GridFunction32 = pde::GridFunction<f32>;
