//! Inference of the interaction kernel `W'` of a one-dimensional interacting
//! particle system from the path of a single particle.
//!
//! The pipeline: empirical moments of the invariant measure ([`moments`]),
//! an orthonormal polynomial basis built from them ([`orthopoly`]), a linear
//! moment system for the generalized Fourier coefficients of `W'`
//! ([`gmm`]), and the evaluable kernel estimate. [`sim`] generates synthetic
//! observations and [`metrics`] runs convergence studies.

pub mod cli;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod moments;
pub mod orthopoly;
pub mod potential;
pub mod quadrature;
pub mod seed;
pub mod sim;
pub mod textfmt;
pub mod trajectory;

pub use error::{Error, Result};
pub use gmm::{estimate_interaction, AdmissibleSet, EstimatorConfig, KernelEstimate};
pub use metrics::{rate_study, RateResult};
pub use moments::{GaussianMeasure, MomentProvenance, MomentVector, Sampling};
pub use orthopoly::{build_basis, OrthoBasis};
pub use potential::{PotentialFamily, PotentialRole, PotentialSpec};
pub use quadrature::QuadratureSpec;
pub use sim::{simulate_ips, InitialCondition, SimConfig};
pub use trajectory::{Trajectory, TrajectoryMeta};
