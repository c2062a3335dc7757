//! Monotone rearrangement of one-dimensional maps and the sharp convex energy
//! inequality `∫ f(|U'|) ≥ ∫ f(n·T')`.
//!
//! - [`func`]: continuous piecewise-affine functions and convex costs.
//! - [`rearrange`]: image measure, monotone transport `T`, multiplicity `n`.
//! - [`energy`]: both energies, the inequality check, a coarea cross-check.
//! - [`approx`]: piecewise-affine approximation of sampled functions.
//! - [`regularize`]: inf-convolution of grid functions.
//! - [`suite`]: the seeded randomized campaign used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod cli;
pub mod energy;
pub mod func;
pub mod plot;
pub mod rearrange;
pub mod regularize;
pub mod suite;

pub use energy::{
    coarea_energy, dirichlet_energy, injectivity_gain, rearranged_energy, verify_inequality,
    EnergyError, InequalityReport,
};
pub use func::{
    make_cost, random_piecewise_affine, ConvexCost, CostSpec, FuncError, Interval, PiecewiseAffine,
};
pub use rearrange::{
    density_relation_residual, monotone_transport, multiplicity, pushforward, Count, Measure1D,
    MultiplicityProfile, RearrangeError,
};
