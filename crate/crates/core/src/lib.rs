//! Numerical estimation of sharp Hardy-Morrey constants.
//!
//! For `p > n` and an open set `Omega`, the constant is the infimum of
//! `R_p(u) = ||Du||_p^p / sup(|u| / d^(1 - n/p))^p` over functions vanishing
//! off `Omega`, `d` being the distance to the complement. It is computed here
//! through p-harmonic potentials on uniform grids.

pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod potential;
pub mod spectrum;

pub use error::{Error, Result};
pub use geometry::{apply_transform, nearest_boundary_point, supporting_halfspace, Compact, Domain, Profile, SimilarityTransform};
pub use mesh::{DiscreteFunction, EnergyReport, GridSpec};
pub use potential::{solve_potential, PotentialSolution, SolveOptions};
pub use spectrum::{estimate_lambda, rayleigh, LambdaEstimate, RayleighReport, SearchMode, SearchOptions};
