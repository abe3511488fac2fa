//! Simulation of 2d log-correlated Gaussian fields with scale-dependent
//! variance: the discrete Gaussian free field (DGFF), its scale-inhomogeneous
//! variant, hierarchical branching-random-walk surrogates, a three-field
//! approximation with variance matching, and a thinned-peaks surrogate for the
//! law of the centered maximum. Includes exact covariance machinery, samplers,
//! extreme-value estimators, and Gaussian comparison checks.

pub mod comparison;
pub mod covariance;
pub mod error;
pub mod extremes;
pub mod io;
pub mod lattice;
pub mod profile;
pub mod sampler;
pub mod stats;

pub use error::{Error, Result};
