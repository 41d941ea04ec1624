//! Exact and simulation-based analysis of metastable reversible Markov jump
//! processes on finite state spaces.
//!
//! The crate builds continuous-time chains from raw jump rates, certifies
//! reversibility, and computes the objects that control metastable behaviour:
//! trace, reflected and enlarged chains, capacities and equilibrium
//! potentials, spectral gaps and mixing profiles, quasi-stationary measures,
//! and the coarse-grained jump rates of the well process.  A simulation layer
//! produces trajectories, trace paths and hitting-time samples with
//! reproducible seeding, and `verify` bundles the cross-checks used by the
//! command line tool and the acceptance tests.

pub mod chain;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metastability;
pub mod models;
pub mod potential;
pub mod semigroup;
pub mod simulate;
pub mod spectral;
pub mod transforms;
pub mod verify;

pub use chain::{Chain, ChainOptions, Observable, ProbabilityMeasure, RateMatrix, StateSpace};
pub use error::{Error, Result};
pub use transforms::Partition;
