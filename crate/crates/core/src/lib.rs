//! Atomic, non-atomic and mixed equilibria of congestion games with
//! polynomial arc costs, their prices of anarchy, the scaled-game bounds
//! and the asymptotic decomposition of growing demand families.

pub mod bounds;
pub mod catalog;
pub mod decomposition;
pub mod error;
pub mod game;
pub mod numeric;
pub mod poa;
pub mod runner;
pub mod schema;
pub mod solvers;

pub use error::{BoundError, DecompositionError, GameError, SolverError};
pub use game::{AtomicProfile, CostPolynomial, Game, GroupSpec, MixedProfile, PathFlow};
pub use numeric::Rational;
pub use solvers::{Cost, EquilibriumKind, EquilibriumResult, SolverConfig};

/// Crate version, stamped on every CSV row.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
