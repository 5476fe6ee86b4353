//! Equilibrium and system-optimum solvers.

use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::SolverError;
use crate::game::{AtomicProfile, Game, MixedProfile, PathFlow};
use crate::numeric::{rational_to_f64, Rational};

pub mod atomic;
pub mod mixed;
pub mod nonatomic;

pub use atomic::{
    best_response_atomic, enumerate_atomic_equilibria, is_atomic_ne, solve_atomic_so, worst_atomic_ne,
    AtomicEnumeration, AtomicEquilibrium, WorstNe,
};
pub use mixed::{
    certified_two_by_two, expected_path_costs, expected_total_cost, exact_expected_total_cost, solve_mixed_ne_small,
    verify_mixed_ne,
};
pub use nonatomic::{
    beckmann_potential, epsilon_ne_residual, solve_nonatomic, solve_nonatomic_ne, solve_nonatomic_so, verify_wardrop,
    Objective,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Relative tolerance for convex solvers and mixed-NE residuals.
    pub tolerance: f64,
    pub max_iterations: u64,
    pub rng_seed: u64,
    /// Maximum number of joint states an enumeration may visit.
    pub enumeration_budget: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 100_000, rng_seed: 0, enumeration_budget: 10_000_000 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tolerance > 0.0) {
            return Err(SolverError::InvalidConfig(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.enumeration_budget < 1 {
            return Err(SolverError::InvalidConfig("enumeration budget must be at least 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(SolverError::InvalidConfig("iteration limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    NonatomicNe,
    NonatomicSo,
    AtomicNe,
    AtomicSo,
    MixedNe,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Solution {
    Path(PathFlow<f64>),
    Atomic(AtomicProfile),
    Mixed(MixedProfile),
}

/// A cost value with its exact rational form when one was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cost {
    pub value: f64,
    pub exact: Option<Rational>,
}

impl Cost {
    pub fn float(value: f64) -> Self {
        Self { value, exact: None }
    }

    pub fn exact(r: Rational) -> Self {
        Self { value: rational_to_f64(&r), exact: Some(r) }
    }

    pub fn ratio(&self, other: &Cost) -> Cost {
        match (&self.exact, &other.exact) {
            (Some(a), Some(b)) if !num::Zero::is_zero(b) => Cost::exact(a / b),
            _ => Cost::float(self.value / other.value),
        }
    }

    pub fn add(&self, other: &Cost) -> Cost {
        match (&self.exact, &other.exact) {
            (Some(a), Some(b)) => Cost::exact(a + b),
            _ => Cost::float(self.value + other.value),
        }
    }

    /// `"8/7"` when exact, otherwise the float.
    pub fn display(&self) -> String {
        match &self.exact {
            Some(r) if r.is_integer() => r.to_string(),
            Some(r) => format!("{}/{}", r.numer(), r.denom()),
            None => format!("{}", self.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    pub kind: EquilibriumKind,
    pub solution: Solution,
    /// Equilibrium or optimality residual in cost units; 0 for exact results.
    pub residual: f64,
    pub iterations: u64,
    pub exact: bool,
    pub converged: bool,
    pub total_cost: Cost,
    pub wall_time: Duration,
}

impl EquilibriumResult {
    pub fn path_flow(&self, game: &Game) -> PathFlow<f64> {
        match &self.solution {
            Solution::Path(f) => f.clone(),
            Solution::Atomic(p) => p.induced_flow(game),
            Solution::Mixed(m) => m.expected_path_flow(game),
        }
    }

    pub fn atomic_profile(&self) -> Option<&AtomicProfile> {
        match &self.solution {
            Solution::Atomic(p) => Some(p),
            _ => None,
        }
    }

    pub fn mixed_profile(&self) -> Option<&MixedProfile> {
        match &self.solution {
            Solution::Mixed(m) => Some(m),
            _ => None,
        }
    }

    /// Report document: kind, flow vector, residual, iterations, exact flag
    /// and wall time.
    pub fn to_report(&self, game: &Game) -> Value {
        let mut doc = json!({
            "kind": self.kind,
            "flow": self.path_flow(game).values,
            "residual": self.residual,
            "iterations": self.iterations,
            "exact": self.exact,
            "converged": self.converged,
            "total_cost": self.total_cost.value,
            "wall_time_seconds": self.wall_time.as_secs_f64(),
        });
        if let Some(r) = &self.total_cost.exact {
            doc["total_cost_exact"] = json!(format!("{}/{}", r.numer(), r.denom()));
        }
        match &self.solution {
            Solution::Atomic(p) => doc["profile"] = json!(p.choices),
            Solution::Mixed(m) => doc["profile"] = json!(m.probs),
            Solution::Path(_) => {}
        }
        doc
    }
}

pub mod verify {
    //! Equilibrium predicates collected in one place.
    pub use super::atomic::is_atomic_ne;
    pub use super::mixed::verify_mixed_ne;
    pub use super::nonatomic::{epsilon_ne_residual, verify_wardrop};
}
