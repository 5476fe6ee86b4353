//! Non-atomic equilibria and optima by pairwise conditional-gradient moves.
//!
//! Each move shifts flow inside one group from its most expensive used path
//! to its cheapest path, with an exact line search on the potential along
//! that direction. Groups are swept in order until the Wardrop gap of every
//! group is below `tolerance · (1 + min path cost)`.

use std::time::Instant;

use crate::error::{GameError, SolverError};
use crate::game::{CostPolynomial, Game, PathFlow};
use crate::solvers::{Cost, EquilibriumKind, EquilibriumResult, Solution, SolverConfig};

/// A flow counts as using a path when `f_p > USED_THRESHOLD · d_k`.
pub const USED_THRESHOLD: f64 = 1e-12;

const BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Beckmann potential: Wardrop equilibrium.
    Equilibrium,
    /// Total cost: system optimum, driven by marginal costs.
    SystemOptimum,
}

impl Objective {
    fn arc_cost(self, poly: &CostPolynomial, x: f64) -> f64 {
        match self {
            Objective::Equilibrium => poly.eval(x),
            Objective::SystemOptimum => poly.marginal(x),
        }
    }

    fn kind(self) -> EquilibriumKind {
        match self {
            Objective::Equilibrium => EquilibriumKind::NonatomicNe,
            Objective::SystemOptimum => EquilibriumKind::NonatomicSo,
        }
    }
}

pub fn solve_nonatomic_ne(game: &Game, config: &SolverConfig) -> Result<EquilibriumResult, SolverError> {
    solve_nonatomic(game, config, Objective::Equilibrium, None)
}

pub fn solve_nonatomic_so(game: &Game, config: &SolverConfig) -> Result<EquilibriumResult, SolverError> {
    solve_nonatomic(game, config, Objective::SystemOptimum, None)
}

/// Runs the solver from `initial` (default: every group on its first path).
/// Exhausting the iteration limit is not an error: the last iterate comes
/// back with `converged = false`.
pub fn solve_nonatomic(
    game: &Game,
    config: &SolverConfig,
    objective: Objective,
    initial: Option<PathFlow<f64>>,
) -> Result<EquilibriumResult, SolverError> {
    config.validate()?;
    let start = Instant::now();
    let mut flow = match initial {
        Some(f) => {
            f.check_feasible(game, 1e-9)?;
            f.values
        }
        None => {
            let mut v = vec![0.0; game.num_paths()];
            for (k, g) in game.groups().iter().enumerate() {
                v[g.paths.start] = game.group_demand_f64(k);
            }
            v
        }
    };
    let mut arc = game.arc_flow_unchecked(&flow);
    let tol = config.tolerance;

    let mut iterations = 0;
    let mut converged = gaps_within(game, objective, &flow, &arc, tol);
    while !converged && iterations < config.max_iterations {
        iterations += 1;
        for (k, g) in game.groups().iter().enumerate() {
            if g.paths.len() < 2 {
                continue;
            }
            let used = USED_THRESHOLD * game.group_demand_f64(k);
            for _ in 0..2 * g.paths.len() {
                let costs: Vec<f64> =
                    g.paths.clone().map(|p| path_cost(game, objective, &arc, p)).collect();
                let (q, min) = argmin(&costs);
                let (p, max) = g
                    .paths
                    .clone()
                    .zip(&costs)
                    .filter(|&(p, _)| flow[p] > used)
                    .fold((usize::MAX, f64::NEG_INFINITY), |acc, (p, &c)| if c > acc.1 { (p, c) } else { acc });
                let q = g.paths.start + q;
                if p == usize::MAX || p == q || max - min <= 0.1 * tol * (1.0 + min.abs()) {
                    break;
                }
                shift(game, objective, &mut flow, &mut arc, p, q);
            }
        }
        converged = gaps_within(game, objective, &flow, &arc, tol);
    }

    let residual = wardrop_gaps(game, objective, &flow, &arc).into_iter().map(|(gap, _)| gap).fold(0.0, f64::max);
    let total = game.total_cost_from_arc_flow(&arc);
    Ok(EquilibriumResult {
        kind: objective.kind(),
        solution: Solution::Path(PathFlow::new(flow)),
        residual,
        iterations,
        exact: false,
        converged,
        total_cost: Cost::float(total),
        wall_time: start.elapsed(),
    })
}

fn argmin(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &c)| if c < acc.1 { (i, c) } else { acc })
}

fn path_cost(game: &Game, objective: Objective, arc: &[f64], p: usize) -> f64 {
    game.paths()[p].arcs.iter().map(|&a| objective.arc_cost(&game.arcs()[a].cost, arc[a])).sum()
}

/// Moves flow from `p` to `q` by the exact minimiser of the objective along
/// that direction, found by bisection on its derivative.
fn shift(game: &Game, objective: Objective, flow: &mut [f64], arc: &mut [f64], p: usize, q: usize) {
    let from = &game.paths()[p].arcs;
    let to = &game.paths()[q].arcs;
    let plus: Vec<usize> = to.iter().copied().filter(|a| !from.contains(a)).collect();
    let minus: Vec<usize> = from.iter().copied().filter(|a| !to.contains(a)).collect();
    let derivative = |t: f64| -> f64 {
        let up: f64 = plus.iter().map(|&a| objective.arc_cost(&game.arcs()[a].cost, arc[a] + t)).sum();
        let down: f64 =
            minus.iter().map(|&a| objective.arc_cost(&game.arcs()[a].cost, (arc[a] - t).max(0.0))).sum();
        up - down
    };
    let t_max = flow[p];
    let t = if derivative(t_max) <= 0.0 {
        t_max
    } else {
        let (mut lo, mut hi) = (0.0, t_max);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if derivative(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    if t == t_max {
        flow[p] = 0.0;
    } else {
        flow[p] -= t;
    }
    flow[q] += t;
    for &a in &plus {
        arc[a] += t;
    }
    for &a in &minus {
        arc[a] = (arc[a] - t).max(0.0);
    }
}

/// Per group: (max used-path cost − min path cost, min path cost).
fn wardrop_gaps(game: &Game, objective: Objective, flow: &[f64], arc: &[f64]) -> Vec<(f64, f64)> {
    game.groups()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let used = USED_THRESHOLD * game.group_demand_f64(k);
            let mut min = f64::INFINITY;
            let mut max_used = f64::NEG_INFINITY;
            for p in g.paths.clone() {
                let c = path_cost(game, objective, arc, p);
                min = min.min(c);
                if flow[p] > used {
                    max_used = max_used.max(c);
                }
            }
            ((max_used - min).max(0.0), min)
        })
        .collect()
}

fn gaps_within(game: &Game, objective: Objective, flow: &[f64], arc: &[f64], tol: f64) -> bool {
    wardrop_gaps(game, objective, flow, arc).into_iter().all(|(gap, min)| gap <= tol * (1.0 + min.abs()))
}

/// Wardrop residual: the largest gap between a used path and the cheapest
/// path of its group. `tolerance` bounds the feasibility check.
pub fn verify_wardrop(game: &Game, flow: &PathFlow<f64>, tolerance: f64) -> Result<f64, GameError> {
    flow.check_feasible(game, tolerance.max(1e-12))?;
    let arc = game.arc_flow(flow)?;
    Ok(wardrop_gaps(game, Objective::Equilibrium, &flow.values, &arc).into_iter().map(|(g, _)| g).fold(0.0, f64::max))
}

/// `max_{f'} Σ_a τ_a(f_a)(f_a − f'_a)`, attained by sending each group's
/// demand down its cheapest path.
pub fn epsilon_ne_residual(game: &Game, flow: &PathFlow<f64>) -> Result<f64, GameError> {
    flow.check_feasible(game, 1e-9)?;
    let costs = game.path_costs(flow)?;
    let mut total = 0.0;
    for (k, g) in game.groups().iter().enumerate() {
        let used: f64 = g.paths.clone().map(|p| flow.values[p] * costs[p]).sum();
        let min = g.paths.clone().map(|p| costs[p]).fold(f64::INFINITY, f64::min);
        total += used - game.group_demand_f64(k) * min;
    }
    Ok(total.max(0.0))
}

/// `Φ(f) = Σ_a ∫_0^{f_a} τ_a`.
pub fn beckmann_potential(game: &Game, flow: &PathFlow<f64>) -> Result<f64, GameError> {
    let arc = game.arc_flow(flow)?;
    Ok(game.arcs().iter().zip(&arc).map(|(a, &x)| a.cost.integral(x)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn example1_wardrop_flow() {
        let g = catalog::example1();
        let r = solve_nonatomic_ne(&g, &cfg()).unwrap();
        let f = r.path_flow(&g);
        let s = 2f64.sqrt();
        assert!(r.converged);
        assert!((f.values[0] - s).abs() < 1e-8, "{:?}", f.values);
        assert!((f.values[1] - (4.0 - s)).abs() < 1e-8);
    }

    #[test]
    fn pigou_boundary_solution() {
        let g = catalog::parallel_links(&[&[1, 0], &[1]], &[1]);
        let r = solve_nonatomic_ne(&g, &cfg()).unwrap();
        let f = r.path_flow(&g);
        assert!((f.values[0] - 1.0).abs() < 1e-8 && f.values[1].abs() < 1e-8);
    }

    #[test]
    fn example3_closed_form() {
        let g = catalog::example3(1);
        let r = solve_nonatomic_ne(&g, &cfg()).unwrap();
        let f = r.path_flow(&g);
        assert!((f.values[0] - 4.0 / 3.0).abs() < 1e-8 && (f.values[1] - 2.0 / 3.0).abs() < 1e-8);
        let costs = g.path_costs(&f).unwrap();
        assert!((costs[0] - 4.0 / 3.0).abs() < 1e-8 && (costs[1] - 4.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn example1_system_optimum() {
        let g = catalog::example1();
        let r = solve_nonatomic_so(&g, &cfg()).unwrap();
        let f = r.path_flow(&g);
        // Stationarity of marginal costs: 3 f_u^2 = 2.
        assert!((f.values[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-8);
        let expected = 8.0 - 4.0 * 6f64.sqrt() / 9.0;
        assert!((r.total_cost.value - expected).abs() < 1e-7);
    }

    #[test]
    fn example2_system_optimum() {
        for n in [1, 3] {
            let g = catalog::example2(n);
            let r = solve_nonatomic_so(&g, &cfg()).unwrap();
            let f = r.path_flow(&g);
            assert!((f.values[0] - 0.75).abs() < 1e-8);
            assert!((r.total_cost.value - 0.875).abs() < 1e-9);
        }
    }

    #[test]
    fn single_arc_takes_everything() {
        let g = catalog::parallel_links(&[&[1, 1]], &[3]);
        let r = solve_nonatomic_so(&g, &cfg()).unwrap();
        assert_eq!(r.path_flow(&g).values, vec![3.0]);
        assert_eq!(r.total_cost.value, 3.0 * 4.0);
    }

    #[test]
    fn wardrop_residuals() {
        let g = catalog::example1();
        let s = 2f64.sqrt();
        assert!(verify_wardrop(&g, &PathFlow::new(vec![s, 4.0 - s]), 1e-12).unwrap() < 1e-9);
        assert_eq!(verify_wardrop(&g, &PathFlow::new(vec![0.0, 4.0]), 1e-12).unwrap(), 2.0);
        let single = catalog::parallel_links(&[&[1, 0]], &[1]);
        assert_eq!(verify_wardrop(&single, &PathFlow::new(vec![1.0]), 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn epsilon_residual_closed_forms() {
        let g = catalog::example1();
        assert_eq!(epsilon_ne_residual(&g, &PathFlow::new(vec![0.0, 4.0])).unwrap(), 8.0);
        assert_eq!(epsilon_ne_residual(&g, &PathFlow::new(vec![4.0, 0.0])).unwrap(), 56.0);
        let ne = solve_nonatomic_ne(&g, &cfg()).unwrap().path_flow(&g);
        assert!(epsilon_ne_residual(&g, &ne).unwrap() < 1e-8);
        assert!(matches!(
            epsilon_ne_residual(&g, &PathFlow::new(vec![1.0, 1.0])),
            Err(GameError::InfeasibleFlow(_))
        ));
    }

    #[test]
    fn iteration_limit_reports_non_convergence() {
        let g = catalog::example1();
        let config = SolverConfig { max_iterations: 1, tolerance: 1e-300, ..cfg() };
        let r = solve_nonatomic_ne(&g, &config).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }
}
