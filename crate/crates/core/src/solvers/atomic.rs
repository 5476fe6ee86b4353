//! Atomic equilibria and optima.
//!
//! Enumeration works on counts rather than on raw profiles. Users of the
//! same group with the same demand are interchangeable, so a joint state
//! only records how many users of each such class sit on each path. Groups
//! that share no arc (directly or through other groups) are enumerated
//! independently: the equilibria of the whole game are products of the
//! per-component equilibria.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SolverError;
use crate::game::{AtomicProfile, Game, PathId};
use crate::numeric::{binomial, Rational, Scalar};
use crate::solvers::{Cost, EquilibriumKind, EquilibriumResult, Solution, SolverConfig};

const WORST_NE_RESTARTS: u64 = 32;

/// Users of one group sharing one demand value.
#[derive(Debug, Clone)]
struct Class {
    group: usize,
    demand: Rational,
    users: Vec<usize>,
}

fn symmetry_classes(game: &Game, groups: &[usize]) -> Vec<Class> {
    let mut classes = Vec::new();
    for &k in groups {
        let mut by_demand: BTreeMap<Rational, Vec<usize>> = BTreeMap::new();
        for i in game.groups()[k].users.clone() {
            by_demand.entry(game.users()[i].demand.clone()).or_default().push(i);
        }
        let mut local: Vec<Class> =
            by_demand.into_iter().map(|(demand, users)| Class { group: k, demand, users }).collect();
        local.sort_by_key(|c| c.users[0]);
        classes.extend(local);
    }
    classes
}

fn component_states(game: &Game, classes: &[Class]) -> f64 {
    classes
        .iter()
        .map(|c| {
            let r = game.groups()[c.group].paths.len();
            binomial(c.users.len() + r - 1, r - 1)
        })
        .product()
}

/// Lexicographic successor of a composition of `sum(counts)` into
/// `counts.len()` parts. Returns false after the last one.
fn next_composition(counts: &mut [u32]) -> bool {
    let r = counts.len();
    if r < 2 {
        return false;
    }
    // Find the rightmost non-last position with a positive count.
    let mut i = r - 1;
    loop {
        if i == 0 {
            return false;
        }
        i -= 1;
        if counts[i] > 0 {
            break;
        }
    }
    let tail = counts[r - 1];
    counts[r - 1] = 0;
    counts[i] -= 1;
    counts[i + 1] = tail + 1;
    true
}

/// Walks every joint count state of a component.
struct StateWalker {
    counts: Vec<Vec<u32>>,
    started: bool,
}

impl StateWalker {
    fn new(game: &Game, classes: &[Class]) -> Self {
        let counts = classes
            .iter()
            .map(|c| {
                let mut v = vec![0; game.groups()[c.group].paths.len()];
                v[0] = c.users.len() as u32;
                v
            })
            .collect();
        Self { counts, started: false }
    }

    fn advance(&mut self) -> bool {
        if !self.started {
            self.started = true;
            return true;
        }
        for c in (0..self.counts.len()).rev() {
            if next_composition(&mut self.counts[c]) {
                return true;
            }
            let total: u32 = self.counts[c].iter().sum();
            self.counts[c].iter_mut().for_each(|x| *x = 0);
            self.counts[c][0] = total;
        }
        false
    }
}

struct Evaluator<'g, S> {
    game: &'g Game,
    classes: Vec<Class>,
    demand: Vec<S>,
    arcs: Vec<usize>,
}

impl<'g, S: Scalar> Evaluator<'g, S> {
    fn new(game: &'g Game, classes: Vec<Class>) -> Self {
        let demand = classes.iter().map(|c| S::from_rational(&c.demand)).collect();
        let mut arcs: Vec<usize> = classes
            .iter()
            .flat_map(|c| game.groups()[c.group].paths.clone())
            .flat_map(|p| game.paths()[p].arcs.iter().copied())
            .collect();
        arcs.sort_unstable();
        arcs.dedup();
        Self { game, classes, demand, arcs }
    }

    fn arc_flow(&self, counts: &[Vec<u32>]) -> Vec<S> {
        let mut x = vec![S::zero(); self.game.num_arcs()];
        for (c, class) in self.classes.iter().enumerate() {
            let start = self.game.groups()[class.group].paths.start;
            for (local, &n) in counts[c].iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let load = S::from_usize(n as usize) * self.demand[c].clone();
                for &a in &self.game.paths()[start + local].arcs {
                    x[a] = x[a].clone() + load.clone();
                }
            }
        }
        x
    }

    fn cost(&self, x: &[S]) -> S {
        self.arcs.iter().fold(S::zero(), |acc, &a| {
            acc + x[a].clone() * S::eval_poly(&self.game.arcs()[a].cost, &x[a])
        })
    }

    fn is_ne(&self, counts: &[Vec<u32>], x: &[S]) -> bool {
        let game = self.game;
        let arc_cost: Vec<Option<S>> = (0..game.num_arcs())
            .map(|a| if self.arcs.binary_search(&a).is_ok() { Some(S::eval_poly(&game.arcs()[a].cost, &x[a])) } else { None })
            .collect();
        for (c, class) in self.classes.iter().enumerate() {
            let range = game.groups()[class.group].paths.clone();
            for (local, &n) in counts[c].iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let p = range.start + local;
                let current = game.paths()[p]
                    .arcs
                    .iter()
                    .fold(S::zero(), |acc, &a| acc + arc_cost[a].clone().expect("component arc"));
                for q in range.clone() {
                    if q == p {
                        continue;
                    }
                    let deviation = deviation_cost(game, &game.paths()[p].arcs, q, x, &self.demand[c]);
                    if S::improves(&deviation, &current) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn profile_into(&self, counts: &[Vec<u32>], choices: &mut [PathId]) {
        for (c, class) in self.classes.iter().enumerate() {
            let start = self.game.groups()[class.group].paths.start;
            let mut users = class.users.iter();
            for (local, &n) in counts[c].iter().enumerate() {
                for _ in 0..n {
                    choices[*users.next().expect("counts match class size")] = start + local;
                }
            }
        }
    }

    fn multiplicity(&self, counts: &[Vec<u32>]) -> f64 {
        counts
            .iter()
            .map(|row| {
                let mut left = row.iter().sum::<u32>() as usize;
                row.iter().fold(1.0, |acc, &n| {
                    let b = binomial(left, n as usize);
                    left -= n as usize;
                    acc * b
                })
            })
            .product()
    }
}

/// Cost of moving a user off the arcs `current` onto path `q`:
/// `Σ_{a ∈ q} τ_a(x_a + d·[a ∉ current])`.
fn deviation_cost<S: Scalar>(game: &Game, current: &[usize], q: PathId, x: &[S], demand: &S) -> S {
    game.paths()[q].arcs.iter().fold(S::zero(), |acc, &a| {
        let load = if current.binary_search(&a).is_ok() { x[a].clone() } else { x[a].clone() + demand.clone() };
        acc + S::eval_poly(&game.arcs()[a].cost, &load)
    })
}

struct ComponentOutcome<S> {
    equilibria: Vec<(Vec<Vec<u32>>, S)>,
    optimum: (Vec<Vec<u32>>, S),
}

fn check_budget(game: &Game, budget: u64) -> Result<Vec<(Vec<usize>, Vec<Class>)>, SolverError> {
    let comps: Vec<(Vec<usize>, Vec<Class>)> = game
        .arc_components()
        .into_iter()
        .map(|groups| {
            let classes = symmetry_classes(game, &groups);
            (groups, classes)
        })
        .collect();
    let needed: f64 = comps.iter().map(|(_, c)| component_states(game, c)).sum();
    if needed > budget as f64 {
        return Err(SolverError::BudgetExceeded { needed, budget });
    }
    Ok(comps)
}

fn enumerate_components<S: Scalar>(
    game: &Game,
    comps: Vec<(Vec<usize>, Vec<Class>)>,
    collect_ne: bool,
) -> Vec<ComponentOutcome<S>> {
    comps
        .into_iter()
        .map(|(_, classes)| {
            let eval = Evaluator::<S>::new(game, classes.clone());
            let mut walker = StateWalker::new(game, &classes);
            let mut equilibria = Vec::new();
            let mut optimum: Option<(Vec<Vec<u32>>, S)> = None;
            while walker.advance() {
                let x = eval.arc_flow(&walker.counts);
                let cost = eval.cost(&x);
                if collect_ne && eval.is_ne(&walker.counts, &x) {
                    equilibria.push((walker.counts.clone(), cost.clone()));
                }
                if optimum.as_ref().is_none_or(|(_, best)| cost < *best) {
                    optimum = Some((walker.counts.clone(), cost));
                }
            }
            ComponentOutcome { equilibria, optimum: optimum.expect("at least one state") }
        })
        .collect()
}

fn to_cost<S: Scalar>(value: &S) -> Cost {
    match value.to_rational() {
        Some(r) => Cost::exact(r),
        None => Cost::float(value.to_f64()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicEquilibrium {
    /// Canonical representative of its user-permutation orbit.
    pub profile: AtomicProfile,
    pub cost: Cost,
    /// Number of profiles in the orbit.
    pub multiplicity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicEnumeration {
    /// Every atomic NE up to permutations of interchangeable users.
    pub equilibria: Vec<AtomicEquilibrium>,
    /// False when the product of per-component lists was too large to list;
    /// `worst` and `best` are still exact.
    pub complete_list: bool,
    pub worst: Option<AtomicEquilibrium>,
    pub best: Option<AtomicEquilibrium>,
    pub states_examined: f64,
    pub exact: bool,
}

/// All atomic NE by exhaustive enumeration with the unilateral-deviation
/// test. Exact arithmetic is used whenever the game's numbers allow it.
pub fn enumerate_atomic_equilibria(game: &Game, config: &SolverConfig) -> Result<AtomicEnumeration, SolverError> {
    config.validate()?;
    if game.prefers_exact() {
        enumerate_impl::<Rational>(game, config)
    } else {
        enumerate_impl::<f64>(game, config)
    }
}

fn enumerate_impl<S: Scalar>(game: &Game, config: &SolverConfig) -> Result<AtomicEnumeration, SolverError> {
    let comps = check_budget(game, config.enumeration_budget)?;
    let states_examined = comps.iter().map(|(_, c)| component_states(game, c)).sum();
    let evals: Vec<Evaluator<S>> = comps.iter().map(|(_, c)| Evaluator::new(game, c.clone())).collect();
    let outcomes = enumerate_components::<S>(game, comps, true);

    let assemble = |picks: &[usize], pick_state: &dyn Fn(usize, usize) -> (Vec<Vec<u32>>, S)| {
        let mut choices = vec![0; game.num_users()];
        let mut cost = S::zero();
        let mut multiplicity = 1.0;
        for (ci, &j) in picks.iter().enumerate() {
            let (counts, c) = pick_state(ci, j);
            evals[ci].profile_into(&counts, &mut choices);
            multiplicity *= evals[ci].multiplicity(&counts);
            cost = cost + c;
        }
        AtomicEquilibrium { profile: AtomicProfile { choices }, cost: to_cost(&cost), multiplicity }
    };
    let ne_state = |ci: usize, j: usize| outcomes[ci].equilibria[j].clone();

    if outcomes.iter().any(|o| o.equilibria.is_empty()) {
        return Ok(AtomicEnumeration {
            equilibria: Vec::new(),
            complete_list: true,
            worst: None,
            best: None,
            states_examined,
            exact: S::EXACT,
        });
    }

    let extreme = |want_max: bool| -> Vec<usize> {
        outcomes
            .iter()
            .map(|o| {
                let mut best = 0;
                for (j, (_, c)) in o.equilibria.iter().enumerate() {
                    let better = if want_max { *c > o.equilibria[best].1 } else { *c < o.equilibria[best].1 };
                    if better {
                        best = j;
                    }
                }
                best
            })
            .collect()
    };
    let worst = assemble(&extreme(true), &ne_state);
    let best = assemble(&extreme(false), &ne_state);

    let combos: f64 = outcomes.iter().map(|o| o.equilibria.len() as f64).product();
    let complete_list = combos <= config.enumeration_budget as f64;
    let mut equilibria = Vec::new();
    if complete_list {
        let mut picks = vec![0usize; outcomes.len()];
        'list: loop {
            equilibria.push(assemble(&picks, &ne_state));
            for i in (0..picks.len()).rev() {
                picks[i] += 1;
                if picks[i] < outcomes[i].equilibria.len() {
                    continue 'list;
                }
                picks[i] = 0;
            }
            break;
        }
    }
    Ok(AtomicEnumeration {
        equilibria,
        complete_list,
        worst: Some(worst),
        best: Some(best),
        states_examined,
        exact: S::EXACT,
    })
}

/// Exact minimiser of total cost over all atomic profiles.
pub fn solve_atomic_so(game: &Game, config: &SolverConfig) -> Result<EquilibriumResult, SolverError> {
    config.validate()?;
    if game.prefers_exact() {
        so_impl::<Rational>(game, config)
    } else {
        so_impl::<f64>(game, config)
    }
}

fn so_impl<S: Scalar>(game: &Game, config: &SolverConfig) -> Result<EquilibriumResult, SolverError> {
    let start = Instant::now();
    let comps = check_budget(game, config.enumeration_budget)?;
    let states: f64 = comps.iter().map(|(_, c)| component_states(game, c)).sum();
    let evals: Vec<Evaluator<S>> = comps.iter().map(|(_, c)| Evaluator::new(game, c.clone())).collect();
    let outcomes = enumerate_components::<S>(game, comps, false);
    let mut choices = vec![0; game.num_users()];
    let mut cost = S::zero();
    for (eval, o) in evals.iter().zip(&outcomes) {
        eval.profile_into(&o.optimum.0, &mut choices);
        cost = cost + o.optimum.1.clone();
    }
    Ok(EquilibriumResult {
        kind: EquilibriumKind::AtomicSo,
        solution: Solution::Atomic(AtomicProfile { choices }),
        residual: 0.0,
        iterations: states as u64,
        exact: S::EXACT,
        converged: true,
        total_cost: to_cost(&cost),
        wall_time: start.elapsed(),
    })
}

/// Exact unilateral-deviation test for one profile.
pub fn is_atomic_ne(game: &Game, profile: &AtomicProfile) -> bool {
    if game.prefers_exact() {
        is_ne_impl::<Rational>(game, profile)
    } else {
        is_ne_impl::<f64>(game, profile)
    }
}

fn is_ne_impl<S: Scalar>(game: &Game, profile: &AtomicProfile) -> bool {
    let x = game.arc_flow_unchecked(&profile.induced_flow::<S>(game).values);
    let arc_costs = game.arc_costs(&x);
    profile.choices.iter().zip(game.users()).all(|(&p, u)| {
        let current = game.path_cost_from_arc_costs(p, &arc_costs);
        let d = S::from_rational(&u.demand);
        game.groups()[u.group]
            .paths
            .clone()
            .filter(|&q| q != p)
            .all(|q| !S::improves(&deviation_cost(game, &game.paths()[p].arcs, q, &x, &d), &current))
    })
}

/// Round-robin best responses. Ties keep the current path, otherwise the
/// lowest path index wins. `max_iterations` caps the number of moves; a
/// capped run returns with `converged = false`.
pub fn best_response_atomic(
    game: &Game,
    config: &SolverConfig,
    initial: &AtomicProfile,
) -> Result<EquilibriumResult, SolverError> {
    config.validate()?;
    let initial = AtomicProfile::new(game, initial.choices.clone())?;
    if game.prefers_exact() {
        Ok(best_response_impl::<Rational>(game, config, initial))
    } else {
        Ok(best_response_impl::<f64>(game, config, initial))
    }
}

fn best_response_impl<S: Scalar>(game: &Game, config: &SolverConfig, mut profile: AtomicProfile) -> EquilibriumResult {
    let start = Instant::now();
    let demands: Vec<S> = game.users().iter().map(|u| S::from_rational(&u.demand)).collect();
    let mut x = game.arc_flow_unchecked(&profile.induced_flow::<S>(game).values);
    let mut moves = 0u64;
    let mut converged = false;
    'outer: loop {
        let mut moved = false;
        for (i, u) in game.users().iter().enumerate() {
            let range = game.groups()[u.group].paths.clone();
            if range.len() < 2 {
                continue;
            }
            let p = profile.choices[i];
            let current = game.paths()[p]
                .arcs
                .iter()
                .fold(S::zero(), |acc, &a| acc + S::eval_poly(&game.arcs()[a].cost, &x[a]));
            let mut best: Option<(PathId, S)> = None;
            for q in range.filter(|&q| q != p) {
                let c = deviation_cost(game, &game.paths()[p].arcs, q, &x, &demands[i]);
                if best.as_ref().is_none_or(|(_, b)| c < *b) {
                    best = Some((q, c));
                }
            }
            if let Some((q, c)) = best {
                if S::improves(&c, &current) {
                    if moves >= config.max_iterations {
                        break 'outer;
                    }
                    for &a in &game.paths()[p].arcs {
                        x[a] = x[a].clone() - demands[i].clone();
                    }
                    for &a in &game.paths()[q].arcs {
                        x[a] = x[a].clone() + demands[i].clone();
                    }
                    profile.choices[i] = q;
                    moves += 1;
                    moved = true;
                }
            }
        }
        if !moved {
            converged = true;
            break;
        }
    }
    let cost = game.total_cost_from_arc_flow(&x);
    EquilibriumResult {
        kind: EquilibriumKind::AtomicNe,
        solution: Solution::Atomic(profile),
        residual: 0.0,
        iterations: moves,
        exact: S::EXACT,
        converged,
        total_cost: to_cost(&cost),
        wall_time: start.elapsed(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstNe {
    pub result: EquilibriumResult,
    /// True when the value comes from restarted best responses rather than
    /// enumeration, so it only bounds the worst case from below.
    pub lower_bound: bool,
}

/// Worst atomic NE by enumeration, or, beyond the budget, the worst of 32
/// best-response runs from seeded random starts.
pub fn worst_atomic_ne(game: &Game, config: &SolverConfig) -> Result<WorstNe, SolverError> {
    let start = Instant::now();
    match enumerate_atomic_equilibria(game, config) {
        Ok(e) => {
            let worst = e.worst.ok_or(SolverError::NoAtomicEquilibrium)?;
            Ok(WorstNe {
                result: EquilibriumResult {
                    kind: EquilibriumKind::AtomicNe,
                    solution: Solution::Atomic(worst.profile),
                    residual: 0.0,
                    iterations: e.states_examined as u64,
                    exact: e.exact,
                    converged: true,
                    total_cost: worst.cost,
                    wall_time: start.elapsed(),
                },
                lower_bound: false,
            })
        }
        Err(SolverError::BudgetExceeded { .. }) => {
            let mut worst: Option<EquilibriumResult> = None;
            for r in 0..WORST_NE_RESTARTS {
                let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
                rng.set_stream(r);
                let choices = game
                    .users()
                    .iter()
                    .map(|u| {
                        let range = game.groups()[u.group].paths.clone();
                        rng.random_range(range)
                    })
                    .collect();
                let result = best_response_atomic(game, config, &AtomicProfile { choices })?;
                if result.converged
                    && worst.as_ref().is_none_or(|w| result.total_cost.value > w.total_cost.value)
                {
                    worst = Some(result);
                }
            }
            let mut result = worst.ok_or_else(|| {
                SolverError::NotConverged("no best-response restart reached an equilibrium".into())
            })?;
            result.wall_time = start.elapsed();
            Ok(WorstNe { result, lower_bound: true })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::numeric::{integer, rational};

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn compositions_are_complete() {
        let mut c = vec![3, 0, 0];
        let mut seen = 1;
        while next_composition(&mut c) {
            assert_eq!(c.iter().sum::<u32>(), 3);
            seen += 1;
        }
        assert_eq!(seen, 10);
    }

    #[test]
    fn example3_equilibria() {
        let g = catalog::example3(1);
        let e = enumerate_atomic_equilibria(&g, &cfg()).unwrap();
        // Both users up (cost 4) and the split (cost 3, two orbit members).
        assert_eq!(e.equilibria.len(), 2);
        let total: f64 = e.equilibria.iter().map(|x| x.multiplicity).sum();
        assert_eq!(total, 3.0);
        assert_eq!(e.worst.unwrap().cost.exact, Some(integer(4)));
        assert_eq!(e.best.unwrap().cost.exact, Some(integer(3)));
    }

    #[test]
    fn example2_unique_equilibrium() {
        let g = catalog::example2(1);
        let e = enumerate_atomic_equilibria(&g, &cfg()).unwrap();
        assert_eq!(e.equilibria.len(), 1);
        assert_eq!(e.equilibria[0].multiplicity, 1.0);
        assert_eq!(e.equilibria[0].cost.exact, Some(integer(1)));
        let so = solve_atomic_so(&g, &cfg()).unwrap();
        assert_eq!(so.total_cost.exact, Some(rational(7, 8)));
        let up = so.atomic_profile().unwrap().choices.iter().filter(|&&p| p == 0).count();
        assert_eq!(up, 3);
    }

    #[test]
    fn one_user_one_path() {
        let g = catalog::parallel_links(&[&[1, 0]], &[1]);
        let e = enumerate_atomic_equilibria(&g, &cfg()).unwrap();
        assert_eq!(e.equilibria.len(), 1);
        assert_eq!(e.equilibria[0].profile.choices, vec![0]);
    }

    #[test]
    fn constant_tie_so() {
        let g = catalog::parallel_links(&[&[1], &[1]], &[1]);
        let so = solve_atomic_so(&g, &cfg()).unwrap();
        assert_eq!(so.total_cost.exact, Some(integer(1)));
    }

    #[test]
    fn best_response_examples() {
        let g = catalog::example2(1);
        let start = AtomicProfile::new(&g, vec![1, 1, 0, 1]).unwrap();
        let r = best_response_atomic(&g, &cfg(), &start).unwrap();
        assert!(r.converged);
        assert_eq!(r.atomic_profile().unwrap().choices, vec![0, 0, 0, 0]);
        assert_eq!(r.total_cost.exact, Some(integer(1)));

        let g = catalog::example3(1);
        let split = AtomicProfile::new(&g, vec![0, 1]).unwrap();
        let r = best_response_atomic(&g, &cfg(), &split).unwrap();
        assert_eq!(r.atomic_profile().unwrap(), &split);
        assert_eq!(r.total_cost.exact, Some(integer(3)));
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn single_path_group_unchanged() {
        let g = catalog::parallel_links(&[&[1, 0]], &[1, 2, 3]);
        let p = AtomicProfile::first_paths(&g);
        let r = best_response_atomic(&g, &cfg(), &p).unwrap();
        assert_eq!(r.atomic_profile().unwrap(), &p);
    }

    #[test]
    fn budget_is_enforced() {
        let g = catalog::example2(5);
        let config = SolverConfig { enumeration_budget: 5, ..cfg() };
        assert!(matches!(enumerate_atomic_equilibria(&g, &config), Err(SolverError::BudgetExceeded { .. })));
        let w = worst_atomic_ne(&g, &config).unwrap();
        assert!(w.lower_bound);
        assert_eq!(w.result.total_cost.exact, Some(integer(1)));
    }

    #[test]
    fn enumeration_matches_raw_profile_check() {
        // Oracle: test every raw profile directly.
        let g = catalog::example3(1);
        let e = enumerate_atomic_equilibria(&g, &cfg()).unwrap();
        let mut raw = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                if is_atomic_ne(&g, &AtomicProfile::new(&g, vec![a, b]).unwrap()) {
                    raw += 1.0;
                }
            }
        }
        assert_eq!(raw, e.equilibria.iter().map(|x| x.multiplicity).sum::<f64>());
    }
}
