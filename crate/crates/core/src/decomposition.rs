//! Demand families `d_k(n) = c_k·n^{γ_k}` and their asymptotic decomposition
//! into classes, limit games and predicted equilibrium costs.

use num::{BigInt, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{DecompositionError, GameError};
use crate::game::{CostPolynomial, Game, GroupSpec, PathId};
use crate::numeric::{integer, rational_from_f64, rational_to_f64, Rational};
use crate::solvers::{
    solve_atomic_so, solve_nonatomic_ne, worst_atomic_ne, EquilibriumResult, SolverConfig,
};

/// Group demand `c·n^γ`, split into users of demand `user_demand·n^{user_gamma}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandLaw {
    pub c: Rational,
    pub gamma: Rational,
    pub user_demand: Rational,
    pub user_gamma: Rational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandFamily {
    base: Game,
    laws: Vec<DemandLaw>,
}

/// `n^q`, exact when the root is exact and through `f64` otherwise.
pub fn power_of_integer(n: u64, q: &Rational) -> Rational {
    let num = q.numer().abs();
    let den = q.denom().clone();
    if let (Some(a), Some(b)) = (num.to_u32(), den.to_u32()) {
        let raised = BigInt::from(n).pow(a);
        let root = raised.nth_root(b);
        if root.pow(b) == raised {
            let r = Rational::from_integer(root);
            return if q.is_negative() { r.recip() } else { r };
        }
    }
    rational_from_f64((n as f64).powf(rational_to_f64(q))).unwrap_or_else(Rational::zero)
}

impl DemandFamily {
    pub fn new(base: Game, laws: Vec<DemandLaw>) -> Result<Self, DecompositionError> {
        if laws.len() != base.groups().len() {
            return Err(DecompositionError::LawCount { groups: base.groups().len(), laws: laws.len() });
        }
        for (k, law) in laws.iter().enumerate() {
            let bad = |field: &str, message: &str| DecompositionError::InvalidLaw {
                path: format!("demand_laws[{k}].{field}"),
                message: message.into(),
            };
            if !law.c.is_positive() {
                return Err(bad("c", "must be positive"));
            }
            if law.gamma.is_negative() {
                return Err(bad("gamma", "must be nonnegative"));
            }
            if !law.user_demand.is_positive() {
                return Err(bad("user_demand", "must be positive"));
            }
        }
        Ok(Self { base, laws })
    }

    pub fn base(&self) -> &Game {
        &self.base
    }

    pub fn laws(&self) -> &[DemandLaw] {
        &self.laws
    }

    pub fn group_demand(&self, k: usize, n: u64) -> Rational {
        &self.laws[k].c * power_of_integer(n, &self.laws[k].gamma)
    }

    /// User demands of group `k` at index `n`: `m` users of demand `v` when
    /// `d/v` is an integer `m`, otherwise `⌊d/v⌋` such users with the
    /// remainder added to the last one.
    pub fn user_demands(&self, k: usize, n: u64) -> Vec<Rational> {
        let law = &self.laws[k];
        let d = self.group_demand(k, n);
        let v = &law.user_demand * power_of_integer(n, &law.user_gamma);
        if !v.is_positive() {
            return vec![d];
        }
        let m = &d / &v;
        let rounded = m.round();
        let close = (rational_to_f64(&(&m - &rounded))).abs() <= 1e-9 * rational_to_f64(&m).max(1.0);
        if close && rounded.is_positive() {
            let count = rounded.to_integer().to_usize().unwrap_or(usize::MAX);
            let mut users = vec![v.clone(); count];
            // Rounding may have moved a sliver of demand; keep the total exact.
            let drift = &d - &v * &rounded;
            if let Some(last) = users.last_mut() {
                *last += drift;
            }
            return users;
        }
        let whole = m.floor().to_integer().to_usize().unwrap_or(0);
        if whole == 0 {
            return vec![d];
        }
        let mut users = vec![v.clone(); whole];
        let rest = &d - &v * integer(whole as i64);
        *users.last_mut().expect("nonempty") += rest;
        users
    }

    /// The game at index `n`.
    pub fn instantiate(&self, n: u64) -> Result<Game, DecompositionError> {
        if n == 0 {
            return Err(DecompositionError::InvalidGrid);
        }
        let demands = (0..self.laws.len()).map(|k| self.user_demands(k, n)).collect();
        Ok(self.base.with_demands(demands)?)
    }
}

/// `(regular, irregular)` group indices: regular iff `γ > 0`.
pub fn classify_groups(family: &DemandFamily) -> (Vec<usize>, Vec<usize>) {
    (0..family.laws.len()).partition(|&k| family.laws[k].gamma.is_positive())
}

/// Regular groups sharing one demand exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandClass {
    pub groups: Vec<usize>,
    pub gamma: Rational,
}

/// Regular groups grouped by equal `γ`, classes in strictly decreasing `γ`.
pub fn ordered_partition(family: &DemandFamily) -> Result<Vec<DemandClass>, DecompositionError> {
    let (regular, _) = classify_groups(family);
    if regular.is_empty() {
        return Err(DecompositionError::NoRegularGroup);
    }
    let mut classes: Vec<DemandClass> = Vec::new();
    for k in regular {
        let gamma = &family.laws[k].gamma;
        match classes.iter_mut().find(|c| &c.gamma == gamma) {
            Some(c) => c.groups.push(k),
            None => classes.push(DemandClass { groups: vec![k], gamma: gamma.clone() }),
        }
    }
    classes.sort_by(|a, b| b.gamma.cmp(&a.gamma));
    Ok(classes)
}

fn path_degree(game: &Game, p: PathId) -> usize {
    game.paths()[p].arcs.iter().map(|&a| game.arcs()[a].cost.degree()).max().unwrap_or(0)
}

/// `λ = max_{k ∈ class} min_{p ∈ P_k} max_{a ∈ p} β_a`.
pub fn scaling_exponent(game: &Game, groups: &[usize]) -> usize {
    groups
        .iter()
        .map(|&k| game.groups()[k].paths.clone().map(|p| path_degree(game, p)).min().unwrap_or(0))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathLabel {
    pub path: PathId,
    pub tight: bool,
}

/// Paths of the class's groups, tight iff their largest arc degree is at
/// most `λ`.
pub fn tight_paths(game: &Game, groups: &[usize], lambda: usize) -> Result<Vec<PathLabel>, DecompositionError> {
    let mut labels = Vec::new();
    for &k in groups {
        let group = &game.groups()[k];
        let start = labels.len();
        labels.extend(group.paths.clone().map(|p| PathLabel { path: p, tight: path_degree(game, p) <= lambda }));
        if !labels[start..].iter().any(|l| l.tight) {
            return Err(DecompositionError::NoTightPath(group.id.clone()));
        }
    }
    Ok(labels)
}

/// Limit game of a class, with the original ids of its surviving paths.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitGame {
    pub game: Game,
    /// `paths[p']` is the path of the base game that limit path `p'` came from.
    pub paths: Vec<PathId>,
}

/// Arcs of degree above `λ` forbid their paths, arcs of degree `λ` keep
/// only their leading term and lower-degree arcs cost nothing. Each group
/// becomes one user with demand `c_k / Σ c`.
pub fn limit_game(family: &DemandFamily, groups: &[usize], lambda: usize) -> Result<LimitGame, DecompositionError> {
    let game = &family.base;
    let total_c: Rational = groups.iter().map(|&k| family.laws[k].c.clone()).sum();
    let mut used = vec![false; game.num_arcs()];
    for &k in groups {
        for p in game.groups()[k].paths.clone() {
            if path_degree(game, p) <= lambda {
                for &a in &game.paths()[p].arcs {
                    used[a] = true;
                }
            }
        }
    }
    let arcs: Vec<(String, CostPolynomial)> = game
        .arcs()
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(a, _)| {
            let cost = if a.cost.degree() == lambda {
                let mut coeffs = vec![Rational::zero(); lambda + 1];
                coeffs[0] = a.cost.leading().clone();
                CostPolynomial::from_unchecked(coeffs)
            } else {
                CostPolynomial::zero()
            };
            (a.id.clone(), cost)
        })
        .collect();
    let mut kept = Vec::new();
    let mut specs = Vec::new();
    for &k in groups {
        let group = &game.groups()[k];
        let mut paths = Vec::new();
        for p in group.paths.clone() {
            if path_degree(game, p) <= lambda {
                paths.push(game.paths()[p].arcs.iter().map(|&a| game.arcs()[a].id.clone()).collect());
                kept.push(p);
            }
        }
        if paths.is_empty() {
            return Err(DecompositionError::NoLimitPath(group.id.clone()));
        }
        specs.push(GroupSpec { id: group.id.clone(), paths, demands: vec![&family.laws[k].c / &total_c] });
    }
    let limit = Game::build(arcs, specs, false).map_err(|e: GameError| DecompositionError::Game(e))?;
    Ok(LimitGame { game: limit, paths: kept })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitNe {
    pub result: EquilibriumResult,
    /// `Σ_a f_a·τ_a(f_a)` at the limit NE.
    pub cost: f64,
}

pub fn limit_ne(limit: &LimitGame, config: &SolverConfig) -> Result<LimitNe, DecompositionError> {
    let result = solve_nonatomic_ne(&limit.game, config)?;
    if !result.converged {
        return Err(DecompositionError::Solver(crate::error::SolverError::NotConverged(format!(
            "limit game did not converge within {} sweeps",
            result.iterations
        ))));
    }
    let cost = result.total_cost.value;
    Ok(LimitNe { result, cost })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub groups: Vec<String>,
    pub gamma: Rational,
    pub lambda: usize,
    pub paths: Vec<PathLabel>,
    pub limit: LimitGame,
    pub limit_ne: LimitNe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub n: u64,
    pub total_demand: f64,
    /// `T_u(n)` per class.
    pub class_demands: Vec<f64>,
    /// `T_u(n)·T_u(n)^{λ_u}·limit cost` per class.
    pub class_costs: Vec<f64>,
    pub predicted: f64,
    pub measured_atomic: Option<f64>,
    /// The atomic value came from restarted best responses.
    pub atomic_lower_bound: bool,
    pub measured_nonatomic: Option<f64>,
    pub atomic_ratio: Option<f64>,
    pub nonatomic_ratio: Option<f64>,
    pub atomic_poa: Option<f64>,
    /// Why a measurement is missing.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub classes: Vec<ClassReport>,
    pub irregular: Vec<String>,
    pub rows: Vec<PredictionRow>,
}

/// Class structure and limit games of a family.
pub fn decompose(family: &DemandFamily, config: &SolverConfig) -> Result<Vec<ClassReport>, DecompositionError> {
    let game = &family.base;
    ordered_partition(family)?
        .into_iter()
        .map(|class| {
            let lambda = scaling_exponent(game, &class.groups);
            let paths = tight_paths(game, &class.groups, lambda)?;
            let limit = limit_game(family, &class.groups, lambda)?;
            let limit_ne = limit_ne(&limit, config)?;
            Ok(ClassReport {
                groups: class.groups.iter().map(|&k| game.groups()[k].id.clone()).collect(),
                gamma: class.gamma,
                lambda,
                paths,
                limit,
                limit_ne,
            })
        })
        .collect()
}

/// Predicted and measured equilibrium costs over a grid of indices.
pub fn decomposition_prediction(
    family: &DemandFamily,
    grid: &[u64],
    config: &SolverConfig,
) -> Result<DecompositionReport, DecompositionError> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DecompositionError::InvalidGrid);
    }
    let classes = decompose(family, config)?;
    let (_, irregular) = classify_groups(family);
    let rows = grid
        .par_iter()
        .map(|&n| prediction_row(family, &classes, n, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DecompositionReport {
        irregular: irregular.iter().map(|&k| family.base.groups()[k].id.clone()).collect(),
        classes,
        rows,
    })
}

fn prediction_row(
    family: &DemandFamily,
    classes: &[ClassReport],
    n: u64,
    config: &SolverConfig,
) -> Result<PredictionRow, DecompositionError> {
    let game = family.instantiate(n)?;
    let mut class_demands = Vec::new();
    let mut class_costs = Vec::new();
    for class in classes {
        let t: f64 = class
            .groups
            .iter()
            .map(|id| game.group_demand_f64(game.group_index(id).expect("class groups exist")))
            .sum();
        class_demands.push(t);
        class_costs.push(t * t.powi(class.lambda as i32) * class.limit_ne.cost);
    }
    let predicted = class_costs.iter().sum::<f64>();
    let mut notes = Vec::new();

    let (measured_atomic, atomic_lower_bound) = match worst_atomic_ne(&game, config) {
        Ok(w) => (Some(w.result.total_cost.value), w.lower_bound),
        Err(e) => {
            notes.push(format!("atomic: {e}"));
            (None, false)
        }
    };
    let atomic_so = match solve_atomic_so(&game, config) {
        Ok(so) => Some(so.total_cost.value),
        Err(e) => {
            notes.push(format!("atomic optimum: {e}"));
            None
        }
    };
    let measured_nonatomic = match solve_nonatomic_ne(&game, config) {
        Ok(r) if r.converged => Some(r.total_cost.value),
        Ok(r) => {
            notes.push(format!("non-atomic: no convergence after {} sweeps", r.iterations));
            None
        }
        Err(e) => {
            notes.push(format!("non-atomic: {e}"));
            None
        }
    };
    let ratio = |m: Option<f64>| m.filter(|_| predicted > 0.0).map(|m| m / predicted);
    Ok(PredictionRow {
        n,
        total_demand: game.total_demand_f64(),
        class_demands,
        class_costs,
        predicted,
        atomic_ratio: ratio(measured_atomic),
        nonatomic_ratio: ratio(measured_nonatomic),
        atomic_poa: measured_atomic.zip(atomic_so).map(|(ne, so)| ne / so),
        measured_atomic,
        atomic_lower_bound,
        measured_nonatomic,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::numeric::rational;
    use crate::schema::load_family;

    fn family_with(gammas: &[(i64, i64)]) -> DemandFamily {
        let mut specs = Vec::new();
        let mut arcs = Vec::new();
        for (k, _) in gammas.iter().enumerate() {
            arcs.push((format!("u{k}"), CostPolynomial::from_integers(&[1, 0]).unwrap()));
            arcs.push((format!("l{k}"), CostPolynomial::from_integers(&[1, 1]).unwrap()));
            specs.push(GroupSpec {
                id: format!("g{k}"),
                paths: vec![vec![format!("u{k}")], vec![format!("l{k}")]],
                demands: vec![integer(1)],
            });
        }
        let game = Game::new(arcs, specs).unwrap();
        let laws = gammas
            .iter()
            .map(|&(a, b)| DemandLaw {
                c: integer(1),
                gamma: rational(a, b),
                user_demand: integer(1),
                user_gamma: integer(0),
            })
            .collect();
        DemandFamily::new(game, laws).unwrap()
    }

    #[test]
    fn exact_powers() {
        assert_eq!(power_of_integer(10_000, &rational(1, 2)), integer(100));
        assert_eq!(power_of_integer(8, &rational(-1, 3)), rational(1, 2));
        assert_eq!(power_of_integer(7, &integer(0)), integer(1));
        let approx = rational_to_f64(&power_of_integer(2, &rational(1, 2)));
        assert!((approx - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn example4_instantiation() {
        let fam = catalog::example4_family();
        let g = fam.instantiate(10_000).unwrap();
        assert_eq!(g.group_demand(0), integer(20_000));
        assert_eq!(g.group_demand(1), integer(200));
        assert_eq!(g.groups()[0].users.len(), 200);
        assert_eq!(g.groups()[1].users.len(), 2);
        assert!(g.users().iter().all(|u| u.demand == integer(100)));
    }

    #[test]
    fn remainder_goes_to_one_user() {
        let mut fam = family_with(&[(1, 1)]);
        fam.laws[0].user_demand = rational(3, 2);
        let users = fam.user_demands(0, 4);
        assert_eq!(users, vec![rational(3, 2), rational(5, 2)]);
        assert_eq!(users.iter().sum::<Rational>(), integer(4));
        assert_eq!(fam.user_demands(0, 1), vec![integer(1)]);
    }

    #[test]
    fn classification_and_partition() {
        let fam = catalog::example4_family();
        assert_eq!(classify_groups(&fam), (vec![0, 1], vec![]));
        let classes = ordered_partition(&fam).unwrap();
        assert_eq!(classes.iter().map(|c| c.groups.clone()).collect::<Vec<_>>(), vec![vec![0], vec![1]]);

        let mixed = family_with(&[(1, 1), (0, 1)]);
        assert_eq!(classify_groups(&mixed), (vec![0], vec![1]));
        let same = family_with(&[(2, 1), (2, 1), (1, 1)]);
        let parts = ordered_partition(&same).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].groups, vec![0, 1]);
        assert_eq!(parts[1].groups, vec![2]);
        assert_eq!(ordered_partition(&family_with(&[(0, 1)])), Err(DecompositionError::NoRegularGroup));
    }

    #[test]
    fn example4_limits() {
        let fam = catalog::example4_family();
        let config = SolverConfig::default();
        let classes = decompose(&fam, &config).unwrap();
        assert_eq!((classes[0].lambda, classes[1].lambda), (1, 3));
        assert!(classes[1].paths.iter().all(|l| l.tight));
        let od2 = &classes[1].limit.game;
        assert_eq!(od2.arcs()[1].cost.coefficients(), &[integer(8), integer(0), integer(0), integer(0)]);
        assert_eq!(od2.total_demand(), integer(1));
        assert!((classes[1].limit_ne.cost - 8.0 / 27.0).abs() < 1e-9);
        let f = classes[1].limit_ne.result.path_flow(od2);
        assert!((f.values[0] - 2.0 / 3.0).abs() < 1e-7);
        assert!((classes[0].limit_ne.cost - 0.5).abs() < 1e-9);
    }

    #[test]
    fn high_degree_path_is_not_tight_and_is_removed() {
        let arcs = vec![
            ("a".to_string(), CostPolynomial::from_integers(&[1, 0, 0, 0]).unwrap()),
            ("b".to_string(), CostPolynomial::from_integers(&[1, 0, 0, 0, 0, 0]).unwrap()),
            ("c".to_string(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
        ];
        let game = Game::new(
            arcs,
            vec![GroupSpec {
                id: "g".into(),
                paths: vec![vec!["a".into()], vec!["b".into()], vec!["a".into(), "c".into()]],
                demands: vec![integer(1)],
            }],
        )
        .unwrap();
        let lambda = scaling_exponent(&game, &[0]);
        assert_eq!(lambda, 3);
        let labels = tight_paths(&game, &[0], lambda).unwrap();
        assert_eq!(labels.iter().map(|l| l.tight).collect::<Vec<_>>(), vec![true, false, true]);
        let fam = DemandFamily::new(
            game,
            vec![DemandLaw { c: integer(3), gamma: integer(1), user_demand: integer(1), user_gamma: integer(0) }],
        )
        .unwrap();
        let limit = limit_game(&fam, &[0], lambda).unwrap();
        assert_eq!(limit.paths, vec![0, 2]);
        assert!(limit.game.arcs().iter().any(|a| a.id == "c" && a.cost.is_zero()));
        assert_eq!(limit.game.total_demand(), integer(1));
    }

    #[test]
    fn constant_cheapest_path_gives_zero_exponent() {
        let game = catalog::parallel_links(&[&[2], &[1, 0]], &[1]);
        assert_eq!(scaling_exponent(&game, &[0]), 0);
    }

    #[test]
    fn grid_validation() {
        let fam = catalog::example4_family();
        let config = SolverConfig::default();
        for grid in [&[][..], &[0, 1][..], &[3, 2][..], &[2, 2][..]] {
            assert_eq!(decomposition_prediction(&fam, grid, &config).unwrap_err(), DecompositionError::InvalidGrid);
        }
    }

    #[test]
    fn law_count_mismatch() {
        let doc = r#"{"arcs":[{"id":"a","coeffs":[1,0]}],"groups":[{"id":"g","paths":[["a"]]}],"demand_laws":[]}"#;
        assert!(matches!(load_family(doc), Err(DecompositionError::LawCount { groups: 1, laws: 0 })));
    }
}
