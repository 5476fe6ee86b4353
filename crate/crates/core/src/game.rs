//! Games, profiles and flows, plus deterministic cost evaluation.
//!
//! Paths are indexed globally: the paths of group `k` occupy a contiguous
//! range of ids, in the order they were declared. Users are indexed globally
//! in the same way.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use num::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GameError;
use crate::numeric::{is_small_rational, rational_to_f64, Rational, Scalar};

pub type PathId = usize;
pub type ArcId = usize;

/// Per-arc cost `τ(x) = Σ_l η_l · x^(β−l)`, coefficients stored highest
/// degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPolynomial {
    coeffs: Vec<Rational>,
    coeffs_f64: Vec<f64>,
}

impl CostPolynomial {
    pub fn new(coeffs: Vec<Rational>) -> Result<Self, GameError> {
        if coeffs.is_empty() {
            return Err(GameError::Schema {
                path: "coeffs".into(),
                message: "at least one coefficient required".into(),
            });
        }
        if coeffs.iter().any(|c| c.is_negative()) {
            return Err(GameError::NegativeCoefficient { path: "coeffs".into() });
        }
        if coeffs[0].is_zero() {
            return Err(GameError::ZeroLeadingCoefficient { path: "coeffs".into() });
        }
        Ok(Self::from_unchecked(coeffs))
    }

    pub fn from_integers(coeffs: &[i64]) -> Result<Self, GameError> {
        Self::new(coeffs.iter().map(|&c| Rational::from_integer(c.into())).collect())
    }

    /// The identically-zero cost. Only limit games use it; loaded games
    /// always have a positive leading coefficient.
    pub(crate) fn zero() -> Self {
        Self::from_unchecked(vec![Rational::zero()])
    }

    pub(crate) fn from_unchecked(coeffs: Vec<Rational>) -> Self {
        let coeffs_f64 = coeffs.iter().map(rational_to_f64).collect();
        Self { coeffs, coeffs_f64 }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coefficients(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn coefficients_f64(&self) -> &[f64] {
        &self.coeffs_f64
    }

    pub fn leading(&self) -> &Rational {
        &self.coeffs[0]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Zero::is_zero)
    }

    pub fn max_coefficient(&self) -> &Rational {
        self.coeffs.iter().max().expect("nonempty")
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs_f64.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_exact(&self, x: &Rational) -> Rational {
        let mut acc = Rational::zero();
        for c in &self.coeffs {
            acc = acc * x + c;
        }
        acc
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let beta = self.degree();
        self.coeffs_f64[..beta]
            .iter()
            .enumerate()
            .fold(0.0, |acc, (l, &c)| acc * x + c * (beta - l) as f64)
    }

    /// `d/dx [x·τ(x)] = τ(x) + x·τ'(x)`, the marginal social cost.
    pub fn marginal(&self, x: f64) -> f64 {
        let beta = self.degree();
        self.coeffs_f64
            .iter()
            .enumerate()
            .fold(0.0, |acc, (l, &c)| acc * x + c * (beta - l + 1) as f64)
    }

    /// `∫_0^x τ(s) ds`.
    pub fn integral(&self, x: f64) -> f64 {
        let beta = self.degree();
        let inner = self
            .coeffs_f64
            .iter()
            .enumerate()
            .fold(0.0, |acc, (l, &c)| acc * x + c / (beta - l + 1) as f64);
        inner * x
    }

    /// `E[τ(X)]` given raw moments `moments[j] = E[X^j]`, `j = 0..=β`.
    pub fn expectation_from_moments(&self, moments: &[f64]) -> f64 {
        let beta = self.degree();
        self.coeffs_f64
            .iter()
            .enumerate()
            .map(|(l, &c)| c * moments[beta - l])
            .sum()
    }

    /// `E[X·τ(X)]` given raw moments up to order `β + 1`.
    pub fn weighted_expectation_from_moments(&self, moments: &[f64]) -> f64 {
        let beta = self.degree();
        self.coeffs_f64
            .iter()
            .enumerate()
            .map(|(l, &c)| c * moments[beta - l + 1])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArc {
    pub id: String,
    pub cost: CostPolynomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub group: usize,
    pub local: usize,
    pub arcs: Vec<ArcId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub id: String,
    pub paths: Range<PathId>,
    pub users: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub group: usize,
    pub demand: Rational,
    pub demand_f64: f64,
}

/// Construction input for one group: paths as arc-id lists and user demands.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub id: String,
    pub paths: Vec<Vec<String>>,
    pub demands: Vec<Rational>,
}

/// A congestion game: arcs with polynomial costs, and groups with disjoint
/// path sets and positive user demands.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    arcs: Vec<NetworkArc>,
    groups: Vec<Group>,
    paths: Vec<Path>,
    users: Vec<User>,
    arc_index: HashMap<String, ArcId>,
}

impl Game {
    pub fn new(arcs: Vec<(String, CostPolynomial)>, groups: Vec<GroupSpec>) -> Result<Self, GameError> {
        Self::build(arcs, groups, true)
    }

    pub(crate) fn build(
        arcs: Vec<(String, CostPolynomial)>,
        specs: Vec<GroupSpec>,
        check_costs: bool,
    ) -> Result<Self, GameError> {
        let mut arc_index = HashMap::new();
        let mut arc_list = Vec::with_capacity(arcs.len());
        for (i, (id, cost)) in arcs.into_iter().enumerate() {
            if arc_index.insert(id.clone(), i).is_some() {
                return Err(GameError::Schema {
                    path: format!("arcs[{i}].id"),
                    message: format!("duplicate arc id `{id}`"),
                });
            }
            if check_costs && cost.leading().is_zero() {
                return Err(GameError::ZeroLeadingCoefficient { path: format!("arcs[{i}].coeffs") });
            }
            arc_list.push(NetworkArc { id, cost });
        }
        if specs.is_empty() {
            return Err(GameError::Schema { path: "groups".into(), message: "at least one group required".into() });
        }

        let mut groups = Vec::with_capacity(specs.len());
        let mut paths = Vec::new();
        let mut users = Vec::new();
        let mut owner: HashMap<BTreeSet<ArcId>, usize> = HashMap::new();
        let mut group_ids = BTreeSet::new();
        for (k, spec) in specs.into_iter().enumerate() {
            if !group_ids.insert(spec.id.clone()) {
                return Err(GameError::Schema {
                    path: format!("groups[{k}].id"),
                    message: format!("duplicate group id `{}`", spec.id),
                });
            }
            if spec.paths.is_empty() {
                return Err(GameError::Schema {
                    path: format!("groups[{k}].paths"),
                    message: "at least one path required".into(),
                });
            }
            if spec.demands.is_empty() {
                return Err(GameError::Schema {
                    path: format!("groups[{k}].users"),
                    message: "at least one user required".into(),
                });
            }
            let path_start = paths.len();
            for (j, arc_ids) in spec.paths.iter().enumerate() {
                let field = format!("groups[{k}].paths[{j}]");
                if arc_ids.is_empty() {
                    return Err(GameError::Schema { path: field, message: "path must contain at least one arc".into() });
                }
                let mut set = BTreeSet::new();
                for a in arc_ids {
                    let idx = *arc_index
                        .get(a)
                        .ok_or_else(|| GameError::UnknownArc { path: field.clone(), arc: a.clone() })?;
                    set.insert(idx);
                }
                match owner.get(&set) {
                    Some(&other) if other != k => {
                        return Err(GameError::DisjointnessViolated {
                            path: field,
                            other: groups.get(other).map(|g: &Group| g.id.clone()).unwrap_or_default(),
                        });
                    }
                    _ => {
                        owner.insert(set.clone(), k);
                    }
                }
                paths.push(Path { group: k, local: j, arcs: set.into_iter().collect() });
            }
            let user_start = users.len();
            for (i, d) in spec.demands.iter().enumerate() {
                if !d.is_positive() {
                    return Err(GameError::NonpositiveDemand { path: format!("groups[{k}].users[{i}].demand") });
                }
                users.push(User { group: k, demand: d.clone(), demand_f64: rational_to_f64(d) });
            }
            groups.push(Group { id: spec.id, paths: path_start..paths.len(), users: user_start..users.len() });
        }
        Ok(Self { arcs: arc_list, groups, paths, users, arc_index })
    }

    pub fn arcs(&self) -> &[NetworkArc] {
        &self.arcs
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn users(&self) -> &[User] {
        &self.users
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn arc_id(&self, id: &str) -> Option<ArcId> {
        self.arc_index.get(id).copied()
    }

    pub fn group_index(&self, id: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.id == id)
    }

    /// Display name of a path: `group:position`.
    pub fn path_label(&self, p: PathId) -> String {
        let path = &self.paths[p];
        format!("{}:{}", self.groups[path.group].id, path.local)
    }

    pub fn group_spec(&self, k: usize) -> GroupSpec {
        let g = &self.groups[k];
        GroupSpec {
            id: g.id.clone(),
            paths: self.paths[g.paths.clone()]
                .iter()
                .map(|p| p.arcs.iter().map(|&a| self.arcs[a].id.clone()).collect())
                .collect(),
            demands: self.users[g.users.clone()].iter().map(|u| u.demand.clone()).collect(),
        }
    }

    pub fn arc_specs(&self) -> Vec<(String, CostPolynomial)> {
        self.arcs.iter().map(|a| (a.id.clone(), a.cost.clone())).collect()
    }

    /// `T(U, d)`.
    pub fn total_demand(&self) -> Rational {
        self.users.iter().map(|u| u.demand.clone()).fold(Rational::zero(), |a, b| a + b)
    }

    pub fn total_demand_f64(&self) -> f64 {
        self.users.iter().map(|u| u.demand_f64).sum()
    }

    pub fn max_demand(&self) -> Rational {
        self.users.iter().map(|u| u.demand.clone()).max().expect("games have users")
    }

    pub fn max_demand_f64(&self) -> f64 {
        self.users.iter().map(|u| u.demand_f64).fold(0.0, f64::max)
    }

    /// `d_k`.
    pub fn group_demand(&self, k: usize) -> Rational {
        self.users[self.groups[k].users.clone()]
            .iter()
            .map(|u| u.demand.clone())
            .fold(Rational::zero(), |a, b| a + b)
    }

    pub fn group_demand_f64(&self, k: usize) -> f64 {
        self.users[self.groups[k].users.clone()].iter().map(|u| u.demand_f64).sum()
    }

    /// All users share one demand value.
    pub fn is_unweighted(&self) -> bool {
        self.users.windows(2).all(|w| w[0].demand == w[1].demand)
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.arcs.iter().map(|a| a.cost.degree()).collect()
    }

    /// True when every coefficient and demand is a modest rational, so exact
    /// enumeration is affordable.
    pub fn prefers_exact(&self) -> bool {
        self.arcs.iter().all(|a| a.cost.coefficients().iter().all(is_small_rational))
            && self.users.iter().all(|u| is_small_rational(&u.demand))
    }

    fn check_len<S>(&self, flow: &PathFlow<S>) -> Result<(), GameError> {
        if flow.values.len() != self.paths.len() {
            return Err(GameError::FlowLength { expected: self.paths.len(), got: flow.values.len() });
        }
        Ok(())
    }

    /// `f_a = Σ_{p ∋ a} f_p`.
    pub fn arc_flow<S: Scalar>(&self, flow: &PathFlow<S>) -> Result<Vec<S>, GameError> {
        self.check_len(flow)?;
        Ok(self.arc_flow_unchecked(&flow.values))
    }

    pub(crate) fn arc_flow_unchecked<S: Scalar>(&self, values: &[S]) -> Vec<S> {
        let mut arc = vec![S::zero(); self.arcs.len()];
        for (p, v) in self.paths.iter().zip(values) {
            for &a in &p.arcs {
                arc[a] = arc[a].clone() + v.clone();
            }
        }
        arc
    }

    pub(crate) fn arc_costs<S: Scalar>(&self, arc_flow: &[S]) -> Vec<S> {
        self.arcs.iter().zip(arc_flow).map(|(a, x)| S::eval_poly(&a.cost, x)).collect()
    }

    pub(crate) fn path_cost_from_arc_costs<S: Scalar>(&self, p: PathId, arc_costs: &[S]) -> S {
        self.paths[p].arcs.iter().fold(S::zero(), |acc, &a| acc + arc_costs[a].clone())
    }

    /// `τ_p(f) = Σ_{a ∈ p} τ_a(f_a)`.
    pub fn path_cost<S: Scalar>(&self, flow: &PathFlow<S>, path: PathId) -> Result<S, GameError> {
        if path >= self.paths.len() {
            return Err(GameError::UnknownPath(path));
        }
        let arc = self.arc_flow(flow)?;
        Ok(self.paths[path]
            .arcs
            .iter()
            .fold(S::zero(), |acc, &a| acc + S::eval_poly(&self.arcs[a].cost, &arc[a])))
    }

    pub fn path_costs<S: Scalar>(&self, flow: &PathFlow<S>) -> Result<Vec<S>, GameError> {
        let arc = self.arc_flow(flow)?;
        let costs = self.arc_costs(&arc);
        Ok((0..self.paths.len()).map(|p| self.path_cost_from_arc_costs(p, &costs)).collect())
    }

    /// `C(f) = Σ_a f_a · τ_a(f_a)`.
    pub fn total_cost<S: Scalar>(&self, flow: &PathFlow<S>) -> Result<S, GameError> {
        let arc = self.arc_flow(flow)?;
        Ok(self.total_cost_from_arc_flow(&arc))
    }

    pub(crate) fn total_cost_from_arc_flow<S: Scalar>(&self, arc_flow: &[S]) -> S {
        self.arcs
            .iter()
            .zip(arc_flow)
            .fold(S::zero(), |acc, (a, x)| acc + x.clone() * S::eval_poly(&a.cost, x))
    }

    fn resolve_groups(&self, groups: &[&str]) -> Result<Vec<usize>, GameError> {
        if groups.is_empty() {
            return Err(GameError::EmptySubset);
        }
        let mut out = Vec::with_capacity(groups.len());
        for g in groups {
            let k = self.group_index(g).ok_or_else(|| GameError::UnknownGroup(g.to_string()))?;
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// `C_{K'}(f) = Σ_{k ∈ K'} Σ_{p ∈ P_k} f_p · τ_p(f)`, path costs taken
    /// on the full arc flow.
    pub fn joint_total_cost<S: Scalar>(&self, flow: &PathFlow<S>, groups: &[&str]) -> Result<S, GameError> {
        let ks = self.resolve_groups(groups)?;
        let arc = self.arc_flow(flow)?;
        let costs = self.arc_costs(&arc);
        let mut total = S::zero();
        for k in ks {
            for p in self.groups[k].paths.clone() {
                total = total + flow.values[p].clone() * self.path_cost_from_arc_costs(p, &costs);
            }
        }
        Ok(total)
    }

    /// The subgame `Γ_{|K'}`: same arcs, only the listed groups.
    pub fn subgame_restrict(&self, groups: &[&str]) -> Result<Game, GameError> {
        let ks = self.resolve_groups(groups)?;
        self.restrict_to_indices(&ks)
    }

    pub fn restrict_to_indices(&self, ks: &[usize]) -> Result<Game, GameError> {
        if ks.is_empty() {
            return Err(GameError::EmptySubset);
        }
        let specs = ks
            .iter()
            .map(|&k| {
                if k >= self.groups.len() {
                    Err(GameError::UnknownGroup(k.to_string()))
                } else {
                    Ok(self.group_spec(k))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Game::build(self.arc_specs(), specs, false)
    }

    /// Same network with new per-group demand lists.
    pub fn with_demands(&self, demands: Vec<Vec<Rational>>) -> Result<Game, GameError> {
        let specs = demands
            .into_iter()
            .enumerate()
            .map(|(k, d)| GroupSpec { demands: d, ..self.group_spec(k) })
            .collect();
        Game::build(self.arc_specs(), specs, false)
    }

    /// Groups partitioned into components that share no arc. Each component
    /// is a sorted list of group indices; components are ordered by their
    /// smallest group.
    pub fn arc_components(&self) -> Vec<Vec<usize>> {
        let n = self.groups.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            let mut y = x;
            while parent[y] != r {
                let next = parent[y];
                parent[y] = r;
                y = next;
            }
            r
        }
        let mut arc_owner: Vec<Option<usize>> = vec![None; self.arcs.len()];
        for p in &self.paths {
            for &a in &p.arcs {
                match arc_owner[a] {
                    None => arc_owner[a] = Some(p.group),
                    Some(o) => {
                        let (ra, rb) = (find(&mut parent, o), find(&mut parent, p.group));
                        if ra != rb {
                            parent[ra.max(rb)] = ra.min(rb);
                        }
                    }
                }
            }
        }
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut index: HashMap<usize, usize> = HashMap::new();
        for k in 0..n {
            let r = find(&mut parent, k);
            let slot = *index.entry(r).or_insert_with(|| {
                comps.push(Vec::new());
                comps.len() - 1
            });
            comps[slot].push(k);
        }
        comps
    }
}

/// Per-path flow values, indexed by global path id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFlow<S = f64> {
    pub values: Vec<S>,
}

impl<S: Scalar> PathFlow<S> {
    pub fn new(values: Vec<S>) -> Self {
        Self { values }
    }

    pub fn zeros(game: &Game) -> Self {
        Self { values: vec![S::zero(); game.num_paths()] }
    }

    pub fn to_f64(&self) -> PathFlow<f64> {
        PathFlow { values: self.values.iter().map(Scalar::to_f64).collect() }
    }

    /// Scales every entry by `1 / factor`.
    pub fn divided_by(&self, factor: &S) -> Self {
        Self { values: self.values.iter().map(|v| v.clone() / factor.clone()).collect() }
    }
}

impl PathFlow<f64> {
    /// Checks `Σ_{p ∈ P_k} f_p = d_k` for every group within `tol·(1+d_k)`.
    pub fn check_feasible(&self, game: &Game, tol: f64) -> Result<(), GameError> {
        if self.values.len() != game.num_paths() {
            return Err(GameError::FlowLength { expected: game.num_paths(), got: self.values.len() });
        }
        for (k, g) in game.groups().iter().enumerate() {
            let sum: f64 = self.values[g.paths.clone()].iter().sum();
            let d = game.group_demand_f64(k);
            if self.values[g.paths.clone()].iter().any(|&v| v < -tol * (1.0 + d)) {
                return Err(GameError::InfeasibleFlow(format!("negative flow in group `{}`", g.id)));
            }
            if (sum - d).abs() > tol * (1.0 + d) {
                return Err(GameError::InfeasibleFlow(format!(
                    "group `{}` carries {sum} but demands {d}",
                    g.id
                )));
            }
        }
        Ok(())
    }
}

/// One path per user.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicProfile {
    pub choices: Vec<PathId>,
}

impl AtomicProfile {
    pub fn new(game: &Game, choices: Vec<PathId>) -> Result<Self, GameError> {
        if choices.len() != game.num_users() {
            return Err(GameError::InvalidProfile(format!(
                "{} choices for {} users",
                choices.len(),
                game.num_users()
            )));
        }
        for (i, (&p, u)) in choices.iter().zip(game.users()).enumerate() {
            if !game.groups()[u.group].paths.contains(&p) {
                return Err(GameError::InvalidProfile(format!(
                    "user {i} picks path {p} outside its group `{}`",
                    game.groups()[u.group].id
                )));
            }
        }
        Ok(Self { choices })
    }

    /// Every user on the first path of its group.
    pub fn first_paths(game: &Game) -> Self {
        Self { choices: game.users().iter().map(|u| game.groups()[u.group].paths.start).collect() }
    }

    pub fn induced_flow<S: Scalar>(&self, game: &Game) -> PathFlow<S> {
        let mut values = vec![S::zero(); game.num_paths()];
        for (&p, u) in self.choices.iter().zip(game.users()) {
            values[p] = values[p].clone() + S::from_rational(&u.demand);
        }
        PathFlow { values }
    }
}

/// Per-user probability vectors over the user's group paths (local order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    pub probs: Vec<Vec<f64>>,
}

pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

impl MixedProfile {
    pub fn new(game: &Game, probs: Vec<Vec<f64>>) -> Result<Self, GameError> {
        if probs.len() != game.num_users() {
            return Err(GameError::InvalidProfile(format!(
                "{} distributions for {} users",
                probs.len(),
                game.num_users()
            )));
        }
        for (i, (pi, u)) in probs.iter().zip(game.users()).enumerate() {
            let width = game.groups()[u.group].paths.len();
            if pi.len() != width {
                return Err(GameError::InvalidProfile(format!(
                    "user {i} has {} probabilities for {width} paths",
                    pi.len()
                )));
            }
            if pi.iter().any(|&x| !(x >= 0.0) || x > 1.0 + PROBABILITY_SUM_TOLERANCE) {
                return Err(GameError::InvalidProfile(format!("user {i} has a probability outside [0, 1]")));
            }
            let sum: f64 = pi.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                return Err(GameError::InvalidProfile(format!("user {i} probabilities sum to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn degenerate(game: &Game, atomic: &AtomicProfile) -> Self {
        let probs = atomic
            .choices
            .iter()
            .zip(game.users())
            .map(|(&p, u)| {
                let range = game.groups()[u.group].paths.clone();
                range.map(|q| if q == p { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        Self { probs }
    }

    pub fn uniform(game: &Game) -> Self {
        let probs = game
            .users()
            .iter()
            .map(|u| {
                let n = game.groups()[u.group].paths.len();
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self { probs }
    }

    /// Same distribution (local path order) for every user of each group.
    pub fn group_symmetric(game: &Game, per_group: &[Vec<f64>]) -> Self {
        let probs = game.users().iter().map(|u| per_group[u.group].clone()).collect();
        Self { probs }
    }

    /// `Π_{i,a} = Σ_{p ∋ a} Π_{i,p}` for every user and arc.
    pub fn arc_probabilities(&self, game: &Game) -> Vec<Vec<f64>> {
        self.probs
            .iter()
            .zip(game.users())
            .map(|(pi, u)| {
                let mut row = vec![0.0; game.num_arcs()];
                for (local, p) in game.groups()[u.group].paths.clone().enumerate() {
                    for &a in &game.paths()[p].arcs {
                        row[a] += pi[local];
                    }
                }
                for x in &mut row {
                    *x = x.min(1.0);
                }
                row
            })
            .collect()
    }

    /// `E_Π(f_p) = Σ_i d_i · Π_{i,p}`.
    pub fn expected_path_flow(&self, game: &Game) -> PathFlow<f64> {
        let mut values = vec![0.0; game.num_paths()];
        for (pi, u) in self.probs.iter().zip(game.users()) {
            for (local, p) in game.groups()[u.group].paths.clone().enumerate() {
                values[p] += u.demand_f64 * pi[local];
            }
        }
        PathFlow { values }
    }

    /// Draws one atomic state. Sample `index` under `seed` is a pure function
    /// of the pair: each index reads its own ChaCha stream.
    pub fn sample(&self, game: &Game, seed: u64, index: u64) -> RandomFlowSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let choices = self
            .probs
            .iter()
            .zip(game.users())
            .map(|(pi, u)| {
                let range = game.groups()[u.group].paths.clone();
                let r: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = range.end - 1;
                for (local, p) in range.clone().enumerate() {
                    acc += pi[local];
                    if r < acc {
                        chosen = p;
                        break;
                    }
                }
                // Skip zero-probability tails hit by rounding.
                while pi[chosen - range.start] == 0.0 && chosen > range.start {
                    chosen -= 1;
                }
                chosen
            })
            .collect();
        RandomFlowSample { profile: AtomicProfile { choices }, seed, index }
    }
}

/// One realization of a random flow and the stream position that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFlowSample {
    pub profile: AtomicProfile,
    pub seed: u64,
    pub index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of every arc flow under independent user choices.
pub fn expected_arc_flow_and_variance(game: &Game, profile: &MixedProfile) -> Vec<ArcMoments> {
    let arc_probs = profile.arc_probabilities(game);
    let mut out = vec![ArcMoments { mean: 0.0, variance: 0.0 }; game.num_arcs()];
    for (row, u) in arc_probs.iter().zip(game.users()) {
        let d = u.demand_f64;
        for (a, &q) in row.iter().enumerate() {
            out[a].mean += d * q;
            out[a].variance += d * d * q * (1.0 - q);
        }
    }
    out
}

/// Raw moments `E[X^j]`, `j = 0..=order`, of `X = Σ_i d_i · B_i` with
/// independent `B_i ~ Bernoulli(q_i)`.
pub fn weighted_bernoulli_moments(terms: impl IntoIterator<Item = (f64, f64)>, order: usize) -> Vec<f64> {
    let mut m = vec![0.0; order + 1];
    m[0] = 1.0;
    let mut binom = vec![vec![1.0f64; order + 1]; order + 1];
    for j in 0..=order {
        for i in 1..j {
            binom[j][i] = binom[j - 1][i - 1] + binom[j - 1][i];
        }
    }
    let mut next = vec![0.0; order + 1];
    for (d, q) in terms {
        if q <= 0.0 {
            continue;
        }
        // E[(Y + dB)^j] = Σ_i C(j,i) E[Y^{j-i}] E[(dB)^i], E[(dB)^i] = q d^i for i ≥ 1.
        let mut dpow = vec![1.0; order + 1];
        for i in 1..=order {
            dpow[i] = dpow[i - 1] * d;
        }
        for j in 0..=order {
            let mut acc = m[j];
            for i in 1..=j {
                acc += binom[j][i] * m[j - i] * q * dpow[i];
            }
            next[j] = acc;
        }
        std::mem::swap(&mut m, &mut next);
    }
    m
}

impl Default for PathFlow<f64> {
    fn default() -> Self {
        Self { values: Vec::new() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{integer, rational};

    fn example1() -> Game {
        Game::new(
            vec![
                ("u".into(), CostPolynomial::from_integers(&[1, 0, 0]).unwrap()),
                ("l".into(), CostPolynomial::from_integers(&[2]).unwrap()),
            ],
            vec![GroupSpec {
                id: "od".into(),
                paths: vec![vec!["u".into()], vec!["l".into()]],
                demands: vec![integer(2), integer(2)],
            }],
        )
        .unwrap()
    }

    #[test]
    fn horner_matches_direct_power_sum() {
        let p = CostPolynomial::from_integers(&[3, 0, 2, 1]).unwrap();
        for x in [0.0, 0.5, 1.0, 2.5] {
            let direct = 3.0 * x * x * x + 2.0 * x + 1.0;
            assert!((p.eval(x) - direct).abs() < 1e-12);
            assert!((p.derivative(x) - (9.0 * x * x + 2.0)).abs() < 1e-12);
            assert!((p.marginal(x) - (12.0 * x * x * x + 4.0 * x + 1.0)).abs() < 1e-12);
            assert!((p.integral(x) - (0.75 * x.powi(4) + x * x + x)).abs() < 1e-12);
        }
        assert_eq!(p.eval_exact(&rational(1, 2)), rational(3, 8) + integer(2));
    }

    #[test]
    fn rejects_zero_leading_and_negative_coefficients() {
        assert!(matches!(
            CostPolynomial::from_integers(&[0, 1]),
            Err(GameError::ZeroLeadingCoefficient { .. })
        ));
        assert!(matches!(
            CostPolynomial::from_integers(&[1, -1]),
            Err(GameError::NegativeCoefficient { .. })
        ));
    }

    #[test]
    fn example1_derived_quantities() {
        let g = example1();
        assert_eq!(g.total_demand(), integer(4));
        assert_eq!(g.max_demand(), integer(2));
        assert!(g.is_unweighted());
    }

    #[test]
    fn arc_flow_additivity_on_shared_arc() {
        let g = Game::new(
            vec![
                ("s".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
                ("a".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
                ("b".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
            ],
            vec![GroupSpec {
                id: "k".into(),
                paths: vec![vec!["s".into(), "a".into()], vec!["s".into(), "b".into()]],
                demands: vec![integer(3)],
            }],
        )
        .unwrap();
        let arc = g.arc_flow(&PathFlow::new(vec![1.0, 2.0])).unwrap();
        assert_eq!(arc, vec![3.0, 1.0, 2.0]);
        let zero = g.arc_flow(&PathFlow::<f64>::zeros(&g)).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn path_cost_two_linear_arcs() {
        let g = Game::new(
            vec![
                ("a".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
                ("b".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
            ],
            vec![GroupSpec { id: "k".into(), paths: vec![vec!["a".into(), "b".into()]], demands: vec![integer(1)] }],
        )
        .unwrap();
        assert_eq!(g.path_cost(&PathFlow::new(vec![1.0]), 0).unwrap(), 2.0);
        assert!(matches!(g.path_cost(&PathFlow::new(vec![1.0]), 3), Err(GameError::UnknownPath(3))));
    }

    #[test]
    fn constant_arc_costs_two_on_empty_flow() {
        let g = example1();
        assert_eq!(g.path_cost(&PathFlow::<f64>::zeros(&g), 1).unwrap(), 2.0);
        assert_eq!(g.total_cost(&PathFlow::<f64>::zeros(&g)).unwrap(), 0.0);
    }

    #[test]
    fn example1_wardrop_flow_path_cost() {
        let g = example1();
        let s = 2f64.sqrt();
        let flow = PathFlow::new(vec![s, 4.0 - s]);
        assert_eq!(g.arc_flow(&flow).unwrap(), vec![s, 4.0 - s]);
        assert!((g.path_cost(&flow, 0).unwrap() - 2.0).abs() < 1e-12);
        assert!((g.path_cost(&flow, 1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn subgame_and_joint_cost() {
        let g = example1();
        let same = g.subgame_restrict(&["od"]).unwrap();
        assert_eq!(same, g);
        assert!(matches!(g.subgame_restrict(&[]), Err(GameError::EmptySubset)));
        assert!(matches!(g.subgame_restrict(&["nope"]), Err(GameError::UnknownGroup(_))));
        let flow = PathFlow::new(vec![1.0, 3.0]);
        assert_eq!(g.joint_total_cost(&flow, &["od"]).unwrap(), g.total_cost(&flow).unwrap());
    }

    #[test]
    fn mixed_profile_validation() {
        let g = example1();
        assert!(MixedProfile::new(&g, vec![vec![0.5, 0.5], vec![1.0, 0.0]]).is_ok());
        assert!(MixedProfile::new(&g, vec![vec![0.5, 0.6], vec![1.0, 0.0]]).is_err());
        assert!(MixedProfile::new(&g, vec![vec![-0.1, 1.1], vec![1.0, 0.0]]).is_err());
        assert!(MixedProfile::new(&g, vec![vec![1.0]]).is_err());
    }

    #[test]
    fn atomic_profile_rejects_foreign_paths() {
        let g = example1();
        assert!(AtomicProfile::new(&g, vec![0, 1]).is_ok());
        assert!(AtomicProfile::new(&g, vec![0, 2]).is_err());
        let flow: PathFlow<Rational> = AtomicProfile::new(&g, vec![1, 1]).unwrap().induced_flow(&g);
        assert_eq!(flow.values, vec![integer(0), integer(4)]);
    }

    #[test]
    fn moments_of_scaled_bernoulli() {
        let m = weighted_bernoulli_moments([(2.0, 0.5)], 3);
        assert_eq!(m, vec![1.0, 1.0, 2.0, 4.0]);
        let m = weighted_bernoulli_moments([(1.0, 0.5), (1.0, 0.5)], 2);
        assert!((m[1] - 1.0).abs() < 1e-15 && (m[2] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_user_half_probability_mean_and_variance() {
        let g = Game::new(
            vec![
                ("u".into(), CostPolynomial::from_integers(&[1]).unwrap()),
                ("l".into(), CostPolynomial::from_integers(&[1]).unwrap()),
            ],
            vec![GroupSpec {
                id: "od".into(),
                paths: vec![vec!["u".into()], vec!["l".into()]],
                demands: vec![integer(2)],
            }],
        )
        .unwrap();
        let m = expected_arc_flow_and_variance(&g, &MixedProfile::new(&g, vec![vec![0.5, 0.5]]).unwrap());
        assert_eq!(m[0], ArcMoments { mean: 1.0, variance: 1.0 });
    }

    #[test]
    fn degenerate_profile_has_zero_variance() {
        let g = example1();
        let prof = MixedProfile::degenerate(&g, &AtomicProfile::new(&g, vec![0, 1]).unwrap());
        for m in expected_arc_flow_and_variance(&g, &prof) {
            assert_eq!(m.variance, 0.0);
        }
    }

    #[test]
    fn arc_components_split_disjoint_groups() {
        let g = Game::new(
            vec![
                ("a".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
                ("b".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
                ("c".into(), CostPolynomial::from_integers(&[1, 0]).unwrap()),
            ],
            vec![
                GroupSpec { id: "1".into(), paths: vec![vec!["a".into()], vec!["b".into()]], demands: vec![integer(1)] },
                GroupSpec { id: "2".into(), paths: vec![vec!["c".into()]], demands: vec![integer(1)] },
                GroupSpec {
                    id: "3".into(),
                    paths: vec![vec!["b".into(), "c".into()]],
                    demands: vec![integer(1)],
                },
            ],
        )
        .unwrap();
        assert_eq!(g.arc_components(), vec![vec![0, 1, 2]]);
        let h = g.restrict_to_indices(&[0, 1]).unwrap();
        assert_eq!(h.arc_components(), vec![vec![0], vec![1]]);
    }
}
