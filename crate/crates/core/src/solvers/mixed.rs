//! Mixed equilibria on small instances.
//!
//! A profile is a mixed NE when, in every group, each path carrying positive
//! expected flow minimises the expected path cost `E[τ_p(f)]` over the
//! group. Expected costs are exact: every arc load is a weighted sum of
//! independent Bernoulli variables, and its raw moments follow by
//! convolution one user at a time.
//!
//! The solver looks for a profile shared by all users of a group. It tries
//! supports from largest to smallest and solves the indifference equations
//! on each by damped Newton steps.

use std::time::Instant;

use crate::error::SolverError;
use crate::game::{weighted_bernoulli_moments, Game, MixedProfile};
use crate::solvers::{Cost, EquilibriumKind, EquilibriumResult, Solution, SolverConfig};

pub const MAX_MIXED_USERS: usize = 64;
pub const MAX_MIXED_PATHS_PER_GROUP: usize = 8;
const MAX_SUPPORT_COMBINATIONS: usize = 4096;
const NEWTON_STEPS: usize = 100;

/// Per-user arc-use probabilities without clamping, so that the Newton
/// Jacobian can probe slightly outside the simplex.
fn arc_use(game: &Game, probs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    probs
        .iter()
        .zip(game.users())
        .map(|(pi, u)| {
            let mut row = vec![0.0; game.num_arcs()];
            for (local, p) in game.groups()[u.group].paths.clone().enumerate() {
                for &a in &game.paths()[p].arcs {
                    row[a] += pi[local];
                }
            }
            row
        })
        .collect()
}

fn arc_moments(game: &Game, probs: &[Vec<f64>], extra: usize) -> Vec<Vec<f64>> {
    let use_ = arc_use(game, probs);
    (0..game.num_arcs())
        .map(|a| {
            let order = game.arcs()[a].cost.degree() + extra;
            let terms = game.users().iter().zip(&use_).map(|(u, row)| (u.demand_f64, row[a]));
            weighted_bernoulli_moments(terms, order)
        })
        .collect()
}

fn path_costs_from_probs(game: &Game, probs: &[Vec<f64>]) -> Vec<f64> {
    let moments = arc_moments(game, probs, 0);
    let arc: Vec<f64> =
        game.arcs().iter().zip(&moments).map(|(a, m)| a.cost.expectation_from_moments(m)).collect();
    game.paths().iter().map(|p| p.arcs.iter().map(|&a| arc[a]).sum()).collect()
}

/// `E_Π[τ_p(f)]` for every path.
pub fn expected_path_costs(game: &Game, profile: &MixedProfile) -> Vec<f64> {
    path_costs_from_probs(game, &profile.probs)
}

/// `E_Π[C(f)] = Σ_a E[f_a · τ_a(f_a)]`.
pub fn expected_total_cost(game: &Game, profile: &MixedProfile) -> f64 {
    let moments = arc_moments(game, &profile.probs, 1);
    game.arcs().iter().zip(&moments).map(|(a, m)| a.cost.weighted_expectation_from_moments(m)).sum()
}

/// Expected total cost by summing over every joint pure state. Used as an
/// independent check of [`expected_total_cost`].
pub fn exact_expected_total_cost(game: &Game, profile: &MixedProfile, budget: u64) -> Result<f64, SolverError> {
    let widths: Vec<usize> = game.users().iter().map(|u| game.groups()[u.group].paths.len()).collect();
    let states: f64 = widths.iter().map(|&w| w as f64).product();
    if states > budget as f64 {
        return Err(SolverError::BudgetExceeded { needed: states, budget });
    }
    let mut local = vec![0usize; widths.len()];
    let mut total = 0.0;
    loop {
        let mut prob = 1.0;
        let mut values = vec![0.0; game.num_paths()];
        for (i, u) in game.users().iter().enumerate() {
            prob *= profile.probs[i][local[i]];
            values[game.groups()[u.group].paths.start + local[i]] += u.demand_f64;
        }
        if prob > 0.0 {
            let arc = game.arc_flow_unchecked(&values);
            total += prob * game.total_cost_from_arc_flow(&arc);
        }
        let mut i = widths.len();
        loop {
            if i == 0 {
                return Ok(total);
            }
            i -= 1;
            local[i] += 1;
            if local[i] < widths[i] {
                break;
            }
            local[i] = 0;
        }
    }
}

/// Mixed-NE residual: per group, the largest expected cost of a path with
/// positive expected flow minus the cheapest expected cost.
pub fn verify_mixed_ne(game: &Game, profile: &MixedProfile) -> f64 {
    let costs = expected_path_costs(game, profile);
    let expected = profile.expected_path_flow(game);
    game.groups()
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let threshold = 1e-12 * game.group_demand_f64(k);
            let min = g.paths.clone().map(|p| costs[p]).fold(f64::INFINITY, f64::min);
            g.paths
                .clone()
                .filter(|&p| expected.values[p] > threshold)
                .map(|p| costs[p] - min)
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn check_limits(game: &Game) -> Result<(), SolverError> {
    if game.num_users() > MAX_MIXED_USERS {
        return Err(SolverError::TooLarge(format!(
            "{} users; the mixed solver handles at most {MAX_MIXED_USERS}",
            game.num_users()
        )));
    }
    if let Some(g) = game.groups().iter().find(|g| g.paths.len() > MAX_MIXED_PATHS_PER_GROUP) {
        return Err(SolverError::TooLarge(format!(
            "group `{}` has {} paths; the mixed solver handles at most {MAX_MIXED_PATHS_PER_GROUP}",
            g.id,
            g.paths.len()
        )));
    }
    Ok(())
}

/// Finds a group-symmetric mixed NE.
pub fn solve_mixed_ne_small(game: &Game, config: &SolverConfig) -> Result<EquilibriumResult, SolverError> {
    config.validate()?;
    check_limits(game)?;
    let start = Instant::now();
    let widths: Vec<usize> = game.groups().iter().map(|g| g.paths.len()).collect();

    // Supports per group as bitmasks, largest first.
    let per_group: Vec<Vec<u32>> = widths
        .iter()
        .map(|&w| {
            let mut masks: Vec<u32> = (1..(1u32 << w)).collect();
            masks.sort_by_key(|m| (std::cmp::Reverse(m.count_ones()), *m));
            masks
        })
        .collect();
    let combos: usize = per_group.iter().map(Vec::len).product();
    if combos > MAX_SUPPORT_COMBINATIONS {
        return Err(SolverError::TooLarge(format!("{combos} support combinations")));
    }
    let mut order: Vec<Vec<u32>> = vec![Vec::new()];
    for masks in &per_group {
        order = order
            .into_iter()
            .flat_map(|prefix| {
                masks.iter().map(move |&m| {
                    let mut v = prefix.clone();
                    v.push(m);
                    v
                })
            })
            .collect();
    }
    order.sort_by_key(|c| std::cmp::Reverse(c.iter().map(|m| m.count_ones()).sum::<u32>()));

    let mut iterations = 0u64;
    for support in &order {
        let (probs, steps) = newton_on_support(game, support, &widths);
        iterations += steps;
        let Some(probs) = probs else { continue };
        let profile = MixedProfile::group_symmetric(game, &probs);
        let residual = verify_mixed_ne(game, &profile);
        let scale = 1.0 + expected_path_costs(game, &profile).iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if residual <= config.tolerance * scale {
            let total = expected_total_cost(game, &profile);
            return Ok(EquilibriumResult {
                kind: EquilibriumKind::MixedNe,
                solution: Solution::Mixed(profile),
                residual,
                iterations,
                exact: false,
                converged: true,
                total_cost: Cost::float(total),
                wall_time: start.elapsed(),
            });
        }
    }
    Err(SolverError::MixedNotFound(format!("no support among {} candidates satisfied the equilibrium test", order.len())))
}

/// Solves the indifference system on one support. Returns the per-group
/// distributions when Newton converges to a point of the simplex.
fn newton_on_support(game: &Game, support: &[u32], widths: &[usize]) -> (Option<Vec<Vec<f64>>>, u64) {
    let members: Vec<Vec<usize>> =
        support.iter().zip(widths).map(|(&m, &w)| (0..w).filter(|j| m & (1 << j) != 0).collect()).collect();
    let n: usize = members.iter().map(Vec::len).sum();

    let expand = |z: &[f64]| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(widths.len());
        let mut idx = 0;
        for (k, &w) in widths.iter().enumerate() {
            let mut row = vec![0.0; w];
            for &j in &members[k] {
                row[j] = z[idx];
                idx += 1;
            }
            out.push(row);
        }
        out
    };
    let residual = |z: &[f64]| -> Vec<f64> {
        let per_group = expand(z);
        let probs: Vec<Vec<f64>> = game.users().iter().map(|u| per_group[u.group].clone()).collect();
        let costs = path_costs_from_probs(game, &probs);
        let mut out = Vec::with_capacity(n);
        for (k, g) in game.groups().iter().enumerate() {
            let m = &members[k];
            out.push(m.iter().map(|&j| per_group[k][j]).sum::<f64>() - 1.0);
            for &j in &m[1..] {
                out.push(costs[g.paths.start + j] - costs[g.paths.start + m[0]]);
            }
        }
        out
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut z: Vec<f64> = members.iter().flat_map(|m| vec![1.0 / m.len() as f64; m.len()]).collect();
    let mut r = residual(&z);
    let mut steps = 0;
    let target = 1e-15 * (1.0 + norm(&r));
    for _ in 0..NEWTON_STEPS {
        if norm(&r) <= target {
            break;
        }
        steps += 1;
        let h = 1e-7;
        let mut jac = vec![vec![0.0; n]; n];
        for col in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[col] += h;
            zm[col] -= h;
            let (rp, rm) = (residual(&zp), residual(&zm));
            for row in 0..n {
                jac[row][col] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let Some(delta) = solve_linear(jac, r.iter().map(|x| -x).collect()) else { break };
        let current = norm(&r);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-10 {
            let trial: Vec<f64> = z.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let rt = residual(&trial);
            if norm(&rt) < (1.0 - 1e-4 * t) * current {
                z = trial;
                r = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if z.iter().any(|&x| !(x > -1e-10) || x > 1.0 + 1e-10) {
        return (None, steps);
    }
    let mut per_group = expand(&z);
    for row in &mut per_group {
        for x in row.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    (Some(per_group), steps)
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Largest expected total cost over the complete mixed-NE set of a game
/// with one group, two users and two paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedMixed {
    pub max_expected_cost: f64,
    pub profile: MixedProfile,
}

/// Both expected-cost difference `h = E[τ_0] − E[τ_1]` and expected total
/// cost are bilinear in the two users' probabilities `(x1, x2)` of taking
/// path 0, so four pure states determine them. The NE set is the zero set
/// of `h`, plus `(1,1)` when `h(1,1) ≤ 0` and `(0,0)` when `h(0,0) ≥ 0`.
pub fn certified_two_by_two(game: &Game) -> Option<CertifiedMixed> {
    if game.groups().len() != 1 || game.num_users() != 2 || game.groups()[0].paths.len() != 2 {
        return None;
    }
    let pure = |x1: f64, x2: f64| MixedProfile { probs: vec![vec![x1, 1.0 - x1], vec![x2, 1.0 - x2]] };
    let corner = |x1: f64, x2: f64| {
        let prof = pure(x1, x2);
        let c = expected_path_costs(game, &prof);
        (c[0] - c[1], expected_total_cost(game, &prof))
    };
    let (h00, c00) = corner(0.0, 0.0);
    let (h10, c10) = corner(1.0, 0.0);
    let (h01, c01) = corner(0.0, 1.0);
    let (h11, c11) = corner(1.0, 1.0);
    let bilinear = |v00: f64, v10: f64, v01: f64, v11: f64| (v00, v10 - v00, v01 - v00, v11 - v10 - v01 + v00);
    let (ha, hb, hc, hd) = bilinear(h00, h10, h01, h11);
    let (ca, cb, cc, cd) = bilinear(c00, c10, c01, c11);
    let cost = |x1: f64, x2: f64| ca + cb * x1 + cc * x2 + cd * x1 * x2;
    let scale = 1.0 + h00.abs().max(h10.abs()).max(h01.abs()).max(h11.abs());
    let zero_tol = 1e-12 * scale;

    let mut best: Option<(f64, f64, f64)> = None;
    let mut consider = |x1: f64, x2: f64| {
        if !(0.0..=1.0).contains(&x1) || !(0.0..=1.0).contains(&x2) {
            return;
        }
        let v = cost(x1, x2);
        if best.is_none_or(|(b, _, _)| v > b) {
            best = Some((v, x1, x2));
        }
    };
    if h11 <= zero_tol {
        consider(1.0, 1.0);
    }
    if h00 >= -zero_tol {
        consider(0.0, 0.0);
    }
    if [ha, hb, hc, hd].iter().all(|c| c.abs() <= zero_tol) {
        for (x1, x2) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            consider(x1, x2);
        }
    } else {
        // x2 as a function of x1 on the curve, and the mirror parametrisation.
        let x2_of = |x1: f64| {
            let den = hc + hd * x1;
            if den.abs() < 1e-300 {
                None
            } else {
                Some(-(ha + hb * x1) / den)
            }
        };
        let x1_of = |x2: f64| {
            let den = hb + hd * x2;
            if den.abs() < 1e-300 {
                None
            } else {
                Some(-(ha + hc * x2) / den)
            }
        };
        for e in [0.0, 1.0] {
            if let Some(x2) = x2_of(e) {
                consider(e, x2);
            }
            if let Some(x1) = x1_of(e) {
                consider(x1, e);
            }
        }
        const GRID: usize = 4000;
        let along = |t: f64, first: bool| -> Option<(f64, f64)> {
            if first {
                x2_of(t).filter(|x| (0.0..=1.0).contains(x)).map(|x2| (t, x2))
            } else {
                x1_of(t).filter(|x| (0.0..=1.0).contains(x)).map(|x1| (x1, t))
            }
        };
        for first in [true, false] {
            let mut scan_best: Option<(f64, f64)> = None;
            for i in 0..=GRID {
                let t = i as f64 / GRID as f64;
                if let Some((x1, x2)) = along(t, first) {
                    consider(x1, x2);
                    let v = cost(x1, x2);
                    if scan_best.is_none_or(|(b, _)| v > b) {
                        scan_best = Some((v, t));
                    }
                }
            }
            if let Some((_, t0)) = scan_best {
                let value = |t: f64| along(t, first).map(|(a, b)| cost(a, b)).unwrap_or(f64::NEG_INFINITY);
                let (mut lo, mut hi) = ((t0 - 1.0 / GRID as f64).max(0.0), (t0 + 1.0 / GRID as f64).min(1.0));
                let ratio = (5f64.sqrt() - 1.0) / 2.0;
                for _ in 0..100 {
                    let m1 = hi - ratio * (hi - lo);
                    let m2 = lo + ratio * (hi - lo);
                    if value(m1) < value(m2) {
                        lo = m1;
                    } else {
                        hi = m2;
                    }
                }
                if let Some((x1, x2)) = along(0.5 * (lo + hi), first) {
                    consider(x1, x2);
                }
            }
        }
    }
    best.map(|(v, x1, x2)| CertifiedMixed { max_expected_cost: v, profile: pure(x1, x2) })
}
