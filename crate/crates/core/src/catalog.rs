//! Built-in instances and the random generator used by the sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decomposition::DemandFamily;
use crate::game::{CostPolynomial, Game, GroupSpec};
use crate::numeric::{integer, rational, Rational};
use crate::schema::{load_family, load_game};

pub const EXAMPLE1: &str = include_str!("../assets/example1.json");
pub const EXAMPLE2: &str = include_str!("../assets/example2.json");
pub const EXAMPLE3: &str = include_str!("../assets/example3.json");
pub const EXAMPLE4_FAMILY: &str = include_str!("../assets/example4_family.json");
pub const EXAMPLE2_FAMILY: &str = include_str!("../assets/example2_family.json");
pub const EXAMPLE3_FAMILY: &str = include_str!("../assets/example3_family.json");
pub const PARALLEL_UNIT_FAMILY: &str = include_str!("../assets/parallel_unit_family.json");

/// File names of the bundled assets, paired with their contents.
pub const ASSETS: &[(&str, &str)] = &[
    ("example1.json", EXAMPLE1),
    ("example2.json", EXAMPLE2),
    ("example3.json", EXAMPLE3),
    ("example4_family.json", EXAMPLE4_FAMILY),
    ("example2_family.json", EXAMPLE2_FAMILY),
    ("example3_family.json", EXAMPLE3_FAMILY),
    ("parallel_unit_family.json", PARALLEL_UNIT_FAMILY),
];

/// Upper arc `x²`, lower arc `2`, two users of demand 2.
pub fn example1() -> Game {
    load_game(EXAMPLE1).expect("bundled asset is valid")
}

/// Arcs `x` and `x + 1`, `4n` users of demand `1/(4n)`.
pub fn example2(n: u32) -> Game {
    let users = 4 * n as usize;
    let d = rational(1, 4 * n as i64);
    two_link_game([&[1, 0], &[1, 1]], vec![d; users])
}

/// Arcs `x` and `2x`, two users of demand `n`.
pub fn example3(n: u32) -> Game {
    two_link_game([&[1, 0], &[2, 0]], vec![integer(n as i64); 2])
}

pub fn example4_family() -> DemandFamily {
    load_family(EXAMPLE4_FAMILY).expect("bundled asset is valid")
}

fn two_link_game(coeffs: [&[i64]; 2], demands: Vec<Rational>) -> Game {
    Game::new(
        vec![
            ("upper".into(), CostPolynomial::from_integers(coeffs[0]).expect("valid")),
            ("lower".into(), CostPolynomial::from_integers(coeffs[1]).expect("valid")),
        ],
        vec![GroupSpec { id: "od".into(), paths: vec![vec!["upper".into()], vec!["lower".into()]], demands }],
    )
    .expect("valid")
}

/// One group over parallel arcs `a0, a1, …` with integer coefficients and
/// integer user demands.
pub fn parallel_links(coeffs: &[&[i64]], demands: &[i64]) -> Game {
    let arcs: Vec<(String, CostPolynomial)> = coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("a{i}"), CostPolynomial::from_integers(c).expect("valid coefficients")))
        .collect();
    let paths = (0..coeffs.len()).map(|i| vec![format!("a{i}")]).collect();
    Game::new(
        arcs,
        vec![GroupSpec { id: "od".into(), paths, demands: demands.iter().map(|&d| integer(d)).collect() }],
    )
    .expect("valid game")
}

/// Random unweighted game with one common degree `β ∈ {1,2,3}`, at most six
/// arcs, one or two groups of two or three paths, and at most twelve users.
/// Every path is a random nonempty arc subset; path sets of different groups
/// never coincide.
pub fn random_same_degree_game(seed: u64) -> Game {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = rng.random_range(1..=3usize);
    let num_groups = rng.random_range(1..=2usize);
    let num_arcs = rng.random_range(num_groups + 1..=6usize);
    let arcs: Vec<(String, CostPolynomial)> = (0..num_arcs)
        .map(|i| {
            let mut c = vec![integer(rng.random_range(1..=4))];
            for _ in 0..beta {
                let v = rng.random_range(0..=6);
                c.push(rational(v, 2));
            }
            (format!("a{i}"), CostPolynomial::new(c).expect("positive leading coefficient"))
        })
        .collect();
    let demand = [rational(1, 1), rational(1, 2), integer(2)][rng.random_range(0..3)].clone();
    let mut used_sets: Vec<Vec<usize>> = Vec::new();
    let mut groups = Vec::new();
    let max_users = 12 / num_groups;
    for k in 0..num_groups {
        let num_paths = rng.random_range(2..=3usize);
        let mut paths = Vec::new();
        let mut attempts = 0;
        while paths.len() < num_paths && attempts < 200 {
            attempts += 1;
            let mut set: Vec<usize> = (0..num_arcs).filter(|_| rng.random_bool(0.4)).collect();
            if set.is_empty() {
                set.push(rng.random_range(0..num_arcs));
            }
            if used_sets.contains(&set) {
                continue;
            }
            used_sets.push(set.clone());
            paths.push(set.into_iter().map(|a| format!("a{a}")).collect::<Vec<_>>());
        }
        let users = rng.random_range(1..=max_users);
        groups.push(GroupSpec { id: format!("g{k}"), paths, demands: vec![demand.clone(); users] });
    }
    Game::new(arcs, groups).expect("generator produces valid games")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_assets_parse() {
        assert_eq!(example1().total_demand(), integer(4));
        assert_eq!(load_game(EXAMPLE2).unwrap(), example2(1));
        assert_eq!(load_game(EXAMPLE3).unwrap(), example3(1));
        for doc in [EXAMPLE4_FAMILY, EXAMPLE2_FAMILY, EXAMPLE3_FAMILY, PARALLEL_UNIT_FAMILY] {
            load_family(doc).unwrap();
        }
    }

    #[test]
    fn generator_respects_limits() {
        for seed in 0..200 {
            let g = random_same_degree_game(seed);
            let degrees = g.degrees();
            assert!(degrees.iter().all(|&d| d == degrees[0] && (1..=3).contains(&d)));
            assert!(g.num_arcs() <= 6 && g.num_users() <= 12);
            assert!(g.is_unweighted());
            assert!(g.groups().iter().all(|grp| grp.paths.len() >= 2 && grp.paths.len() <= 3));
        }
    }

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(random_same_degree_game(9), random_same_degree_game(9));
    }
}
