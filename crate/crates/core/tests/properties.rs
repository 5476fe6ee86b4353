use congestion_core::bounds::scale_game;
use congestion_core::catalog::random_same_degree_game;
use congestion_core::decomposition::{classify_groups, ordered_partition, DemandFamily, DemandLaw};
use congestion_core::game::{Game, MixedProfile, PathFlow};
use congestion_core::numeric::{integer, rational};
use congestion_core::poa::{atomic_poa, nonatomic_poa};
use congestion_core::solvers::{
    beckmann_potential, exact_expected_total_cost, expected_total_cost, solve_atomic_so, solve_nonatomic_ne,
    solve_nonatomic_so, SolverConfig,
};
use proptest::prelude::*;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

/// Feasible path flow splitting each group's demand by `weights`.
fn flow_from_weights(game: &Game, weights: &[u8]) -> PathFlow<f64> {
    let mut values = vec![0.0; game.num_paths()];
    for (k, g) in game.groups().iter().enumerate() {
        let w: Vec<f64> = g.paths.clone().map(|p| 1.0 + weights[p % weights.len()] as f64).collect();
        let s: f64 = w.iter().sum();
        for (p, wp) in g.paths.clone().zip(&w) {
            values[p] = game.group_demand_f64(k) * wp / s;
        }
    }
    PathFlow::new(values)
}

fn profile_from_weights(game: &Game, weights: &[u8]) -> MixedProfile {
    let probs = game
        .users()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let paths = game.groups()[u.group].paths.clone();
            let w: Vec<f64> = paths.clone().map(|p| weights[(p + 3 * i) % weights.len()] as f64).collect();
            let s: f64 = w.iter().sum();
            if s == 0.0 {
                vec![1.0 / w.len() as f64; w.len()]
            } else {
                w.iter().map(|x| x / s).collect()
            }
        })
        .collect();
    MixedProfile::new(game, probs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaled_cost_identity(seed in 0u64..500, num in 1i64..12, den in 1i64..6, weights in prop::collection::vec(0u8..9, 1..8)) {
        let game = random_same_degree_game(seed);
        let g = rational(num, den);
        let scaled = scale_game(&game, &g).unwrap();
        let f = flow_from_weights(&game, &weights);
        let c = game.total_cost(&f).unwrap();
        let t = game.total_demand_f64();
        let image = PathFlow::new(f.values.iter().map(|x| x / t).collect());
        let cs = scaled.game.total_cost(&image).unwrap();
        prop_assert!((c - t * (num as f64 / den as f64) * cs).abs() <= 1e-9 * c.max(1.0));
        prop_assert!((scaled.unscale_cost(cs) - c).abs() <= 1e-9 * c.max(1.0));
    }

    #[test]
    fn arc_flow_conserves_path_flow(seed in 0u64..500, weights in prop::collection::vec(0u8..9, 1..8)) {
        let game = random_same_degree_game(seed);
        let f = flow_from_weights(&game, &weights);
        f.check_feasible(&game, 1e-12).unwrap();
        let arc = game.arc_flow(&f).unwrap();
        for (a, x) in arc.iter().enumerate() {
            let through: f64 = game.paths().iter().enumerate().filter(|(_, p)| p.arcs.contains(&a)).map(|(p, _)| f.values[p]).sum();
            prop_assert!((x - through).abs() <= 1e-12);
        }
    }

    #[test]
    fn jensen_and_exact_expectation(seed in 0u64..500, weights in prop::collection::vec(0u8..5, 1..10)) {
        let game = random_same_degree_game(seed);
        let profile = profile_from_weights(&game, &weights);
        let fast = expected_total_cost(&game, &profile);
        let brute = exact_expected_total_cost(&game, &profile, 1 << 22).unwrap();
        prop_assert!((fast - brute).abs() <= 1e-9 * brute.max(1.0));
        let mean_flow = profile.expected_path_flow(&game);
        prop_assert!(game.total_cost(&mean_flow).unwrap() <= brute + 1e-9 * brute.max(1.0));
    }

    #[test]
    fn prices_of_anarchy_at_least_one(seed in 0u64..500) {
        let game = random_same_degree_game(seed);
        let at = atomic_poa(&game, &cfg()).unwrap();
        prop_assert!(at.value.value >= 1.0 - 1e-12);
        let nat = nonatomic_poa(&game, &cfg()).unwrap();
        prop_assert!(nat.value >= 1.0 - 1e-9);
    }

    #[test]
    fn nonatomic_optimum_below_atomic_optimum(seed in 0u64..500) {
        let game = random_same_degree_game(seed);
        let atomic = solve_atomic_so(&game, &cfg()).unwrap().total_cost.value;
        let fractional = solve_nonatomic_so(&game, &cfg()).unwrap().total_cost.value;
        prop_assert!(fractional <= atomic * (1.0 + 1e-9));
    }

    #[test]
    fn wardrop_flow_minimises_potential(seed in 0u64..500, weights in prop::collection::vec(0u8..9, 1..8)) {
        let game = random_same_degree_game(seed);
        let ne = solve_nonatomic_ne(&game, &cfg()).unwrap();
        let at_ne = beckmann_potential(&game, &ne.path_flow(&game)).unwrap();
        let other = beckmann_potential(&game, &flow_from_weights(&game, &weights)).unwrap();
        prop_assert!(at_ne <= other + 1e-9 * other.abs().max(1.0));
    }

    #[test]
    fn partition_covers_regular_groups(gammas in prop::collection::vec(0i64..4, 1..5)) {
        let base = congestion_core::catalog::random_same_degree_game(gammas.len() as u64);
        let groups = base.groups().len();
        let laws: Vec<DemandLaw> = (0..groups)
            .map(|k| DemandLaw {
                c: integer(1 + k as i64),
                gamma: rational(gammas[k % gammas.len()], 2),
                user_demand: integer(1),
                user_gamma: integer(0),
            })
            .collect();
        let family = DemandFamily::new(base, laws).unwrap();
        let (regular, irregular) = classify_groups(&family);
        prop_assert_eq!(regular.len() + irregular.len(), groups);
        match ordered_partition(&family) {
            Ok(classes) => {
                let mut covered: Vec<usize> = classes.iter().flat_map(|c| c.groups.clone()).collect();
                covered.sort();
                prop_assert_eq!(covered, regular);
                prop_assert!(classes.windows(2).all(|w| w[0].gamma > w[1].gamma));
                for c in &classes {
                    prop_assert!(c.groups.iter().all(|&k| family.laws()[k].gamma == c.gamma));
                }
            }
            Err(_) => prop_assert!(regular.is_empty()),
        }
    }
}
