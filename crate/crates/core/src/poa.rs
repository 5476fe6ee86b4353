//! Prices of anarchy: atomic, non-atomic, mixed and the random PoA
//! distribution of a mixed profile.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::SolverError;
use crate::game::{AtomicProfile, Game, MixedProfile};
use crate::solvers::{
    certified_two_by_two, enumerate_atomic_equilibria, expected_total_cost, solve_atomic_so, solve_mixed_ne_small,
    solve_nonatomic_ne, solve_nonatomic_so, verify_mixed_ne, Cost, EquilibriumResult, SolverConfig,
};

/// Exact random-PoA tables are built up to this many users and states.
pub const EXACT_DISTRIBUTION_USERS: usize = 20;
pub const EXACT_DISTRIBUTION_STATES: u64 = 1 << 20;

const SAMPLE_CHUNK: u64 = 4096;

/// A PoA value, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Value { value: Cost, lower_bound: bool },
    Unavailable(String),
}

impl Metric {
    pub fn value(&self) -> Option<f64> {
        match self {
            Metric::Value { value, .. } => Some(value.value),
            Metric::Unavailable(_) => None,
        }
    }

    pub fn is_lower_bound(&self) -> bool {
        matches!(self, Metric::Value { lower_bound: true, .. })
    }

    pub fn display(&self) -> String {
        match self {
            Metric::Value { value, .. } => value.display(),
            Metric::Unavailable(reason) => format!("unavailable ({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicPoa {
    pub value: Cost,
    pub worst_ne: AtomicProfile,
    pub worst_cost: Cost,
    pub so: AtomicProfile,
    pub so_cost: Cost,
    /// Number of equilibria counted with multiplicity.
    pub equilibria: f64,
}

/// Worst atomic NE cost over atomic SO cost, by enumeration.
pub fn atomic_poa(game: &Game, config: &SolverConfig) -> Result<AtomicPoa, SolverError> {
    let enumeration = enumerate_atomic_equilibria(game, config)?;
    let worst = enumeration.worst.ok_or(SolverError::NoAtomicEquilibrium)?;
    let so = solve_atomic_so(game, config)?;
    let so_profile = so.atomic_profile().expect("atomic solution").clone();
    let equilibria = if enumeration.complete_list {
        enumeration.equilibria.iter().map(|e| e.multiplicity).sum()
    } else {
        f64::NAN
    };
    Ok(AtomicPoa {
        value: worst.cost.ratio(&so.total_cost),
        worst_ne: worst.profile,
        worst_cost: worst.cost,
        so: so_profile,
        so_cost: so.total_cost,
        equilibria,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonatomicPoa {
    pub value: f64,
    pub ne: EquilibriumResult,
    pub so: EquilibriumResult,
}

pub fn nonatomic_poa(game: &Game, config: &SolverConfig) -> Result<NonatomicPoa, SolverError> {
    let ne = solve_nonatomic_ne(game, config)?;
    let so = solve_nonatomic_so(game, config)?;
    for r in [&ne, &so] {
        if !r.converged {
            return Err(SolverError::NotConverged(format!(
                "{:?} stopped after {} sweeps with residual {:e}",
                r.kind, r.iterations, r.residual
            )));
        }
    }
    Ok(NonatomicPoa { value: ne.total_cost.value / so.total_cost.value, ne, so })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedPoa {
    pub value: f64,
    /// False only when the whole mixed-NE set was characterised.
    pub lower_bound: bool,
    pub profile: MixedProfile,
    pub expected_cost: f64,
    pub so_cost: Cost,
}

/// Largest expected cost over the mixed NE that could be found, divided by
/// the atomic optimum. Certified for one group of two users on two paths.
pub fn mixed_poa_small(game: &Game, config: &SolverConfig) -> Result<MixedPoa, SolverError> {
    let so = solve_atomic_so(game, config)?;
    if let Some(cert) = certified_two_by_two(game) {
        return Ok(MixedPoa {
            value: cert.max_expected_cost / so.total_cost.value,
            lower_bound: false,
            profile: cert.profile,
            expected_cost: cert.max_expected_cost,
            so_cost: so.total_cost,
        });
    }
    let mut candidates: Vec<(f64, MixedProfile)> = Vec::new();
    let mut failure = None;
    match solve_mixed_ne_small(game, config) {
        Ok(r) => {
            let profile = r.mixed_profile().expect("mixed solution").clone();
            candidates.push((expected_total_cost(game, &profile), profile));
        }
        Err(e) => failure = Some(e),
    }
    // Pure profiles where every used path is cheapest are mixed NE as well;
    // such profiles are atomic NE, so the enumeration finds all of them.
    if let Ok(enumeration) = enumerate_atomic_equilibria(game, config) {
        for eq in &enumeration.equilibria {
            let profile = MixedProfile::degenerate(game, &eq.profile);
            let scale = 1.0 + eq.cost.value.abs();
            if verify_mixed_ne(game, &profile) <= config.tolerance * scale {
                candidates.push((expected_total_cost(game, &profile), profile));
            }
        }
    }
    let (expected_cost, profile) = candidates
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| failure.unwrap_or_else(|| SolverError::MixedNotFound("no candidate equilibrium".into())))?;
    Ok(MixedPoa {
        value: expected_cost / so.total_cost.value,
        lower_bound: true,
        profile,
        expected_cost,
        so_cost: so.total_cost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub samples: u64,
    pub seed: u64,
    /// Thread count; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.samples < 1 {
            return Err(SolverError::InvalidConfig("sample count must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(SolverError::InvalidConfig("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionPoint {
    pub value: f64,
    /// Probability for exact tables, relative frequency for samples.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomPoaDistribution {
    pub exact: Option<Vec<DistributionPoint>>,
    pub samples: Vec<DistributionPoint>,
    /// Sample counts aligned with `samples`.
    pub counts: Vec<u64>,
    pub sample_count: u64,
    pub seed: u64,
    pub so_cost: f64,
    pub sample_mean: f64,
    /// Unbiased sample standard deviation; 0 for a single sample.
    pub sample_std: f64,
}

impl RandomPoaDistribution {
    pub fn exact_mean(&self) -> Option<f64> {
        self.exact.as_ref().map(|pts| pts.iter().map(|p| p.value * p.weight).sum())
    }

    /// Fraction of samples strictly above `threshold`.
    pub fn sample_frequency_above(&self, threshold: f64) -> f64 {
        let above: u64 = self.samples.iter().zip(&self.counts).filter(|(p, _)| p.value > threshold).map(|(_, c)| c).sum();
        above as f64 / self.sample_count as f64
    }

    pub fn exact_probability_above(&self, threshold: f64) -> Option<f64> {
        self.exact.as_ref().map(|pts| pts.iter().filter(|p| p.value > threshold).map(|p| p.weight).sum())
    }
}

fn state_count(profile: &MixedProfile) -> u64 {
    profile
        .probs
        .iter()
        .map(|pi| pi.iter().filter(|&&x| x > 0.0).count() as u64)
        .try_fold(1u64, |acc, k| acc.checked_mul(k))
        .unwrap_or(u64::MAX)
}

/// Exact table of `C(f_ran)/C(f*_at)` by enumerating every joint state of
/// positive probability. Values within 1e-12 relative are merged.
pub fn exact_random_poa(game: &Game, profile: &MixedProfile, so_cost: f64) -> Option<Vec<DistributionPoint>> {
    if game.num_users() > EXACT_DISTRIBUTION_USERS || state_count(profile) > EXACT_DISTRIBUTION_STATES {
        return None;
    }
    let support: Vec<Vec<(usize, f64)>> = profile
        .probs
        .iter()
        .zip(game.users())
        .map(|(pi, u)| {
            let start = game.groups()[u.group].paths.start;
            pi.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(l, &x)| (start + l, x)).collect()
        })
        .collect();
    let mut points: Vec<DistributionPoint> = Vec::new();
    let mut index = vec![0usize; support.len()];
    let mut choices: Vec<usize> = support.iter().map(|s| s[0].0).collect();
    loop {
        let mut prob = 1.0;
        for (i, s) in support.iter().enumerate() {
            choices[i] = s[index[i]].0;
            prob *= s[index[i]].1;
        }
        let flow = AtomicProfile { choices: choices.clone() }.induced_flow::<f64>(game);
        let cost = game.total_cost(&flow).expect("flow length matches");
        points.push(DistributionPoint { value: cost / so_cost, weight: prob });
        let mut i = 0;
        loop {
            if i == support.len() {
                return Some(merge_points(points));
            }
            index[i] += 1;
            if index[i] < support[i].len() {
                break;
            }
            index[i] = 0;
            i += 1;
        }
    }
}

fn merge_points(mut points: Vec<DistributionPoint>) -> Vec<DistributionPoint> {
    points.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut merged: Vec<DistributionPoint> = Vec::new();
    for p in points {
        match merged.last_mut() {
            Some(last) if (p.value - last.value).abs() <= 1e-12 * last.value.abs().max(1.0) => last.weight += p.weight,
            _ => merged.push(p),
        }
    }
    merged
}

/// `plan.samples` independent draws of the random PoA. Draw `i` depends on
/// `(seed, i)` only and the reduction is ordered, so the result does not
/// depend on the worker count.
pub fn sample_random_poa(
    game: &Game,
    profile: &MixedProfile,
    plan: &SamplingPlan,
    so_cost: f64,
) -> Result<RandomPoaDistribution, SolverError> {
    plan.validate()?;
    if !(so_cost > 0.0) {
        return Err(SolverError::InvalidConfig("optimum cost must be positive".into()));
    }
    let chunks = plan.samples.div_ceil(SAMPLE_CHUNK);
    let run = || {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
                let end = ((c + 1) * SAMPLE_CHUNK).min(plan.samples);
                for i in c * SAMPLE_CHUNK..end {
                    let state = profile.sample(game, plan.seed, i);
                    let flow = state.profile.induced_flow::<f64>(game);
                    let value = game.total_cost(&flow).expect("flow length matches") / so_cost;
                    *counts.entry(value.to_bits()).or_default() += 1;
                }
                counts
            })
            .reduce(BTreeMap::new, |mut a, b| {
                for (k, v) in b {
                    *a.entry(k).or_default() += v;
                }
                a
            })
    };
    let counts = match plan.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| SolverError::InvalidConfig(e.to_string()))?
            .install(run),
        None => run(),
    };
    let n = plan.samples as f64;
    let mean = counts.iter().map(|(&k, &c)| f64::from_bits(k) * c as f64).sum::<f64>() / n;
    let var = if plan.samples > 1 {
        counts.iter().map(|(&k, &c)| (f64::from_bits(k) - mean).powi(2) * c as f64).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(RandomPoaDistribution {
        exact: exact_random_poa(game, profile, so_cost),
        samples: counts.iter().map(|(&k, &c)| DistributionPoint { value: f64::from_bits(k), weight: c as f64 / n }).collect(),
        counts: counts.values().copied().collect(),
        sample_count: plan.samples,
        seed: plan.seed,
        so_cost,
        sample_mean: mean,
        sample_std: var.sqrt(),
    })
}

/// CSV with columns `value, weight, source, seed, version`; exact rows
/// first, then sampled rows, each in increasing value.
pub fn write_distribution_csv<W: Write>(out: W, dist: &RandomPoaDistribution, version: &str) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["value", "weight", "source", "seed", "version"])?;
    let seed = dist.seed.to_string();
    let rows = dist
        .exact
        .iter()
        .flatten()
        .map(|p| (p, "exact"))
        .chain(dist.samples.iter().map(|p| (p, "monte-carlo")));
    for (p, source) in rows {
        w.write_record([p.value.to_string(), p.weight.to_string(), source.to_string(), seed.clone(), version.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoaReport {
    pub atomic: Metric,
    pub nonatomic: Metric,
    pub mixed: Metric,
    pub random: Option<RandomPoaDistribution>,
    pub atomic_so_cost: Option<Cost>,
    pub nonatomic_so_cost: Option<f64>,
    pub mixed_profile: Option<MixedProfile>,
}

impl PoaReport {
    /// Lemma-style denominator ordering and `PoA ≥ 1` checks.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, m) in [("atomic", &self.atomic), ("non-atomic", &self.nonatomic), ("mixed", &self.mixed)] {
            if let Some(v) = m.value() {
                if v < 1.0 - 1e-9 {
                    out.push(format!("{name} PoA {v} is below 1"));
                }
            }
        }
        if let (Some(at), Some(nat)) = (&self.atomic_so_cost, self.nonatomic_so_cost) {
            if at.value < nat - 1e-9 * (1.0 + nat.abs()) {
                out.push(format!("atomic optimum {} is below the non-atomic optimum {nat}", at.value));
            }
        }
        out
    }
}

fn unavailable(e: SolverError) -> Metric {
    Metric::Unavailable(e.to_string())
}

/// All four PoAs. Failures become `Unavailable` entries. The random PoA is
/// sampled at the mixed NE behind the mixed PoA when a plan is given.
pub fn poa_report(game: &Game, config: &SolverConfig, plan: Option<&SamplingPlan>) -> Result<PoaReport, SolverError> {
    config.validate()?;
    let (atomic, atomic_so_cost) = match atomic_poa(game, config) {
        Ok(p) => (Metric::Value { value: p.value, lower_bound: false }, Some(p.so_cost)),
        Err(e) => (unavailable(e), solve_atomic_so(game, config).ok().map(|r| r.total_cost)),
    };
    let (nonatomic, nonatomic_so_cost) = match nonatomic_poa(game, config) {
        Ok(p) => (Metric::Value { value: Cost::float(p.value), lower_bound: false }, Some(p.so.total_cost.value)),
        Err(e) => (unavailable(e), None),
    };
    let (mixed, mixed_profile) = match mixed_poa_small(game, config) {
        Ok(p) => (Metric::Value { value: Cost::float(p.value), lower_bound: p.lower_bound }, Some(p.profile)),
        Err(e) => (unavailable(e), None),
    };
    let random = match (plan, &mixed_profile, &atomic_so_cost) {
        (Some(plan), Some(profile), Some(so)) => Some(sample_random_poa(game, profile, plan, so.value)?),
        _ => None,
    };
    Ok(PoaReport { atomic, nonatomic, mixed, random, atomic_so_cost, nonatomic_so_cost, mixed_profile })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::numeric::rational;

    fn config() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn example2_and_example3_atomic_poa() {
        let p = atomic_poa(&catalog::example2(1), &config()).unwrap();
        assert_eq!(p.value.exact, Some(rational(8, 7)));
        let p = atomic_poa(&catalog::example3(1), &config()).unwrap();
        assert_eq!(p.value.exact, Some(rational(4, 3)));
        let single = catalog::parallel_links(&[&[1, 2]], &[3]);
        assert_eq!(atomic_poa(&single, &config()).unwrap().value.exact, Some(rational(1, 1)));
    }

    #[test]
    fn nonatomic_examples() {
        let p = nonatomic_poa(&catalog::example1(), &config()).unwrap();
        assert!((p.value - 18.0 / (18.0 - 6f64.sqrt())).abs() < 1e-6);
        let pigou = catalog::parallel_links(&[&[1, 0], &[1]], &[1]);
        assert!((nonatomic_poa(&pigou, &config()).unwrap().value - 4.0 / 3.0).abs() < 1e-7);
        let single = catalog::parallel_links(&[&[5]], &[2]);
        assert!((nonatomic_poa(&single, &config()).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_example1_is_certified() {
        let p = mixed_poa_small(&catalog::example1(), &config()).unwrap();
        assert!(!p.lower_bound);
        assert!((p.value - (5.0 - 2.5 * 2f64.sqrt())).abs() < 1e-8);
        assert!(p.value >= 1.25);
    }

    #[test]
    fn mixed_single_heavy_user() {
        // E[τ_u] = 16q must equal 2, so q = 1/8 and E[C] = 64q + 8(1 − q) = 15.
        let g = catalog::parallel_links(&[&[1, 0, 0], &[2]], &[4]);
        let p = mixed_poa_small(&g, &config()).unwrap();
        assert!((p.profile.probs[0][0] - 0.125).abs() < 1e-10);
        assert!((p.value - 15.0 / 8.0).abs() < 1e-9);
        assert!(p.lower_bound);
    }

    #[test]
    fn example1_exact_distribution() {
        let g = catalog::example1();
        let a = (2f64.sqrt() - 1.0) / 2.0;
        let profile = MixedProfile::group_symmetric(&g, &[vec![a, 1.0 - a]]);
        let pts = exact_random_poa(&g, &profile, 8.0).unwrap();
        let values: Vec<f64> = pts.iter().map(|p| p.value).collect();
        assert_eq!(values, vec![1.0, 1.5, 8.0]);
        let expected = [(1.0 - a) * (1.0 - a), 2.0 * a * (1.0 - a), a * a];
        for (p, e) in pts.iter().zip(expected) {
            assert!((p.weight - e).abs() < 1e-14);
        }
        let mean: f64 = pts.iter().map(|p| p.value * p.weight).sum();
        assert!((mean - (5.0 - 2.5 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_independent_of_workers() {
        let g = catalog::example1();
        let profile = MixedProfile::uniform(&g);
        let plan = |w| SamplingPlan { samples: 10_000, seed: 3, workers: w };
        let a = sample_random_poa(&g, &profile, &plan(Some(1)), 8.0).unwrap();
        let b = sample_random_poa(&g, &profile, &plan(Some(4)), 8.0).unwrap();
        assert_eq!(a, b);
        let c = sample_random_poa(&g, &profile, &SamplingPlan { seed: 4, ..plan(None) }, 8.0).unwrap();
        assert_ne!(a.counts, c.counts);
        assert_eq!(a.exact, c.exact);
    }

    #[test]
    fn degenerate_profile_at_optimum_is_point_mass() {
        let g = catalog::example1();
        let so = solve_atomic_so(&g, &config()).unwrap();
        let profile = MixedProfile::degenerate(&g, so.atomic_profile().unwrap());
        let plan = SamplingPlan { samples: 100, seed: 1, workers: None };
        let d = sample_random_poa(&g, &profile, &plan, so.total_cost.value).unwrap();
        assert_eq!(d.samples, vec![DistributionPoint { value: 1.0, weight: 1.0 }]);
        assert_eq!(d.exact.unwrap(), vec![DistributionPoint { value: 1.0, weight: 1.0 }]);
    }

    #[test]
    fn report_on_example1() {
        let r = poa_report(&catalog::example1(), &config(), None).unwrap();
        assert_eq!(r.atomic.value(), Some(1.0));
        assert!((r.nonatomic.value().unwrap() - 1.15752).abs() < 1e-5);
        assert!((r.mixed.value().unwrap() - 1.46447).abs() < 1e-5);
        assert!(r.invariant_violations().is_empty());
    }
}
