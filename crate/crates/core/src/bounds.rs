//! Scaled games and closed-form bound evaluators.
//!
//! The evaluators never solve games; they turn a handful of game constants
//! into numbers that measured PoAs and residuals are compared against.

use num::Signed;

use crate::error::{BoundError, GameError};
use crate::game::{CostPolynomial, Game, GroupSpec, PathFlow};
use crate::numeric::{rational_pow, rational_to_f64, Rational, Scalar};

/// `Γ^[g]`: costs `τ_a(x·T)/g`, demands `d/T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledGame {
    pub factor: Rational,
    pub total_demand: Rational,
    pub game: Game,
}

pub fn scale_game(game: &Game, g: &Rational) -> Result<ScaledGame, BoundError> {
    if !g.is_positive() {
        return Err(BoundError::Domain(format!("scaling factor must be positive, got {g}")));
    }
    let t = game.total_demand();
    let arcs = game
        .arcs()
        .iter()
        .map(|a| {
            let beta = a.cost.degree();
            let coeffs = a
                .cost
                .coefficients()
                .iter()
                .enumerate()
                .map(|(l, c)| c * rational_pow(&t, (beta - l) as u32) / g)
                .collect();
            (a.id.clone(), CostPolynomial::from_unchecked(coeffs))
        })
        .collect();
    let specs = (0..game.groups().len())
        .map(|k| {
            let spec = game.group_spec(k);
            GroupSpec { demands: spec.demands.iter().map(|d| d / &t).collect(), ..spec }
        })
        .collect();
    let scaled = Game::build(arcs, specs, true).map_err(|e: GameError| BoundError::Domain(e.to_string()))?;
    Ok(ScaledGame { factor: g.clone(), total_demand: t, game: scaled })
}

impl ScaledGame {
    /// `f ↦ f / T`.
    pub fn scale_flow<S: Scalar>(&self, flow: &PathFlow<S>) -> PathFlow<S> {
        flow.divided_by(&S::from_rational(&self.total_demand))
    }

    /// Cost of the original flow from the cost of its scaled image:
    /// `C(f) = T · g · C^[g](f/T)`.
    pub fn unscale_cost(&self, scaled_cost: f64) -> f64 {
        scaled_cost * rational_to_f64(&self.total_demand) * rational_to_f64(&self.factor)
    }
}

/// The common degree of every arc cost.
pub fn common_degree(game: &Game) -> Result<usize, BoundError> {
    let mut degrees = game.degrees();
    degrees.sort_unstable();
    degrees.dedup();
    if degrees.len() == 1 {
        Ok(degrees[0])
    } else {
        Err(BoundError::MixedDegrees(degrees))
    }
}

/// `g = T^β` for a same-degree game.
pub fn t_beta_factor(game: &Game) -> Result<Rational, BoundError> {
    let beta = common_degree(game)?;
    Ok(rational_pow(&game.total_demand(), beta as u32))
}

/// Game constants entering the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub beta: u32,
    /// Largest coefficient over all arcs.
    pub eta_max: f64,
    /// Smallest leading coefficient.
    pub eta0_min: f64,
    pub num_arcs: usize,
    pub num_paths: usize,
    pub total_demand: f64,
    pub d_max: f64,
}

impl BoundInputs {
    /// Requires one common degree.
    pub fn from_game(game: &Game) -> Result<Self, BoundError> {
        let beta = common_degree(game)?;
        Ok(Self::collect(game, beta))
    }

    /// For mixed degrees: every cost is read as a polynomial of the largest
    /// degree with zero-padded leading coefficients. `eta0_min` is taken
    /// over the arcs that attain that degree.
    pub fn padded(game: &Game) -> Self {
        let beta = game.degrees().into_iter().max().unwrap_or(0);
        Self::collect(game, beta)
    }

    fn collect(game: &Game, beta: usize) -> Self {
        let eta_max = game
            .arcs()
            .iter()
            .map(|a| rational_to_f64(a.cost.max_coefficient()))
            .fold(0.0, f64::max);
        let eta0_min = game
            .arcs()
            .iter()
            .filter(|a| a.cost.degree() == beta)
            .map(|a| rational_to_f64(a.cost.leading()))
            .fold(f64::INFINITY, f64::min);
        Self {
            beta: beta as u32,
            eta_max,
            eta0_min,
            num_arcs: game.num_arcs(),
            num_paths: game.num_paths(),
            total_demand: game.total_demand_f64(),
            d_max: game.max_demand_f64(),
        }
    }

    /// `Σ_{l=from}^{β} T^{-l}`; empty sums are 0.
    fn inverse_power_sum(&self, from: u32) -> f64 {
        (from..=self.beta).map(|l| self.total_demand.powi(-(l as i32))).sum()
    }

    /// `κ = β · η_max · (1 + Σ_{l=1}^{β} T^{-l})`.
    pub fn kappa(&self) -> f64 {
        self.beta as f64 * self.eta_max * (1.0 + self.inverse_power_sum(1))
    }

    pub fn demand_ratio(&self) -> f64 {
        self.d_max / self.total_demand
    }

    fn check_eta0(&self) -> Result<(), BoundError> {
        if !(self.eta0_min > 0.0) || !self.eta0_min.is_finite() {
            return Err(BoundError::Domain(format!("smallest leading coefficient must be positive, got {}", self.eta0_min)));
        }
        Ok(())
    }
}

/// Atomic PoA bound for same-degree polynomial costs.
pub fn theorem1_bound(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.check_eta0()?;
    let p = inputs.num_paths as f64;
    let a = inputs.num_arcs as f64;
    let kappa = inputs.kappa();
    let pb = p.powi(inputs.beta as i32);
    let r = inputs.demand_ratio();
    Ok(1.0
        + inputs.beta as f64 * inputs.eta_max * pb / inputs.eta0_min * inputs.inverse_power_sum(1)
        + a * kappa * pb / inputs.eta0_min * (p * a * kappa * r).sqrt()
        + a * kappa * pb * p / inputs.eta0_min * r)
}

/// Non-atomic PoA bound: `1 + (β η_max |P|^β / η_{0,min}) Σ_{l=1}^{β} T^{-l}`.
pub fn lemma6_nonatomic_bound(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.check_eta0()?;
    let pb = (inputs.num_paths as f64).powi(inputs.beta as i32);
    Ok(1.0 + inputs.beta as f64 * inputs.eta_max * pb / inputs.eta0_min * inputs.inverse_power_sum(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma4 {
    /// `ε = |P|·|A|·κ·d_max/T`: every atomic NE of the scaled game is an
    /// ε-approximate non-atomic NE.
    pub epsilon: f64,
    /// `κ·√ε`: bound on arc-cost gaps to the non-atomic NE.
    pub arc_cost_gap: f64,
}

pub fn lemma4_residual_bound(inputs: &BoundInputs) -> Lemma4 {
    let kappa = inputs.kappa();
    let epsilon = inputs.num_paths as f64 * inputs.num_arcs as f64 * kappa * inputs.demand_ratio();
    Lemma4 { epsilon, arc_cost_gap: kappa * epsilon.sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma7 {
    /// ε of the expected flow of a mixed NE; `None` when β = 0.
    pub epsilon_exp: Option<f64>,
    /// With β = 0 the expected flow is an exact non-atomic NE.
    pub expected_flow_exact: bool,
    /// `P_δ = (|A|/4)·(d_max/T)^{1−2δ}`.
    pub p_delta: f64,
    /// Bound on `|C(f_nat) − C(E f_ran)|` in the scaled game.
    pub expected_cost_gap: f64,
    /// Bound on `|C(f_ran) − C(E f_ran)|`, holding with probability at
    /// least `1 − P_δ`.
    pub random_cost_gap: f64,
}

fn check_delta(delta: f64) -> Result<(), BoundError> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(BoundError::Domain(format!("δ must lie in (0, 1/2), got {delta}")));
    }
    Ok(())
}

pub fn lemma7_quantities(inputs: &BoundInputs, delta: f64) -> Result<Lemma7, BoundError> {
    check_delta(delta)?;
    let a = inputs.num_arcs as f64;
    let r = inputs.demand_ratio();
    let kappa = inputs.kappa();
    let (epsilon_exp, expected_cost_gap) = if inputs.beta == 0 {
        (None, 0.0)
    } else {
        let eps = 2.0 * inputs.num_paths as f64 * kappa * a * (1.0 + a / (4.0 * inputs.beta as f64)) * r.cbrt();
        (Some(eps), a * kappa * eps.sqrt() + eps)
    };
    let random_cost_gap = a * (kappa + inputs.eta_max * inputs.inverse_power_sum(0)) * r.powf(delta);
    Ok(Lemma7 {
        epsilon_exp,
        expected_flow_exact: inputs.beta == 0,
        p_delta: a / 4.0 * r.powf(1.0 - 2.0 * delta),
        expected_cost_gap,
        random_cost_gap,
    })
}

/// Per-arc Chebyshev bound `(1/4)·(d_max/T)^{1−2δ}` on
/// `P(|f_a − E f_a| > (d_max/T)^δ)` in the scaled game.
pub fn chebyshev_arc_bound(inputs: &BoundInputs, delta: f64) -> Result<f64, BoundError> {
    if !(delta >= 0.0 && delta < 0.5) {
        return Err(BoundError::Domain(format!("δ must lie in [0, 1/2), got {delta}")));
    }
    Ok(0.25 * inputs.demand_ratio().powf(1.0 - 2.0 * delta))
}

/// Upper bound on the random PoA that holds with probability at least
/// `1 − P_δ`: `ρ_nat + (expected gap + random gap) / C^[g](f*_nat)`.
/// `scaled_so_cost` is the non-atomic optimum of the scaled game with
/// `g = T^β`.
pub fn random_poa_bound(inputs: &BoundInputs, delta: f64, rho_nat: f64, scaled_so_cost: f64) -> Result<f64, BoundError> {
    if !(scaled_so_cost > 0.0) {
        return Err(BoundError::Domain("scaled optimum cost must be positive".into()));
    }
    let l7 = lemma7_quantities(inputs, delta)?;
    Ok(rho_nat + (l7.expected_cost_gap + l7.random_cost_gap) / scaled_so_cost)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailVariant {
    /// Upper tail `P(Y ≥ (1+δ)E)`.
    A,
    /// Lower tail `P(Y ≤ (1−δ)E)`.
    B,
    /// `P(Y ≥ 1+δ)` when `E(Y)` is small and `Σv > 1`.
    C,
    /// `P(Y ≤ (1−δ)(E − c))` for `0 < c < E`.
    D { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBound {
    pub probability: f64,
    /// Variants C and D only hold for large enough n; the flag marks that
    /// the value is advisory.
    pub asymptotic_caveat: bool,
}

/// Chernoff-type bounds for `Y = Σ v_i X_i` with independent
/// `X_i ~ Bernoulli(q_i)` and `v_i ≤ υ`.
pub fn fact2_tail_bound(
    weights: &[f64],
    probs: &[f64],
    upsilon: f64,
    delta: f64,
    variant: TailVariant,
) -> Result<TailBound, BoundError> {
    if weights.len() != probs.len() {
        return Err(BoundError::Domain("weights and probabilities differ in length".into()));
    }
    if weights.iter().any(|&v| !(v >= 0.0)) || probs.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
        return Err(BoundError::Domain("weights must be non-negative and probabilities in [0, 1]".into()));
    }
    if !(upsilon > 0.0) || weights.iter().any(|&v| v > upsilon) {
        return Err(BoundError::Domain("υ must be positive and dominate every weight".into()));
    }
    let e: f64 = weights.iter().zip(probs).map(|(v, q)| v * q).sum();
    let s: f64 = weights.iter().sum();
    let upper = |mean: f64| ((-(delta + 1.0) * mean / upsilon) * ((delta + 1.0).ln() - delta / (delta + 1.0))).exp();
    let lower = |mean: f64| {
        let top = s - (1.0 - delta) * mean;
        let gap = s - mean;
        if gap <= 0.0 {
            // Y is constant at its mean, strictly above (1−δ)·mean.
            return if mean > 0.0 { 0.0 } else { 1.0 };
        }
        (-(top / upsilon) * ((top / gap).ln() - delta * mean / top)).exp()
    };
    let (probability, asymptotic_caveat) = match variant {
        TailVariant::A => {
            if !(delta > 0.0) {
                return Err(BoundError::Domain(format!("variant a needs δ > 0, got {delta}")));
            }
            (upper(e), false)
        }
        TailVariant::B => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(BoundError::Domain(format!("variant b needs δ in (0, 1), got {delta}")));
            }
            (lower(e), false)
        }
        TailVariant::C => {
            if !(delta > 0.0) {
                return Err(BoundError::Domain(format!("variant c needs δ > 0, got {delta}")));
            }
            (upper(1.0), true)
        }
        TailVariant::D { c } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(BoundError::Domain(format!("variant d needs δ in (0, 1), got {delta}")));
            }
            if !(c > 0.0 && c < e) {
                return Err(BoundError::Domain(format!("variant d needs c in (0, E(Y)) = (0, {e}), got {c}")));
            }
            (lower(e - c), true)
        }
    };
    Ok(TailBound { probability: probability.min(1.0), asymptotic_caveat })
}
