//! Privacy accounting.
//!
//! At iteration `k` the mechanism is `(0, δ_k)`-differentially private with
//!
//! ```text
//! δ_k = (σ/(1−a)·√(2c/(e·γ_k)) + 1/d) · C̃ · λ_k²/γ_k
//! ```
//!
//! where `C̃ λ_k²/γ_k` bounds the sensitivity of the estimate sequence. Over
//! `T` iterations the budgets compose additively. `C̃` is not known in closed
//! form; [`estimate_c_tilde`] measures it with coupled runs on adjacent games.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::{GameInstance, GradientField};
use crate::mechanism::MechanismParams;
use crate::seeker::{BroadcastPolicy, Init, Schedules, Seeker};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaTerm {
    pub k: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Trigger plus quantizer factor multiplying the sensitivity.
    pub bracket: f64,
    /// `C̃ λ_k²/γ_k`.
    pub sensitivity_bound: f64,
    pub delta: f64,
}

impl DeltaTerm {
    /// `δ_k ∈ (0, 1)`.
    pub fn is_valid(&self) -> bool {
        self.delta > 0.0 && self.delta < 1.0
    }
}

fn check_c_tilde(c_tilde: f64) -> Result<()> {
    if !(c_tilde > 0.0 && c_tilde.is_finite()) {
        return Err(Error::param("c_tilde", format!("must be positive, got {c_tilde}")));
    }
    Ok(())
}

fn trigger_coefficient(p: &MechanismParams) -> f64 {
    p.sigma / (1.0 - p.a) * (2.0 * p.c / std::f64::consts::E).sqrt()
}

pub fn delta_per_iteration(s: &Schedules, p: &MechanismParams, c_tilde: f64, k: usize) -> Result<DeltaTerm> {
    p.validate()?;
    check_c_tilde(c_tilde)?;
    let (lambda, gamma) = (s.lambda(k), s.gamma(k));
    if !(lambda > 0.0 && gamma > 0.0) {
        return Err(Error::Schedule(format!("nonpositive schedule at k = {k}")));
    }
    let bracket = trigger_coefficient(p) / gamma.sqrt() + 1.0 / p.d;
    let sensitivity_bound = c_tilde * lambda * lambda / gamma;
    Ok(DeltaTerm { k, lambda, gamma, bracket, sensitivity_bound, delta: bracket * sensitivity_bound })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailBound {
    /// Upper bound on `Σ_{k>T} δ_k` from an integral comparison.
    Finite(f64),
    /// `λ_k²/γ_k^{3/2}` decays like `k^{-exponent}` with `exponent ≤ 1`.
    Divergent { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulativeDelta {
    pub horizon: usize,
    pub sum: f64,
    pub tail: TailBound,
}

impl CumulativeDelta {
    /// Bound on the infinite-horizon budget, when one exists.
    pub fn infinite_horizon_bound(&self) -> Option<f64> {
        match self.tail {
            TailBound::Finite(t) => Some(self.sum + t),
            TailBound::Divergent { .. } => None,
        }
    }
}

/// `Σ_{k=0}^{T} δ_k` plus a bound on the remaining tail.
pub fn cumulative_delta(s: &Schedules, p: &MechanismParams, c_tilde: f64, horizon: usize) -> Result<CumulativeDelta> {
    let mut sum = 0.0;
    for k in 0..=horizon {
        sum += delta_per_iteration(s, p, c_tilde, k)?.delta;
    }
    Ok(CumulativeDelta { horizon, sum, tail: tail_bound(s, p, c_tilde, horizon) })
}

/// For `k ≥ 1`, `1/γ_k ≤ (1+b_γ)k^q/γ₀` and `λ_k ≤ λ₀/(b_λ k^p)`, so `δ_k`
/// is dominated by two power laws whose tails are bounded by
/// `Σ_{k>T} k^{-e} ≤ T^{1−e}/(e−1)` (or `1 + 1/(e−1)` when `T = 0`).
fn tail_bound(s: &Schedules, p: &MechanismParams, c_tilde: f64, horizon: usize) -> TailBound {
    let e1 = 2.0 * s.p - 1.5 * s.q;
    let e2 = 2.0 * s.p - s.q;
    if e1 <= 1.0 {
        return TailBound::Divergent { exponent: e1 };
    }
    let tail = |e: f64| {
        if horizon == 0 {
            1.0 + 1.0 / (e - 1.0)
        } else {
            (horizon as f64).powf(1.0 - e) / (e - 1.0)
        }
    };
    let scale = c_tilde * s.lambda0 * s.lambda0 / (s.b_l * s.b_l);
    let g = (1.0 + s.b_g) / s.gamma0;
    let c1 = trigger_coefficient(p) * g.powf(1.5);
    let c2 = g / p.d;
    TailBound::Finite(scale * (c1 * tail(e1) + c2 * tail(e2)))
}

/// Per-iteration and cumulative budgets over `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    pub c_tilde: f64,
    pub terms: Vec<DeltaTerm>,
    pub cumulative: Vec<f64>,
}

impl PrivacyLedger {
    pub fn new(s: &Schedules, p: &MechanismParams, c_tilde: f64, horizon: usize) -> Result<Self> {
        let mut terms = Vec::with_capacity(horizon + 1);
        let mut cumulative = Vec::with_capacity(horizon + 1);
        let mut acc = 0.0;
        for k in 0..=horizon {
            let t = delta_per_iteration(s, p, c_tilde, k)?;
            acc += t.delta;
            terms.push(t);
            cumulative.push(acc);
        }
        Ok(Self { c_tilde, terms, cumulative })
    }

    /// Iterations whose `δ_k` falls outside `(0, 1)`.
    pub fn invalid_iterations(&self) -> Vec<usize> {
        self.terms.iter().filter(|t| !t.is_valid()).map(|t| t.k).collect()
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Which player is perturbed, outside which radius around its equilibrium
/// decision, and by how much.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacencySpec {
    pub player: usize,
    pub alpha: f64,
    pub kappa: f64,
}

/// `0` inside the ball, `t²` outside.
pub fn ramp(t: f64) -> f64 {
    if t > 0.0 {
        t * t
    } else {
        0.0
    }
}

/// Adjacent game: player `i`'s field becomes
/// `F_i(x, u) + κ·ramp(|x − x_i*| − α)`, identical to the original on the
/// ball of radius `α` around the equilibrium decision.
pub fn make_adjacent(game: &GameInstance, spec: &AdjacencySpec, ne: &[f64]) -> Result<GameInstance> {
    if !(spec.alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be positive, got {}", spec.alpha)));
    }
    if !spec.kappa.is_finite() {
        return Err(Error::param("kappa", "must be finite"));
    }
    if ne.len() != game.n_players() {
        return Err(Error::DimensionMismatch { expected: game.n_players(), actual: ne.len() });
    }
    if spec.player >= game.n_players() {
        return Err(Error::param("player", format!("no player {}", spec.player)));
    }
    let base = Arc::clone(game.field(spec.player));
    let (center, alpha, kappa) = (ne[spec.player], spec.alpha, spec.kappa);
    let field: GradientField = Arc::new(move |x, u| base(x, u) + kappa * ramp((x - center).abs() - alpha));
    Ok(game.with_field(spec.player, field))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledTrace {
    pub seed: u64,
    /// `|y_i^k − y_i'^k|` for `k = 0..=T`.
    pub gaps: Vec<f64>,
    /// `gaps[k] · γ_k / λ_k²`; entry 0 is unused and set to zero.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub argmax: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CTildeEstimate {
    pub c_tilde: f64,
    pub traces: Vec<CoupledTrace>,
}

/// Runs the original and the adjacent game side by side from the same
/// initial decisions and the same random streams.
#[allow(clippy::too_many_arguments)]
pub fn coupled_trace(
    game: &GameInstance,
    adjacent: &GameInstance,
    topo: &Topology,
    policy: BroadcastPolicy,
    s: &Schedules,
    horizon: usize,
    init: &Init,
    player: usize,
    seed: u64,
) -> Result<CoupledTrace> {
    let a = Seeker::new(game, topo, s, policy)?.run(horizon, init, seed, 1)?;
    let b = Seeker::new(adjacent, topo, s, policy)?.run(horizon, init, seed, 1)?;
    if a.x[0] != b.x[0] {
        return Err(Error::Invariant("coupled runs started from different decisions".into()));
    }
    let gaps: Vec<f64> = a.y.iter().zip(&b.y).map(|(u, v)| (u[player] - v[player]).abs()).collect();
    let mut ratios = vec![0.0; gaps.len()];
    let (mut max_ratio, mut argmax) = (0.0, 0);
    for k in 1..gaps.len() {
        let l = s.lambda(k);
        ratios[k] = gaps[k] * s.gamma(k) / (l * l);
        if !ratios[k].is_finite() {
            return Err(Error::NonFinite(format!("sensitivity ratio at k = {k}")));
        }
        if ratios[k] > max_ratio {
            max_ratio = ratios[k];
            argmax = k;
        }
    }
    Ok(CoupledTrace { seed, gaps, ratios, max_ratio, argmax })
}

/// `C̃_est = max over seeds and k ≥ 1 of |y_i^k − y_i'^k| γ_k/λ_k²`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_c_tilde(
    game: &GameInstance,
    adjacent: &GameInstance,
    topo: &Topology,
    policy: BroadcastPolicy,
    s: &Schedules,
    horizon: usize,
    init: &Init,
    player: usize,
    seeds: &[u64],
) -> Result<CTildeEstimate> {
    let report = s.validate()?;
    if !report.convergence_ok {
        return Err(Error::Schedule(report.violations.join("; ")));
    }
    use rayon::prelude::*;
    let traces = seeds
        .par_iter()
        .map(|&seed| coupled_trace(game, adjacent, topo, policy, s, horizon, init, player, seed))
        .collect::<Result<Vec<_>>>()?;
    let c_tilde = traces.iter().map(|t| t.max_ratio).fold(0.0, f64::max);
    Ok(CTildeEstimate { c_tilde, traces })
}
