//! Honest-but-curious eavesdropper.
//!
//! The attacker sees every broadcast and every silence, and knows the graph
//! and the schedules. It keeps the latest message of each player (held
//! across silences) and recovers the target's decision increment by
//! inverting the estimate update,
//!
//! ```text
//! Δx̂_k = ŷ_t^{k+1} − ŷ_t^k − γ_k Σ_j L_tj (ŷ_j^k − ŷ_t^k),
//! ```
//!
//! then reads off the gradient as `F̂_k = −Δx̂_k / λ_k`, assuming the
//! projection was inactive. This estimator is a concrete stand-in; other
//! attacks are possible.

use crate::error::{Error, Result};
use crate::game::GameInstance;
use crate::seeker::{ObservationRecord, Schedules, Trajectory};
use crate::stats;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub target: usize,
    pub ks: Vec<usize>,
    pub inferred: Vec<f64>,
    pub truth: Vec<f64>,
    pub abs_error: Vec<f64>,
    /// Whether the target's projection clipped the step at `k`.
    pub projection_active: Vec<bool>,
}

impl AttackReport {
    fn window(&self, lo: usize, hi: usize) -> Vec<f64> {
        self.ks.iter().zip(&self.abs_error).filter(|(k, _)| **k >= lo && **k <= hi).map(|(_, e)| *e).collect()
    }

    /// Median absolute error over `lo ≤ k ≤ hi`.
    pub fn median_error(&self, lo: usize, hi: usize) -> f64 {
        stats::median(&self.window(lo, hi))
    }

    pub fn mean_error(&self, lo: usize, hi: usize) -> f64 {
        stats::mean(&self.window(lo, hi))
    }

    /// Largest error over iterations with an inactive projection.
    pub fn max_error_unprojected(&self) -> f64 {
        self.abs_error.iter().zip(&self.projection_active).filter(|(_, a)| !**a).map(|(e, _)| *e).fold(0.0, f64::max)
    }
}

/// Runs the attack against `target` using only the observation stream, and
/// scores it against the ground-truth trajectory.
pub fn infer_gradient(
    observations: &[ObservationRecord],
    topo: &Topology,
    s: &Schedules,
    target: usize,
    game: &GameInstance,
    truth: &Trajectory,
) -> Result<AttackReport> {
    let n = topo.n();
    if observations.is_empty() {
        return Err(Error::param("observations", "empty observation stream"));
    }
    if target >= n {
        return Err(Error::param("target", format!("no player {target}")));
    }
    if !observations.len().is_multiple_of(n) {
        return Err(Error::DimensionMismatch { expected: n, actual: observations.len() % n });
    }
    if !truth.is_complete() {
        return Err(Error::param("truth", "ground truth must store every iterate"));
    }
    let rounds = observations.len() / n;
    // held[k][j]: attacker's copy of player j after the round-k messages
    let mut held: Vec<Vec<f64>> = Vec::with_capacity(rounds);
    let mut current: Vec<Option<f64>> = vec![None; n];
    for k in 0..rounds {
        for o in &observations[k * n..(k + 1) * n] {
            if o.k != k || o.fired != o.message.is_some() {
                return Err(Error::param("observations", format!("malformed record at k = {k}")));
            }
            if let Some(m) = o.message {
                current[o.player] = Some(m);
            }
        }
        let row = current
            .iter()
            .enumerate()
            .map(|(j, v)| v.ok_or_else(|| Error::param("observations", format!("player {j} silent at k = {k}"))))
            .collect::<Result<Vec<f64>>>()?;
        held.push(row);
    }

    let mut rep = AttackReport {
        target,
        ks: Vec::new(),
        inferred: Vec::new(),
        truth: Vec::new(),
        abs_error: Vec::new(),
        projection_active: Vec::new(),
    };
    for k in 0..rounds.saturating_sub(1) {
        let lambda = s.lambda(k);
        if !(lambda > 0.0) {
            return Err(Error::Schedule(format!("step size vanished at k = {k}")));
        }
        let now = &held[k];
        let mix = topo.mix_at(target, now);
        let dx = (held[k + 1][target] - now[target]) - s.gamma(k) * mix;
        let inferred = -dx / lambda;
        let actual = game.gradient(target, truth.x[k][target], truth.y[k][target]);
        rep.ks.push(k);
        rep.inferred.push(inferred);
        rep.truth.push(actual);
        rep.abs_error.push((inferred - actual).abs());
        rep.projection_active.push(truth.projection_active[k][target]);
    }
    Ok(rep)
}
