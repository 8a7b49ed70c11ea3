//! Distributed equilibrium seeking with event-triggered quantized broadcasts.
//!
//! Every player keeps a decision `x_i` and an estimate `y_i` of the average
//! decision. Per iteration `k` the players, in order:
//!
//! 1. decide whether to broadcast (always at `k = 0`) and, if so, send a
//!    quantized copy of `y_i`;
//! 2. receive neighbour messages and refresh their stored copies;
//! 3. take a projected gradient step on `x_i` using the pre-update `y_i`,
//!    then mix the stored copies into `y_i` and add the decision increment.
//!
//! The increment term keeps `Σ y = Σ x` for all `k`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::game::{GameInstance, DOMAIN_TOL};
use crate::mechanism::{mechanism_step, stochastic_quantize, MechanismParams, StepDraws, TriggerState};
use crate::rng::{Channel, Streams};
use crate::topology::Topology;

/// Power-law step size `λ_k = λ₀/(1 + b_λ k^p)` and decaying factor
/// `γ_k = γ₀/(1 + b_γ k^q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedules {
    pub lambda0: f64,
    pub b_l: f64,
    pub p: f64,
    pub gamma0: f64,
    pub b_g: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub convergence_ok: bool,
    pub privacy_ok: bool,
    /// Human-readable description of each failed condition.
    pub violations: Vec<String>,
}

impl Schedules {
    pub fn new(lambda0: f64, b_l: f64, p: f64, gamma0: f64, b_g: f64, q: f64) -> Result<Self> {
        let s = Self { lambda0, b_l, p, gamma0, b_g, q };
        s.check_positive()?;
        Ok(s)
    }

    /// `λ_k = 0.03/(1 + 0.01 k^0.95)`, `γ_k = 1.2/(1 + 0.12 k^0.55)`.
    pub fn energy() -> Self {
        Self { lambda0: 0.03, b_l: 0.01, p: 0.95, gamma0: 1.2, b_g: 0.12, q: 0.55 }
    }

    fn check_positive(&self) -> Result<()> {
        let fields = [
            ("lambda0", self.lambda0),
            ("b_l", self.b_l),
            ("p", self.p),
            ("gamma0", self.gamma0),
            ("b_g", self.b_g),
            ("q", self.q),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Schedule(format!("`{name}` must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambda0 / (1.0 + self.b_l * (k as f64).powf(self.p))
    }

    #[inline]
    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 / (1.0 + self.b_g * (k as f64).powf(self.q))
    }

    /// Maps the summability requirements of the power-law family onto
    /// exponent inequalities:
    ///
    /// * `Σλ = ∞` ⇔ `p ≤ 1`, `Σγ = ∞` ⇔ `q ≤ 1`,
    /// * `Σγ² < ∞` ⇔ `q > 1/2`, `Σλ²/γ < ∞` ⇔ `2p − q > 1`,
    /// * privacy additionally needs `Σλ²/γ^{3/2} < ∞` ⇔ `2p − 1.5q > 1`.
    pub fn validate(&self) -> Result<ScheduleReport> {
        self.check_positive()?;
        let (p, q) = (self.p, self.q);
        let mut violations = Vec::new();
        if p > 1.0 {
            violations.push(format!("sum of lambda_k must diverge: needs p <= 1, got p = {p}"));
        }
        if q > 1.0 {
            violations.push(format!("sum of gamma_k must diverge: needs q <= 1, got q = {q}"));
        }
        if q <= 0.5 {
            violations.push(format!("sum of gamma_k^2 must converge: needs q > 0.5, got q = {q}"));
        }
        if 2.0 * p - q <= 1.0 {
            violations.push(format!("sum of lambda_k^2/gamma_k must converge: needs 2p - q > 1, got {}", 2.0 * p - q));
        }
        let convergence_ok = violations.is_empty();
        let privacy_exponent = 2.0 * p - 1.5 * q;
        if privacy_exponent <= 1.0 {
            violations.push(format!(
                "privacy summability: sum of lambda_k^2/gamma_k^1.5 must converge: needs 2p - 1.5q > 1, got {privacy_exponent}"
            ));
        }
        let privacy_ok = convergence_ok && privacy_exponent > 1.0;
        Ok(ScheduleReport { convergence_ok, privacy_ok, violations })
    }
}

/// How estimates are put on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BroadcastPolicy {
    /// Stochastic trigger plus stochastic quantizer.
    Private(MechanismParams),
    /// Every player sends its raw estimate every iteration.
    Transparent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerState {
    pub x: f64,
    pub y: f64,
    /// `None` until the forced broadcast at iteration 0.
    pub trigger: Option<TriggerState>,
    /// Latest value received from each neighbour.
    pub neighbor_store: BTreeMap<usize, f64>,
}

impl PlayerState {
    pub fn new(x0: f64) -> Self {
        Self { x: x0, y: x0, trigger: None, neighbor_store: BTreeMap::new() }
    }
}

/// What an eavesdropper on the links sees for one player and iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRecord {
    pub k: usize,
    pub player: usize,
    pub fired: bool,
    pub message: Option<f64>,
}

/// Internal record of one stochastic trigger decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerEvent {
    pub k: usize,
    pub player: usize,
    pub fired: bool,
    pub rho: f64,
    pub xi: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRecord {
    pub observations: Vec<ObservationRecord>,
    pub events: Vec<TriggerEvent>,
    /// Whether the projection clipped player `i`'s gradient step.
    pub projection_active: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `x_i⁰ ~ Uniform(Ω_i)`, drawn from the run's streams.
    Uniform,
    Explicit(Vec<f64>),
}

impl Init {
    pub fn resolve(&self, game: &GameInstance, streams: &Streams) -> Result<Vec<f64>> {
        match self {
            Init::Uniform => Ok((0..game.n_players())
                .map(|i| {
                    let s = game.decision_set(i);
                    s.lo + s.width() * streams.uniform(i, Channel::Init, 0)
                })
                .collect()),
            Init::Explicit(x0) => {
                game.check_profile(x0)?;
                Ok(x0.clone())
            }
        }
    }
}

/// Full record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub iterations: usize,
    /// Iterations for which `x` and `y` were stored.
    pub ks: Vec<usize>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// One record per player for every `k < iterations`, ordered by `(k, player)`.
    pub observations: Vec<ObservationRecord>,
    pub events: Vec<TriggerEvent>,
    /// Per iteration `k < iterations`, per player.
    pub projection_active: Vec<Vec<bool>>,
    pub trigger_counts: Vec<usize>,
    /// Largest `|Σy − Σx| / max(1, |Σx|)` over every iterate.
    pub conservation_error: f64,
}

impl Trajectory {
    pub fn n_players(&self) -> usize {
        self.trigger_counts.len()
    }

    /// Broadcast count over `iterations` (iteration 0 included).
    pub fn trigger_rates(&self) -> Vec<f64> {
        self.trigger_counts.iter().map(|&c| c as f64 / self.iterations.max(1) as f64).collect()
    }

    /// Position of iteration `k` in the stored iterates.
    pub fn index_of(&self, k: usize) -> Option<usize> {
        self.ks.binary_search(&k).ok()
    }

    pub fn is_complete(&self) -> bool {
        self.ks.len() == self.iterations + 1
    }

    pub fn distances(&self, ne: &[f64]) -> Vec<f64> {
        self.x.iter().map(|x| euclidean(x, ne)).collect()
    }

    /// `Σ_i (y_i − ȳ)²` per stored iterate.
    pub fn consensus_errors(&self) -> Vec<f64> {
        self.y.iter().map(|y| consensus_error(y)).collect()
    }

    pub fn observations_at(&self, k: usize) -> &[ObservationRecord] {
        let n = self.n_players();
        &self.observations[k * n..(k + 1) * n]
    }

    /// Silent rounds that break `ρ² ≤ (γ/c) ln(σ/ξ)`.
    pub fn silent_bound_violations(&self, p: &MechanismParams) -> usize {
        self.events
            .iter()
            .filter(|e| !e.fired && !crate::mechanism::silent_bound_holds(e.rho, e.gamma, e.xi, p))
            .count()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

pub fn consensus_error(y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean) * (v - mean)).sum()
}

fn relative_gap(x: &[f64], y: &[f64]) -> f64 {
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    (sy - sx).abs() / sx.abs().max(1.0)
}

/// Projected gradient step followed by the estimate update, shared by the
/// private engine and the noisy baseline. `wire` holds what player `i` uses
/// for its own and its neighbours' values in the mixing term.
fn update_player(
    game: &GameInstance,
    topo: &Topology,
    i: usize,
    state: &mut PlayerState,
    own_wire: f64,
    lambda: f64,
    gamma: f64,
) -> Result<bool> {
    let set = game.decision_set(i);
    let raw = state.x - lambda * game.gradient(i, state.x, state.y);
    let x_next = set.project(raw);
    let mut mix = 0.0;
    for &(j, w) in topo.neighbors(i) {
        let other = *state
            .neighbor_store
            .get(&j)
            .ok_or_else(|| Error::Invariant(format!("player {i} holds no value from neighbour {j}")))?;
        mix += w * (other - own_wire);
    }
    let y_next = state.y + gamma * mix + (x_next - state.x);
    if !(x_next.is_finite() && y_next.is_finite()) {
        return Err(Error::NonFinite(format!("player {i} state diverged (x = {x_next}, y = {y_next})")));
    }
    state.x = x_next;
    state.y = y_next;
    Ok(raw != x_next)
}

fn deliver(players: &mut [PlayerState], topo: &Topology, sender: usize, value: f64) {
    for &(j, _) in topo.neighbors(sender) {
        players[j].neighbor_store.insert(sender, value);
    }
}

/// Algorithm engine bound to a game, graph, schedule and broadcast policy.
#[derive(Debug, Clone, Copy)]
pub struct Seeker<'a> {
    pub game: &'a GameInstance,
    pub topo: &'a Topology,
    pub schedules: &'a Schedules,
    pub policy: BroadcastPolicy,
}

impl<'a> Seeker<'a> {
    pub fn new(
        game: &'a GameInstance,
        topo: &'a Topology,
        schedules: &'a Schedules,
        policy: BroadcastPolicy,
    ) -> Result<Self> {
        if game.n_players() != topo.n() {
            return Err(Error::DimensionMismatch { expected: game.n_players(), actual: topo.n() });
        }
        schedules.validate()?;
        if let BroadcastPolicy::Private(p) = &policy {
            p.validate()?;
        }
        Ok(Self { game, topo, schedules, policy })
    }

    pub fn init_players(&self, x0: &[f64]) -> Result<Vec<PlayerState>> {
        self.game.check_profile(x0)?;
        Ok(x0.iter().map(|&x| PlayerState::new(x)).collect())
    }

    /// Advances every player by one iteration.
    pub fn step(&self, players: &mut [PlayerState], k: usize, streams: &Streams) -> Result<StepRecord> {
        let n = self.game.n_players();
        if players.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: players.len() });
        }
        let gamma = self.schedules.gamma(k);
        let lambda = self.schedules.lambda(k);
        if !(gamma > 0.0 && lambda > 0.0) {
            return Err(Error::Schedule(format!("schedule vanished at k = {k}")));
        }
        let mut rec = StepRecord {
            observations: Vec::with_capacity(n),
            events: Vec::new(),
            projection_active: Vec::with_capacity(n),
        };

        // (a) trigger and broadcast
        let mut messages: Vec<Option<f64>> = Vec::with_capacity(n);
        for (i, st) in players.iter_mut().enumerate() {
            let message = match (&self.policy, st.trigger) {
                (BroadcastPolicy::Private(p), None) if k == 0 => {
                    let q = stochastic_quantize(st.y, p.d, streams.uniform(i, Channel::Quantizer, 0))?.output;
                    st.trigger = Some(TriggerState::initial(q));
                    Some(q)
                }
                (BroadcastPolicy::Private(p), Some(tr)) if k > 0 => {
                    let draws = StepDraws {
                        trigger: streams.uniform(i, Channel::Trigger, k),
                        quantizer: streams.uniform(i, Channel::Quantizer, k),
                    };
                    let out = mechanism_step(&tr, st.y, k, gamma, p, draws)?;
                    st.trigger = Some(out.state);
                    rec.events.push(TriggerEvent { k, player: i, fired: out.fired, rho: out.rho, xi: out.xi, gamma });
                    out.message
                }
                (BroadcastPolicy::Transparent, prev) if (k == 0) == prev.is_none() => {
                    st.trigger =
                        Some(TriggerState { tau: k, stored: st.y, rho: prev.map_or(0.0, |t| t.stored - st.y) });
                    Some(st.y)
                }
                _ => return Err(Error::Invariant(format!("player {i}: trigger state does not match iteration {k}"))),
            };
            rec.observations.push(ObservationRecord { k, player: i, fired: message.is_some(), message });
            messages.push(message);
        }

        // (b) delivery
        for (i, m) in messages.iter().enumerate() {
            if let Some(v) = *m {
                deliver(players, self.topo, i, v);
            }
        }

        // (c) decision and estimate update
        for (i, st) in players.iter_mut().enumerate() {
            let own = st.trigger.expect("set during broadcast").stored;
            let active = update_player(self.game, self.topo, i, st, own, lambda, gamma)?;
            rec.projection_active.push(active);
        }
        Ok(rec)
    }

    /// Runs `iterations` steps from `init`, storing every `decimation`-th
    /// iterate (and always the last one).
    pub fn run(&self, iterations: usize, init: &Init, seed: u64, decimation: usize) -> Result<Trajectory> {
        let streams = Streams::new(seed);
        let x0 = init.resolve(self.game, &streams)?;
        let mut players = self.init_players(&x0)?;
        let mut traj = Recorder::new(seed, iterations, decimation, self.game.n_players())?;
        traj.record(0, &players);
        for k in 0..iterations {
            let rec = self.step(&mut players, k, &streams)?;
            traj.absorb(rec);
            traj.record(k + 1, &players);
            for (i, st) in players.iter().enumerate() {
                if !self.game.decision_set(i).contains(st.x, DOMAIN_TOL) {
                    return Err(Error::Invariant(format!("player {i} left its decision set at k = {}", k + 1)));
                }
            }
        }
        Ok(traj.finish())
    }
}

struct Recorder {
    traj: Trajectory,
    decimation: usize,
}

impl Recorder {
    fn new(seed: u64, iterations: usize, decimation: usize, n: usize) -> Result<Self> {
        if decimation == 0 {
            return Err(Error::param("decimation", "must be at least 1"));
        }
        Ok(Self {
            traj: Trajectory {
                seed,
                iterations,
                ks: Vec::new(),
                x: Vec::new(),
                y: Vec::new(),
                observations: Vec::with_capacity(iterations * n),
                events: Vec::new(),
                projection_active: Vec::with_capacity(iterations),
                trigger_counts: vec![0; n],
                conservation_error: 0.0,
            },
            decimation,
        })
    }

    fn record(&mut self, k: usize, players: &[PlayerState]) {
        let x: Vec<f64> = players.iter().map(|p| p.x).collect();
        let y: Vec<f64> = players.iter().map(|p| p.y).collect();
        let t = &mut self.traj;
        t.conservation_error = t.conservation_error.max(relative_gap(&x, &y));
        if k.is_multiple_of(self.decimation) || k == t.iterations {
            t.ks.push(k);
            t.x.push(x);
            t.y.push(y);
        }
    }

    fn absorb(&mut self, rec: StepRecord) {
        for o in &rec.observations {
            if o.fired {
                self.traj.trigger_counts[o.player] += 1;
            }
        }
        self.traj.observations.extend(rec.observations);
        self.traj.events.extend(rec.events);
        self.traj.projection_active.push(rec.projection_active);
    }

    fn finish(self) -> Trajectory {
        self.traj
    }
}

/// Step rule of the noise-injection baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineStep {
    /// `λ_k = λ₀ r^k`.
    Geometric { lambda0: f64, ratio: f64 },
    /// The same power-law `λ_k` as the private engine.
    Schedule,
}

/// Laplace-noise baseline: raw estimates plus `Laplace(φ₀ r^k)` noise are
/// broadcast every iteration, with no trigger and no quantizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub noise_scale: f64,
    pub noise_decay: f64,
    pub step: BaselineStep,
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::param("noise_scale", "must be nonnegative"));
        }
        if !(self.noise_decay > 0.0 && self.noise_decay < 1.0) {
            return Err(Error::param("noise_decay", format!("must lie in (0, 1), got {}", self.noise_decay)));
        }
        if let BaselineStep::Geometric { lambda0, ratio } = self.step {
            if !(lambda0 > 0.0 && lambda0.is_finite()) {
                return Err(Error::param("lambda0", "must be positive"));
            }
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::param("step_decay", format!("must lie in (0, 1), got {ratio}")));
            }
        }
        Ok(())
    }
}

/// Inverse-CDF Laplace sample from a uniform draw in `[0, 1)`.
pub fn laplace(scale: f64, u: f64) -> f64 {
    let v = u - 0.5;
    -scale * v.signum() * (1.0 - 2.0 * v.abs()).max(f64::MIN_POSITIVE).ln()
}

#[derive(Debug, Clone, Copy)]
pub struct NoisyBaseline<'a> {
    pub game: &'a GameInstance,
    pub topo: &'a Topology,
    /// Supplies `γ_k` (and `λ_k` under [`BaselineStep::Schedule`]).
    pub schedules: &'a Schedules,
    pub params: BaselineParams,
}

impl<'a> NoisyBaseline<'a> {
    pub fn new(
        game: &'a GameInstance,
        topo: &'a Topology,
        schedules: &'a Schedules,
        params: BaselineParams,
    ) -> Result<Self> {
        if game.n_players() != topo.n() {
            return Err(Error::DimensionMismatch { expected: game.n_players(), actual: topo.n() });
        }
        params.validate()?;
        Ok(Self { game, topo, schedules, params })
    }

    pub fn lambda(&self, k: usize) -> f64 {
        match self.params.step {
            BaselineStep::Geometric { lambda0, ratio } => lambda0 * ratio.powi(k as i32),
            BaselineStep::Schedule => self.schedules.lambda(k),
        }
    }

    pub fn run(&self, iterations: usize, init: &Init, seed: u64, decimation: usize) -> Result<Trajectory> {
        let streams = Streams::new(seed);
        let x0 = init.resolve(self.game, &streams)?;
        let n = self.game.n_players();
        let mut players: Vec<PlayerState> = x0.iter().map(|&x| PlayerState::new(x)).collect();
        let mut rec = Recorder::new(seed, iterations, decimation, n)?;
        rec.record(0, &players);
        for k in 0..iterations {
            let scale = self.params.noise_scale * self.params.noise_decay.powi(k as i32);
            let sent: Vec<f64> = players
                .iter()
                .enumerate()
                .map(|(i, st)| st.y + laplace(scale, streams.uniform(i, Channel::Noise, k)))
                .collect();
            for (i, &v) in sent.iter().enumerate() {
                deliver(&mut players, self.topo, i, v);
            }
            let (lambda, gamma) = (self.lambda(k), self.schedules.gamma(k));
            let mut step = StepRecord::default();
            for (i, st) in players.iter_mut().enumerate() {
                let active = update_player(self.game, self.topo, i, st, sent[i], lambda, gamma)?;
                step.projection_active.push(active);
                step.observations.push(ObservationRecord { k, player: i, fired: true, message: Some(sent[i]) });
            }
            rec.absorb(step);
            rec.record(k + 1, &players);
        }
        Ok(rec.finish())
    }
}
