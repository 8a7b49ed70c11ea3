//! Aggregative games with scalar interval-constrained decisions.
//!
//! Each player's partial gradient is a field `F_i(x_i, u)` where `u` stands
//! for the average decision. Fields must be the *total* partial derivative
//! of the player's cost, including any own-decision contribution that enters
//! through the aggregate, so that `F(x, mean(x))` is the game's
//! pseudo-gradient.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance used when checking that a profile lies in its decision sets.
pub const DOMAIN_TOL: f64 = 1e-9;

const ESTIMATE_GRID: usize = 64;
const ESTIMATE_MARGIN: f64 = 1.1;

pub type GradientField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Euclidean projection onto the interval.
    pub fn project(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// `n` evenly spaced points covering the interval, endpoints included.
    pub fn grid(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let step = if n > 1 { self.width() / (n - 1) as f64 } else { 0.0 };
        (0..n).map(move |i| if i + 1 == n && n > 1 { self.hi } else { self.lo + step * i as f64 })
    }
}

/// Projection of `v` onto `[lo, hi]`.
pub fn project(lo: f64, hi: f64, v: f64) -> Result<f64> {
    Ok(Interval::new(lo, hi)?.project(v))
}

#[derive(Clone)]
pub struct GameInstance {
    decision_sets: Vec<Interval>,
    fields: Vec<GradientField>,
    aggregate_set: Interval,
    lipschitz: f64,
    grad_bound: f64,
}

impl fmt::Debug for GameInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameInstance")
            .field("decision_sets", &self.decision_sets)
            .field("aggregate_set", &self.aggregate_set)
            .field("lipschitz", &self.lipschitz)
            .field("grad_bound", &self.grad_bound)
            .finish_non_exhaustive()
    }
}

impl GameInstance {
    /// Builds a game and estimates the Lipschitz constant (in `u`) and the
    /// gradient bound on a 64x64 grid of `Ω_i × Ω̄`, each inflated by 10%.
    pub fn new(decision_sets: Vec<Interval>, fields: Vec<GradientField>) -> Result<Self> {
        if decision_sets.is_empty() {
            return Err(Error::param("n_players", "at least one player is required"));
        }
        if decision_sets.len() != fields.len() {
            return Err(Error::DimensionMismatch { expected: decision_sets.len(), actual: fields.len() });
        }
        for s in &decision_sets {
            if s.lo >= s.hi {
                return Err(Error::InvalidInterval { lo: s.lo, hi: s.hi });
            }
        }
        let n = decision_sets.len() as f64;
        let aggregate_set = Interval {
            lo: decision_sets.iter().map(|s| s.lo).sum::<f64>() / n,
            hi: decision_sets.iter().map(|s| s.hi).sum::<f64>() / n,
        };
        let mut game = Self { decision_sets, fields, aggregate_set, lipschitz: 0.0, grad_bound: 0.0 };
        let (l, eta) = game.estimate_constants(ESTIMATE_GRID);
        game.lipschitz = (l * ESTIMATE_MARGIN).max(f64::MIN_POSITIVE);
        game.grad_bound = (eta * ESTIMATE_MARGIN).max(f64::MIN_POSITIVE);
        Ok(game)
    }

    /// Overrides the estimated constants.
    pub fn with_constants(mut self, lipschitz: f64, grad_bound: f64) -> Result<Self> {
        if !(lipschitz > 0.0) {
            return Err(Error::param("lipschitz", "must be positive"));
        }
        if !(grad_bound > 0.0) {
            return Err(Error::param("grad_bound", "must be positive"));
        }
        self.lipschitz = lipschitz;
        self.grad_bound = grad_bound;
        Ok(self)
    }

    fn estimate_constants(&self, m: usize) -> (f64, f64) {
        let us: Vec<f64> = self.aggregate_set.grid(m).collect();
        let mut l: f64 = 0.0;
        let mut eta: f64 = 0.0;
        for (i, set) in self.decision_sets.iter().enumerate() {
            for x in set.grid(m) {
                let vals: Vec<f64> = us.iter().map(|&u| self.gradient(i, x, u)).collect();
                for v in &vals {
                    eta = eta.max(v.abs());
                }
                for w in 0..vals.len().saturating_sub(1) {
                    let du = us[w + 1] - us[w];
                    if du > 0.0 {
                        l = l.max((vals[w + 1] - vals[w]).abs() / du);
                    }
                }
            }
        }
        (l, eta)
    }

    pub fn n_players(&self) -> usize {
        self.decision_sets.len()
    }

    pub fn decision_sets(&self) -> &[Interval] {
        &self.decision_sets
    }

    pub fn decision_set(&self, i: usize) -> Interval {
        self.decision_sets[i]
    }

    pub fn aggregate_set(&self) -> Interval {
        self.aggregate_set
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    #[inline]
    pub fn gradient(&self, i: usize, x: f64, u: f64) -> f64 {
        (self.fields[i])(x, u)
    }

    pub fn field(&self, i: usize) -> &GradientField {
        &self.fields[i]
    }

    /// Replaces player `i`'s gradient field, keeping the constants.
    pub(crate) fn with_field(&self, i: usize, field: GradientField) -> Self {
        let mut g = self.clone();
        g.fields[i] = field;
        g
    }

    pub fn check_profile(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_players() {
            return Err(Error::DimensionMismatch { expected: self.n_players(), actual: x.len() });
        }
        for (i, (&v, s)) in x.iter().zip(&self.decision_sets).enumerate() {
            if !s.contains(v, DOMAIN_TOL) {
                return Err(Error::OutOfDomain { player: i, value: v, lo: s.lo, hi: s.hi });
            }
        }
        Ok(())
    }

    /// `φ(x)_i = F_i(x_i, mean(x))`.
    pub fn pseudo_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_profile(x)?;
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        Ok(x.iter().enumerate().map(|(i, &xi)| self.gradient(i, xi, mean)).collect())
    }

    /// `(φ(x) − φ(x'))ᵀ(x − x')`; the two profiles must differ.
    pub fn monotonicity_gap(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        if x == x2 {
            return Err(Error::param("x'", "monotonicity pairs must differ"));
        }
        let a = self.pseudo_gradient(x)?;
        let b = self.pseudo_gradient(x2)?;
        Ok((0..x.len()).map(|i| (a[i] - b[i]) * (x[i] - x2[i])).sum())
    }

    /// Samples random profile pairs in `Ω` and records the smallest inner
    /// product. A probe, not a proof.
    pub fn check_monotonicity<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Result<MonotonicityReport> {
        if samples == 0 {
            return Err(Error::param("samples", "must be at least 1"));
        }
        let mut report = MonotonicityReport { samples: 0, min_inner: f64::INFINITY, violations: 0 };
        while report.samples < samples {
            let x = self.sample_profile(rng);
            let x2 = self.sample_profile(rng);
            if x == x2 {
                continue;
            }
            let g = self.monotonicity_gap(&x, &x2)?;
            report.samples += 1;
            report.min_inner = report.min_inner.min(g);
            if g <= 0.0 {
                report.violations += 1;
            }
        }
        Ok(report)
    }

    fn sample_profile<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.decision_sets.iter().map(|s| s.lo + s.width() * rng.random::<f64>()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    pub samples: usize,
    pub min_inner: f64,
    pub violations: usize,
}

impl MonotonicityReport {
    pub fn violated(&self) -> bool {
        self.violations > 0
    }
}

/// Costs `f_i(x) = (x_i − x̂_i)² + (β Σ_j x_j + p) x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticGame {
    pub targets: Vec<f64>,
    pub beta: f64,
    pub offset: f64,
    pub decision_sets: Vec<Interval>,
}

impl QuadraticGame {
    pub fn new(targets: Vec<f64>, beta: f64, offset: f64, decision_sets: Vec<Interval>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::param("targets", "at least one player is required"));
        }
        if targets.len() != decision_sets.len() {
            return Err(Error::DimensionMismatch { expected: targets.len(), actual: decision_sets.len() });
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param("beta", "must be positive and finite"));
        }
        if !offset.is_finite() || targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("targets", "must be finite"));
        }
        Ok(Self { targets, beta, offset, decision_sets })
    }

    /// The five-player energy consumption game.
    pub fn energy() -> Self {
        let bounds = [(40.0, 45.0), (44.0, 49.0), (48.0, 53.0), (54.0, 59.0), (58.0, 63.0)];
        Self {
            targets: vec![50.0, 55.0, 60.0, 65.0, 70.0],
            beta: 0.04,
            offset: 5.0,
            decision_sets: bounds.iter().map(|&(lo, hi)| Interval { lo, hi }).collect(),
        }
    }

    pub fn n_players(&self) -> usize {
        self.targets.len()
    }

    pub fn cost(&self, i: usize, x: &[f64]) -> f64 {
        let total: f64 = x.iter().sum();
        (x[i] - self.targets[i]).powi(2) + (self.beta * total + self.offset) * x[i]
    }

    /// `F_i(x, u) = 2(x − x̂_i) + βx + βNu + p`.
    pub fn gradient(&self, i: usize, x: f64, u: f64) -> f64 {
        2.0 * (x - self.targets[i]) + self.beta * x + self.beta * self.n_players() as f64 * u + self.offset
    }

    pub fn instance(&self) -> Result<GameInstance> {
        let n = self.n_players() as f64;
        let fields = self
            .targets
            .iter()
            .map(|&t| {
                let (beta, p) = (self.beta, self.offset);
                Arc::new(move |x: f64, u: f64| 2.0 * (x - t) + beta * x + beta * n * u + p) as GradientField
            })
            .collect();
        GameInstance::new(self.decision_sets.clone(), fields)
    }

    /// Unconstrained solution of `(2+β)x_i + β Σ_j x_j = 2x̂_i − p`.
    pub fn solve_unconstrained(&self) -> Result<Vec<f64>> {
        let n = self.n_players();
        let a = DMatrix::from_fn(n, n, |r, c| if r == c { 2.0 + 2.0 * self.beta } else { self.beta });
        let b = DVector::from_iterator(n, self.targets.iter().map(|t| 2.0 * t - self.offset));
        let sol = a.lu().solve(&b).ok_or(Error::SingularSystem)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(sol.iter().copied().collect())
    }

    /// Exact equilibrium, valid only when no interval constraint is active.
    pub fn ne_oracle(&self) -> Result<Vec<f64>> {
        let sol = self.solve_unconstrained()?;
        for (i, (&v, s)) in sol.iter().zip(&self.decision_sets).enumerate() {
            if !s.contains(v, 0.0) {
                return Err(Error::ActiveConstraint { player: i, value: v, lo: s.lo, hi: s.hi, solution: sol });
            }
        }
        Ok(sol)
    }
}
