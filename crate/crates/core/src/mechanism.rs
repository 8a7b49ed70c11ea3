//! Stochastic event-trigger and stochastic quantizer.
//!
//! A player compares its last broadcast value with its current estimate and
//! fires with a probability that grows with the gap. When it fires it sends a
//! randomized rounding of its estimate to the lattice `{n·d}`. The randomness
//! of both stages is supplied by the caller as uniform draws, so every
//! function here is pure.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismParams {
    pub sigma: f64,
    pub c: f64,
    pub a: f64,
    pub d: f64,
}

impl MechanismParams {
    pub fn new(sigma: f64, c: f64, a: f64, d: f64) -> Result<Self> {
        let p = Self { sigma, c, a, d };
        p.validate()?;
        Ok(p)
    }

    /// `σ = 1.03, c = 1e-4, a = 0.05, d = 15`.
    pub fn energy() -> Self {
        Self { sigma: 1.03, c: 1e-4, a: 0.05, d: 15.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 1.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must exceed 1, got {}", self.sigma)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::param("c", format!("must be positive, got {}", self.c)));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::param("a", format!("must lie in (0, 1), got {}", self.a)));
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::param("d", format!("must be positive, got {}", self.d)));
        }
        Ok(())
    }

    /// `σ·exp(−cρ²/γ)`, the level the trigger draw has to exceed.
    pub fn threshold(&self, rho: f64, gamma: f64) -> f64 {
        self.sigma * (-self.c * rho * rho / gamma).exp()
    }

    /// Maps a uniform draw in `[0, 1)` onto `[a, 1)`.
    pub fn xi_from_uniform(&self, u: f64) -> f64 {
        self.a + (1.0 - self.a) * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationSample {
    pub input: f64,
    pub output: f64,
    pub error: f64,
}

/// Randomized rounding of `v` to a neighbouring multiple of `d`.
///
/// With `v = n·d + z`, `z ∈ (0, d]`, the output is `(n+1)·d` when
/// `draw < z/d` and `n·d` otherwise, which makes the rounding unbiased.
/// Exact multiples are returned unchanged.
pub fn stochastic_quantize(v: f64, d: f64, draw: f64) -> Result<QuantizationSample> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::param("d", format!("must be positive, got {d}")));
    }
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("quantizer input {v}")));
    }
    let ratio = v / d;
    let output = if ratio == ratio.floor() {
        v
    } else {
        let n = ratio.ceil() - 1.0;
        let z = v - n * d;
        if draw < z / d {
            (n + 1.0) * d
        } else {
            n * d
        }
    };
    Ok(QuantizationSample { input: v, output, error: output - v })
}

/// Closed-form firing probability for `ξ ~ Uniform(a, 1)`.
pub fn trigger_probability(rho: f64, gamma: f64, p: &MechanismParams) -> Result<f64> {
    p.validate()?;
    check_gamma(gamma)?;
    let thr = p.threshold(rho, gamma);
    Ok(((1.0 - thr.max(p.a)) / (1.0 - p.a)).clamp(0.0, 1.0))
}

/// `ξ > σ·exp(−cρ²/γ)`.
pub fn trigger_decide(rho: f64, gamma: f64, p: &MechanismParams, xi: f64) -> Result<bool> {
    p.validate()?;
    check_gamma(gamma)?;
    if !(xi >= p.a && xi <= 1.0) {
        return Err(Error::param("xi", format!("draw {xi} outside [{}, 1]", p.a)));
    }
    Ok(xi > p.threshold(rho, gamma))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerState {
    /// Iteration of the last broadcast.
    pub tau: usize,
    /// Last broadcast (quantized) value.
    pub stored: f64,
    /// Most recent trigger error `stored − y`.
    pub rho: f64,
}

impl TriggerState {
    /// State after the forced broadcast at iteration 0.
    pub fn initial(stored: f64) -> Self {
        Self { tau: 0, stored, rho: 0.0 }
    }
}

/// The two uniforms a player consumes per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDraws {
    pub trigger: f64,
    pub quantizer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub fired: bool,
    pub message: Option<f64>,
    pub rho: f64,
    pub xi: f64,
    pub state: TriggerState,
}

/// One trigger-and-broadcast round for iteration `k ≥ 1`.
pub fn mechanism_step(
    state: &TriggerState,
    y: f64,
    k: usize,
    gamma: f64,
    p: &MechanismParams,
    draws: StepDraws,
) -> Result<StepOutcome> {
    if k == 0 {
        return Err(Error::param("k", "iteration 0 is a forced broadcast"));
    }
    let rho = state.stored - y;
    let xi = p.xi_from_uniform(draws.trigger);
    let fired = trigger_decide(rho, gamma, p, xi)?;
    let mut next = TriggerState { rho, ..*state };
    let message = if fired {
        let q = stochastic_quantize(y, p.d, draws.quantizer)?.output;
        next.stored = q;
        next.tau = k;
        Some(q)
    } else {
        None
    };
    Ok(StepOutcome { fired, message, rho, xi, state: next })
}

/// `ρ² ≤ (γ/c)·ln(σ/ξ)`, which every silent round must satisfy.
pub fn silent_bound_holds(rho: f64, gamma: f64, xi: f64, p: &MechanismParams) -> bool {
    rho * rho <= (gamma / p.c) * (p.sigma / xi).ln() * (1.0 + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> MechanismParams {
        MechanismParams::energy()
    }

    fn is_multiple(v: f64, d: f64) -> bool {
        let r = v / d;
        (r - r.round()).abs() < 1e-9
    }

    #[test]
    fn quantize_exact_multiple() {
        for draw in [0.0, 0.3, 0.999_999] {
            let s = stochastic_quantize(30.0, 15.0, draw).unwrap();
            assert_eq!(s.output, 30.0);
            assert_eq!(s.error, 0.0);
        }
        assert_eq!(stochastic_quantize(-45.0, 15.0, 0.5).unwrap().output, -45.0);
        assert_eq!(stochastic_quantize(0.0, 15.0, 0.5).unwrap().output, 0.0);
    }

    #[test]
    fn quantize_midpoint() {
        assert_eq!(stochastic_quantize(22.5, 15.0, 0.49).unwrap().output, 30.0);
        assert_eq!(stochastic_quantize(22.5, 15.0, 0.5).unwrap().output, 15.0);
        assert_eq!(stochastic_quantize(22.5, 15.0, 0.9).unwrap().output, 15.0);
        // negative inputs bracket from below as well
        assert_eq!(stochastic_quantize(-7.5, 15.0, 0.1).unwrap().output, 0.0);
        assert_eq!(stochastic_quantize(-7.5, 15.0, 0.9).unwrap().output, -15.0);
    }

    #[test]
    fn quantize_errors() {
        assert!(stochastic_quantize(1.0, 0.0, 0.5).is_err());
        assert!(stochastic_quantize(1.0, -2.0, 0.5).is_err());
        assert!(stochastic_quantize(f64::NAN, 1.0, 0.5).is_err());
        assert!(stochastic_quantize(f64::INFINITY, 1.0, 0.5).is_err());
    }

    #[test]
    fn quantizer_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let e = stochastic_quantize(22.5, 15.0, rng.random()).unwrap().error;
            s1 += e;
            s2 += e * e;
        }
        let mean = s1 / n as f64;
        // error is ±7.5, sd of the mean is 7.5/1000
        assert!(mean.abs() <= 4.0 * 7.5 / 1000.0, "{mean}");
        assert!(s2 / n as f64 <= 56.25 * 1.01);
    }

    proptest! {
        #[test]
        fn quantizer_brackets_input(v in -1e6f64..1e6, d in 0.01f64..100.0, draw in 0.0f64..1.0) {
            let s = stochastic_quantize(v, d, draw).unwrap();
            prop_assert!(s.error.abs() < d * (1.0 + 1e-9));
            prop_assert!(is_multiple(s.output, d));
            let lo = (v / d).floor() * d;
            let hi = (v / d).ceil() * d;
            prop_assert!(s.output == lo || s.output == hi);
        }

        #[test]
        fn trigger_probability_monotone(r1 in 0.0f64..500.0, r2 in 0.0f64..500.0, g in 0.01f64..5.0, c_scale in 0.5f64..4.0) {
            let p = params();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let plo = trigger_probability(lo, g, &p).unwrap();
            let phi = trigger_probability(hi, g, &p).unwrap();
            prop_assert!(plo <= phi);
            prop_assert_eq!(trigger_probability(-hi, g, &p).unwrap(), phi);
            // larger c/γ never lowers the probability
            let p2 = MechanismParams { c: p.c * c_scale, ..p };
            let base = trigger_probability(hi, g, &p).unwrap();
            let scaled = trigger_probability(hi, g, &p2).unwrap();
            if c_scale >= 1.0 { prop_assert!(scaled >= base); } else { prop_assert!(scaled <= base); }
        }
    }

    #[test]
    fn trigger_probability_examples() {
        let p = params();
        assert_eq!(trigger_probability(0.0, 1.2, &p).unwrap(), 0.0);
        let direct = (1.0 - 1.03 * (-(1e-4 * 2500.0) / 1.2f64).exp()) / 0.95;
        let got = trigger_probability(50.0, 1.2, &p).unwrap();
        assert!((got - direct).abs() < 1e-15);
        assert!((got - 0.1723).abs() < 1e-4);
        assert_eq!(trigger_probability(1e4, 1.2, &p).unwrap(), 1.0);
        assert!(trigger_probability(1.0, 0.0, &p).is_err());
        assert!(trigger_probability(1.0, 1.0, &MechanismParams { sigma: 1.0, ..p }).is_err());
    }

    #[test]
    fn trigger_decide_examples() {
        let p = params();
        assert!(!trigger_decide(0.0, 1.2, &p, 0.99).unwrap());
        assert!((p.threshold(50.0, 1.2) - 0.8363).abs() < 1e-4);
        assert!(trigger_decide(50.0, 1.2, &p, 0.99).unwrap());
        assert!(!trigger_decide(50.0, 1.2, &p, 0.5).unwrap());
        assert!(trigger_decide(50.0, 1.2, &p, 0.01).is_err());
    }

    #[test]
    fn trigger_frequency_matches_closed_form() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        for rho in [20.0, 50.0, 120.0] {
            let fired =
                (0..n).filter(|_| trigger_decide(rho, 1.2, &p, p.xi_from_uniform(rng.random())).unwrap()).count();
            let expect = trigger_probability(rho, 1.2, &p).unwrap();
            assert!((fired as f64 / n as f64 - expect).abs() < 0.005);
        }
    }

    #[test]
    fn step_without_gap_never_fires() {
        let p = params();
        let st = TriggerState::initial(45.0);
        for u in [0.0, 0.5, 0.999_999] {
            let out = mechanism_step(&st, 45.0, 3, 1.2, &p, StepDraws { trigger: u, quantizer: 0.2 }).unwrap();
            assert!(!out.fired && out.message.is_none());
            assert_eq!(out.state, st);
        }
    }

    #[test]
    fn forced_trigger_stores_lattice_value() {
        let p = params();
        let st = TriggerState::initial(45.0);
        let out = mechanism_step(&st, 200.0, 7, 1.2, &p, StepDraws { trigger: 0.999, quantizer: 0.3 }).unwrap();
        assert!(out.fired);
        let q = out.message.unwrap();
        assert!(is_multiple(q, p.d));
        assert_eq!(out.state.stored, q);
        assert_eq!(out.state.tau, 7);
        assert_eq!(out.rho, -155.0);
        assert!(mechanism_step(&st, 1.0, 0, 1.2, &p, StepDraws { trigger: 0.5, quantizer: 0.5 }).is_err());
    }

    #[test]
    fn silent_rounds_respect_bound() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut silent = 0;
        for k in 1..20_000 {
            let st = TriggerState::initial(45.0);
            let y = 45.0 + rng.random_range(-200.0..200.0);
            let gamma = rng.random_range(0.05..1.2);
            let draws = StepDraws { trigger: rng.random(), quantizer: rng.random() };
            let out = mechanism_step(&st, y, k, gamma, &p, draws).unwrap();
            if !out.fired {
                silent += 1;
                assert!(silent_bound_holds(out.rho, gamma, out.xi, &p));
                assert_eq!(out.state.stored, 45.0);
            }
        }
        assert!(silent > 100);
    }

    #[test]
    fn params_validation() {
        assert!(MechanismParams::new(1.03, 1e-4, 0.05, 15.0).is_ok());
        assert!(MechanismParams::new(0.9, 1e-4, 0.05, 15.0).is_err());
        assert!(MechanismParams::new(1.03, 0.0, 0.05, 15.0).is_err());
        assert!(MechanismParams::new(1.03, 1e-4, 1.0, 15.0).is_err());
        assert!(MechanismParams::new(1.03, 1e-4, 0.05, 0.0).is_err());
    }
}
