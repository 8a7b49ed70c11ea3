//! Multi-seed experiment harness behind the `dpnes` tool.
//!
//! Seeds fan out over a rayon pool. Results are collected in seed order, so a
//! config and base seed always produce a byte-identical report bundle.

pub mod config;
pub mod output;
pub mod rate;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::adversary::{infer_gradient, AttackReport};
use crate::error::{Error, Result};
use crate::ledger::{
    cumulative_delta, estimate_c_tilde, make_adjacent, CTildeEstimate, CumulativeDelta, PrivacyLedger, TailBound,
};
use crate::seeker::{consensus_error, euclidean, BroadcastPolicy, NoisyBaseline, Seeker, Trajectory};
use crate::stats;

pub use config::{CTildeSource, ExperimentConfig, Setup};
pub use output::ConvergenceCurve;
pub use rate::{fit_rate, RateFit, RateModel};

/// Largest tolerated relative `|Σy − Σx|`.
pub const CONSERVATION_TOL: f64 = 1e-9;
/// Largest tolerated no-privacy inference error where the projection is inactive.
pub const EXACT_INFERENCE_TOL: f64 = 1e-9;
/// Lower end of the window used for rate fits and attack medians.
pub const FIT_WINDOW_START: usize = 200;
pub const ATTACK_WINDOW_START: usize = 100;

pub const PRIVATE: &str = "private";
pub const TRANSPARENT: &str = "transparent";
pub const BASELINE: &str = "baseline";

impl Setup {
    pub fn policy(&self) -> BroadcastPolicy {
        BroadcastPolicy::Private(self.mechanism)
    }

    fn seeker(&self, policy: BroadcastPolicy) -> Result<Seeker<'_>> {
        Seeker::new(&self.game, &self.topology, &self.schedules, policy)
    }

    /// One run per seed, in seed order.
    pub fn run_seeker(&self, policy: BroadcastPolicy) -> Result<Vec<Trajectory>> {
        let seeker = self.seeker(policy)?;
        self.seeds.par_iter().map(|&s| seeker.run(self.iterations, &self.init, s, self.decimation)).collect()
    }

    pub fn run_baseline(&self) -> Result<Option<Vec<Trajectory>>> {
        let Some(params) = self.baseline else { return Ok(None) };
        let base = NoisyBaseline::new(&self.game, &self.topology, &self.schedules, params)?;
        let runs = self
            .seeds
            .par_iter()
            .map(|&s| base.run(self.iterations, &self.init, s, self.decimation))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(runs))
    }
}

/// Per-iterate mean and variance of `‖x − x*‖` and mean consensus error
/// across runs that share the same stored iterations.
pub fn aggregate<'a, I>(algorithm: &str, ks: &[usize], runs: I, ne: &[f64]) -> Result<ConvergenceCurve>
where
    I: IntoIterator<Item = (&'a [Vec<f64>], &'a [Vec<f64>])>,
{
    let runs: Vec<_> = runs.into_iter().collect();
    if runs.is_empty() {
        return Err(Error::param("runs", "nothing to aggregate"));
    }
    if runs.iter().any(|(x, y)| x.len() != ks.len() || y.len() != ks.len()) {
        return Err(Error::Invariant("runs stored different iterations".into()));
    }
    let mut curve = ConvergenceCurve {
        algorithm: algorithm.to_string(),
        ks: ks.to_vec(),
        mean_distance: Vec::with_capacity(ks.len()),
        var_distance: Vec::with_capacity(ks.len()),
        mean_consensus: Vec::with_capacity(ks.len()),
    };
    for idx in 0..ks.len() {
        let d: Vec<f64> = runs.iter().map(|(x, _)| euclidean(&x[idx], ne)).collect();
        let c: Vec<f64> = runs.iter().map(|(_, y)| consensus_error(&y[idx])).collect();
        curve.mean_distance.push(stats::mean(&d));
        curve.var_distance.push(stats::variance(&d));
        curve.mean_consensus.push(stats::mean(&c));
    }
    Ok(curve)
}

pub fn aggregate_trajectories(algorithm: &str, runs: &[Trajectory], ne: &[f64]) -> Result<ConvergenceCurve> {
    let ks = &runs.first().ok_or_else(|| Error::param("runs", "nothing to aggregate"))?.ks;
    aggregate(algorithm, ks, runs.iter().map(|t| (t.x.as_slice(), t.y.as_slice())), ne)
}

/// Rebuilds the convergence curve and per-player trigger counts from the
/// rows of a trajectory CSV.
pub fn replay_trajectory_rows(
    algorithm: &str,
    rows: &[output::TrajectoryRow],
    ne: &[f64],
) -> Result<(ConvergenceCurve, Vec<output::SummaryRow>)> {
    let n = ne.len();
    // run_id -> (ks, x, y, counts)
    type Run = (Vec<usize>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>);
    let mut order: Vec<u64> = Vec::new();
    let mut runs: BTreeMap<u64, Run> = BTreeMap::new();
    for r in rows {
        if r.player >= n {
            return Err(Error::Io(format!("row for unknown player {}", r.player)));
        }
        let run = runs.entry(r.run_id).or_insert_with(|| {
            order.push(r.run_id);
            (Vec::new(), Vec::new(), Vec::new(), vec![0; n])
        });
        if run.0.last() != Some(&r.k) {
            run.0.push(r.k);
            run.1.push(vec![f64::NAN; n]);
            run.2.push(vec![f64::NAN; n]);
        }
        let last = run.0.len() - 1;
        run.1[last][r.player] = r.x;
        run.2[last][r.player] = r.y;
        if r.fired == Some(true) {
            run.3[r.player] += 1;
        }
    }
    let first = order.first().ok_or_else(|| Error::Io("trajectory file has no rows".into()))?;
    let ks = runs[first].0.clone();
    let curve = aggregate(algorithm, &ks, order.iter().map(|id| (runs[id].1.as_slice(), runs[id].2.as_slice())), ne)?;
    let iterations = *ks.last().expect("nonempty run");
    let summary = order
        .iter()
        .flat_map(|id| {
            runs[id].3.iter().enumerate().map(move |(i, &c)| output::SummaryRow {
                run_id: *id,
                player: i,
                trigger_count: c,
                trigger_rate: c as f64 / iterations.max(1) as f64,
            })
        })
        .collect();
    Ok((curve, summary))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountantOutput {
    pub c_tilde: f64,
    pub source: CTildeSource,
    pub estimate: Option<CTildeEstimate>,
    pub ledger: PrivacyLedger,
    pub cumulative: CumulativeDelta,
}

impl AccountantOutput {
    pub fn final_term(&self) -> f64 {
        self.ledger.terms.last().map_or(0.0, |t| t.delta)
    }

    pub fn statement(&self) -> String {
        let t = self.cumulative.horizon;
        let mut s = format!(
            "(0, {:.6e})-differentially private over iterations 0..={t} (per-iteration delta at k = {t}: {:.6e}, C~ = {:.6e}",
            self.ledger.total(),
            self.final_term(),
            self.c_tilde
        );
        s.push_str(match self.source {
            CTildeSource::Fixed(_) => ", fixed)",
            CTildeSource::Estimate => ", estimated)",
        });
        match self.cumulative.tail {
            TailBound::Finite(tail) => {
                let _ = write!(s, "; infinite-horizon bound {:.6e}", self.cumulative.sum + tail);
            }
            TailBound::Divergent { exponent } => {
                let _ = write!(s, "; infinite-horizon sum diverges (decay exponent {exponent})");
            }
        }
        s
    }
}

/// Builds the privacy ledger over `0..=iterations`, estimating `C̃` from
/// coupled runs on the configured seeds when asked to.
pub fn run_accountant(setup: &Setup) -> Result<AccountantOutput> {
    let (source, spec) = setup.accountant.ok_or_else(|| Error::Config("missing `[accountant]` block".into()))?;
    let (c_tilde, estimate) = match source {
        CTildeSource::Fixed(v) => (v, None),
        CTildeSource::Estimate => {
            let adjacent = make_adjacent(&setup.game, &spec, &setup.ne)?;
            let est = estimate_c_tilde(
                &setup.game,
                &adjacent,
                &setup.topology,
                setup.policy(),
                &setup.schedules,
                setup.iterations,
                &setup.init,
                spec.player,
                &setup.seeds,
            )?;
            if !(est.c_tilde > 0.0) {
                return Err(Error::Invariant(
                    "coupled runs never separated; C~ cannot be estimated (is kappa zero?)".into(),
                ));
            }
            (est.c_tilde, Some(est))
        }
    };
    let ledger = PrivacyLedger::new(&setup.schedules, &setup.mechanism, c_tilde, setup.iterations)?;
    let cumulative = cumulative_delta(&setup.schedules, &setup.mechanism, c_tilde, setup.iterations)?;
    Ok(AccountantOutput { c_tilde, source, estimate, ledger, cumulative })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutput {
    pub seed: u64,
    pub private: AttackReport,
    pub transparent: AttackReport,
}

impl AttackOutput {
    pub fn window(&self) -> (usize, usize) {
        (ATTACK_WINDOW_START, self.private.ks.last().copied().unwrap_or(0))
    }
}

/// Attacks the configured target on the first seed, with and without the
/// mechanism.
pub fn run_attack(setup: &Setup) -> Result<AttackOutput> {
    let target = setup.attack_target.ok_or_else(|| Error::Config("missing `[attack]` block".into()))?;
    let seed = setup.seeds[0];
    let attack = |policy| -> Result<AttackReport> {
        let traj = setup.seeker(policy)?.run(setup.iterations, &setup.init, seed, 1)?;
        infer_gradient(&traj.observations, &setup.topology, &setup.schedules, target, &setup.game, &traj)
    };
    Ok(AttackOutput { seed, private: attack(setup.policy())?, transparent: attack(BroadcastPolicy::Transparent)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFits {
    pub consensus: RateFit,
    pub distance: RateFit,
}

/// Fits the mean consensus error against `(λ/γ)²` and the mean distance
/// against `λ/γ` over `[200, iterations]`.
pub fn run_rate_fit(setup: &Setup, curve: &ConvergenceCurve) -> Result<RateFits> {
    let window = (FIT_WINDOW_START, setup.iterations);
    Ok(RateFits {
        consensus: fit_rate(&curve.mean_consensus, &curve.ks, &setup.schedules, RateModel::LambdaOverGammaSq, window)?,
        distance: fit_rate(&curve.mean_distance, &curve.ks, &setup.schedules, RateModel::LambdaOverGamma, window)?,
    })
}

/// Headline numbers of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub ne: Vec<f64>,
    pub rho2: f64,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub peak_consensus: f64,
    pub final_consensus: f64,
    pub transparent_final_distance: f64,
    pub baseline_final_distance: Option<f64>,
    /// `(max − min)/min` of the baseline's mean distance over `[1000, 1500]`.
    pub baseline_flatness: Option<f64>,
    /// Per player: mean rate across seeds, then the smallest and largest.
    pub trigger_rates: Vec<(f64, f64, f64)>,
    pub conservation_error: f64,
    pub silent_bound_violations: usize,
}

impl Summary {
    pub fn convergence_ratio(&self) -> f64 {
        self.final_distance / self.initial_distance
    }

    pub fn consensus_ratio(&self) -> f64 {
        self.final_consensus / self.peak_consensus
    }
}

pub fn summarize(
    setup: &Setup,
    private: &[Trajectory],
    transparent: &ConvergenceCurve,
    baseline: Option<&ConvergenceCurve>,
    curve: &ConvergenceCurve,
) -> Summary {
    let last = curve.ks.len() - 1;
    let n = setup.game.n_players();
    let trigger_rates = (0..n)
        .map(|i| {
            let r: Vec<f64> = private.iter().map(|t| t.trigger_rates()[i]).collect();
            (stats::mean(&r), r.iter().copied().fold(f64::INFINITY, f64::min), r.iter().copied().fold(0.0, f64::max))
        })
        .collect();
    let flat = baseline.and_then(|b| {
        let window: Vec<f64> =
            b.ks.iter().zip(&b.mean_distance).filter(|(k, _)| (1000..=1500).contains(*k)).map(|(_, d)| *d).collect();
        if window.len() < 2 {
            return None;
        }
        let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = window.iter().copied().fold(0.0, f64::max);
        Some((hi - lo) / lo)
    });
    Summary {
        seeds: setup.seeds.clone(),
        iterations: setup.iterations,
        ne: setup.ne.clone(),
        rho2: setup.topology.second_eigenvalue(),
        initial_distance: curve.mean_distance[0],
        final_distance: curve.mean_distance[last],
        peak_consensus: curve.mean_consensus.iter().copied().fold(0.0, f64::max),
        final_consensus: curve.mean_consensus[last],
        transparent_final_distance: *transparent.mean_distance.last().expect("nonempty curve"),
        baseline_final_distance: baseline.map(|b| *b.mean_distance.last().expect("nonempty curve")),
        baseline_flatness: flat,
        trigger_rates,
        conservation_error: private.iter().map(|t| t.conservation_error).fold(0.0, f64::max),
        silent_bound_violations: private.iter().map(|t| t.silent_bound_violations(&setup.mechanism)).sum(),
    }
}

/// Files written by [`run_experiment`] and any invariant it saw broken.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub files: Vec<PathBuf>,
    pub summary: Summary,
    pub accountant: Option<AccountantOutput>,
    pub attack: Option<AttackOutput>,
    pub report: String,
    pub violations: Vec<String>,
}

/// Runs the private and transparent engines (plus the baseline, accountant
/// and attack when configured) and writes the report bundle to `out`.
pub fn run_experiment(setup: &Setup, out: &Path) -> Result<Bundle> {
    std::fs::create_dir_all(out)?;
    let private = setup.run_seeker(setup.policy())?;
    let transparent = setup.run_seeker(BroadcastPolicy::Transparent)?;
    let baseline = setup.run_baseline()?;

    let private_curve = aggregate_trajectories(PRIVATE, &private, &setup.ne)?;
    let transparent_curve = aggregate_trajectories(TRANSPARENT, &transparent, &setup.ne)?;
    let baseline_curve = baseline.as_deref().map(|b| aggregate_trajectories(BASELINE, b, &setup.ne)).transpose()?;

    let mut files = Vec::new();
    let mut path = |name: &str| {
        let p = out.join(name);
        files.push(p.clone());
        p
    };
    output::write_trajectory(&path(output::TRAJECTORY_CSV), &private)?;
    output::write_summary(&path(output::SUMMARY_CSV), &output::summary_rows(&private))?;
    let mut curves = vec![private_curve.clone(), transparent_curve.clone()];
    curves.extend(baseline_curve.clone());
    output::write_convergence(&path(output::CONVERGENCE_CSV), &curves)?;

    let accountant = setup.accountant.is_some().then(|| run_accountant(setup)).transpose()?;
    if let Some(acc) = &accountant {
        output::write_accountant(&path(output::ACCOUNTANT_CSV), &acc.ledger)?;
    }
    let attack = setup.attack_target.is_some().then(|| run_attack(setup)).transpose()?;
    if let Some(att) = &attack {
        output::write_attack(&path(output::ATTACK_CSV), &[(PRIVATE, &att.private), (TRANSPARENT, &att.transparent)])?;
    }

    let summary = summarize(setup, &private, &transparent_curve, baseline_curve.as_ref(), &private_curve);
    let fits = run_rate_fit(setup, &private_curve);

    let mut violations = Vec::new();
    if summary.conservation_error > CONSERVATION_TOL {
        violations
            .push(format!("estimate sum drifted from decision sum: relative gap {:.3e}", summary.conservation_error));
    }
    if summary.silent_bound_violations > 0 {
        violations.push(format!("{} silent rounds broke the trigger error bound", summary.silent_bound_violations));
    }
    if let Some(att) = &attack {
        let e = att.transparent.max_error_unprojected();
        if e > EXACT_INFERENCE_TOL {
            violations.push(format!("no-privacy gradient inversion off by {e:.3e}"));
        }
    }

    let report = render_report(&summary, accountant.as_ref(), attack.as_ref(), fits.as_ref(), &violations);
    std::fs::write(path(output::REPORT_TXT), &report)?;
    Ok(Bundle { files, summary, accountant, attack, report, violations })
}

fn render_report(
    s: &Summary,
    acc: Option<&AccountantOutput>,
    att: Option<&AttackOutput>,
    fits: std::result::Result<&RateFits, &Error>,
    violations: &[String],
) -> String {
    let mut r = String::new();
    let _ = writeln!(r, "seeds: {} ({}..={})", s.seeds.len(), s.seeds[0], s.seeds[s.seeds.len() - 1]);
    let _ = writeln!(r, "iterations: {}", s.iterations);
    let _ = writeln!(r, "equilibrium: {}", join(&s.ne, 4));
    let _ = writeln!(r, "second eigenvalue of the weight matrix: {:.6}", s.rho2);
    let _ = writeln!(r);
    let _ = writeln!(r, "[private]");
    let _ = writeln!(
        r,
        "mean distance to equilibrium: {:.6e} -> {:.6e} (ratio {:.4})",
        s.initial_distance,
        s.final_distance,
        s.convergence_ratio()
    );
    let _ = writeln!(
        r,
        "mean consensus error: peak {:.6e}, final {:.6e} (ratio {:.4e})",
        s.peak_consensus,
        s.final_consensus,
        s.consensus_ratio()
    );
    let _ = writeln!(r, "max relative |sum y - sum x|: {:.3e}", s.conservation_error);
    let _ = writeln!(r, "silent-bound violations: {}", s.silent_bound_violations);
    for (i, (mean, lo, hi)) in s.trigger_rates.iter().enumerate() {
        let _ = writeln!(r, "trigger rate player {i}: mean {:.4} (min {:.4}, max {:.4})", mean, lo, hi);
    }
    let _ = writeln!(r);
    let _ = writeln!(r, "[transparent]");
    let _ = writeln!(r, "final mean distance: {:.6e}", s.transparent_final_distance);
    if let Some(d) = s.baseline_final_distance {
        let _ = writeln!(r);
        let _ = writeln!(r, "[baseline]");
        let _ = writeln!(r, "final mean distance: {:.6e} ({:.3}x private)", d, d / s.final_distance);
        if let Some(f) = s.baseline_flatness {
            let _ = writeln!(r, "relative spread over k in [1000, 1500]: {:.3e}", f);
        }
    }
    if let Some(a) = acc {
        let _ = writeln!(r);
        let _ = writeln!(r, "[accountant]");
        let _ = writeln!(r, "{}", a.statement());
        let invalid = a.ledger.invalid_iterations();
        if !invalid.is_empty() {
            let _ = writeln!(r, "iterations with delta_k >= 1: {}", invalid.len());
        }
    }
    if let Some(a) = att {
        let (lo, hi) = a.window();
        let _ = writeln!(r);
        let _ = writeln!(r, "[attack] target {} seed {}", a.private.target, a.seed);
        let mp = a.private.median_error(lo, hi);
        let mt = a.transparent.median_error(lo, hi);
        let _ =
            writeln!(r, "median inference error over k in [{lo}, {hi}]: private {:.6e}, transparent {:.6e}", mp, mt);
        let _ =
            writeln!(r, "no-privacy max error with inactive projection: {:.3e}", a.transparent.max_error_unprojected());
    }
    let _ = writeln!(r);
    let _ = writeln!(r, "[rate fit]");
    match fits {
        Ok(f) => {
            for fit in [&f.consensus, &f.distance] {
                let _ = writeln!(
                    r,
                    "{}: C = {:.6e}, residual {:.4}, ratio range [{:.4e}, {:.4e}] over {} points",
                    fit.model.name(),
                    fit.c,
                    fit.residual,
                    fit.min_ratio,
                    fit.max_ratio,
                    fit.points
                );
            }
        }
        Err(e) => {
            let _ = writeln!(r, "skipped: {e}");
        }
    }
    let _ = writeln!(r);
    if violations.is_empty() {
        let _ = writeln!(r, "invariants: ok");
    } else {
        for v in violations {
            let _ = writeln!(r, "INVARIANT VIOLATED: {v}");
        }
    }
    r
}

fn join(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Result of `validate`: the configuration builds, plus what was checked.
pub fn validation_report(setup: &Setup) -> Result<String> {
    let report = setup.schedules.validate()?;
    let mut r = String::new();
    let _ = writeln!(r, "players: {}", setup.game.n_players());
    let _ = writeln!(r, "equilibrium: {}", join(&setup.ne, 6));
    let residual = setup.game.pseudo_gradient(&setup.ne)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let _ = writeln!(r, "pseudo-gradient residual: {residual:.3e}");
    let _ = writeln!(r, "second eigenvalue of the weight matrix: {:.6}", setup.topology.second_eigenvalue());
    let _ = writeln!(r, "convergence conditions: {}", if report.convergence_ok { "ok" } else { "violated" });
    let _ = writeln!(r, "privacy summability: {}", if report.privacy_ok { "ok" } else { "violated" });
    for v in &report.violations {
        let _ = writeln!(r, "  - {v}");
    }
    Ok(r)
}
