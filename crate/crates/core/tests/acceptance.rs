//! Acceptance suite for the energy experiment.
//!
//! Runs as a plain binary so every criterion prints exactly one
//! `PASS`/`FAIL` line, then exits nonzero if any criterion failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use dpnes_core::experiment::{aggregate_trajectories, run_accountant, ExperimentConfig, Setup};
use dpnes_core::ledger::{delta_per_iteration, estimate_c_tilde, make_adjacent, AdjacencySpec};
use dpnes_core::mechanism::{stochastic_quantize, trigger_decide, trigger_probability};
use dpnes_core::seeker::{BroadcastPolicy, Seeker, Trajectory};
use dpnes_core::{infer_gradient, stats, Channel, MechanismParams, QuadraticGame, Schedules, Streams};

const PAPER_NE: [f64; 5] = [41.5, 46.4, 51.3, 56.2, 61.1];
const NE_TOL: f64 = 0.05;
const NE_RESIDUAL_TOL: f64 = 1e-9;
const NE_RUNTIME_SECS: f64 = 1e-3;
const CONSERVATION_TOL: f64 = 1e-9;
const CONVERGENCE_RATIO: f64 = 0.05;
const CONSENSUS_RATIO: f64 = 0.01;
const BASELINE_FACTOR: f64 = 2.0;
const BASELINE_FLATNESS: f64 = 0.02;
const QUANT_DRAWS: usize = 1_000_000;
const QUANT_MEAN_TOL: f64 = 0.03;
const QUANT_SECOND_MOMENT: f64 = 56.25 * 1.01;
const TRIGGER_TRIALS: usize = 1_000_000;
const TRIGGER_TOL: f64 = 0.005;
const RATE_MIN: f64 = 0.02;
const RATE_MAX: f64 = 0.20;
const DELTA_1500: f64 = 4.00e-6;
const DELTA_0: f64 = 5.64e-5;
const DELTA_REL_TOL: f64 = 0.01;
const CAUCHY_K: usize = 100_000;
const CAUCHY_INCREMENT: f64 = 1e-8;
const COUPLING_SLACK: f64 = 2.0;
const ATTACK_FACTOR: f64 = 5.0;
const ATTACK_WINDOW: (usize, usize) = (100, 1500);
const ATTACK_EXACT_TOL: f64 = 1e-9;
const RANK_SUM_ALPHA: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Fixture {
    setup: Setup,
    private: Vec<Trajectory>,
}

impl Fixture {
    fn load() -> Self {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/energy.cfg");
        let setup = ExperimentConfig::from_path(&path).unwrap().build().unwrap();
        assert!(setup.seeds.len() >= 20 && setup.iterations == 1500);
        let private = setup.run_seeker(setup.policy()).unwrap();
        Self { setup, private }
    }
}

fn ne_oracle(_: &Fixture) -> Outcome {
    let game = QuadraticGame::energy();
    let _ = game.ne_oracle();
    let t = Instant::now();
    let ne = game.ne_oracle().unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let dev = ne.iter().zip(PAPER_NE).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let inst = game.instance().unwrap();
    let residual = inst.pseudo_gradient(&ne).unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    outcome(
        dev <= NE_TOL && residual <= NE_RESIDUAL_TOL && elapsed < NE_RUNTIME_SECS,
        format!("max deviation {dev:.4}, residual {residual:.2e}, runtime {:.1} us", elapsed * 1e6),
    )
}

fn conservation(f: &Fixture) -> Outcome {
    let worst = f.private.iter().map(|t| t.conservation_error).fold(0.0, f64::max);
    outcome(
        worst <= CONSERVATION_TOL,
        format!("max relative |sum y - sum x| = {worst:.2e} over {} seeds", f.private.len()),
    )
}

fn convergence(f: &Fixture) -> Outcome {
    let curve = aggregate_trajectories("private", &f.private, &f.setup.ne).unwrap();
    let last = curve.ks.len() - 1;
    assert_eq!(curve.ks[last], 1500);
    let ratio = curve.mean_distance[last] / curve.mean_distance[0];
    let peak = curve.mean_consensus.iter().copied().fold(0.0, f64::max);
    let consensus = curve.mean_consensus[last] / peak;
    outcome(
        ratio <= CONVERGENCE_RATIO && consensus <= CONSENSUS_RATIO,
        format!(
            "distance ratio {ratio:.4} (need <= {CONVERGENCE_RATIO}), consensus final/peak {consensus:.4} (need <= {CONSENSUS_RATIO})"
        ),
    )
}

fn baseline_contrast(f: &Fixture) -> Outcome {
    let runs = f.setup.run_baseline().unwrap().expect("energy config has a baseline block");
    let base = aggregate_trajectories("baseline", &runs, &f.setup.ne).unwrap();
    let ours = aggregate_trajectories("private", &f.private, &f.setup.ne).unwrap();
    let factor = base.mean_distance.last().unwrap() / ours.mean_distance.last().unwrap();
    let window: Vec<f64> =
        base.ks.iter().zip(&base.mean_distance).filter(|(k, _)| (1000..=1500).contains(*k)).map(|(_, d)| *d).collect();
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    outcome(
        factor >= BASELINE_FACTOR && spread < BASELINE_FLATNESS,
        format!("baseline/private final distance {factor:.3}, relative change over [1000, 1500] {spread:.2e}"),
    )
}

fn quantizer_moments(_: &Fixture) -> Outcome {
    let streams = Streams::new(2024);
    let (mut sum, mut sum2) = (0.0, 0.0);
    for k in 0..QUANT_DRAWS {
        let w = stochastic_quantize(22.5, 15.0, streams.uniform(0, Channel::Quantizer, k)).unwrap().error;
        sum += w;
        sum2 += w * w;
    }
    let mean = sum / QUANT_DRAWS as f64;
    let second = sum2 / QUANT_DRAWS as f64;
    outcome(
        mean.abs() <= QUANT_MEAN_TOL && second <= QUANT_SECOND_MOMENT,
        format!("mean error {mean:.4}, E[w^2] {second:.4} over {QUANT_DRAWS} draws"),
    )
}

fn trigger_probability_mc(_: &Fixture) -> Outcome {
    let p = MechanismParams::energy();
    let gamma = 1.2;
    let streams = Streams::new(7);
    let mut worst: f64 = 0.0;
    let mut exact_ends = true;
    let mut parts = Vec::new();
    for (idx, rho) in [0.0, 30.0, 50.0, 100.0, 250.0].into_iter().enumerate() {
        let closed = trigger_probability(rho, gamma, &p).unwrap();
        let fired = (0..TRIGGER_TRIALS)
            .filter(|&k| {
                trigger_decide(rho, gamma, &p, p.xi_from_uniform(streams.uniform(idx, Channel::Trigger, k))).unwrap()
            })
            .count();
        let mc = fired as f64 / TRIGGER_TRIALS as f64;
        worst = worst.max((mc - closed).abs());
        if rho == 0.0 {
            exact_ends &= closed == 0.0 && fired == 0;
        }
        if rho == 250.0 {
            exact_ends &= closed == 1.0 && fired == TRIGGER_TRIALS;
        }
        parts.push(format!("rho {rho}: {closed:.4}/{mc:.4}"));
    }
    outcome(worst <= TRIGGER_TOL && exact_ends, format!("max |closed - MC| {worst:.4}; {}", parts.join(", ")))
}

fn non_trigger_bound(f: &Fixture) -> Outcome {
    let silent: usize = f.private.iter().map(|t| t.events.iter().filter(|e| !e.fired).count()).sum();
    let bad: usize = f.private.iter().map(|t| t.silent_bound_violations(&f.setup.mechanism)).sum();
    outcome(bad == 0, format!("{bad} violations among {silent} silent rounds"))
}

fn trigger_rates(f: &Fixture) -> Outcome {
    let rates: Vec<f64> = f.private.iter().flat_map(|t| t.trigger_rates()).collect();
    let lo = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rates.iter().copied().fold(0.0, f64::max);
    let n = f.setup.game.n_players();
    let means: Vec<String> = (0..n)
        .map(|i| {
            let r: Vec<f64> = f.private.iter().map(|t| t.trigger_rates()[i]).collect();
            format!("{:.2}%", 100.0 * stats::mean(&r))
        })
        .collect();
    outcome(
        lo >= RATE_MIN && hi <= RATE_MAX && hi < 1.0,
        format!("per-seed rates in [{:.2}%, {:.2}%], player means [{}]", 100.0 * lo, 100.0 * hi, means.join(", ")),
    )
}

fn accountant(_: &Fixture) -> Outcome {
    let s = Schedules::energy();
    let p = MechanismParams::energy();
    let d1500 = delta_per_iteration(&s, &p, 1.0, 1500).unwrap().delta;
    let d0 = delta_per_iteration(&s, &p, 1.0, 0).unwrap().delta;
    let increment = delta_per_iteration(&s, &p, 1.0, CAUCHY_K).unwrap().delta;
    let ok1500 = (d1500 - DELTA_1500).abs() <= DELTA_REL_TOL * DELTA_1500;
    let ok0 = (d0 - DELTA_0).abs() <= DELTA_REL_TOL * DELTA_0;
    let cauchy = increment < CAUCHY_INCREMENT;
    let good = s.validate().unwrap();
    let unit = Schedules { p: 1.0, q: 1.0, ..s }.validate().unwrap();
    let steep = Schedules { q: 0.70, ..s }.validate().unwrap();
    let flags = good.convergence_ok
        && good.privacy_ok
        && !unit.convergence_ok
        && !unit.privacy_ok
        && steep.convergence_ok
        && !steep.privacy_ok;
    outcome(
        ok1500 && ok0 && cauchy && flags,
        format!(
            "delta_1500 {d1500:.4e}, delta_0 {d0:.4e}, increment at k = {CAUCHY_K} {increment:.4e} (need < {CAUCHY_INCREMENT:e}), schedule flags {}",
            if flags { "ok" } else { "wrong" }
        ),
    )
}

fn sensitivity_coupling(f: &Fixture) -> Outcome {
    let setup = &f.setup;
    let (_, spec) = setup.accountant.expect("energy config has an accountant block");

    let same = make_adjacent(&setup.game, &AdjacencySpec { kappa: 0.0, ..spec }, &setup.ne).unwrap();
    let mut identical = true;
    for &seed in &setup.seeds[..5] {
        let a = Seeker::new(&setup.game, &setup.topology, &setup.schedules, setup.policy()).unwrap();
        let b = Seeker::new(&same, &setup.topology, &setup.schedules, setup.policy()).unwrap();
        let ta = a.run(setup.iterations, &setup.init, seed, 1).unwrap();
        let tb = b.run(setup.iterations, &setup.init, seed, 1).unwrap();
        identical &= ta == tb;
    }

    let train = run_accountant(setup).unwrap();
    let estimate = train.estimate.expect("c_tilde is estimated");
    let n = setup.seeds.len() as u64;
    let held: Vec<u64> = (0..n).map(|i| setup.seeds[0] + n + i).collect();
    let adjacent = make_adjacent(&setup.game, &spec, &setup.ne).unwrap();
    let check = estimate_c_tilde(
        &setup.game,
        &adjacent,
        &setup.topology,
        setup.policy(),
        &setup.schedules,
        setup.iterations,
        &setup.init,
        spec.player,
        &held,
    )
    .unwrap();
    let worst = check.traces.iter().map(|t| t.max_ratio).fold(0.0, f64::max);
    let dominated = check.traces.iter().all(|t| {
        (1..t.gaps.len()).all(|k| {
            let l = setup.schedules.lambda(k);
            t.gaps[k] <= COUPLING_SLACK * estimate.c_tilde * l * l / setup.schedules.gamma(k)
        })
    });
    outcome(
        identical && dominated,
        format!(
            "kappa = 0 runs {}; C~ from seeds {}..={} is {:.3}, held-out max ratio {:.3} ({:.2}x)",
            if identical { "bitwise identical" } else { "DIFFER" },
            setup.seeds[0],
            setup.seeds[setup.seeds.len() - 1],
            estimate.c_tilde,
            worst,
            worst / estimate.c_tilde
        ),
    )
}

fn attack_separation(f: &Fixture) -> Outcome {
    let setup = &f.setup;
    let target = setup.attack_target.expect("energy config has an attack block");
    let open = Seeker::new(&setup.game, &setup.topology, &setup.schedules, BroadcastPolicy::Transparent).unwrap();
    let (mut private_med, mut open_med) = (Vec::new(), Vec::new());
    let mut worst_exact: f64 = 0.0;
    for (traj, &seed) in f.private.iter().zip(&setup.seeds) {
        let rep =
            infer_gradient(&traj.observations, &setup.topology, &setup.schedules, target, &setup.game, traj).unwrap();
        private_med.push(rep.median_error(ATTACK_WINDOW.0, ATTACK_WINDOW.1));
        let t = open.run(setup.iterations, &setup.init, seed, 1).unwrap();
        let rep = infer_gradient(&t.observations, &setup.topology, &setup.schedules, target, &setup.game, &t).unwrap();
        open_med.push(rep.median_error(ATTACK_WINDOW.0, ATTACK_WINDOW.1));
        worst_exact = worst_exact.max(rep.max_error_unprojected());
    }
    let mp = stats::median(&private_med);
    let mo = stats::median(&open_med);
    let pval = stats::rank_sum_p_value(&private_med, &open_med);
    outcome(
        mp >= ATTACK_FACTOR * mo && worst_exact <= ATTACK_EXACT_TOL && pval < RANK_SUM_ALPHA,
        format!(
            "median error private {mp:.4e} vs no-privacy {mo:.4e}; no-privacy max error {worst_exact:.2e}; rank-sum p = {pval:.2e} over {} seeds",
            private_med.len()
        ),
    )
}

type Criterion = (&'static str, fn(&Fixture) -> Outcome);

fn main() {
    let fixture = Fixture::load();
    let criteria: [Criterion; 11] = [
        ("equilibrium oracle", ne_oracle),
        ("conservation", conservation),
        ("convergence", convergence),
        ("baseline contrast", baseline_contrast),
        ("quantizer moments", quantizer_moments),
        ("trigger probability", trigger_probability_mc),
        ("non-trigger bound", non_trigger_bound),
        ("trigger rates", trigger_rates),
        ("accountant", accountant),
        ("sensitivity coupling", sensitivity_coupling),
        ("attack separation", attack_separation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(|| check(&fixture)))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {:?}", e.downcast_ref::<String>())));
        println!("{} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
        failed += usize::from(!result.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
