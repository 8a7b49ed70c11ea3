//! TOML experiment configuration.
//!
//! A config file has one table per block. Unknown keys are rejected so that
//! typos surface as errors instead of silently falling back to defaults.
//!
//! ```toml
//! [game]
//! family = "quadratic"
//! targets = [50.0, 55.0, 60.0, 65.0, 70.0]
//! lower = [40.0, 44.0, 48.0, 54.0, 58.0]
//! upper = [45.0, 49.0, 53.0, 59.0, 63.0]
//! beta = 0.04
//! offset = 5.0
//!
//! [topology]
//! preset = "ring"        # "ring" | "path" | "complete", or give `edges`
//! weight = 0.5
//!
//! [mechanism]
//! sigma = 1.03
//! a = 0.05
//! c = 0.0001
//! d = 15.0
//!
//! [schedule]
//! lambda0 = 0.03
//! b_l = 0.01
//! p = 0.95
//! gamma0 = 1.2
//! b_g = 0.12
//! q = 0.55
//!
//! [run]
//! iterations = 1500
//! seeds = 20
//! base_seed = 1
//! init = "uniform"       # or an explicit vector
//! decimation = 1
//! ```
//!
//! Optional blocks: `[baseline]`, `[attack]` and `[accountant]`.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::game::{GameInstance, Interval, QuadraticGame};
use crate::ledger::AdjacencySpec;
use crate::mechanism::MechanismParams;
use crate::seeker::{BaselineParams, BaselineStep, Init, Schedules};
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameBlock,
    pub topology: TopologyBlock,
    pub mechanism: MechanismBlock,
    pub schedule: ScheduleBlock,
    pub run: RunBlock,
    pub baseline: Option<BaselineBlock>,
    pub attack: Option<AttackBlock>,
    pub accountant: Option<AccountantBlock>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameBlock {
    pub family: String,
    pub targets: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub beta: f64,
    pub offset: f64,
    /// Overrides the grid estimate of the Lipschitz constant.
    pub lipschitz: Option<f64>,
    pub grad_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyBlock {
    pub preset: Option<String>,
    pub weight: Option<f64>,
    /// `[i, j, w]` triples with 0-based node indices.
    pub edges: Option<Vec<(usize, usize, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismBlock {
    pub sigma: f64,
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub lambda0: f64,
    pub b_l: f64,
    pub p: f64,
    pub gamma0: f64,
    pub b_g: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Mode(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub iterations: usize,
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_init")]
    pub init: InitSpec,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
}

fn default_init() -> InitSpec {
    InitSpec::Mode("uniform".into())
}

fn default_decimation() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineBlock {
    pub noise_scale: f64,
    pub noise_decay: f64,
    /// `"geometric"` or `"schedule"`.
    pub step: String,
    pub lambda0: Option<f64>,
    pub step_decay: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum CTildeSpec {
    Value(f64),
    Mode(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccountantBlock {
    pub c_tilde: CTildeSpec,
    pub alpha: f64,
    pub kappa: f64,
    #[serde(default)]
    pub player: usize,
}

/// Resolved value of `accountant.c_tilde`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CTildeSource {
    Fixed(f64),
    Estimate,
}

/// Everything a run needs, built and validated from an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct Setup {
    pub quadratic: QuadraticGame,
    pub game: GameInstance,
    pub topology: Topology,
    pub mechanism: MechanismParams,
    pub schedules: Schedules,
    pub ne: Vec<f64>,
    pub init: Init,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub decimation: usize,
    pub baseline: Option<BaselineParams>,
    pub attack_target: Option<usize>,
    pub accountant: Option<(CTildeSource, AdjacencySpec)>,
}

fn cfg_err(key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {reason}"))
}

impl ExperimentConfig {
    /// Parses TOML text; syntax and schema errors carry line and key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Validates every block, checks the schedules before anything runs and
    /// solves for the equilibrium.
    pub fn build(&self) -> Result<Setup> {
        let g = &self.game;
        if g.family != "quadratic" {
            return Err(cfg_err("game.family", format!("unsupported family \"{}\"", g.family)));
        }
        let n = g.targets.len();
        if g.lower.len() != n || g.upper.len() != n {
            return Err(cfg_err(
                "game.lower/game.upper",
                format!("expected {n} entries to match `game.targets`, got {} and {}", g.lower.len(), g.upper.len()),
            ));
        }
        let sets = g.lower.iter().zip(&g.upper).map(|(&lo, &hi)| Interval::new(lo, hi)).collect::<Result<Vec<_>>>()?;
        let quadratic = QuadraticGame::new(g.targets.clone(), g.beta, g.offset, sets)?;
        let mut game = quadratic.instance()?;
        if g.lipschitz.is_some() || g.grad_bound.is_some() {
            let l = g.lipschitz.unwrap_or(game.lipschitz());
            let b = g.grad_bound.unwrap_or(game.grad_bound());
            game = game.with_constants(l, b)?;
        }

        let topology = self.topology.build(n)?;

        let m = self.mechanism;
        let mechanism = MechanismParams::new(m.sigma, m.c, m.a, m.d)?;

        let sb = self.schedule;
        let schedules = Schedules::new(sb.lambda0, sb.b_l, sb.p, sb.gamma0, sb.b_g, sb.q)?;
        let report = schedules.validate()?;
        if !report.convergence_ok {
            return Err(Error::Schedule(report.violations.join("; ")));
        }

        let accountant = match &self.accountant {
            None => None,
            Some(acc) => {
                if !report.privacy_ok {
                    return Err(Error::Schedule(format!(
                        "privacy accounting requested but the schedules are not summable: {}",
                        report.violations.join("; ")
                    )));
                }
                let source = match &acc.c_tilde {
                    CTildeSpec::Value(v) if *v > 0.0 && v.is_finite() => CTildeSource::Fixed(*v),
                    CTildeSpec::Value(v) => {
                        return Err(cfg_err("accountant.c_tilde", format!("must be positive, got {v}")))
                    }
                    CTildeSpec::Mode(s) if s == "estimate" => CTildeSource::Estimate,
                    CTildeSpec::Mode(s) => {
                        return Err(cfg_err(
                            "accountant.c_tilde",
                            format!("expected a number or \"estimate\", got \"{s}\""),
                        ))
                    }
                };
                if !(acc.alpha > 0.0 && acc.alpha.is_finite()) {
                    return Err(cfg_err("accountant.alpha", "must be positive"));
                }
                if !acc.kappa.is_finite() {
                    return Err(cfg_err("accountant.kappa", "must be finite"));
                }
                if acc.player >= n {
                    return Err(cfg_err("accountant.player", format!("no player {} among {n}", acc.player)));
                }
                Some((source, AdjacencySpec { player: acc.player, alpha: acc.alpha, kappa: acc.kappa }))
            }
        };

        let ne = quadratic.ne_oracle()?;

        let r = &self.run;
        if r.iterations == 0 {
            return Err(cfg_err("run.iterations", "must be at least 1"));
        }
        if r.seeds == 0 {
            return Err(cfg_err("run.seeds", "must be at least 1"));
        }
        if r.decimation == 0 {
            return Err(cfg_err("run.decimation", "must be at least 1"));
        }
        let init = match &r.init {
            InitSpec::Mode(s) if s == "uniform" => Init::Uniform,
            InitSpec::Mode(s) => {
                return Err(cfg_err("run.init", format!("expected \"uniform\" or a vector, got \"{s}\"")))
            }
            InitSpec::Values(v) => {
                game.check_profile(v).map_err(|e| cfg_err("run.init", e))?;
                Init::Explicit(v.clone())
            }
        };
        let seeds = (0..r.seeds as u64).map(|i| r.base_seed.wrapping_add(i)).collect();

        let baseline = self.baseline.as_ref().map(|b| b.resolve(&schedules)).transpose()?;

        let attack_target = match self.attack {
            Some(a) if a.target >= n => {
                return Err(cfg_err("attack.target", format!("no player {} among {n}", a.target)))
            }
            Some(a) => Some(a.target),
            None => None,
        };

        Ok(Setup {
            quadratic,
            game,
            topology,
            mechanism,
            schedules,
            ne,
            init,
            iterations: r.iterations,
            seeds,
            decimation: r.decimation,
            baseline,
            attack_target,
            accountant,
        })
    }
}

impl TopologyBlock {
    fn build(&self, n: usize) -> Result<Topology> {
        match (&self.preset, &self.edges) {
            (Some(_), Some(_)) => Err(cfg_err("topology", "give either `preset` or `edges`, not both")),
            (None, None) => Err(cfg_err("topology", "missing `preset` or `edges`")),
            (None, Some(edges)) => {
                if self.weight.is_some() {
                    return Err(cfg_err("topology.weight", "only used with `preset`"));
                }
                Topology::build(n, edges)
            }
            (Some(preset), None) => {
                let w = self.weight.unwrap_or(1.0);
                match preset.as_str() {
                    "ring" => Topology::ring(n, w),
                    "path" => Topology::path(n, w),
                    "complete" => Topology::complete(n, w),
                    other => Err(cfg_err("topology.preset", format!("unknown preset \"{other}\""))),
                }
            }
        }
    }
}

impl BaselineBlock {
    fn resolve(&self, s: &Schedules) -> Result<BaselineParams> {
        let step = match self.step.as_str() {
            "geometric" => BaselineStep::Geometric {
                lambda0: self.lambda0.unwrap_or(s.lambda0),
                ratio: self
                    .step_decay
                    .ok_or_else(|| cfg_err("baseline.step_decay", "required for a geometric step"))?,
            },
            "schedule" => {
                if self.lambda0.is_some() || self.step_decay.is_some() {
                    return Err(cfg_err("baseline", "`lambda0`/`step_decay` only apply to step = \"geometric\""));
                }
                BaselineStep::Schedule
            }
            other => {
                return Err(cfg_err(
                    "baseline.step",
                    format!("expected \"geometric\" or \"schedule\", got \"{other}\""),
                ))
            }
        };
        let p = BaselineParams { noise_scale: self.noise_scale, noise_decay: self.noise_decay, step };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ENERGY: &str = include_str!("../../configs/energy.cfg");

    #[test]
    fn bundled_config_builds() {
        let cfg = ExperimentConfig::from_toml_str(ENERGY).unwrap();
        let setup = cfg.build().unwrap();
        assert_eq!(setup.ne.len(), 5);
        assert_eq!(setup.schedules, Schedules::energy());
        assert_eq!(setup.mechanism, MechanismParams::energy());
        assert_eq!(setup.iterations, 1500);
        assert_eq!(setup.seeds.len(), 20);
        assert!(setup.baseline.is_some() && setup.accountant.is_some());
    }

    #[test]
    fn unknown_key_reports_line_and_name() {
        let text = ENERGY.replace("beta = 0.04", "beta = 0.04\nbetta = 1.0");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("betta"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn missing_block_is_reported() {
        let text: String = ENERGY.split("[mechanism]").next().unwrap().to_string();
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("mechanism"), "{err}");
    }

    #[test]
    fn privacy_request_with_nonsummable_schedule_is_rejected() {
        let text = ENERGY.replace("q = 0.55", "q = 0.70");
        let err = ExperimentConfig::from_toml_str(&text).unwrap().build().unwrap_err();
        assert!(matches!(err, Error::Schedule(_)));
        assert!(err.to_string().contains("2p - 1.5q > 1"), "{err}");

        let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        cfg.accountant = None;
        cfg.build().unwrap();
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let cases = [
            ("preset = \"ring\"", "preset = \"star\"", "topology.preset"),
            ("init = \"uniform\"", "init = \"random\"", "run.init"),
            ("init = \"uniform\"", "init = [0.0, 0.0, 0.0, 0.0, 0.0]", "run.init"),
            ("family = \"quadratic\"", "family = \"cubic\"", "game.family"),
            ("seeds = 20", "seeds = 0", "run.seeds"),
            ("target = 0", "target = 7", "attack.target"),
            ("c_tilde = \"estimate\"", "c_tilde = \"guess\"", "accountant.c_tilde"),
        ];
        for (from, to, key) in cases {
            assert!(ENERGY.contains(from), "{from}");
            let err = ExperimentConfig::from_toml_str(&ENERGY.replace(from, to)).unwrap().build().unwrap_err();
            assert!(err.to_string().contains(key), "{key}: {err}");
        }
    }

    #[test]
    fn infeasible_equilibrium_is_an_error() {
        let text = ENERGY.replace("upper = [45.0, 49.0, 53.0, 59.0, 63.0]", "upper = [41.0, 49.0, 53.0, 59.0, 63.0]");
        let err = ExperimentConfig::from_toml_str(&text).unwrap().build().unwrap_err();
        assert!(matches!(err, Error::ActiveConstraint { player: 0, .. }), "{err}");
    }

    #[test]
    fn explicit_edges_and_init() {
        let text = ENERGY
            .replace("preset = \"ring\"\nweight = 0.5", "edges = [[0, 1, 1.0], [1, 2, 1.0], [2, 3, 1.0], [3, 4, 1.0]]")
            .replace("init = \"uniform\"", "init = [41.0, 45.0, 50.0, 55.0, 60.0]");
        let setup = ExperimentConfig::from_toml_str(&text).unwrap().build().unwrap();
        assert_eq!(setup.topology, Topology::path(5, 1.0).unwrap());
        assert_eq!(setup.init, Init::Explicit(vec![41.0, 45.0, 50.0, 55.0, 60.0]));
    }
}
