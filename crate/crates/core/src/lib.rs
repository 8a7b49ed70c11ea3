//! Differentially private distributed Nash-equilibrium seeking for
//! aggregative games.
//!
//! Players exchange estimates of the average decision over a graph. Each
//! broadcast passes through a stochastic event-trigger, which randomizes
//! *when* a player talks, and a stochastic quantizer, which randomizes *what*
//! it says. The crate contains the game model, the communication graph, the
//! mechanism, the seeking engine, the privacy accountant, an eavesdropper
//! model and the experiment harness used by the `dpnes` command line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod error;
pub mod experiment;
pub mod game;
pub mod ledger;
pub mod mechanism;
pub mod rng;
pub mod seeker;
pub mod stats;
pub mod topology;

pub use adversary::{infer_gradient, AttackReport};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, Setup};
pub use game::{GameInstance, GradientField, Interval, QuadraticGame};
pub use ledger::{AdjacencySpec, CTildeEstimate, PrivacyLedger};
pub use mechanism::{MechanismParams, QuantizationSample, TriggerState};
pub use rng::{Channel, Streams};
pub use seeker::{
    BaselineParams, BaselineStep, BroadcastPolicy, Init, NoisyBaseline, ObservationRecord, PlayerState, Schedules,
    Seeker, Trajectory,
};
pub use topology::Topology;
