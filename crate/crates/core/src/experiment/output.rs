//! CSV schemas of the report bundle.
//!
//! Floats are written with 17 significant digits, so every value read back
//! is bit-identical to the one written.

use std::path::Path;

use crate::adversary::AttackReport;
use crate::error::{Error, Result};
use crate::ledger::PrivacyLedger;
use crate::seeker::Trajectory;

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const ACCOUNTANT_CSV: &str = "accountant.csv";
pub const ATTACK_CSV: &str = "attack.csv";
pub const REPORT_TXT: &str = "report.txt";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, line: u64, col: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Io(format!("line {line}: column `{col}`: cannot parse \"{s}\" as a number")))
}

fn parse_int<T: std::str::FromStr>(s: &str, line: u64, col: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Io(format!("line {line}: column `{col}`: cannot parse \"{s}\" as an integer")))
}

fn open_reader(path: &Path, header: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut r = csv::Reader::from_path(path)?;
    let got: Vec<&str> = r.headers()?.iter().collect();
    if got != header {
        return Err(Error::Io(format!("{}: expected columns {header:?}, found {got:?}", path.display())));
    }
    Ok(r)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub run_id: u64,
    pub k: usize,
    pub player: usize,
    pub x: f64,
    pub y: f64,
    /// Absent for the final iterate, which has no broadcast round.
    pub fired: Option<bool>,
    pub message: Option<f64>,
}

const TRAJECTORY_HEADER: [&str; 7] = ["run_id", "k", "player", "x", "y", "fired", "message"];

/// One row per stored iterate and player; `fired`/`message` describe the
/// broadcast round at the same `k`.
pub fn write_trajectory(path: &Path, runs: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for t in runs {
        let n = t.n_players();
        for (idx, &k) in t.ks.iter().enumerate() {
            for i in 0..n {
                let obs = (k < t.iterations).then(|| t.observations[k * n + i]);
                w.write_record([
                    t.seed.to_string(),
                    k.to_string(),
                    i.to_string(),
                    fmt_f64(t.x[idx][i]),
                    fmt_f64(t.y[idx][i]),
                    obs.map_or(String::new(), |o| u8::from(o.fired).to_string()),
                    obs.and_then(|o| o.message).map_or(String::new(), fmt_f64),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = open_reader(path, &TRAJECTORY_HEADER)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let fired = match &rec[5] {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => return Err(Error::Io(format!("line {line}: column `fired`: expected 0 or 1, got \"{other}\""))),
        };
        let message = match &rec[6] {
            "" => None,
            s => Some(parse_f64(s, line, "message")?),
        };
        rows.push(TrajectoryRow {
            run_id: parse_int(&rec[0], line, "run_id")?,
            k: parse_int(&rec[1], line, "k")?,
            player: parse_int(&rec[2], line, "player")?,
            x: parse_f64(&rec[3], line, "x")?,
            y: parse_f64(&rec[4], line, "y")?,
            fired,
            message,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run_id: u64,
    pub player: usize,
    pub trigger_count: usize,
    pub trigger_rate: f64,
}

const SUMMARY_HEADER: [&str; 4] = ["run_id", "player", "trigger_count", "trigger_rate"];

pub fn summary_rows(runs: &[Trajectory]) -> Vec<SummaryRow> {
    runs.iter()
        .flat_map(|t| {
            let rates = t.trigger_rates();
            t.trigger_counts.iter().zip(rates).enumerate().map(move |(i, (&c, r))| SummaryRow {
                run_id: t.seed,
                player: i,
                trigger_count: c,
                trigger_rate: r,
            })
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.to_string(),
            r.player.to_string(),
            r.trigger_count.to_string(),
            fmt_f64(r.trigger_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = open_reader(path, &SUMMARY_HEADER)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push(SummaryRow {
            run_id: parse_int(&rec[0], line, "run_id")?,
            player: parse_int(&rec[1], line, "player")?,
            trigger_count: parse_int(&rec[2], line, "trigger_count")?,
            trigger_rate: parse_f64(&rec[3], line, "trigger_rate")?,
        });
    }
    Ok(rows)
}

/// Across-seed statistics of one algorithm at every stored iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurve {
    pub algorithm: String,
    pub ks: Vec<usize>,
    pub mean_distance: Vec<f64>,
    pub var_distance: Vec<f64>,
    pub mean_consensus: Vec<f64>,
}

impl ConvergenceCurve {
    pub fn at(&self, k: usize) -> Option<usize> {
        self.ks.binary_search(&k).ok()
    }
}

const CONVERGENCE_HEADER: [&str; 5] = ["k", "algorithm", "mean_distance", "var_distance", "mean_consensus"];

pub fn write_convergence(path: &Path, curves: &[ConvergenceCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CONVERGENCE_HEADER)?;
    for c in curves {
        for (idx, k) in c.ks.iter().enumerate() {
            w.write_record([
                k.to_string(),
                c.algorithm.clone(),
                fmt_f64(c.mean_distance[idx]),
                fmt_f64(c.var_distance[idx]),
                fmt_f64(c.mean_consensus[idx]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Curves in order of first appearance.
pub fn read_convergence(path: &Path) -> Result<Vec<ConvergenceCurve>> {
    let mut r = open_reader(path, &CONVERGENCE_HEADER)?;
    let mut curves: Vec<ConvergenceCurve> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let name = &rec[1];
        let pos = match curves.iter().position(|c| c.algorithm == name) {
            Some(p) => p,
            None => {
                curves.push(ConvergenceCurve {
                    algorithm: name.to_string(),
                    ks: Vec::new(),
                    mean_distance: Vec::new(),
                    var_distance: Vec::new(),
                    mean_consensus: Vec::new(),
                });
                curves.len() - 1
            }
        };
        let c = &mut curves[pos];
        c.ks.push(parse_int(&rec[0], line, "k")?);
        c.mean_distance.push(parse_f64(&rec[2], line, "mean_distance")?);
        c.var_distance.push(parse_f64(&rec[3], line, "var_distance")?);
        c.mean_consensus.push(parse_f64(&rec[4], line, "mean_consensus")?);
    }
    Ok(curves)
}

pub fn write_accountant(path: &Path, ledger: &PrivacyLedger) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "lambda", "gamma", "sensitivity_bound", "delta_k", "cum_delta"])?;
    for (t, cum) in ledger.terms.iter().zip(&ledger.cumulative) {
        w.write_record([
            t.k.to_string(),
            fmt_f64(t.lambda),
            fmt_f64(t.gamma),
            fmt_f64(t.sensitivity_bound),
            fmt_f64(t.delta),
            fmt_f64(*cum),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attack(path: &Path, reports: &[(&str, &AttackReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "inferred", "truth", "abs_error", "mode"])?;
    for (mode, rep) in reports {
        for idx in 0..rep.ks.len() {
            w.write_record([
                rep.ks[idx].to_string(),
                fmt_f64(rep.inferred[idx]),
                fmt_f64(rep.truth[idx]),
                fmt_f64(rep.abs_error[idx]),
                mode.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
