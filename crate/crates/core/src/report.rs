//! End-to-end run of one scenario (baseline and game) and emission of the
//! result document, trace tables and summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::billing::{daily_bill, tracking_error};
use crate::decision::classify;
use crate::error::{GameError, ReportError};
use crate::game::{evaluate, solve, EquilibriumResult, GameConfig, Profile};
use crate::scenario::{Scenario, SCHEMA_VERSION};

pub const RESULT_FILE: &str = "result.json";
pub const COMMUNITY_FILE: &str = "community.csv";
pub const HOUSEHOLDS_FILE: &str = "households.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// No batteries and no sharing: every household draws `max(d, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub loads: Vec<Vec<f64>>,
    pub aggregated_load: Vec<f64>,
    pub bills: Vec<f64>,
    pub tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSection {
    #[serde(flatten)]
    pub result: EquilibriumResult,
    pub tracking_error: f64,
    /// Tracking-error reduction relative to the baseline, in percent.
    pub tracking_reduction_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario_digest: String,
    pub household_ids: Vec<String>,
    pub intervals: usize,
    pub config: GameConfig,
    pub baseline: Baseline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameSection>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunReport {
    /// `None` for baseline-only runs.
    pub fn converged(&self) -> Option<bool> {
        self.game.as_ref().map(|g| g.result.converged)
    }
}

pub fn baseline(scenario: &Scenario) -> Result<Baseline, GameError> {
    let loads: Vec<Vec<f64>> = (0..scenario.len())
        .map(|m| scenario.net_demand(m).into_iter().map(|d| d.max(0.0)).collect())
        .collect();
    let aggregated_load: Vec<f64> = (0..scenario.intervals)
        .map(|t| loads.iter().map(|l| l[t]).sum())
        .collect();
    let bills = (0..loads.len())
        .map(|m| {
            let others: Vec<f64> = (0..scenario.intervals)
                .map(|t| {
                    loads
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != m)
                        .map(|(_, l)| l[t])
                        .sum()
                })
                .collect();
            daily_bill(&loads[m], &others, &scenario.tariff)
        })
        .collect::<Result<_, _>>()?;
    let tracking_error = tracking_error(&aggregated_load, &scenario.tariff.generation);
    Ok(Baseline {
        loads,
        aggregated_load,
        bills,
        tracking_error,
    })
}

pub fn reduction_percent(baseline: f64, equilibrium: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - equilibrium) / baseline
    } else {
        0.0
    }
}

/// Baseline plus (unless `baseline_only`) the game.
pub fn run(scenario: &Scenario, config: &GameConfig, baseline_only: bool) -> Result<RunReport, GameError> {
    let start = Instant::now();
    let base = baseline(scenario)?;
    let game = if baseline_only {
        None
    } else {
        let result = solve(scenario, config)?;
        let tracking = tracking_error(&result.outcome.aggregated_load, &scenario.tariff.generation);
        Some(GameSection {
            tracking_reduction_percent: reduction_percent(base.tracking_error, tracking),
            tracking_error: tracking,
            result,
        })
    };
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        scenario_digest: scenario.digest(),
        household_ids: scenario.households.iter().map(|h| h.id.clone()).collect(),
        intervals: scenario.intervals,
        config: config.clone(),
        baseline: base,
        game,
        wall_time: start.elapsed(),
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the four output files into `out_dir` (created if missing).
/// Everything except the summary is a pure function of the report.
pub fn emit(report: &RunReport, scenario: &Scenario, out_dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write(&out_dir.join(RESULT_FILE), json)?;
    write(&out_dir.join(COMMUNITY_FILE), community_table(report, scenario)?)?;
    write(&out_dir.join(HOUSEHOLDS_FILE), household_table(report, scenario)?)?;
    write(&out_dir.join(SUMMARY_FILE), summary(report))?;
    Ok(())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, ReportError> {
    w.into_inner()
        .map_err(|e| ReportError::Decode(e.to_string()))
}

fn community_table(report: &RunReport, scenario: &Scenario) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t",
        "hour",
        "generation",
        "baseline_load",
        "equilibrium_load",
        "pool_offered",
        "pool_drawn",
        "pool_left",
    ])?;
    let dt = scenario.dt();
    for t in 0..scenario.intervals {
        let game = report.game.as_ref().map(|g| &g.result.outcome);
        w.write_record([
            t.to_string(),
            (t as f64 * dt).to_string(),
            scenario.tariff.generation[t].to_string(),
            report.baseline.aggregated_load[t].to_string(),
            cell(game.map(|o| o.aggregated_load[t])),
            cell(game.map(|o| o.pool.offered[t])),
            cell(game.map(|o| o.pool.drawn[t])),
            cell(game.map(|o| o.pool.available[t])),
        ])?;
    }
    finish(w)
}

fn household_table(report: &RunReport, scenario: &Scenario) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "t",
        "household",
        "role",
        "net_demand",
        "baseline_load",
        "load",
        "a",
        "e",
        "soc_start",
        "soc_end",
    ])?;
    for t in 0..scenario.intervals {
        for (m, h) in scenario.households.iter().enumerate() {
            let d = scenario.net_demand(m)[t];
            let role = match classify(d) {
                crate::decision::Role::Giver => "giver",
                crate::decision::Role::Taker => "taker",
            };
            let game = report.game.as_ref().map(|g| &g.result);
            let dec = game.map(|r| r.profile.schedules[m].decisions[t]);
            w.write_record([
                t.to_string(),
                h.id.clone(),
                role.to_string(),
                d.to_string(),
                report.baseline.loads[m][t].to_string(),
                cell(game.map(|r| r.outcome.loads[m][t])),
                cell(dec.map(|d| d.a)),
                cell(dec.map(|d| d.e)),
                cell(game.map(|r| r.outcome.soc[m][t])),
                cell(game.map(|r| r.outcome.soc[m][t + 1])),
            ])?;
        }
    }
    finish(w)
}

/// Human-readable summary; the only output that includes wall time.
pub fn summary(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario digest     {}", report.scenario_digest);
    let _ = writeln!(
        s,
        "households          {} over {} intervals",
        report.household_ids.len(),
        report.intervals
    );
    let _ = writeln!(s, "baseline tracking   {:.6}", report.baseline.tracking_error);
    match &report.game {
        None => {
            let _ = writeln!(s, "game                skipped (baseline only)");
        }
        Some(g) => {
            let r = &g.result;
            let _ = writeln!(s, "equilibrium track.  {:.6}", g.tracking_error);
            let _ = writeln!(s, "reduction           {:.2}%", g.tracking_reduction_percent);
            let _ = writeln!(
                s,
                "converged           {} ({:?} after {} sweeps)",
                r.converged, r.termination, r.sweeps_used
            );
            let _ = writeln!(s, "max deviation gain  {:.3e}", r.max_deviation_gain);
            let _ = writeln!(s, "{:<12}{:>16}{:>16}{:>14}", "household", "baseline bill", "bill", "gain");
            for (m, id) in report.household_ids.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{:<12}{:>16.6}{:>16.6}{:>14.3e}",
                    id, report.baseline.bills[m], r.outcome.bills[m], r.deviation_gains[m]
                );
            }
        }
    }
    let _ = writeln!(s, "wall time           {:.3} s", report.wall_time.as_secs_f64());
    s
}

pub fn load_report(path: &Path) -> Result<RunReport, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// The equilibrium schedules of a report, checked against `scenario`.
pub fn report_profile(report: &RunReport, scenario: &Scenario) -> Result<Profile, ReportError> {
    if report.scenario_digest != scenario.digest() {
        return Err(ReportError::Decode(format!(
            "result was produced for scenario {}, not {}",
            report.scenario_digest,
            scenario.digest()
        )));
    }
    let game = report
        .game
        .as_ref()
        .ok_or_else(|| ReportError::Decode("result has no game section".into()))?;
    Ok(game.result.profile.clone())
}

/// Bills recomputed from a report's schedules.
pub fn recompute_bills(report: &RunReport, scenario: &Scenario) -> Result<Vec<f64>, ReportError> {
    let profile = report_profile(report, scenario)?;
    Ok(evaluate(scenario, &profile)?.bills)
}
