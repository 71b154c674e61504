//! The non-cooperative scheduling game: households are players, schedules
//! are strategies, daily bills are costs.
//!
//! [`solve`] runs Gauss–Seidel best-response dynamics from a seeded random
//! profile, then certifies the result with [`deviation_gain`], which
//! searches on grids twice as fine as the solver's.

mod dp;
mod stage;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::battery::Soc;
use crate::billing::{daily_bill, CompensatedSum};
use crate::decision::{
    check_decision, checked_load, giver_bounds, taker_bounds, IntervalDecision, PoolState, Role,
    Schedule, FEASIBILITY_TOL,
};
use crate::error::{DecisionError, GameError};
use crate::scenario::Scenario;

use dp::{Path, Problem};
use stage::StageEnv;

/// Bill drops at or below this (relative to the bill) do not replace a
/// schedule.
pub const IMPROVEMENT_TOL: f64 = 1e-12;

/// Cap on forward-search rounds per best response.
const FORWARD_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Convergence and certification tolerance (cost units).
    pub epsilon: f64,
    pub max_sweeps: usize,
    /// SOC grid points of the global search.
    pub soc_grid: usize,
    /// SOC points per boundary in each local refinement band.
    pub action_grid: usize,
    /// Upper bound on local refinement passes per search; 0 restricts best
    /// responses to the grid.
    pub refine_passes: usize,
    pub seed: u64,
    /// Start from idle batteries and full sharing instead of random schedules.
    pub cold_start: bool,
    /// How often the solver may switch its best responses to the 2x finer
    /// search when that search still finds improvements after a stable
    /// sweep. Certification always runs 2x finer than the last search used.
    pub max_escalations: usize,
    /// Optional lower bound on every household's end-of-day SOC.
    pub terminal_soc_min: Option<f64>,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_sweeps: 100,
            soc_grid: 64,
            action_grid: 9,
            refine_passes: 80,
            seed: 0,
            cold_start: false,
            max_escalations: 1,
            terminal_soc_min: None,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        let mut problems = Vec::new();
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            problems.push(format!("epsilon = {} must be > 0", self.epsilon));
        }
        if self.max_sweeps < 1 {
            problems.push("max_sweeps must be >= 1".to_string());
        }
        if self.soc_grid < 2 {
            problems.push(format!("soc_grid = {} must be >= 2", self.soc_grid));
        }
        if self.action_grid < 3 {
            problems.push(format!("action_grid = {} must be >= 3", self.action_grid));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GameError::InvalidConfig(problems.join("; ")))
        }
    }

    /// The certification search: grids refined by 2x (the coarse points are
    /// kept, a new point is inserted between each pair).
    pub fn refined(&self) -> Self {
        Self {
            soc_grid: 2 * self.soc_grid - 1,
            action_grid: 2 * self.action_grid - 1,
            ..self.clone()
        }
    }
}

/// A schedule for every household, in scenario order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile {
    pub schedules: Vec<Schedule>,
}

impl Profile {
    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for s in &self.schedules {
            for d in &s.decisions {
                d.a.to_bits().hash(&mut h);
                d.e.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Everything derivable from a feasible profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// Per household, SOC at the `T + 1` interval boundaries.
    pub soc: Vec<Vec<f64>>,
    pub loads: Vec<Vec<f64>>,
    pub aggregated_load: Vec<f64>,
    pub pool: PoolState,
    pub bills: Vec<f64>,
}

impl Outcome {
    fn others_load(&self, m: usize) -> Vec<f64> {
        (0..self.aggregated_load.len())
            .map(|t| {
                self.loads
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != m)
                    .map(|(_, l)| l[t])
                    .sum()
            })
            .collect()
    }
}

/// Replays every schedule against the full constraint set (roles, rates,
/// SOC bounds, load sign, pool balance) and computes loads and bills.
#[allow(clippy::needless_range_loop)]
pub fn evaluate(scenario: &Scenario, profile: &Profile) -> Result<Outcome, GameError> {
    let m_count = scenario.len();
    let horizon = scenario.intervals;
    if profile.schedules.len() != m_count {
        return Err(GameError::ScheduleCount {
            got: profile.schedules.len(),
            expected: m_count,
        });
    }
    let dt = scenario.dt();
    let demands: Vec<Vec<f64>> = (0..m_count).map(|m| scenario.net_demand(m)).collect();
    let mut soc: Vec<Vec<f64>> = scenario
        .households
        .iter()
        .map(|h| vec![h.initial_soc.0])
        .collect();
    let mut loads = vec![vec![0.0; horizon]; m_count];
    let mut pool = PoolState::default();
    for t in 0..horizon {
        let mut offered = 0.0;
        let mut drawn = 0.0;
        for m in 0..m_count {
            let dec = decision_at(profile, m, t, horizon)?;
            if demands[m][t] > 0.0 {
                drawn += -dec.e;
            } else {
                offered += dec.e;
            }
        }
        let available = scenario.eta_bar * offered;
        if drawn > available + FEASIBILITY_TOL * (1.0 + available) {
            return Err(DecisionError::PoolOverdrawn {
                interval: t,
                drawn,
                available,
            }
            .into());
        }
        pool.offered.push(available);
        pool.drawn.push(drawn);
        pool.available.push((available - drawn).max(0.0));
        for m in 0..m_count {
            let h = &scenario.households[m];
            let d = demands[m][t];
            let role = crate::decision::classify(d);
            let dec = decision_at(profile, m, t, horizon)?;
            let s = Soc(soc[m][t]);
            let next = check_decision(
                role,
                s,
                d,
                if role == Role::Taker { available } else { 0.0 },
                dec,
                &h.battery,
                scenario.eta_inv,
                dt,
                m,
                t,
            )?;
            soc[m].push(next.0);
            loads[m][t] = checked_load(role, d, dec, m, t)?;
        }
    }
    let aggregated_load: Vec<f64> = (0..horizon)
        .map(|t| loads.iter().map(|l| l[t]).sum())
        .collect();
    let mut outcome = Outcome {
        soc,
        loads,
        aggregated_load,
        pool,
        bills: Vec::new(),
    };
    outcome.bills = (0..m_count)
        .map(|m| daily_bill(&outcome.loads[m], &outcome.others_load(m), &scenario.tariff))
        .collect::<Result<_, _>>()?;
    Ok(outcome)
}

fn decision_at(
    profile: &Profile,
    m: usize,
    t: usize,
    horizon: usize,
) -> Result<IntervalDecision, GameError> {
    let s = &profile.schedules[m];
    if s.len() != horizon {
        return Err(DecisionError::Infeasible {
            household: m,
            interval: s.len().min(horizon),
            reason: format!("schedule has {} intervals, expected {horizon}", s.len()),
        }
        .into());
    }
    Ok(s.decisions[t])
}

/// Household `m`'s best-response problem against the rest of `profile`.
fn problem_for(
    scenario: &Scenario,
    profile: &Profile,
    outcome: &Outcome,
    m: usize,
    config: &GameConfig,
) -> Problem {
    let h = &scenario.households[m];
    let demand = scenario.net_demand(m);
    let others = outcome.others_load(m);
    let eta_bar = scenario.eta_bar;
    let stages = (0..scenario.intervals)
        .map(|t| {
            let d = demand[t];
            let role = crate::decision::classify(d);
            let own = profile.schedules[m].decisions[t];
            let offered_raw = outcome.pool.offered[t] / eta_bar;
            let drawn = outcome.pool.drawn[t];
            let pool = match role {
                // Pool left after every other taker's draw.
                Role::Taker => (outcome.pool.offered[t] - (drawn + own.e)).max(0.0),
                // Offer needed so that existing draws stay covered.
                Role::Giver => (drawn / eta_bar - (offered_raw - own.e)).max(0.0),
            };
            StageEnv {
                role,
                net_demand: d,
                pool,
                offset: others[t] - scenario.tariff.generation[t],
                p0: scenario.tariff.p0,
            }
        })
        .collect();
    Problem {
        battery: h.battery,
        eta_inv: scenario.eta_inv,
        dt: scenario.dt(),
        initial_soc: h.initial_soc.0,
        stages,
        terminal_floor: config
            .terminal_soc_min
            .map(|f| f.min(h.battery.s_max).max(h.battery.s_min)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub schedule: Schedule,
    pub bill: f64,
    pub previous_bill: f64,
    /// Whether `schedule` differs from the household's current one.
    pub replaced: bool,
}

impl BestResponse {
    pub fn improvement(&self) -> f64 {
        self.previous_bill - self.bill
    }
}

fn search(problem: &Problem, incumbent: Option<Path>, config: &GameConfig) -> Option<Path> {
    let grid = problem.uniform_grid(config.soc_grid);
    let grids = vec![grid; problem.intervals()];
    let global = dp::optimise(problem, &grids);
    if config.refine_passes == 0 {
        return [global, incumbent]
            .into_iter()
            .flatten()
            .min_by(|a, b| a.cost.total_cmp(&b.cost));
    }
    let width = (problem.battery.s_max - problem.battery.s_min) / (config.soc_grid.max(2) - 1) as f64;
    let refine = |p: Path| dp::refine(problem, p, width, config.action_grid, config.refine_passes);
    let anchors = problem.anchors();
    let mut best: Option<Path> = None;
    let keep = |cand: Path, best: &mut Option<Path>| {
        if best.as_ref().is_none_or(|b| cand.cost < b.cost) {
            *best = Some(cand);
        }
    };
    for start in [global, incumbent].into_iter().flatten() {
        keep(refine(start), &mut best);
    }
    // Forward searches that may also step onto the best path so far, until
    // one brings no improvement.
    for _ in 0..FORWARD_ROUNDS {
        let mut extra = anchors.clone();
        if let Some(b) = &best {
            for (t, e) in extra.iter_mut().enumerate() {
                e.push(b.soc[t + 1]);
            }
        }
        let Some(found) = dp::forward_search(problem, 4 * config.soc_grid, config.action_grid, &grids[0], &extra) else {
            break;
        };
        let refined = refine(found);
        let improved = best
            .as_ref()
            .is_none_or(|b| refined.cost < b.cost - IMPROVEMENT_TOL * b.cost.abs().max(1.0));
        keep(refined, &mut best);
        if !improved {
            break;
        }
    }
    best
}

/// Household `m`'s bill-minimising schedule with every other schedule in
/// `profile` fixed. The current schedule is kept unless the search finds a
/// strictly cheaper one, so the bill never increases.
pub fn best_response(
    scenario: &Scenario,
    profile: &Profile,
    m: usize,
    config: &GameConfig,
) -> Result<BestResponse, GameError> {
    let outcome = evaluate(scenario, profile)?;
    best_response_with(scenario, profile, &outcome, m, config)
}

fn best_response_with(
    scenario: &Scenario,
    profile: &Profile,
    outcome: &Outcome,
    m: usize,
    config: &GameConfig,
) -> Result<BestResponse, GameError> {
    let problem = problem_for(scenario, profile, outcome, m, config);
    let current = &profile.schedules[m];
    let incumbent = problem.replay(&current.decisions);
    let current_ok = incumbent.is_some();
    let previous_bill = outcome.bills[m];
    let Some(found) = search(&problem, incumbent, config) else {
        return Err(GameError::TerminalSocUnreachable {
            household: m,
            floor: config.terminal_soc_min.unwrap_or(f64::NAN),
        });
    };
    let candidate = Schedule::new(found.decisions);
    let others = outcome.others_load(m);
    let demand = scenario.net_demand(m);
    let own: Vec<f64> = candidate
        .decisions
        .iter()
        .zip(&demand)
        .map(|(dec, &d)| crate::decision::load(crate::decision::classify(d), d, *dec).max(0.0))
        .collect();
    let bill = daily_bill(&own, &others, &scenario.tariff)?;
    let threshold = IMPROVEMENT_TOL * previous_bill.abs().max(1.0);
    if !current_ok || bill < previous_bill - threshold {
        Ok(BestResponse {
            schedule: candidate,
            bill,
            previous_bill,
            replaced: true,
        })
    } else {
        Ok(BestResponse {
            schedule: current.clone(),
            bill: previous_bill,
            previous_bill,
            replaced: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    /// SOC grid of the best-response search used in this sweep.
    pub soc_grid: usize,
    /// Bill of each household after its turn in this sweep.
    pub bills: Vec<f64>,
    /// Bill reduction achieved by each household's best response.
    pub improvements: Vec<f64>,
    pub max_improvement: f64,
    pub improved: bool,
}

/// One Gauss–Seidel pass: households respond in scenario order, each
/// against the freshest schedules of the others.
pub fn sweep(
    scenario: &Scenario,
    profile: &mut Profile,
    config: &GameConfig,
) -> Result<SweepRecord, GameError> {
    let m_count = scenario.len();
    let mut bills = vec![0.0; m_count];
    let mut improvements = vec![0.0; m_count];
    for m in 0..m_count {
        let outcome = evaluate(scenario, profile)?;
        let br = best_response_with(scenario, profile, &outcome, m, config)?;
        debug_assert!(br.bill <= br.previous_bill || !br.previous_bill.is_finite());
        improvements[m] = br.improvement();
        bills[m] = br.bill;
        if br.replaced {
            profile.schedules[m] = br.schedule;
        }
    }
    let max_improvement = improvements.iter().copied().fold(0.0, f64::max);
    Ok(SweepRecord {
        sweep: 0,
        soc_grid: config.soc_grid,
        bills,
        improvements,
        max_improvement,
        improved: max_improvement > config.epsilon,
    })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Starting profile: seeded random feasible schedules (givers sample first
/// each interval so takers can draw from their offers), or idle batteries
/// with full sharing when `cold_start` is set.
#[allow(clippy::needless_range_loop)]
pub fn initial_profile(scenario: &Scenario, config: &GameConfig) -> Result<Profile, GameError> {
    let m_count = scenario.len();
    let horizon = scenario.intervals;
    let dt = scenario.dt();
    let demands: Vec<Vec<f64>> = (0..m_count).map(|m| scenario.net_demand(m)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut soc: Vec<f64> = scenario.households.iter().map(|h| h.initial_soc.0).collect();
    let mut schedules = vec![Vec::with_capacity(horizon); m_count];
    for t in 0..horizon {
        let mut offered = 0.0;
        let mut decisions = vec![IntervalDecision::default(); m_count];
        for m in (0..m_count).filter(|&m| demands[m][t] <= 0.0) {
            let bat = &scenario.households[m].battery;
            let region = giver_bounds(Soc(soc[m]), demands[m][t], 0.0, bat, scenario.eta_inv, dt);
            let dec = if config.cold_start {
                IntervalDecision::new(0.0, region.e_max)
            } else {
                let e = uniform(&mut rng, region.e_min, region.e_max);
                let (lo, hi) = region.a_range(e);
                IntervalDecision::new(uniform(&mut rng, lo, hi), e)
            };
            offered += dec.e;
            decisions[m] = dec;
        }
        let mut left = scenario.eta_bar * offered;
        for m in (0..m_count).filter(|&m| demands[m][t] > 0.0) {
            let bat = &scenario.households[m].battery;
            let region = taker_bounds(Soc(soc[m]), demands[m][t], left, bat, scenario.eta_inv, dt);
            let dec = if config.cold_start {
                IntervalDecision::new(0.0, 0.0)
            } else {
                let a = uniform(&mut rng, region.a_min, region.a_max);
                let (lo, hi) = region.e_range(a);
                IntervalDecision::new(a, uniform(&mut rng, lo, hi))
            };
            left = (left + dec.e).max(0.0);
            decisions[m] = dec;
        }
        for m in 0..m_count {
            let d = demands[m][t];
            let role = crate::decision::classify(d);
            let bat = &scenario.households[m].battery;
            let next = match role {
                Role::Taker => bat.soc_next_taker(Soc(soc[m]), decisions[m].a, scenario.eta_inv, dt),
                Role::Giver => bat.soc_next_giver(
                    Soc(soc[m]),
                    decisions[m].a,
                    ((-d).max(0.0) - decisions[m].e).max(0.0),
                    scenario.eta_inv,
                    dt,
                ),
            }
            .map_err(DecisionError::from)?;
            soc[m] = next.0;
            schedules[m].push(decisions[m]);
        }
    }
    Ok(Profile {
        schedules: schedules.into_iter().map(Schedule::new).collect(),
    })
}

/// How much household `m` could save by deviating unilaterally, measured
/// with the refined search of [`GameConfig::refined`]. Never negative.
pub fn deviation_gain(
    scenario: &Scenario,
    profile: &Profile,
    m: usize,
    config: &GameConfig,
) -> Result<f64, GameError> {
    let br = best_response(scenario, profile, m, &config.refined())?;
    Ok(br.improvement().max(0.0))
}

/// [`deviation_gain`] for every household, evaluated in parallel against
/// the same frozen profile.
pub fn certify(
    scenario: &Scenario,
    profile: &Profile,
    config: &GameConfig,
) -> Result<Vec<f64>, GameError> {
    let outcome = evaluate(scenario, profile)?;
    let fine = config.refined();
    (0..scenario.len())
        .into_par_iter()
        .map(|m| {
            best_response_with(scenario, profile, &outcome, m, &fine).map(|br| br.improvement().max(0.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// A full sweep improved no bill by more than epsilon.
    Stable,
    /// The profile after a sweep repeated an earlier one.
    Cycle,
    SweepLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grids {
    pub soc_grid: usize,
    pub action_grid: usize,
}

impl Grids {
    fn of(config: &GameConfig) -> Self {
        Self {
            soc_grid: config.soc_grid,
            action_grid: config.action_grid,
        }
    }

    /// `config` with its search grids replaced by these.
    pub fn apply(&self, config: &GameConfig) -> GameConfig {
        GameConfig {
            soc_grid: self.soc_grid,
            action_grid: self.action_grid,
            ..config.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub profile: Profile,
    pub outcome: Outcome,
    pub converged: bool,
    pub termination: Termination,
    pub sweeps_used: usize,
    /// Finest grids used by the solver's best responses.
    pub search_grid: Grids,
    /// Grids of the search that produced `deviation_gains`.
    pub certificate_grid: Grids,
    pub deviation_gains: Vec<f64>,
    pub max_deviation_gain: f64,
    pub sweep_log: Vec<SweepRecord>,
}

impl EquilibriumResult {
    pub fn bills(&self) -> &[f64] {
        &self.outcome.bills
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// Iterated best responses until no household improves by more than
/// epsilon, a profile repeats, or `max_sweeps` is reached; then
/// certification of the final profile. Non-convergence is reported, not
/// an error.
pub fn solve(scenario: &Scenario, config: &GameConfig) -> Result<EquilibriumResult, GameError> {
    config.validate()?;
    let profile = initial_profile(scenario, config)?;
    solve_from(scenario, profile, config)
}

/// [`solve`] from a given starting profile.
pub fn solve_from(
    scenario: &Scenario,
    mut profile: Profile,
    config: &GameConfig,
) -> Result<EquilibriumResult, GameError> {
    config.validate()?;
    evaluate(scenario, &profile)?;
    let mut search = config.clone();
    let mut escalations = 0;
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut history: Vec<Profile> = vec![profile.clone()];
    seen.insert(profile.fingerprint(), 0);
    let mut log = Vec::new();
    let mut termination = Termination::SweepLimit;
    let mut cycle_start = None;
    let mut gains = None;
    for k in 1..=config.max_sweeps {
        let mut record = sweep(scenario, &mut profile, &search)?;
        record.sweep = k;
        record.soc_grid = search.soc_grid;
        debug!(
            "sweep {k}: max improvement {:.3e}, bills {:?}",
            record.max_improvement, record.bills
        );
        let improved = record.improved;
        log.push(record);
        history.push(profile.clone());
        if !improved {
            termination = Termination::Stable;
            let g = certify(scenario, &profile, &search)?;
            if max_of(&g) <= config.epsilon || escalations >= config.max_escalations || k == config.max_sweeps {
                gains = Some(g);
                break;
            }
            // The finer search sees improvements the solver's search missed:
            // continue with it, and certify on a finer one still.
            escalations += 1;
            search = search.refined();
            info!("escalating best responses to soc_grid {}", search.soc_grid);
            termination = Termination::SweepLimit;
            seen.clear();
            seen.insert(profile.fingerprint(), k);
            continue;
        }
        if let Some(&earlier) = seen.get(&profile.fingerprint()) {
            termination = Termination::Cycle;
            cycle_start = Some(earlier);
            break;
        }
        seen.insert(profile.fingerprint(), k);
    }
    let sweeps_used = log.len();
    let mut gains = match gains {
        Some(g) => g,
        None => certify(scenario, &profile, &search)?,
    };
    let mut converged = max_of(&gains) <= config.epsilon;
    if !converged {
        if let Some(start) = cycle_start {
            // Keep whichever profile on the cycle is closest to equilibrium.
            for candidate in &history[start..history.len() - 1] {
                let g = certify(scenario, candidate, &search)?;
                if max_of(&g) < max_of(&gains) {
                    gains = g;
                    profile = candidate.clone();
                }
            }
            converged = max_of(&gains) <= config.epsilon;
        }
    }
    let outcome = evaluate(scenario, &profile)?;
    let max_deviation_gain = max_of(&gains);
    info!(
        "finished after {sweeps_used} sweeps ({termination:?}); max deviation gain {max_deviation_gain:.3e}"
    );
    let certificate = search.refined();
    Ok(EquilibriumResult {
        profile,
        outcome,
        converged,
        termination,
        sweeps_used,
        search_grid: Grids::of(&search),
        certificate_grid: Grids::of(&certificate),
        deviation_gains: gains,
        max_deviation_gain,
        sweep_log: log,
    })
}

/// Sum of squared gaps between aggregated load and generation.
pub fn tracking_error(aggregated: &[f64], generation: &[f64]) -> f64 {
    crate::billing::tracking_error(aggregated, generation)
}

/// Total of a bill vector with compensated summation.
pub fn total(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().total()
}
