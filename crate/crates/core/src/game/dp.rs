//! Dynamic programme over discretised state of charge.
//!
//! Every interval boundary carries a finite set of SOC values. Active moves
//! go exactly from a state to a grid point of the next boundary; idle moves
//! follow self-discharge, so the idle image of every state is added to the
//! next boundary as well. Transitions are exact (see [`super::stage`]),
//! which makes the programme an exact minimisation over the set of
//! schedules whose active moves end on the grid.
//!
//! [`refine`] re-runs the programme on narrow bands around an incumbent
//! trajectory, halving the band until it collapses.

use std::collections::HashMap;

use rayon::prelude::*;

use super::stage::{Moves, StageEnv, Transition};
use crate::battery::BatteryParams;
use crate::decision::IntervalDecision;

/// Relative tolerance under which two costs are treated as a tie.
const TIE_TOL: f64 = 1e-12;

/// One household's best-response problem with everyone else fixed.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub battery: BatteryParams,
    pub eta_inv: f64,
    pub dt: f64,
    pub initial_soc: f64,
    pub stages: Vec<StageEnv>,
    pub terminal_floor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Path {
    /// SOC at each of the `T + 1` boundaries.
    pub soc: Vec<f64>,
    pub decisions: Vec<IntervalDecision>,
    pub cost: f64,
}

impl Problem {
    pub fn intervals(&self) -> usize {
        self.stages.len()
    }

    fn terminal(&self, s: f64) -> f64 {
        match self.terminal_floor {
            Some(floor) if s < floor - 1e-12 => f64::INFINITY,
            _ => 0.0,
        }
    }

    fn moves(&self, t: usize, soc: f64) -> Moves<'_> {
        Moves::new(&self.stages[t], &self.battery, self.eta_inv, self.dt, soc)
    }

    /// Uniform grid of `points` SOC values spanning `[s_min, s_max]`.
    pub fn uniform_grid(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = (self.battery.s_min, self.battery.s_max);
        if hi <= lo {
            return vec![lo];
        }
        let n = points.max(2);
        (0..n)
            .map(|k| {
                if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Band of `points` values spaced evenly over `[centre - width, centre +
    /// width]`, clipped to the battery range. Always contains `centre`.
    pub fn band(&self, centre: f64, width: f64, points: usize) -> Vec<f64> {
        let (lo, hi) = (self.battery.s_min, self.battery.s_max);
        let n = points.max(2);
        let mut out: Vec<f64> = (0..n)
            .map(|k| (centre + width * (2.0 * k as f64 / (n - 1) as f64 - 1.0)).clamp(lo, hi))
            .collect();
        out.push(centre);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Cost of following `decisions` exactly, with the SOC trajectory the
    /// decisions induce. Returns `None` if the schedule does not fit the
    /// current environment.
    pub fn replay(&self, decisions: &[IntervalDecision]) -> Option<Path> {
        let mut soc = Vec::with_capacity(decisions.len() + 1);
        let mut s = self.initial_soc;
        soc.push(s);
        let mut cost = 0.0;
        for (t, dec) in decisions.iter().enumerate() {
            let env = &self.stages[t];
            let l = crate::decision::load(env.role, env.net_demand, *dec).max(0.0);
            cost += l * ((l + env.offset) * (l + env.offset) + env.p0);
            let next = match env.role {
                crate::decision::Role::Taker => self
                    .battery
                    .soc_next_taker(crate::battery::Soc(s), dec.a, self.eta_inv, self.dt),
                crate::decision::Role::Giver => self.battery.soc_next_giver(
                    crate::battery::Soc(s),
                    dec.a,
                    ((-env.net_demand).max(0.0) - dec.e).max(0.0),
                    self.eta_inv,
                    self.dt,
                ),
            };
            s = next.ok()?.0;
            soc.push(s);
        }
        if self.terminal(s).is_infinite() {
            return None;
        }
        Some(Path {
            soc,
            decisions: decisions.to_vec(),
            cost,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    next: usize,
    transition: Transition,
}

fn better(total: f64, cand: &Transition, next_soc: f64, best: &(f64, Transition, f64)) -> bool {
    let (best_total, best_t, best_soc) = best;
    if !total.is_finite() {
        return false;
    }
    if !best_total.is_finite() {
        return true;
    }
    let scale = best_total.abs().max(1.0);
    if total < best_total - TIE_TOL * scale {
        return true;
    }
    if total > best_total + TIE_TOL * scale {
        return false;
    }
    let key = |t: &Transition| (t.decision.a.abs(), t.decision.e.abs());
    let (a, e) = key(cand);
    let (ba, be) = key(best_t);
    if a != ba {
        return a < ba;
    }
    if e != be {
        return e < be;
    }
    next_soc < *best_soc
}

/// Exact minimisation over schedules whose active moves end on `grids[t]`
/// at boundary `t + 1` (`grids.len()` must equal the number of intervals).
/// Each grid must be sorted ascending.
pub(crate) fn optimise(problem: &Problem, grids: &[Vec<f64>]) -> Option<Path> {
    let horizon = problem.intervals();
    debug_assert_eq!(grids.len(), horizon);

    // Forward pass: reachable states at every boundary.
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
    // For each boundary t+1: grid index -> state index (if reachable).
    let mut grid_map: Vec<Vec<Option<usize>>> = Vec::with_capacity(horizon);
    let mut idle_map: Vec<Vec<usize>> = Vec::with_capacity(horizon);
    states.push(vec![problem.initial_soc]);
    for t in 0..horizon {
        let grid = &grids[t];
        let mut reachable = vec![false; grid.len()];
        for &s in &states[t] {
            let (lo, hi) = problem.moves(t, s).reach();
            let start = grid.partition_point(|&g| g < lo - 1e-12);
            let end = grid.partition_point(|&g| g <= hi + 1e-12);
            for flag in &mut reachable[start..end] {
                *flag = true;
            }
        }
        let mut next = Vec::new();
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut gmap = vec![None; grid.len()];
        for (k, &g) in grid.iter().enumerate() {
            if reachable[k] {
                let id = *index.entry(g.to_bits()).or_insert_with(|| {
                    next.push(g);
                    next.len() - 1
                });
                gmap[k] = Some(id);
            }
        }
        let imap = states[t]
            .iter()
            .map(|&s| {
                let v = problem.battery.idle(s, problem.dt);
                *index.entry(v.to_bits()).or_insert_with(|| {
                    next.push(v);
                    next.len() - 1
                })
            })
            .collect();
        states.push(next);
        grid_map.push(gmap);
        idle_map.push(imap);
    }

    // Backward pass.
    let mut value: Vec<f64> = states[horizon].iter().map(|&s| problem.terminal(s)).collect();
    let mut choices: Vec<Vec<Option<Choice>>> = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let grid = &grids[t];
        let next_states = &states[t + 1];
        let next_value = &value;
        let gmap = &grid_map[t];
        let imap = &idle_map[t];
        let solved: Vec<(f64, Option<Choice>)> = states[t]
            .par_iter()
            .enumerate()
            .map(|(i, &s)| {
                let moves = problem.moves(t, s);
                let (idle, _) = moves.idle();
                let j = imap[i];
                let mut best = (idle.cost + next_value[j], idle, next_states[j]);
                let mut choice = best.0.is_finite().then_some(Choice {
                    next: j,
                    transition: idle,
                });
                let (lo, hi) = moves.reach();
                let start = grid.partition_point(|&g| g < lo - 1e-12);
                let end = grid.partition_point(|&g| g <= hi + 1e-12);
                for k in start..end {
                    let Some(j) = gmap[k] else { continue };
                    let Some(tr) = moves.to(grid[k]) else { continue };
                    let total = tr.cost + next_value[j];
                    if better(total, &tr, next_states[j], &best) {
                        best = (total, tr, next_states[j]);
                        choice = Some(Choice {
                            next: j,
                            transition: tr,
                        });
                    }
                }
                (best.0, choice)
            })
            .collect();
        let (v, c): (Vec<f64>, Vec<Option<Choice>>) = solved.into_iter().unzip();
        value = v;
        choices[t] = c;
    }

    if !value[0].is_finite() {
        return None;
    }
    let mut soc = vec![problem.initial_soc];
    let mut decisions = Vec::with_capacity(horizon);
    let mut cost = 0.0;
    let mut i = 0;
    for (t, stage) in choices.iter().enumerate() {
        let choice = stage[i].expect("finite value implies a recorded choice");
        decisions.push(choice.transition.decision);
        cost += choice.transition.cost;
        i = choice.next;
        soc.push(states[t + 1][i]);
    }
    Some(Path {
        soc,
        decisions,
        cost,
    })
}

#[derive(Debug, Clone, Copy)]
struct Label {
    soc: f64,
    cost: f64,
    parent: usize,
    decision: IntervalDecision,
}

impl Problem {
    /// SOC values at each boundary `1..=T` from which the battery can cover
    /// the residual demand of every interval up to some later point exactly
    /// and arrive at `s_min`, or absorb all spare local excess up to some
    /// later point and arrive at `s_max`.
    pub fn anchors(&self) -> Vec<Vec<f64>> {
        let bat = &self.battery;
        let horizon = self.intervals();
        let mut out = vec![vec![bat.s_min, bat.s_max]; horizon];
        for b in 1..horizon {
            let mut low = bat.s_min;
            let mut high = bat.s_max;
            let (mut taking, mut giving) = (true, true);
            for env in &self.stages[b..] {
                match env.role {
                    crate::decision::Role::Taker if taking => {
                        giving = false;
                        low += (env.net_demand - env.pool.max(0.0)).max(0.0) / (self.eta_inv * bat.eta_minus);
                        if low <= bat.s_max {
                            out[b - 1].push(low);
                        }
                    }
                    crate::decision::Role::Giver if giving => {
                        taking = false;
                        high -= bat.eta_plus * ((-env.net_demand).max(0.0) - env.pool.max(0.0)).max(0.0);
                        if high >= bat.s_min {
                            out[b - 1].push(high);
                        }
                    }
                    _ => break,
                }
            }
        }
        out
    }

    /// End-of-interval SOC values worth trying from `soc`: the ends of the
    /// reachable range, `samples` evenly spaced values inside it, the grid,
    /// `extra`, and the targets of a few characteristic decisions (cover the demand
    /// from storage and the pool, store all local excess, buy up to the
    /// cheapest load).
    fn targets(&self, t: usize, soc: f64, grid: &[f64], extra: &[f64], samples: usize) -> Vec<f64> {
        let moves = self.moves(t, soc);
        let (lo, hi) = moves.reach();
        let mut out = Vec::with_capacity(samples + grid.len() + 6);
        if hi < lo {
            return out;
        }
        let n = samples.max(2);
        out.extend((0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64));
        let start = grid.partition_point(|&g| g < lo);
        let end = grid.partition_point(|&g| g <= hi);
        out.extend_from_slice(&grid[start..end]);
        out.extend_from_slice(extra);
        let env = &self.stages[t];
        let bat = &self.battery;
        let (ei, ep, em) = (self.eta_inv, bat.eta_plus, bat.eta_minus);
        let disc = env.offset * env.offset - 3.0 * env.p0;
        let root = if disc > 0.0 {
            ((-2.0 * env.offset + disc.sqrt()) / 3.0).max(0.0)
        } else {
            0.0
        };
        let from_a = |a: f64| {
            if a >= 0.0 {
                soc + ei * ep * a
            } else {
                soc + a / (ei * em)
            }
        };
        match env.role {
            crate::decision::Role::Taker => {
                let d = env.net_demand;
                out.push(from_a(-(d - env.pool.max(0.0)).max(0.0)));
                out.push(from_a(root - d));
                out.push(from_a(root - (d - env.pool.max(0.0)).max(0.0)));
            }
            crate::decision::Role::Giver => {
                let store = (-env.net_demand).max(0.0) - env.pool.max(0.0);
                let local = store.max(0.0);
                out.push(soc + ep * local);
                out.push(soc + ep * local + ei * ep * root);
                out.push(soc + ei * ep * root);
            }
        }
        out.retain(|&x| x >= lo - 1e-12 && x <= hi + 1e-12 && (x - soc).abs() >= super::stage::MIN_MOVE);
        out
    }
}

/// Forward search over exact SOC values. Labels are merged into `buckets`
/// equal SOC cells, each keeping its cheapest arrival; every label expands
/// to the idle move and to [`Problem::targets`]. A heuristic: merging
/// may drop the label that leads to the optimum.
pub(crate) fn forward_search(
    problem: &Problem,
    buckets: usize,
    samples: usize,
    grid: &[f64],
    extra: &[Vec<f64>],
) -> Option<Path> {
    let horizon = problem.intervals();
    let (s_min, s_max) = (problem.battery.s_min, problem.battery.s_max);
    let range = s_max - s_min;
    let buckets = buckets.max(1);
    let cell = |s: f64| {
        if range <= 0.0 {
            0
        } else {
            (((s - s_min) / range * buckets as f64) as usize).min(buckets - 1)
        }
    };
    let mut layers: Vec<Vec<Label>> = Vec::with_capacity(horizon + 1);
    layers.push(vec![Label {
        soc: problem.initial_soc,
        cost: 0.0,
        parent: 0,
        decision: IntervalDecision::default(),
    }]);
    for t in 0..horizon {
        let prev = &layers[t];
        let expanded: Vec<Vec<Label>> = prev
            .par_iter()
            .enumerate()
            .map(|(i, label)| {
                let moves = problem.moves(t, label.soc);
                let (idle, next) = moves.idle();
                let mut out = vec![Label {
                    soc: next,
                    cost: label.cost + idle.cost,
                    parent: i,
                    decision: idle.decision,
                }];
                for target in problem.targets(t, label.soc, grid, &extra[t], samples) {
                    if let Some(tr) = moves.to(target) {
                        out.push(Label {
                            soc: target,
                            cost: label.cost + tr.cost,
                            parent: i,
                            decision: tr.decision,
                        });
                    }
                }
                out
            })
            .collect();
        let mut best: Vec<Option<Label>> = vec![None; buckets];
        for label in expanded.into_iter().flatten() {
            let slot = &mut best[cell(label.soc)];
            let replace = match slot {
                None => true,
                Some(b) => {
                    label.cost < b.cost - TIE_TOL * b.cost.abs().max(1.0)
                        || (label.cost <= b.cost + TIE_TOL * b.cost.abs().max(1.0) && label.soc < b.soc)
                }
            };
            if replace {
                *slot = Some(label);
            }
        }
        layers.push(best.into_iter().flatten().collect());
    }
    let last = &layers[horizon];
    let (mut i, end) = last
        .iter()
        .enumerate()
        .filter(|(_, l)| problem.terminal(l.soc).is_finite())
        .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))?;
    let cost = end.cost;
    let mut soc = vec![0.0; horizon + 1];
    let mut decisions = vec![IntervalDecision::default(); horizon];
    for t in (1..=horizon).rev() {
        let label = layers[t][i];
        soc[t] = label.soc;
        decisions[t - 1] = label.decision;
        i = label.parent;
    }
    soc[0] = problem.initial_soc;
    Some(Path {
        soc,
        decisions,
        cost,
    })
}

/// Local refinement around `start`: repeated exact programmes on bands of
/// `points` SOC values per boundary, starting at half-width `width` and
/// halving whenever a pass brings no improvement.
pub(crate) fn refine(problem: &Problem, start: Path, width: f64, points: usize, passes: usize) -> Path {
    let range = problem.battery.s_max - problem.battery.s_min;
    if range <= 0.0 || problem.intervals() == 0 {
        return start;
    }
    let min_width = range * 1e-11;
    let mut best = start;
    let mut width = width;
    let mut stalls_at_width = 0;
    for _ in 0..passes {
        if width < min_width {
            break;
        }
        let grids: Vec<Vec<f64>> = best.soc[1..]
            .iter()
            .map(|&c| problem.band(c, width, points))
            .collect();
        match optimise(problem, &grids) {
            Some(cand) if cand.cost < best.cost - TIE_TOL * best.cost.abs().max(1.0) => {
                best = cand;
                stalls_at_width += 1;
                if stalls_at_width >= 3 {
                    width *= 0.5;
                    stalls_at_width = 0;
                }
            }
            _ => {
                width *= 0.5;
                stalls_at_width = 0;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::Role;

    fn problem(stages: Vec<StageEnv>) -> Problem {
        Problem {
            battery: BatteryParams::default(),
            eta_inv: 0.95,
            dt: 1.0,
            initial_soc: 3.0,
            stages,
            terminal_floor: None,
        }
    }

    fn taker(d: f64, offset: f64) -> StageEnv {
        StageEnv {
            role: Role::Taker,
            net_demand: d,
            pool: 0.0,
            offset,
            p0: 0.05,
        }
    }

    #[test]
    fn optimum_is_no_worse_than_idling() {
        let p = problem(vec![taker(1.0, -3.0), taker(1.0, 0.5), taker(0.5, 1.0)]);
        let grids = vec![p.uniform_grid(27); 3];
        let best = optimise(&p, &grids).unwrap();
        let idle = p
            .replay(&[
                IntervalDecision::new(0.0, 0.0),
                IntervalDecision::new(0.0, 0.0),
                IntervalDecision::new(0.0, 0.0),
            ])
            .unwrap();
        assert!(best.cost <= idle.cost);
        let replayed = p.replay(&best.decisions).unwrap();
        assert!((replayed.cost - best.cost).abs() < 1e-9);
        for (a, b) in replayed.soc.iter().zip(&best.soc) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn refinement_never_worsens() {
        let p = problem(vec![taker(1.0, -3.0), taker(1.0, 0.5), taker(0.5, 1.0)]);
        let grids = vec![p.uniform_grid(9); 3];
        let coarse = optimise(&p, &grids).unwrap();
        let fine = refine(&p, coarse.clone(), 13.0 / 8.0, 9, 60);
        assert!(fine.cost <= coarse.cost);
        let replayed = p.replay(&fine.decisions).unwrap();
        assert!((replayed.cost - fine.cost).abs() < 1e-9);
    }

    #[test]
    fn unreachable_terminal_floor_has_no_path() {
        let mut p = problem(vec![taker(1.0, 0.0)]);
        p.terminal_floor = Some(13.0);
        assert!(optimise(&p, &[p.uniform_grid(9)]).is_none());
    }

    #[test]
    fn band_contains_centre_and_stays_in_range() {
        let p = problem(vec![]);
        let b = p.band(0.6, 0.4, 5);
        assert!(b.contains(&0.6));
        assert_eq!(b[0], 0.5);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }
}
