//! Exact single-interval transitions. Given the SOC at the start and the
//! SOC to reach at the end of an interval, the battery decision is fixed by
//! the SOC update; what remains (the taker's pool draw, or the giver's split
//! between grid and local charging) only moves the grid load, and the
//! interval cost `l * ((l + c)^2 + p0)` is minimised over it in closed form.

use crate::battery::BatteryParams;
use crate::decision::{IntervalDecision, Role};

/// Tolerance for rate and capacity bounds inside the optimiser.
pub(crate) const BOUND_TOL: f64 = 1e-12;
/// SOC moves smaller than this are not active transitions.
pub(crate) const MIN_MOVE: f64 = 1e-12;

/// What a household faces in one interval with everyone else's schedule fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StageEnv {
    pub role: Role,
    pub net_demand: f64,
    /// Taker: pool energy left after the other takers' draws.
    /// Giver: minimum offer that keeps the pool covering existing draws.
    pub pool: f64,
    /// Load of all other households minus utility generation.
    pub offset: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Transition {
    pub decision: IntervalDecision,
    pub load: f64,
    pub cost: f64,
}

/// Minimises `l * ((l + c)^2 + p0)` over `[lo, hi]`. Near-ties go to the
/// upper end when `prefer_high`, otherwise to the lower end.
pub(crate) fn minimise_cost(c: f64, p0: f64, lo: f64, hi: f64, prefer_high: bool) -> (f64, f64) {
    let f = |l: f64| l * ((l + c) * (l + c) + p0);
    let hi = hi.max(lo);
    let mut best = if prefer_high { (hi, f(hi)) } else { (lo, f(lo)) };
    let mut consider = |l: f64| {
        let v = f(l);
        if v < best.1 - 1e-15 * best.1.abs().max(1.0) {
            best = (l, v);
        }
    };
    consider(if prefer_high { lo } else { hi });
    // Local minimum of the cubic: larger root of 3l^2 + 4cl + c^2 + p0.
    let disc = c * c - 3.0 * p0;
    if disc > 0.0 {
        let root = (-2.0 * c + disc.sqrt()) / 3.0;
        if root > lo && root < hi {
            consider(root);
        }
    }
    best
}

/// Feasible moves of one household from one SOC in one interval.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Moves<'a> {
    env: &'a StageEnv,
    bat: &'a BatteryParams,
    eta_inv: f64,
    dt: f64,
    soc: f64,
    phi_plus: f64,
    a_min: f64,
    a_max: f64,
    /// Giver: most local excess that may go into the battery.
    local_max: f64,
}

impl<'a> Moves<'a> {
    pub fn new(env: &'a StageEnv, bat: &'a BatteryParams, eta_inv: f64, dt: f64, soc: f64) -> Self {
        let phi_plus = bat.phi_plus(soc, dt);
        let (a_min, a_max, local_max) = match env.role {
            Role::Taker => {
                let a_min = bat
                    .phi_minus(eta_inv, dt)
                    .max(bat.discharge_floor(soc, eta_inv))
                    .max(-env.net_demand)
                    .min(0.0);
                let a_max = phi_plus.min(bat.charge_ceiling(soc, eta_inv)).max(0.0);
                (a_min, a_max, 0.0)
            }
            Role::Giver => {
                let excess = (-env.net_demand).max(0.0);
                let storable = phi_plus.min((bat.s_max - soc).max(0.0) / bat.eta_plus);
                let e_min = env.pool.max(0.0).max(excess - storable).min(excess);
                (0.0, 0.0, (excess - e_min).max(0.0))
            }
        };
        Self {
            env,
            bat,
            eta_inv,
            dt,
            soc,
            phi_plus,
            a_min,
            a_max,
            local_max,
        }
    }

    /// Range of end-of-interval SOC reachable by active moves.
    pub fn reach(&self) -> (f64, f64) {
        let ep = self.bat.eta_plus;
        match self.env.role {
            Role::Taker => (
                self.soc + self.a_min / (self.eta_inv * self.bat.eta_minus),
                (self.soc + self.eta_inv * ep * self.a_max).min(self.bat.s_max),
            ),
            Role::Giver => {
                let local = self.local_max.min(self.phi_plus);
                let gain = ep * local + self.eta_inv * ep * (self.phi_plus - local).max(0.0);
                (self.soc, (self.soc + gain).min(self.bat.s_max))
            }
        }
    }

    /// Doing nothing with the battery: it self-discharges.
    pub fn idle(&self) -> (Transition, f64) {
        let next = self.bat.idle(self.soc, self.dt);
        let t = match self.env.role {
            Role::Taker => self.taker_with(0.0),
            Role::Giver => Transition {
                decision: IntervalDecision::new(0.0, (-self.env.net_demand).max(0.0)),
                load: 0.0,
                cost: 0.0,
            },
        };
        (t, next)
    }

    fn taker_with(&self, a: f64) -> Transition {
        let d = self.env.net_demand;
        let hi = (d + a).max(0.0);
        let lo = (hi - self.env.pool.max(0.0)).max(0.0);
        let (load, cost) = minimise_cost(self.env.offset, self.env.p0, lo, hi, true);
        let e = (load - d - a).min(0.0);
        Transition {
            decision: IntervalDecision::new(a, e),
            load,
            cost,
        }
    }

    /// Cheapest way to end the interval at exactly `next` by an active
    /// battery decision, if one exists.
    pub fn to(&self, next: f64) -> Option<Transition> {
        let delta = next - self.soc;
        if delta.abs() < MIN_MOVE {
            return None;
        }
        let bat = self.bat;
        let ei = self.eta_inv;
        let ep = bat.eta_plus;
        match self.env.role {
            Role::Taker => {
                let a = if delta > 0.0 {
                    delta / (ei * ep)
                } else {
                    delta * ei * bat.eta_minus
                };
                if a > self.a_max + BOUND_TOL || a < self.a_min - BOUND_TOL {
                    return None;
                }
                Some(self.taker_with(a.clamp(self.a_min, self.a_max)))
            }
            Role::Giver => {
                if delta < 0.0 || next > bat.s_max + BOUND_TOL {
                    return None;
                }
                let excess = (-self.env.net_demand).max(0.0);
                let local_hi = self.local_max.min(delta / ep);
                // Grid charge plus local charge must stay within phi_plus.
                let local_lo = if ei < 1.0 {
                    ((delta / (ei * ep) - self.phi_plus) / (1.0 / ei - 1.0)).max(0.0)
                } else if delta / ep > self.phi_plus + BOUND_TOL {
                    return None;
                } else {
                    0.0
                };
                if local_lo > local_hi + BOUND_TOL {
                    return None;
                }
                let local_lo = local_lo.min(local_hi);
                let grid = |local: f64| ((delta - ep * local) / (ei * ep)).max(0.0);
                let (a, cost) = minimise_cost(
                    self.env.offset,
                    self.env.p0,
                    grid(local_hi),
                    grid(local_lo),
                    false,
                );
                let local = ((delta - ei * ep * a) / ep).clamp(0.0, self.local_max);
                Some(Transition {
                    decision: IntervalDecision::new(a, excess - local),
                    load: a,
                    cost,
                })
            }
        }
    }
}
