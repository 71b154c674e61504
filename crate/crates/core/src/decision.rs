//! Per-interval decision space of a household: net demand, giver/taker
//! roles, feasible `(a, e)` regions, loads and the shared-energy pool.

use serde::{Deserialize, Serialize};

use crate::battery::{BatteryParams, Soc};
use crate::error::DecisionError;

/// Slack used by every feasibility check in the crate.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Giver,
    Taker,
}

/// One household's forecasts and storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdProfile {
    pub id: String,
    /// Appliance demand per interval (kWh).
    pub demand: Vec<f64>,
    /// Forecast renewable output per interval (kWh).
    pub re_output: Vec<f64>,
    pub battery: BatteryParams,
    pub initial_soc: Soc,
}

impl HouseholdProfile {
    pub fn net_demand(&self, eta_inv: f64) -> Vec<f64> {
        self.demand
            .iter()
            .zip(&self.re_output)
            .map(|(&d, &w)| net_demand(d, w, eta_inv))
            .collect()
    }
}

/// Battery decision `a` and sharing decision `e` for one interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalDecision {
    pub a: f64,
    pub e: f64,
}

impl IntervalDecision {
    pub fn new(a: f64, e: f64) -> Self {
        Self { a, e }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    pub decisions: Vec<IntervalDecision>,
}

impl Schedule {
    pub fn new(decisions: Vec<IntervalDecision>) -> Self {
        Self { decisions }
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }
}

/// Shared-energy pool per interval. `offered` is already net of line losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub offered: Vec<f64>,
    pub drawn: Vec<f64>,
    pub available: Vec<f64>,
}

pub fn net_demand(d_bar: f64, w: f64, eta_inv: f64) -> f64 {
    d_bar - eta_inv * w
}

pub fn classify(d: f64) -> Role {
    if d > 0.0 {
        Role::Taker
    } else {
        Role::Giver
    }
}

/// Feasible region of a taking household. `e` is coupled to `a` through
/// the load non-negativity constraint, see [`TakerRegion::e_range`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TakerRegion {
    pub a_min: f64,
    pub a_max: f64,
    pub net_demand: f64,
    pub pool: f64,
}

impl TakerRegion {
    pub fn e_range(&self, a: f64) -> (f64, f64) {
        let lo = (-self.net_demand - a).max(-self.pool.max(0.0)).min(0.0);
        (lo, 0.0)
    }

    pub fn contains(&self, dec: IntervalDecision) -> bool {
        let tol = FEASIBILITY_TOL;
        if dec.a < self.a_min - tol || dec.a > self.a_max + tol {
            return false;
        }
        let (lo, hi) = self.e_range(dec.a);
        dec.e >= lo - tol && dec.e <= hi + tol
    }
}

/// Feasible region of a giving household. `a` is bounded by the charging
/// headroom left after the locally stored excess `-d - e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GiverRegion {
    pub e_min: f64,
    pub e_max: f64,
    soc: f64,
    phi_plus: f64,
    s_max: f64,
    eta_plus: f64,
    eta_inv: f64,
}

impl GiverRegion {
    pub fn local_charge(&self, e: f64) -> f64 {
        (self.e_max - e).max(0.0)
    }

    pub fn a_range(&self, e: f64) -> (f64, f64) {
        let local = self.local_charge(e);
        let rate = self.phi_plus - local;
        let room = (self.s_max - self.soc - self.eta_plus * local) / (self.eta_inv * self.eta_plus);
        (0.0, rate.min(room).max(0.0))
    }

    pub fn contains(&self, dec: IntervalDecision) -> bool {
        let tol = FEASIBILITY_TOL;
        if dec.e < self.e_min - tol || dec.e > self.e_max + tol {
            return false;
        }
        let (lo, hi) = self.a_range(dec.e.clamp(self.e_min, self.e_max));
        dec.a >= lo - tol && dec.a <= hi + tol
    }
}

/// Feasible region of a taker with net demand `d > 0` and `pool` kWh left in
/// the sharing pool.
pub fn taker_bounds(
    s: Soc,
    d: f64,
    pool: f64,
    bat: &BatteryParams,
    eta_inv: f64,
    dt: f64,
) -> TakerRegion {
    let a_min = bat
        .phi_minus(eta_inv, dt)
        .max(bat.discharge_floor(s.0, eta_inv))
        .max(-d)
        .min(0.0);
    let a_max = bat
        .phi_plus(s.0, dt)
        .min(bat.charge_ceiling(s.0, eta_inv))
        .max(0.0);
    TakerRegion {
        a_min,
        a_max,
        net_demand: d,
        pool: pool.max(0.0),
    }
}

/// Feasible region of a giver with net demand `d <= 0`. `min_offer` is the
/// offer needed to keep the pool covering what other households already
/// draw (zero for a standalone query).
pub fn giver_bounds(
    s: Soc,
    d: f64,
    min_offer: f64,
    bat: &BatteryParams,
    eta_inv: f64,
    dt: f64,
) -> GiverRegion {
    let excess = (-d).max(0.0);
    let phi_plus = bat.phi_plus(s.0, dt);
    let storable = phi_plus.min((bat.s_max - s.0).max(0.0) / bat.eta_plus);
    let e_min = 0.0f64.max(min_offer).max(excess - storable).min(excess);
    GiverRegion {
        e_min,
        e_max: excess,
        soc: s.0,
        phi_plus,
        s_max: bat.s_max,
        eta_plus: bat.eta_plus,
        eta_inv,
    }
}

/// Grid load implied by a decision.
pub fn load(role: Role, d: f64, dec: IntervalDecision) -> f64 {
    match role {
        Role::Taker => d + dec.a + dec.e,
        Role::Giver => dec.a,
    }
}

/// Load with the non-negativity check applied.
pub fn checked_load(
    role: Role,
    d: f64,
    dec: IntervalDecision,
    household: usize,
    interval: usize,
) -> Result<f64, DecisionError> {
    let l = load(role, d, dec);
    if l < -FEASIBILITY_TOL {
        return Err(DecisionError::Infeasible {
            household,
            interval,
            reason: format!("negative load {l}"),
        });
    }
    Ok(l.max(0.0))
}

/// Energy entering the pool from giver offers after line losses.
pub fn pool_build(offers: &[f64], eta_bar: f64) -> f64 {
    eta_bar * offers.iter().sum::<f64>()
}

pub fn aggregated_load(loads: &[f64]) -> f64 {
    loads.iter().sum()
}

/// Independent re-check of one interval decision against the constraint
/// set. Returns the SOC at the start of the next interval.
#[allow(clippy::too_many_arguments)]
pub fn check_decision(
    role: Role,
    s: Soc,
    d: f64,
    pool_or_min_offer: f64,
    dec: IntervalDecision,
    bat: &BatteryParams,
    eta_inv: f64,
    dt: f64,
    household: usize,
    interval: usize,
) -> Result<Soc, DecisionError> {
    let fail = |reason: String| DecisionError::Infeasible {
        household,
        interval,
        reason,
    };
    match role {
        Role::Taker => {
            let region = taker_bounds(s, d, pool_or_min_offer, bat, eta_inv, dt);
            if !region.contains(dec) {
                return Err(fail(format!(
                    "taker decision a={}, e={} outside a in [{}, {}], e in {:?}",
                    dec.a,
                    dec.e,
                    region.a_min,
                    region.a_max,
                    region.e_range(dec.a)
                )));
            }
            Ok(bat.soc_next_taker(s, dec.a, eta_inv, dt)?)
        }
        Role::Giver => {
            let region = giver_bounds(s, d, pool_or_min_offer, bat, eta_inv, dt);
            if !region.contains(dec) {
                return Err(fail(format!(
                    "giver decision a={}, e={} outside e in [{}, {}], a in {:?}",
                    dec.a,
                    dec.e,
                    region.e_min,
                    region.e_max,
                    region.a_range(dec.e)
                )));
            }
            let local = region.local_charge(dec.e);
            let a = dec.a.max(0.0);
            Ok(bat.soc_next_giver(s, a, local, eta_inv, dt)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossless_bat() -> BatteryParams {
        BatteryParams {
            s_min: 0.0,
            s_max: 10.0,
            rho_plus: 2.0,
            rho_minus: -2.0,
            rho_bar: -0.001,
            eta_plus: 1.0,
            eta_minus: 1.0,
            gamma_2: 1.0,
        }
    }

    #[test]
    fn net_demand_examples() {
        assert!((net_demand(2.0, 1.0, 0.95) - 1.05).abs() < 1e-12);
        assert_eq!(net_demand(1.7, 0.0, 0.95), 1.7);
        assert_eq!(net_demand(0.95, 1.0, 0.95), 0.0);
    }

    #[test]
    fn classification() {
        assert_eq!(classify(1.05), Role::Taker);
        assert_eq!(classify(0.0), Role::Giver);
        assert_eq!(classify(-0.5), Role::Giver);
    }

    #[test]
    fn taker_at_floor_cannot_discharge() {
        let bat = BatteryParams::default();
        let r = taker_bounds(Soc(bat.s_min), 1.0, 0.0, &bat, 0.95, 1.0);
        assert_eq!(r.a_min, 0.0);
        let expected = bat
            .phi_plus(bat.s_min, 1.0)
            .min((bat.s_max - bat.s_min) / (0.95 * 0.95));
        assert_eq!(r.a_max, expected);
    }

    #[test]
    fn taker_sharing_ranges() {
        let bat = lossless_bat();
        let r = taker_bounds(Soc(5.0), 1.0, 0.0, &bat, 1.0, 1.0);
        assert_eq!(r.e_range(-0.5), (0.0, 0.0));
        let r = taker_bounds(Soc(5.0), 1.0, 2.0, &bat, 1.0, 1.0);
        assert_eq!(r.e_range(0.0), (-1.0, 0.0));
        assert!(r.contains(IntervalDecision::new(0.0, -1.0)));
        assert!(!r.contains(IntervalDecision::new(0.0, -1.5)));
    }

    #[test]
    fn giver_share_all_leaves_full_headroom() {
        let bat = lossless_bat();
        let r = giver_bounds(Soc(2.0), -1.0, 0.0, &bat, 1.0, 1.0);
        assert_eq!(r.a_range(1.0), (0.0, 2.0));
    }

    #[test]
    fn giver_local_charge_consumes_headroom() {
        let bat = lossless_bat();
        let r = giver_bounds(Soc(2.0), -1.0, 0.0, &bat, 1.0, 1.0);
        assert_eq!(r.a_range(0.0), (0.0, 1.0));
    }

    #[test]
    fn giver_with_zero_excess_shares_nothing() {
        let bat = lossless_bat();
        let r = giver_bounds(Soc(2.0), 0.0, 0.0, &bat, 1.0, 1.0);
        assert_eq!((r.e_min, r.e_max), (0.0, 0.0));
        assert_eq!(r.a_range(0.0), (0.0, 2.0));
    }

    #[test]
    fn giver_must_share_what_cannot_be_stored() {
        let bat = lossless_bat();
        let r = giver_bounds(Soc(2.0), -3.0, 0.0, &bat, 1.0, 1.0);
        assert!((r.e_min - 1.0).abs() < 1e-12);
        let full = giver_bounds(Soc(10.0), -3.0, 0.0, &bat, 1.0, 1.0);
        assert_eq!(full.e_min, 3.0);
    }

    #[test]
    fn load_examples() {
        let l = load(Role::Taker, 1.05, IntervalDecision::new(0.5, -0.8));
        assert!((l - 0.75).abs() < 1e-12);
        assert_eq!(load(Role::Giver, -2.0, IntervalDecision::new(0.3, 1.0)), 0.3);
        assert_eq!(load(Role::Taker, 1.0, IntervalDecision::new(-1.0, 0.0)), 0.0);
        assert!(checked_load(Role::Taker, 1.0, IntervalDecision::new(-1.0, -0.5), 0, 0).is_err());
    }

    #[test]
    fn pool_and_aggregate() {
        assert!((pool_build(&[1.0, 0.5], 0.9) - 1.35).abs() < 1e-12);
        assert_eq!(pool_build(&[], 0.9), 0.0);
        assert_eq!(pool_build(&[2.0], 1.0), 2.0);
        assert!((aggregated_load(&[0.75, 0.3, 0.0, 1.2]) - 2.25).abs() < 1e-12);
        assert_eq!(aggregated_load(&[0.0, 0.0]), 0.0);
        assert_eq!(aggregated_load(&[0.4]), 0.4);
    }
}
