//! Lithium-ion battery physics: charge/discharge limits per interval,
//! self-discharge and the state-of-charge transitions used by both
//! household roles.
//!
//! Charging follows a constant-current (CC) stage at rate `rho_plus` up to
//! the transition SOC `s_tr = s_max - rho_plus * gamma_2`, then a
//! constant-voltage (CV) stage in which the SOC saturates exponentially
//! towards `s_max` with time constant `gamma_2`. The slope of the CV curve at
//! `s_tr` equals `rho_plus`, so the curve is smooth at the transition.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::BatteryError;

/// Slack allowed when checking that a transition stays inside
/// `[s_min, s_max]`. Anything within it is clamped onto the bound.
pub const SOC_TOLERANCE: f64 = 1e-9;

/// State of charge in kWh.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Soc(pub f64);

impl Soc {
    pub fn kwh(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Soc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} kWh", self.0)
    }
}

/// Physical description of one household battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Minimum state of charge (kWh).
    pub s_min: f64,
    /// Maximum capacity (kWh).
    pub s_max: f64,
    /// CC-stage charging rate (kWh/h), positive.
    pub rho_plus: f64,
    /// Discharging rate (kWh/h), negative.
    pub rho_minus: f64,
    /// Self-discharge rate per hour, negative.
    pub rho_bar: f64,
    /// Charging efficiency.
    pub eta_plus: f64,
    /// Discharging efficiency.
    pub eta_minus: f64,
    /// CV-stage time constant (h).
    pub gamma_2: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            s_min: 0.5,
            s_max: 13.5,
            rho_plus: 3.3,
            rho_minus: -3.3,
            rho_bar: -0.001,
            eta_plus: 0.95,
            eta_minus: 0.95,
            gamma_2: 1.0,
        }
    }
}

impl BatteryParams {
    /// A battery with no usable capacity. Every decision except idling is
    /// infeasible and the SOC stays at `level`.
    pub fn degenerate(level: f64) -> Self {
        Self {
            s_min: level,
            s_max: level,
            ..Self::default()
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.s_min == self.s_max
    }

    /// SOC at which charging switches from the CC to the CV stage.
    pub fn transition_soc(&self) -> f64 {
        self.s_max - self.rho_plus * self.gamma_2
    }

    /// Implied CV curve constant: the CV stage is
    /// `s(t) = s_max - s_max * gamma_1 * exp(-t / gamma_2)`, anchored so that
    /// it passes through `s_tr` at the start of the stage.
    pub fn gamma_1(&self) -> f64 {
        if self.s_max == 0.0 {
            0.0
        } else {
            (self.s_max - self.transition_soc()) / self.s_max
        }
    }

    /// Checks every parameter invariant, collecting all violations.
    pub fn validate(&self) -> Result<(), BatteryError> {
        let mut problems = Vec::new();
        let finite = [
            self.s_min,
            self.s_max,
            self.rho_plus,
            self.rho_minus,
            self.rho_bar,
            self.eta_plus,
            self.eta_minus,
            self.gamma_2,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(BatteryError::InvalidParams(vec![
                "all battery parameters must be finite".into(),
            ]));
        }
        if self.s_min < 0.0 {
            problems.push(format!("s_min = {} must be >= 0", self.s_min));
        }
        if self.s_min > self.s_max {
            problems.push(format!(
                "s_min = {} must not exceed s_max = {}",
                self.s_min, self.s_max
            ));
        }
        if self.rho_plus <= 0.0 {
            problems.push(format!("rho_plus = {} must be > 0", self.rho_plus));
        }
        if self.rho_minus >= 0.0 {
            problems.push(format!("rho_minus = {} must be < 0", self.rho_minus));
        }
        if self.rho_bar >= 0.0 || self.rho_bar <= -1.0 {
            problems.push(format!("rho_bar = {} must lie in (-1, 0)", self.rho_bar));
        }
        for (name, eta) in [("eta_plus", self.eta_plus), ("eta_minus", self.eta_minus)] {
            if !(eta > 0.0 && eta <= 1.0) {
                problems.push(format!("{name} = {eta} must lie in (0, 1]"));
            }
        }
        if self.gamma_2 <= 0.0 {
            problems.push(format!("gamma_2 = {} must be > 0", self.gamma_2));
        }
        if problems.is_empty() && !self.is_degenerate() {
            let s_tr = self.transition_soc();
            if !(s_tr >= self.s_min && s_tr < self.s_max) {
                problems.push(format!(
                    "transition SOC s_max - rho_plus*gamma_2 = {s_tr} must lie in [s_min, s_max) = [{}, {})",
                    self.s_min, self.s_max
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(BatteryError::InvalidParams(problems))
        }
    }

    /// Multiplicative SOC retention over one idle interval.
    pub fn retention(&self, dt: f64) -> f64 {
        (1.0 + self.rho_bar).powf(dt)
    }

    /// SOC after an idle interval. Self-discharge never takes the battery
    /// below `s_min`.
    pub fn idle(&self, s: f64, dt: f64) -> f64 {
        (s * self.retention(dt)).max(self.s_min)
    }

    /// Largest grid-side charge decision admissible in one interval starting
    /// from `s` (`phi_plus`).
    ///
    /// Below `s_tr` the battery charges at `rho_plus`; if the CC stage would
    /// cross `s_tr` within the interval, the remaining time is spent in the
    /// CV stage. From `s_tr` on, the increment is
    /// `(s_max - s) * (1 - exp(-dt / gamma_2))`.
    pub fn phi_plus(&self, s: f64, dt: f64) -> f64 {
        if self.is_degenerate() || s >= self.s_max {
            return 0.0;
        }
        let s_tr = self.transition_soc();
        let cv = |from: f64, time: f64| (self.s_max - from) * (1.0 - (-time / self.gamma_2).exp());
        if s >= s_tr {
            return cv(s, dt).max(0.0);
        }
        let time_to_tr = (s_tr - s) / self.rho_plus;
        if time_to_tr >= dt {
            self.rho_plus * dt
        } else {
            (s_tr - s) + cv(s_tr, dt - time_to_tr)
        }
    }

    /// Most negative usable-energy decision per interval (`phi_minus`). The
    /// `s_min` floor is enforced separately by the feasibility layer.
    pub fn phi_minus(&self, eta_inv: f64, dt: f64) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        self.rho_minus * dt * eta_inv * self.eta_minus
    }

    /// Most negative decision that keeps the SOC at or above `s_min`.
    pub fn discharge_floor(&self, s: f64, eta_inv: f64) -> f64 {
        -(s - self.s_min).max(0.0) * eta_inv * self.eta_minus
    }

    /// Largest grid-side charge that cannot overflow `s_max`.
    pub fn charge_ceiling(&self, s: f64, eta_inv: f64) -> f64 {
        (self.s_max - s).max(0.0) / (eta_inv * self.eta_plus)
    }

    fn bounded(&self, s: f64) -> Result<Soc, BatteryError> {
        if s < self.s_min - SOC_TOLERANCE || s > self.s_max + SOC_TOLERANCE {
            Err(BatteryError::InfeasibleAction {
                soc: s,
                s_min: self.s_min,
                s_max: self.s_max,
            })
        } else {
            Ok(Soc(s.clamp(self.s_min, self.s_max)))
        }
    }

    /// SOC update of a taking household for battery decision `a`.
    pub fn soc_next_taker(
        &self,
        s: Soc,
        a: f64,
        eta_inv: f64,
        dt: f64,
    ) -> Result<Soc, BatteryError> {
        let next = if a > 0.0 {
            s.0 + eta_inv * self.eta_plus * a
        } else if a < 0.0 {
            s.0 + a / (eta_inv * self.eta_minus)
        } else {
            self.idle(s.0, dt)
        };
        self.bounded(next)
    }

    /// SOC update of a giving household: grid charge `a` passes the
    /// inverter, locally produced excess `local_charge` does not.
    pub fn soc_next_giver(
        &self,
        s: Soc,
        a: f64,
        local_charge: f64,
        eta_inv: f64,
        dt: f64,
    ) -> Result<Soc, BatteryError> {
        let next = if a + local_charge == 0.0 {
            self.idle(s.0, dt)
        } else {
            s.0 + eta_inv * self.eta_plus * a + self.eta_plus * local_charge
        };
        self.bounded(next)
    }
}
