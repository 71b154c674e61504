//! Day-ahead battery scheduling and energy sharing in a prosumer community,
//! played as a non-cooperative game against a quadratic tariff.

pub mod battery;
pub mod billing;
pub mod decision;
pub mod error;
pub mod game;
pub mod scenario;
pub mod report;
pub mod synth;

pub use battery::{BatteryParams, Soc};
pub use billing::TariffParams;
pub use decision::{HouseholdProfile, IntervalDecision, PoolState, Role, Schedule};
pub use error::{BatteryError, BillingError, DecisionError, GameError, ScenarioError, Violation};
pub use game::{EquilibriumResult, GameConfig, Profile};
pub use scenario::{load_scenario, parse_scenario, Scenario};
