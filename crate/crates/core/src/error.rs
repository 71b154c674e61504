use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatteryError {
    #[error("invalid battery parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
    #[error("SOC {soc} leaves [{s_min}, {s_max}]")]
    InfeasibleAction { soc: f64, s_min: f64, s_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecisionError {
    #[error("infeasible decision for household {household} at interval {interval}: {reason}")]
    Infeasible {
        household: usize,
        interval: usize,
        reason: String,
    },
    #[error("pool overdrawn at interval {interval}: drawn {drawn} > available {available}")]
    PoolOverdrawn {
        interval: usize,
        drawn: f64,
        available: f64,
    },
    #[error(transparent)]
    Battery(#[from] BatteryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BillingError {
    #[error("series length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// One failed scenario invariant, located by field path and (when known)
/// source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "{} (line {}): {}", self.path, line, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("scenario failed validation:\n{}", list_violations(.0))]
    Validation(Vec<Violation>),
}

fn list_violations(list: &[Violation]) -> String {
    list.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid game config: {0}")]
    InvalidConfig(String),
    #[error("household {household}: terminal SOC floor {floor} is unreachable")]
    TerminalSocUnreachable { household: usize, floor: f64 },
    #[error("schedule count {got} does not match household count {expected}")]
    ScheduleCount { got: usize, expected: usize },
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Billing(#[from] BillingError),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read result document: {0}")]
    Decode(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Game(#[from] GameError),
}
