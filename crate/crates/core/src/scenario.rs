//! Community scenario: households, tariff and system parameters, plus the
//! TOML document format they are read from and written to.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::battery::{BatteryParams, Soc};
use crate::billing::TariffParams;
use crate::decision::{classify, HouseholdProfile, Role};
use crate::error::{ScenarioError, Violation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub households: Vec<HouseholdProfile>,
    pub tariff: TariffParams,
    /// DC/AC inverter efficiency.
    pub eta_inv: f64,
    /// Line-loss factor applied to shared energy.
    pub eta_bar: f64,
    /// Number of intervals in the day.
    pub intervals: usize,
}

impl Scenario {
    /// Interval length in hours.
    pub fn dt(&self) -> f64 {
        24.0 / self.intervals as f64
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    pub fn net_demand(&self, m: usize) -> Vec<f64> {
        self.households[m].net_demand(self.eta_inv)
    }

    pub fn roles(&self, m: usize) -> Vec<Role> {
        self.net_demand(m).into_iter().map(classify).collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let problems = self.violations(&NoSpans);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(problems))
        }
    }

    fn violations(&self, spans: &dyn SpanLookup) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: String, message: String| {
            let line = spans.line(&path);
            out.push(Violation { path, line, message });
        };
        let t = self.intervals;
        if t == 0 || 1440 % t != 0 {
            push(
                "intervals".into(),
                format!("{t} does not split the day into whole-minute intervals"),
            );
        }
        for (name, eta) in [("eta_inv", self.eta_inv), ("eta_bar", self.eta_bar)] {
            if !(eta > 0.0 && eta <= 1.0) {
                push(name.into(), format!("{eta} must lie in (0, 1]"));
            }
        }
        if !(self.tariff.p0 > 0.0 && self.tariff.p0.is_finite()) {
            push("tariff.p0".into(), format!("{} must be > 0", self.tariff.p0));
        }
        check_series(&mut push, "tariff.generation", &self.tariff.generation, t);
        if self.households.is_empty() {
            push("households".into(), "at least one household is required".into());
        }
        let mut seen = HashSet::new();
        for (i, h) in self.households.iter().enumerate() {
            let base = format!("households[{i}]");
            if !seen.insert(h.id.as_str()) {
                push(format!("{base}.id"), format!("duplicate household id {:?}", h.id));
            }
            check_series(&mut push, &format!("{base}.demand"), &h.demand, t);
            check_series(&mut push, &format!("{base}.re_output"), &h.re_output, t);
            let battery_ok = match h.battery.validate() {
                Ok(()) => true,
                Err(e) => {
                    push(format!("{base}.battery"), e.to_string());
                    false
                }
            };
            let s = h.initial_soc.0;
            if battery_ok && !(s >= h.battery.s_min && s <= h.battery.s_max) {
                push(
                    format!("{base}.initial_soc"),
                    format!(
                        "{s} outside [s_min, s_max] = [{}, {}]",
                        h.battery.s_min, h.battery.s_max
                    ),
                );
            }
        }
        out
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        let doc = ScenarioDoc {
            schema_version: SCHEMA_VERSION,
            intervals: self.intervals,
            eta_inv: self.eta_inv,
            eta_bar: self.eta_bar,
            tariff: self.tariff.clone(),
            households: self
                .households
                .iter()
                .map(|h| HouseholdDoc {
                    id: h.id.clone(),
                    initial_soc: h.initial_soc.0,
                    demand: h.demand.clone(),
                    re_output: h.re_output.clone(),
                    battery: h.battery,
                })
                .collect(),
        };
        let body = toml::to_string(&doc).expect("scenario document always serializes");
        format!("# units: energy kWh, time h, cost abstract units\n{body}")
    }
}

fn check_series(push: &mut impl FnMut(String, String), path: &str, series: &[f64], t: usize) {
    if series.len() != t {
        push(
            path.to_string(),
            format!("has {} entries but intervals = {t}", series.len()),
        );
    }
    if let Some((k, v)) = series
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        push(format!("{path}[{k}]"), format!("{v} must be finite and >= 0"));
    }
}

trait SpanLookup {
    fn line(&self, path: &str) -> Option<usize>;
}

struct NoSpans;

impl SpanLookup for NoSpans {
    fn line(&self, _: &str) -> Option<usize> {
        None
    }
}

struct SourceSpans {
    entries: Vec<(String, usize)>,
}

impl SpanLookup for SourceSpans {
    fn line(&self, path: &str) -> Option<usize> {
        // Element paths like `x.demand[3]` fall back to their series.
        let trimmed = match path.rfind('[') {
            Some(idx) if path.ends_with(']') && !path[..idx].ends_with("households") => &path[..idx],
            _ => path,
        };
        self.entries
            .iter()
            .find(|(p, _)| p == path || p == trimmed)
            .map(|(_, line)| *line)
    }
}

#[derive(Serialize)]
struct ScenarioDoc {
    schema_version: u32,
    intervals: usize,
    eta_inv: f64,
    eta_bar: f64,
    tariff: TariffParams,
    households: Vec<HouseholdDoc>,
}

#[derive(Serialize)]
struct HouseholdDoc {
    id: String,
    initial_soc: f64,
    demand: Vec<f64>,
    re_output: Vec<f64>,
    battery: BatteryParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: Spanned<u32>,
    intervals: Spanned<usize>,
    eta_inv: Spanned<f64>,
    eta_bar: Spanned<f64>,
    tariff: RawTariff,
    #[serde(default)]
    households: Vec<RawHousehold>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTariff {
    p0: Spanned<f64>,
    generation: Spanned<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHousehold {
    id: Spanned<String>,
    initial_soc: Spanned<f64>,
    demand: Spanned<Vec<f64>>,
    re_output: Spanned<Vec<f64>>,
    battery: Spanned<BatteryParams>,
}

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario document. Every violation is reported,
/// each with its field path and source line.
pub fn parse_scenario(source: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let mut entries = Vec::new();
    let mut note = |path: String, span: std::ops::Range<usize>| {
        entries.push((path, line_of(source, span.start)));
    };
    note("schema_version".into(), raw.schema_version.span());
    note("intervals".into(), raw.intervals.span());
    note("eta_inv".into(), raw.eta_inv.span());
    note("eta_bar".into(), raw.eta_bar.span());
    note("tariff.p0".into(), raw.tariff.p0.span());
    note("tariff.generation".into(), raw.tariff.generation.span());
    for (i, h) in raw.households.iter().enumerate() {
        let base = format!("households[{i}]");
        note(format!("{base}.id"), h.id.span());
        note(format!("{base}.initial_soc"), h.initial_soc.span());
        note(format!("{base}.demand"), h.demand.span());
        note(format!("{base}.re_output"), h.re_output.span());
        note(format!("{base}.battery"), h.battery.span());
    }
    let spans = SourceSpans { entries };

    let mut problems = Vec::new();
    if *raw.schema_version.get_ref() != SCHEMA_VERSION {
        problems.push(Violation {
            path: "schema_version".into(),
            line: spans.line("schema_version"),
            message: format!(
                "unsupported version {}, expected {SCHEMA_VERSION}",
                raw.schema_version.get_ref()
            ),
        });
    }
    let scenario = Scenario {
        intervals: raw.intervals.into_inner(),
        eta_inv: raw.eta_inv.into_inner(),
        eta_bar: raw.eta_bar.into_inner(),
        tariff: TariffParams {
            p0: raw.tariff.p0.into_inner(),
            generation: raw.tariff.generation.into_inner(),
        },
        households: raw
            .households
            .into_iter()
            .map(|h| HouseholdProfile {
                id: h.id.into_inner(),
                demand: h.demand.into_inner(),
                re_output: h.re_output.into_inner(),
                battery: h.battery.into_inner(),
                initial_soc: Soc(h.initial_soc.into_inner()),
            })
            .collect(),
    };
    problems.extend(scenario.violations(&spans));
    if problems.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Validation(problems))
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let source = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&source)
}
