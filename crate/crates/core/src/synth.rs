//! Synthetic day-ahead forecasts: demand with morning and evening peaks,
//! solar humps or wind-like noise for renewables, and a utility
//! generation curve with a midday hump.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::battery::{BatteryParams, Soc};
use crate::billing::TariffParams;
use crate::decision::HouseholdProfile;
use crate::scenario::Scenario;

/// Shape parameters. Powers are in kW and converted to kWh per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Multiplies every demand component; 0 gives an all-zero demand.
    pub demand_amplitude: f64,
    pub base_load_kw: f64,
    pub morning_peak_kw: f64,
    pub evening_peak_kw: f64,
    /// Peak of a sunny-day solar hump.
    pub solar_peak_kw: f64,
    /// Mean output of a wind-like series.
    pub wind_mean_kw: f64,
    /// Households (by index) with wind-like instead of solar renewables.
    pub wind_households: Vec<usize>,
    /// Hour of the utility generation peak.
    pub generation_peak_hour: f64,
    pub generation_width_hours: f64,
    /// Share of generation that is flat over the day.
    pub generation_floor: f64,
    /// `sum g = generation_scale * sum max(d, 0)`.
    pub generation_scale: f64,
    pub p0: f64,
    pub eta_inv: f64,
    pub eta_bar: f64,
    pub battery: BatteryParams,
    /// Initial SOC as a fraction of `[s_min, s_max]`.
    pub initial_soc_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            demand_amplitude: 1.0,
            base_load_kw: 0.3,
            morning_peak_kw: 1.2,
            evening_peak_kw: 1.8,
            solar_peak_kw: 2.5,
            wind_mean_kw: 0.6,
            wind_households: Vec::new(),
            generation_peak_hour: 13.0,
            generation_width_hours: 3.5,
            generation_floor: 0.2,
            generation_scale: 1.0,
            p0: 0.05,
            eta_inv: 0.95,
            eta_bar: 0.95,
            battery: BatteryParams::default(),
            initial_soc_fraction: 0.25,
        }
    }
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let z = (hour - centre) / width;
    (-0.5 * z * z).exp()
}

/// A reproducible scenario of `households` households over `intervals`
/// intervals. Identical arguments give identical scenarios.
pub fn synth_scenario(households: usize, intervals: usize, seed: u64, params: &SynthParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 24.0 / intervals as f64;
    let hours: Vec<f64> = (0..intervals).map(|t| (t as f64 + 0.5) * dt).collect();
    let amp = params.demand_amplitude;
    let bat = params.battery;
    let initial = bat.s_min + (bat.s_max - bat.s_min) * params.initial_soc_fraction.clamp(0.0, 1.0);

    let mut profiles = Vec::with_capacity(households);
    for m in 0..households {
        let scale = rng.random_range(0.8..1.2);
        let morning = rng.random_range(6.5..8.5);
        let evening = rng.random_range(18.0..20.5);
        let demand: Vec<f64> = hours
            .iter()
            .map(|&h| {
                let kw = params.base_load_kw
                    + params.morning_peak_kw * bump(h, morning, 1.0)
                    + params.evening_peak_kw * bump(h, evening, 1.5);
                let noise = 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
                (amp * scale * kw * noise * dt).max(0.0)
            })
            .collect();
        let re_output: Vec<f64> = if params.wind_households.contains(&m) {
            let mut level = params.wind_mean_kw;
            hours
                .iter()
                .map(|_| {
                    level += 0.5 * (params.wind_mean_kw - level)
                        + params.wind_mean_kw * (rng.random::<f64>() - 0.5);
                    level = level.max(0.0);
                    level * dt
                })
                .collect()
        } else {
            let peak = params.solar_peak_kw * rng.random_range(0.7..1.1);
            hours
                .iter()
                .map(|&h| {
                    let s = (PI * (h - 6.0) / 12.0).sin();
                    if (6.0..18.0).contains(&h) {
                        peak * s.max(0.0) * dt
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        profiles.push(HouseholdProfile {
            id: format!("h{}", m + 1),
            demand,
            re_output,
            battery: bat,
            initial_soc: Soc(initial),
        });
    }

    let positive: f64 = profiles
        .iter()
        .flat_map(|p| p.net_demand(params.eta_inv))
        .map(|d| d.max(0.0))
        .sum();
    let shape: Vec<f64> = hours
        .iter()
        .map(|&h| {
            params.generation_floor
                + (1.0 - params.generation_floor)
                    * bump(h, params.generation_peak_hour, params.generation_width_hours)
        })
        .collect();
    let shape_total: f64 = shape.iter().sum();
    let factor = if shape_total > 0.0 {
        params.generation_scale * positive / shape_total
    } else {
        0.0
    };
    let generation = shape.iter().map(|s| s * factor).collect();

    Scenario {
        households: profiles,
        tariff: TariffParams {
            p0: params.p0,
            generation,
        },
        eta_inv: params.eta_inv,
        eta_bar: params.eta_bar,
        intervals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenario() {
        let p = SynthParams::default();
        let a = synth_scenario(4, 24, 7, &p);
        let b = synth_scenario(4, 24, 7, &p);
        assert_eq!(a.to_toml(), b.to_toml());
        assert!(a.validate().is_ok());
        assert_ne!(a, synth_scenario(4, 24, 8, &p));
    }

    #[test]
    fn generation_matches_positive_net_demand() {
        let s = synth_scenario(4, 24, 7, &SynthParams::default());
        let g: f64 = s.tariff.generation.iter().sum();
        let d: f64 = (0..4)
            .flat_map(|m| s.net_demand(m))
            .map(|d| d.max(0.0))
            .sum();
        assert!((g - d).abs() < 1e-9 * d);
    }

    #[test]
    fn zero_amplitude_gives_zero_generation() {
        let p = SynthParams {
            demand_amplitude: 0.0,
            ..SynthParams::default()
        };
        let s = synth_scenario(1, 24, 1, &p);
        assert!(s.tariff.generation.iter().all(|&g| g == 0.0));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn wind_households_are_noisy() {
        let p = SynthParams {
            wind_households: vec![0],
            ..SynthParams::default()
        };
        let s = synth_scenario(2, 24, 3, &p);
        assert!(s.households[0].re_output[0] > 0.0);
        assert_eq!(s.households[1].re_output[0], 0.0);
    }
}
