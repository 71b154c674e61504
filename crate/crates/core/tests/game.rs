use dsm_core::battery::{BatteryParams, Soc};
use dsm_core::billing::TariffParams;
use dsm_core::decision::{HouseholdProfile, IntervalDecision, Schedule};
use dsm_core::game::{
    best_response, certify, deviation_gain, evaluate, initial_profile, solve, solve_from, sweep, GameConfig,
    Profile, Termination,
};
use dsm_core::synth::{synth_scenario, SynthParams};
use dsm_core::{GameError, Scenario};

fn household(id: &str, demand: &[f64], re: &[f64], battery: BatteryParams, soc: f64) -> HouseholdProfile {
    HouseholdProfile {
        id: id.to_string(),
        demand: demand.to_vec(),
        re_output: re.to_vec(),
        battery,
        initial_soc: Soc(soc),
    }
}

fn scenario(households: Vec<HouseholdProfile>, g: &[f64], p0: f64) -> Scenario {
    Scenario {
        intervals: g.len(),
        households,
        tariff: TariffParams {
            p0,
            generation: g.to_vec(),
        },
        eta_inv: 0.95,
        eta_bar: 0.95,
    }
}

fn idle_profile(s: &Scenario) -> Profile {
    Profile {
        schedules: (0..s.len())
            .map(|m| {
                Schedule::new(
                    s.net_demand(m)
                        .iter()
                        .map(|&d| IntervalDecision::new(0.0, (-d).max(0.0)))
                        .collect(),
                )
            })
            .collect(),
    }
}

fn config() -> GameConfig {
    GameConfig {
        seed: 3,
        ..GameConfig::default()
    }
}

#[test]
fn degenerate_battery_taker_keeps_its_demand() {
    let s = scenario(
        vec![household("h", &[0.4, 1.0, 0.7], &[0.0; 3], BatteryParams::degenerate(1.0), 1.0)],
        &[1.0, 1.0, 1.0],
        0.1,
    );
    let br = best_response(&s, &idle_profile(&s), 0, &config()).unwrap();
    for dec in &br.schedule.decisions {
        assert_eq!(*dec, IntervalDecision::new(0.0, 0.0));
    }
    let outcome = evaluate(&s, &Profile { schedules: vec![br.schedule] }).unwrap();
    assert_eq!(outcome.loads[0], vec![0.4, 1.0, 0.7]);
}

/// Exhaustive scan over (a1, a2) for the two-interval single-household
/// example; `e` is zero without a pool.
fn brute_force_two_intervals(s: &Scenario, n: usize) -> f64 {
    let h = &s.households[0];
    let b = &h.battery;
    let d = s.net_demand(0);
    let dt = s.dt();
    let g = &s.tariff.generation;
    let p0 = s.tariff.p0;
    let cost = |l: f64, g: f64| l * ((l - g) * (l - g) + p0);
    let s1 = h.initial_soc.0;
    let a1_hi = b.phi_plus(s1, dt).min(b.charge_ceiling(s1, s.eta_inv));
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let a1 = a1_hi * i as f64 / n as f64;
        let Ok(s2) = b.soc_next_taker(Soc(s1), a1, s.eta_inv, dt) else { continue };
        let a2_lo = b.discharge_floor(s2.0, s.eta_inv).max(b.phi_minus(s.eta_inv, dt)).max(-d[1]);
        let c1 = cost(d[0] + a1, g[0]);
        for j in 0..=n {
            let a2 = a2_lo * j as f64 / n as f64;
            best = best.min(c1 + cost(d[1] + a2, g[1]));
        }
    }
    best
}

#[test]
fn best_response_shifts_load_towards_generation() {
    let bat = BatteryParams::default();
    let s = scenario(vec![household("h", &[0.5, 0.5], &[0.0, 0.0], bat, bat.s_min)], &[1.2, 0.0], 0.01);
    let br = best_response(&s, &idle_profile(&s), 0, &config()).unwrap();
    let dec = &br.schedule.decisions;
    assert!(dec[0].a > 0.0, "charges while generation is high");
    assert!(dec[1].a < 0.0, "discharges when it is gone");
    let brute = brute_force_two_intervals(&s, 2000);
    assert!(br.bill <= brute + 1e-9, "{} vs {brute}", br.bill);
    assert!(brute - br.bill < 1e-4);
}

#[test]
fn pool_rich_taker_draws_instead_of_buying() {
    let bat = BatteryParams::default();
    let s = scenario(
        vec![
            household("taker", &[1.0, 1.0], &[0.0, 0.0], bat, 5.0),
            household("giver", &[0.0, 0.0], &[2.0, 2.0], BatteryParams::degenerate(0.0), 0.0),
        ],
        &[0.0, 0.0],
        0.1,
    );
    let br = best_response(&s, &idle_profile(&s), 0, &config()).unwrap();
    for dec in &br.schedule.decisions {
        assert_eq!(dec.a, 0.0);
        assert!((dec.e + 1.0).abs() < 1e-12);
    }
    assert_eq!(br.bill, 0.0);
}

#[test]
fn best_response_never_worsens_the_bill() {
    let s = synth_scenario(3, 12, 5, &SynthParams::default());
    let cfg = GameConfig {
        soc_grid: 16,
        ..config()
    };
    let mut profile = initial_profile(&s, &cfg).unwrap();
    for m in [0, 1, 2, 0, 1, 2] {
        let br = best_response(&s, &profile, m, &cfg).unwrap();
        assert!(br.bill <= br.previous_bill);
        profile.schedules[m] = br.schedule;
        evaluate(&s, &profile).unwrap();
    }
}

#[test]
fn sweep_at_equilibrium_changes_nothing() {
    let s = synth_scenario(2, 12, 2, &SynthParams::default());
    let cfg = GameConfig {
        soc_grid: 24,
        ..config()
    };
    let result = solve(&s, &cfg).unwrap();
    assert!(result.converged);
    let mut profile = result.profile.clone();
    let record = sweep(&s, &mut profile, &cfg).unwrap();
    assert!(!record.improved);
    let before = evaluate(&s, &result.profile).unwrap();
    let after = evaluate(&s, &profile).unwrap();
    for (a, b) in before.bills.iter().zip(&after.bills) {
        assert!((a - b).abs() <= cfg.epsilon);
    }
}

#[test]
fn single_household_converges_to_its_best_response() {
    let s = synth_scenario(1, 24, 4, &SynthParams::default());
    let cfg = config();
    let result = solve(&s, &cfg).unwrap();
    assert!(result.converged);
    assert!(result.sweeps_used <= 2);
    assert_eq!(result.termination, Termination::Stable);
    let start = initial_profile(&s, &cfg).unwrap();
    let br = best_response(&s, &start, 0, &cfg).unwrap();
    assert!((br.bill - result.outcome.bills[0]).abs() <= cfg.epsilon);
}

#[test]
fn perturbed_schedule_has_positive_deviation_gain() {
    let s = synth_scenario(2, 12, 9, &SynthParams::default());
    let cfg = GameConfig {
        soc_grid: 24,
        ..config()
    };
    let result = solve(&s, &cfg).unwrap();
    let mut profile = result.profile.clone();
    // Replace household 0 by its idle schedule.
    let d = s.net_demand(0);
    profile.schedules[0] = Schedule::new(d.iter().map(|&d| IntervalDecision::new(0.0, (-d).max(0.0))).collect());
    evaluate(&s, &profile).unwrap();
    assert!(deviation_gain(&s, &profile, 0, &cfg).unwrap() > 0.0);
}

#[test]
fn trivial_battery_has_zero_gain() {
    let s = scenario(
        vec![household("h", &[0.4, 1.0], &[0.0, 0.5], BatteryParams::degenerate(0.0), 0.0)],
        &[1.0, 1.0],
        0.1,
    );
    let profile = idle_profile(&s);
    assert_eq!(deviation_gain(&s, &profile, 0, &config()).unwrap(), 0.0);
}

#[test]
fn solve_is_deterministic() {
    let s = synth_scenario(3, 12, 1, &SynthParams::default());
    let cfg = GameConfig {
        soc_grid: 16,
        ..config()
    };
    let a = solve(&s, &cfg).unwrap();
    let b = solve(&s, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn converged_results_are_certified() {
    let s = synth_scenario(2, 12, 6, &SynthParams::default());
    let cfg = GameConfig {
        soc_grid: 24,
        ..config()
    };
    let result = solve(&s, &cfg).unwrap();
    let gains = certify(&s, &result.profile, &result.search_grid.apply(&cfg)).unwrap();
    assert_eq!(gains, result.deviation_gains);
    if result.converged {
        assert!(result.max_deviation_gain <= cfg.epsilon);
    }
}

#[test]
fn cold_start_begins_idle() {
    let s = synth_scenario(2, 8, 1, &SynthParams::default());
    let cfg = GameConfig {
        cold_start: true,
        ..config()
    };
    let profile = initial_profile(&s, &cfg).unwrap();
    assert_eq!(profile, idle_profile(&s));
}

#[test]
fn terminal_floor_is_respected() {
    let s = synth_scenario(2, 12, 8, &SynthParams::default());
    let cfg = GameConfig {
        soc_grid: 24,
        terminal_soc_min: Some(6.0),
        cold_start: true,
        ..config()
    };
    let result = solve(&s, &cfg).unwrap();
    for soc in &result.outcome.soc {
        assert!(*soc.last().unwrap() >= 6.0 - 1e-9);
    }
}

#[test]
fn unreachable_terminal_floor_is_an_error() {
    let bat = BatteryParams::default();
    let s = scenario(vec![household("h", &[0.5, 0.5], &[0.0, 0.0], bat, bat.s_min)], &[1.0, 1.0], 0.1);
    // The CV stage only approaches s_max asymptotically.
    let cfg = GameConfig {
        terminal_soc_min: Some(bat.s_max),
        ..config()
    };
    let result = solve_from(&s, idle_profile(&s), &cfg);
    match result {
        Err(GameError::TerminalSocUnreachable { household: 0, .. }) => {}
        other => panic!("expected an unreachable floor, got {other:?}"),
    }
}

#[test]
fn overdrawn_pool_is_rejected() {
    let bat = BatteryParams::degenerate(0.0);
    let s = scenario(
        vec![
            household("t", &[1.0, 1.0], &[0.0, 0.0], bat, 0.0),
            household("g", &[0.0, 0.0], &[0.5, 0.5], bat, 0.0),
        ],
        &[1.0, 1.0],
        0.1,
    );
    let mut profile = idle_profile(&s);
    profile.schedules[0].decisions[1] = IntervalDecision::new(0.0, -1.0);
    assert!(matches!(
        evaluate(&s, &profile),
        Err(GameError::Decision(dsm_core::DecisionError::PoolOverdrawn { interval: 1, .. }))
    ));
}

#[test]
fn invalid_config_is_rejected() {
    let s = synth_scenario(1, 4, 1, &SynthParams::default());
    let cfg = GameConfig {
        epsilon: 0.0,
        action_grid: 2,
        ..config()
    };
    assert!(matches!(solve(&s, &cfg), Err(GameError::InvalidConfig(_))));
}
