use dsm_core::battery::{BatteryParams, Soc};
use dsm_core::billing::{daily_bill, daily_bill_decomposed, unit_price, TariffParams};
use dsm_core::decision::{
    check_decision, classify, giver_bounds, load, taker_bounds, IntervalDecision, Role,
};
use proptest::prelude::*;

fn battery() -> impl Strategy<Value = BatteryParams> {
    (0.0..2.0f64, 3.0..20.0f64, 0.5..4.0f64, 0.5..4.0f64, 0.7..1.0f64, 0.7..1.0f64, 0.2..1.5f64)
        .prop_filter_map("transition inside range", |(s_min, span, rp, rm, ep, em, g2)| {
            let b = BatteryParams {
                s_min,
                s_max: s_min + span,
                rho_plus: rp,
                rho_minus: -rm,
                rho_bar: -0.001,
                eta_plus: ep,
                eta_minus: em,
                gamma_2: g2,
            };
            b.validate().ok().map(|_| b)
        })
}

fn lerp(lo: f64, hi: f64, u: f64) -> f64 {
    lo + (hi - lo) * u
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn phi_plus_is_bounded_and_nonincreasing_in_cv(b in battery(), u in 0.0..1.0f64, v in 0.0..1.0f64, dt in 0.25..2.0f64) {
        let s = lerp(b.s_min, b.s_max, u);
        let p = b.phi_plus(s, dt);
        prop_assert!(p >= 0.0 && p <= b.rho_plus * dt + 1e-12);
        let tr = b.transition_soc();
        let s1 = lerp(tr, b.s_max, u.min(v));
        let s2 = lerp(tr, b.s_max, u.max(v));
        prop_assert!(b.phi_plus(s2, dt) <= b.phi_plus(s1, dt) + 1e-12);
    }

    #[test]
    fn phi_plus_is_continuous_at_transition(b in battery(), dt in 0.25..2.0f64) {
        let tr = b.transition_soc();
        let h = 1e-9 * b.s_max;
        let below = b.phi_plus(tr - h, dt);
        let above = b.phi_plus(tr + h, dt);
        prop_assert!((below - above).abs() <= 1e-6 * b.s_max);
    }

    #[test]
    fn self_discharge_strictly_decreases(b in battery(), u in 0.01..1.0f64, dt in 0.25..2.0f64) {
        let s = lerp(b.s_min, b.s_max, u).max(1e-3);
        prop_assert!(s * b.retention(dt) < s);
    }

    #[test]
    fn taker_region_samples_pass_the_checker(
        b in battery(), u in 0.0..1.0f64, d in 0.01..5.0f64, pool in 0.0..3.0f64,
        ua in 0.0..1.0f64, ue in 0.0..1.0f64, dt in 0.25..2.0f64,
    ) {
        let s = Soc(lerp(b.s_min, b.s_max, u));
        let region = taker_bounds(s, d, pool, &b, 0.95, dt);
        prop_assert!(region.a_min <= region.a_max);
        let a = lerp(region.a_min, region.a_max, ua);
        let (lo, hi) = region.e_range(a);
        prop_assert!(lo <= hi);
        let dec = IntervalDecision::new(a, lerp(lo, hi, ue));
        let next = check_decision(Role::Taker, s, d, pool, dec, &b, 0.95, dt, 0, 0);
        prop_assert!(next.is_ok(), "{next:?}");
        let next = next.unwrap();
        prop_assert!(next.0 >= b.s_min && next.0 <= b.s_max);
        prop_assert!(load(Role::Taker, d, dec) >= -1e-12);
    }

    #[test]
    fn giver_region_samples_pass_the_checker(
        b in battery(), u in 0.0..1.0f64, excess in 0.0..4.0f64, min_offer in 0.0..2.0f64,
        ue in 0.0..1.0f64, ua in 0.0..1.0f64, dt in 0.25..2.0f64,
    ) {
        let s = Soc(lerp(b.s_min, b.s_max, u));
        let d = -excess;
        let region = giver_bounds(s, d, min_offer, &b, 0.95, dt);
        prop_assert!(region.e_min <= region.e_max);
        let e = lerp(region.e_min, region.e_max, ue);
        let (lo, hi) = region.a_range(e);
        prop_assert!(lo <= hi);
        let dec = IntervalDecision::new(lerp(lo, hi, ua), e);
        let next = check_decision(Role::Giver, s, d, 0.0, dec, &b, 0.95, dt, 0, 0);
        prop_assert!(next.is_ok(), "{next:?}");
        let next = next.unwrap();
        prop_assert!(next.0 >= b.s_min && next.0 <= b.s_max);
        prop_assert!(load(Role::Giver, d, dec) >= 0.0);
    }

    #[test]
    fn classification_depends_only_on_net_demand(d in -5.0..5.0f64, a in -2.0..2.0f64, e in -2.0..2.0f64) {
        let role = classify(d);
        let _ = load(role, d, IntervalDecision::new(a, e));
        prop_assert_eq!(role, if d > 0.0 { Role::Taker } else { Role::Giver });
    }

    #[test]
    fn compact_and_decomposed_bills_agree(
        own in proptest::collection::vec(0.0..5.0f64, 1..97),
        seed in 0.0..1.0f64, p0 in 0.01..2.0f64,
    ) {
        let n = own.len();
        let others: Vec<f64> = (0..n).map(|t| 3.0 * ((t as f64 + seed) * 1.7).sin().abs()).collect();
        let g: Vec<f64> = (0..n).map(|t| 4.0 * ((t as f64 * 0.3 + seed) * 0.9).cos().abs()).collect();
        let tariff = TariffParams { p0, generation: g };
        let compact = daily_bill(&own, &others, &tariff).unwrap();
        let parts = daily_bill_decomposed(&own, &others, &tariff).unwrap();
        prop_assert!((compact - parts.total()).abs() <= 1e-9 * compact.abs().max(1e-300));
        prop_assert!(compact >= p0 * own.iter().sum::<f64>() * (1.0 - 1e-12));
    }

    #[test]
    fn price_slope_sign_follows_gap(l in 0.0..5.0f64, others in 0.0..5.0f64, g in 0.0..5.0f64) {
        // d/dL of the unit price is 2 (L - g).
        let h = 1e-6;
        let slope = (unit_price(l + others + h, g, 0.1) - unit_price(l + others - h, g, 0.1)) / (2.0 * h);
        let expected = 2.0 * (l + others - g);
        prop_assert!((slope - expected).abs() < 1e-5);
    }
}

#[test]
fn round_trip_through_battery_loses_energy() {
    let b = BatteryParams::default();
    let eta_inv = 0.95;
    let charged = b.soc_next_taker(Soc(5.0), 1.0, eta_inv, 1.0).unwrap();
    let usable = (charged.0 - 5.0) * eta_inv * b.eta_minus;
    assert!(usable < 1.0);
    assert!(eta_inv * eta_inv * b.eta_plus * b.eta_minus < 1.0);
}

#[test]
fn linear_bill_when_tracking_is_perfect() {
    let own = [1.0, 2.0, 0.5];
    let others = [1.0, 0.0, 2.5];
    let g: Vec<f64> = own.iter().zip(&others).map(|(a, b)| a + b).collect();
    let bill = daily_bill(&own, &others, &TariffParams { p0: 0.3, generation: g }).unwrap();
    assert!((bill - 0.3 * 3.5).abs() < 1e-15);
}
