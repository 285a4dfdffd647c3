use metadr::simnet::{paper_soak_scenario, soak, FaultClass};

/// Two days of the reference soak with the jitter switched off, so every
/// event's RTO is the closed-form breakdown plus replay where it applies.
#[test]
fn short_jitter_free_soak_matches_closed_form() {
    let mut sc = paper_soak_scenario(3);
    sc.horizon_seconds = 2.0 * 86_400.0;
    sc.cost.rto_jitter_cv = 0.0;
    let plan = sc.schedule.as_mut().unwrap();
    plan.planned_count = 4;
    plan.crash_at_seconds.truncate(1);
    let r = soak(&sc).unwrap();
    let s = &r.summary;

    assert_eq!((s.planned, s.crash), (4, 1));
    assert_eq!(s.violations, 0);
    assert!(s.network_parity && s.plans_agree && s.all_verified);
    for e in &r.events {
        assert_eq!(e.jitter, 1.0);
        let expected = match e.class {
            FaultClass::Planned => 825.6,
            FaultClass::Crash => 825.6 + 18.0,
        };
        assert!((e.meta_rto - expected).abs() < 1.0, "event {}: meta {} vs {expected}", e.event, e.meta_rto);
        assert!((17.4..=17.9).contains(&e.factor), "event {}: factor {}", e.event, e.factor);
    }
    assert!((s.crash_elevation_min - 18.0).abs() < 0.5);
    assert!((s.crash_minus_planned - 18.0).abs() < 0.5);
    assert!((s.final_drift_ratio - 1.011).abs() < 1e-12);
}
