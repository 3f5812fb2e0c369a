use proptest::prelude::*;
use quorum_core::ensemble::{
    expected_cluster_response_time, expected_idle_wait, expected_system_time_total,
    expected_system_time_user, joint_accuracy_exact,
};
use quorum_core::simulator::*;
use quorum_core::{SystemSpec, UserClusterSpec};

fn one_user(p: f64, w: f64) -> SystemSpec {
    SystemSpec {
        users: vec![UserClusterSpec {
            lambda: 1.0,
            w,
            p,
            t: 1.0,
            mu: 2.0,
        }],
        theta: 0.0,
    }
}

#[test]
fn single_user_system_time() {
    let config = SimConfig::new(one_user(0.8, 0.5), 1, 42, StopRule::TotalCorrect(100_000));
    let report = run_simulation(&config).unwrap();
    let est = report.users[0].system_time.unwrap();
    assert!((expected_system_time_user(&config.system, 0, 1).unwrap() - 3.125).abs() < 1e-12);
    assert!(est.z_score(3.125).unwrap().abs() <= 3.0, "{est:?}");
    assert_eq!(report.system_time_total, Some(est.mean));
}

#[test]
fn perfect_agents_time_is_wait_plus_service() {
    let sys = SystemSpec {
        users: vec![
            UserClusterSpec {
                lambda: 0.7,
                w: 0.3,
                p: 1.0,
                t: 0.5,
                mu: 1.5,
            },
            UserClusterSpec {
                lambda: 1.3,
                w: 0.6,
                p: 1.0,
                t: 0.2,
                mu: 3.0,
            },
        ],
        theta: 0.0,
    };
    let m = 4;
    let report = run_simulation(&SimConfig::new(
        sys.clone(),
        m,
        8,
        StopRule::CorrectPerUser(40_000),
    ))
    .unwrap();
    for (i, u) in report.users.iter().enumerate() {
        assert_eq!(u.accuracy, Some(1.0));
        let target = expected_idle_wait(&sys, i, m).unwrap()
            + expected_cluster_response_time(&sys.users[i], m).unwrap();
        assert!(
            u.system_time.unwrap().z_score(target).unwrap().abs() <= 3.0,
            "user {i}"
        );
    }
}

#[test]
fn reference_family_at_eleven() {
    let sys = SystemSpec::reference_family(0.1);
    let report = run_simulation(&SimConfig::new(
        sys.clone(),
        11,
        2024,
        StopRule::TotalCorrect(100_000),
    ))
    .unwrap();
    for (i, u) in report.users.iter().enumerate() {
        let theory = expected_system_time_user(&sys, i, 11).unwrap();
        let z = u.system_time.unwrap().z_score(theory).unwrap();
        assert!(z.abs() <= 3.0, "user {i}: z={z}");
    }
    let total = expected_system_time_total(&sys, 11).unwrap();
    let z = (report.system_time_total.unwrap() - total) / report.system_time_total_se.unwrap();
    assert!(z.abs() <= 3.0, "total z={z}");
}

#[test]
fn aggregated_accuracy_matches_closed_form() {
    for (m, p, w) in [(3, 0.8, 0.5), (1, 0.5, 0.5), (5, 0.3, 0.5), (4, 0.7, 0.35)] {
        // Delivery target sized for about 10^5 admitted queries.
        let target = (100_000.0 * joint_accuracy_exact(m, p, w).unwrap()) as u64;
        let config = SimConfig::new(one_user(p, w), m, 77, StopRule::TotalCorrect(target));
        let checks = empirical_accuracy_check(&config).unwrap();
        let check = checks[0];
        assert_eq!(check.analytical, joint_accuracy_exact(m, p, w).unwrap());
        assert!(check.z.unwrap().abs() <= 3.0, "m={m} p={p}: {check:?}");
    }
}

#[test]
fn service_time_marginal() {
    let sys = SystemSpec::reference_family(0.1);
    let report = run_simulation(&SimConfig::new(
        sys.clone(),
        6,
        5,
        StopRule::TotalCorrect(50_000),
    ))
    .unwrap();
    for (i, u) in report.users.iter().enumerate() {
        let theory = expected_cluster_response_time(&sys.users[i], 6).unwrap();
        assert!(
            u.service_time.unwrap().z_score(theory).unwrap().abs() <= 3.0,
            "user {i}"
        );
    }
}

#[test]
fn identical_seeds_identical_reports() {
    let config = SimConfig::new(
        SystemSpec::reference_family(0.4),
        7,
        123,
        StopRule::TotalCorrect(5_000),
    );
    let a = serde_json::to_string(&run_simulation(&config).unwrap()).unwrap();
    let b = serde_json::to_string(&run_simulation(&config).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = SimConfig {
        seed: 124,
        ..config
    };
    assert_ne!(
        a,
        serde_json::to_string(&run_simulation(&other).unwrap()).unwrap()
    );
}

#[test]
fn horizon_without_admissions() {
    let sys = SystemSpec {
        users: vec![UserClusterSpec {
            lambda: 1e-9,
            w: 0.5,
            p: 0.8,
            t: 1.0,
            mu: 1.0,
        }],
        theta: 0.0,
    };
    let report = run_simulation(&SimConfig::new(sys, 3, 1, StopRule::Horizon(1.0))).unwrap();
    let u = &report.users[0];
    assert_eq!((u.generated, u.admitted, u.resolved), (0, 0, 0));
    assert_eq!(u.accuracy, None);
    assert_eq!(u.service_time, None);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["users"][0]["accuracy"].is_null());
    assert!(json["system_time_total"].is_null());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bookkeeping_invariants(
        params in prop::collection::vec((0.2f64..3.0, 0.1f64..0.9, 0.0f64..=1.0, 0.0f64..2.0, 0.3f64..4.0), 1..4),
        m in 1u32..8,
        seed in any::<u64>(),
        horizon in prop::option::of(1.0f64..300.0),
    ) {
        let users = params.iter().map(|&(lambda, w, p, t, mu)| UserClusterSpec { lambda, w, p, t, mu }).collect();
        let system = SystemSpec { users, theta: 0.0 };
        let stop = horizon.map_or(StopRule::TotalCorrect(300), StopRule::Horizon);
        let mut rows = Vec::new();
        let report = run_simulation_traced(&SimConfig::new(system, m, seed, stop), &mut rows).unwrap();
        for u in &report.users {
            prop_assert_eq!(u.generated, u.admitted + u.dropped);
            prop_assert!(u.resolved <= u.admitted && u.admitted <= u.resolved + 1);
            prop_assert!(u.correct <= u.resolved);
            if let Some(a) = u.accuracy {
                prop_assert!((0.0..=1.0).contains(&a));
            }
            if let Some(e) = u.system_time {
                prop_assert!(e.std_error >= 0.0);
            }
            match (u.epoch, u.last_correct) {
                (Some(epoch), Some(last)) => {
                    prop_assert!((u.interval_sum - (last - epoch)).abs() <= 1e-9 * last.max(1.0));
                }
                _ => prop_assert_eq!(u.intervals, 0),
            }
        }
        // The clock never runs backwards.
        for pair in rows.windows(2) {
            prop_assert!(pair[1].clock >= pair[0].clock);
        }
        let admitted: u64 = report.users.iter().map(|u| u.admitted).sum();
        let resolved: u64 = report.users.iter().map(|u| u.resolved).sum();
        prop_assert_eq!(rows.len() as u64, resolved);
        prop_assert!(admitted - resolved <= 1);
    }
}
