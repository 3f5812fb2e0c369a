//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use quorum_core::analysis::{
    permutation_average_curve, synthetic_matrix, ResponseMatrix, ResponseRow,
};
use quorum_core::ensemble::{
    expected_system_time_user, joint_accuracy_exact, joint_accuracy_gaussian, map_decide,
    objective, objective_relaxed, Label,
};
use quorum_core::simulator::{compare_with_theory, run_simulation, SimConfig, StopRule};
use quorum_core::{SystemSpec, UserClusterSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_quorum");
const Z99: f64 = 2.5758293035489;

struct Check {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn timed(limit: Option<Duration>, run: impl FnOnce() -> (bool, String)) -> (bool, String) {
    let start = Instant::now();
    let (ok, detail) = run();
    let elapsed = start.elapsed();
    match limit {
        Some(limit) if elapsed > limit => (
            false,
            format!("{detail}; took {:.2?}, limit {limit:?}", elapsed),
        ),
        _ => (ok, format!("{detail}; {:.2?}", elapsed)),
    }
}

fn brute_force(m: u32, p: f64, w: f64) -> f64 {
    let mut total = 0.0;
    for pattern in 0u32..(1 << m) {
        let k = pattern.count_ones();
        let (mut if_pos, mut if_neg) = (w, 1.0 - w);
        for bit in 0..m {
            let says_pos = pattern & (1 << bit) != 0;
            if_pos *= if says_pos { p } else { 1.0 - p };
            if_neg *= if says_pos { 1.0 - p } else { p };
        }
        total += match map_decide(k, m, p, w).unwrap() {
            Label::Positive => if_pos,
            Label::Negative => if_neg,
        };
    }
    total
}

fn criterion_1() -> (bool, String) {
    timed(Some(Duration::from_secs(10)), || {
        let mut worst: f64 = 0.0;
        for m in 1..=12 {
            for pi in 1..=19 {
                for wi in 1..=19 {
                    let (p, w) = (0.05 * pi as f64, 0.05 * wi as f64);
                    let d = (joint_accuracy_exact(m, p, w).unwrap() - brute_force(m, p, w)).abs();
                    worst = worst.max(d);
                }
            }
        }
        (
            worst <= 1e-12,
            format!("max |exact - enumeration| = {worst:.2e} over 12 x 19 x 19 points"),
        )
    })
}

fn argmins(system: &SystemSpec, lo: u32, hi: u32) -> (u32, u32) {
    let pick = |f: &dyn Fn(u32) -> f64| {
        (lo..=hi)
            .fold((0, f64::INFINITY), |best, m| {
                let v = f(m);
                let better = best.1.is_infinite() || v < best.1 - 1e-12 * best.1.abs().max(1.0);
                if better {
                    (m, v)
                } else {
                    best
                }
            })
            .0
    };
    (
        pick(&|m| objective(system, m, false).unwrap()),
        pick(&|m| objective_relaxed(system, m as f64).unwrap()),
    )
}

fn cli_optimize(theta: f64) -> (Option<u32>, Option<u32>) {
    let out = Command::new(BIN)
        .args(["--fig5", "optimize", "--theta", &theta.to_string()])
        .output()
        .expect("run quorum");
    let text = String::from_utf8_lossy(&out.stderr);
    let find = |prefix: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(prefix))
            .and_then(|rest| rest.split_whitespace().next()?.parse().ok())
    };
    (find("exact m* = "), find("relaxed integer argmin = "))
}

fn criterion_2a() -> (bool, String) {
    timed(Some(Duration::from_secs(5)), || {
        let (e1, r1) = cli_optimize(0.1);
        let (e4, r4) = cli_optimize(0.4);
        let ok = e1 == Some(21) && r1 == Some(19) && e4 == Some(11) && r4 == Some(11);
        (
            ok,
            format!(
                "lambda = 1: theta 0.1 exact {e1:?} relaxed {r1:?} (want 21, 19); theta 0.4 exact {e4:?} relaxed {r4:?} (want 11, 11)"
            ),
        )
    })
}

fn criterion_2b() -> (bool, String) {
    timed(None, || {
        let mut failures = Vec::new();
        for theta in [0.1, 0.4] {
            let base = argmins(&SystemSpec::reference_family(theta), 1, 50);
            for scale in [0.5, 2.0, 10.0] {
                let scaled = argmins(
                    &SystemSpec::reference_family(theta).scale_rates(scale),
                    1,
                    50,
                );
                if scaled != base {
                    failures.push(format!(
                        "theta {theta} x{scale}: (exact, relaxed) {scaled:?} vs {base:?}"
                    ));
                }
            }
        }
        let ok = failures.is_empty();
        let detail = if ok {
            "argmins unchanged under common rate scaling 0.5, 2, 10".to_string()
        } else {
            format!("argmin moves under rate scaling: {}", failures.join("; "))
        };
        (ok, detail)
    })
}

fn criterion_3() -> (bool, String) {
    timed(Some(Duration::from_secs(60)), || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let mut passed = 0;
        let mut notes = Vec::new();
        for config_index in 0..5 {
            let n = rng.random_range(1..=3);
            let users = (0..n)
                .map(|_| UserClusterSpec {
                    lambda: rng.random_range(0.2..3.0),
                    w: rng.random_range(0.3..0.7),
                    p: rng.random_range(0.55..0.95),
                    t: rng.random_range(0.0..2.0),
                    mu: rng.random_range(0.5..4.0),
                })
                .collect();
            let system = SystemSpec { users, theta: 0.0 };
            let m = rng.random_range(1..=7);
            let config = SimConfig::new(
                system.clone(),
                m,
                rng.random(),
                StopRule::CorrectPerUser(10_000),
            );
            let report = run_simulation(&config).unwrap();
            let comparison = compare_with_theory(&system, &report).unwrap();
            let mut worst: f64 = 0.0;
            let mut ok = true;
            for c in &comparison {
                let expected = expected_system_time_user(&system, c.user, m).unwrap();
                assert_eq!(expected, c.system_time_theory);
                for z in [c.system_time_z, c.accuracy_z] {
                    match z {
                        Some(z) => {
                            worst = worst.max(z.abs());
                            ok &= z.abs() <= 3.0;
                        }
                        None => ok = false,
                    }
                }
            }
            if ok {
                passed += 1;
            }
            notes.push(format!("#{config_index} n={n} m={m} max|z|={worst:.2}"));
        }
        (
            passed >= 4,
            format!("{passed}/5 configs within 3 s.e. [{}]", notes.join(", ")),
        )
    })
}

fn criterion_4() -> (bool, String) {
    timed(None, || {
        let mut worst = (0.0, 0, 0.0, 0.0);
        for m in (25..=200).step_by(5) {
            for pi in 0..=7 {
                for wi in 0..=8 {
                    let (p, w) = (0.55 + 0.05 * pi as f64, 0.3 + 0.05 * wi as f64);
                    let d = (joint_accuracy_gaussian(m as f64, p, w).unwrap()
                        - joint_accuracy_exact(m, p, w).unwrap())
                    .abs();
                    if d > worst.0 {
                        worst = (d, m, p, w);
                    }
                }
            }
        }
        (
            worst.0 <= 0.02,
            format!(
                "worst gap {:.4} at m={} p={:.2} w={:.2}",
                worst.0, worst.1, worst.2, worst.3
            ),
        )
    })
}

fn criterion_5() -> (bool, String) {
    timed(None, || {
        let mut ok = true;
        for p in [0.55, 0.7, 0.9] {
            let mut previous = 0.0;
            for m in (1..=51).step_by(2) {
                let a = joint_accuracy_exact(m, p, 0.5).unwrap();
                ok &= a >= previous;
                previous = a;
            }
        }
        let limit = joint_accuracy_exact(201, 0.6, 0.5).unwrap();
        (
            ok && limit >= 0.99,
            format!("odd-m curves nondecreasing: {ok}; p_joint(201, 0.6, 0.5) = {limit:.5}"),
        )
    })
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

fn random_matrix(rng: &mut ChaCha8Rng, models: usize, rows: usize) -> ResponseMatrix {
    let label = |b: bool| if b { Label::Positive } else { Label::Negative };
    let accuracies: Vec<f64> = (0..models).map(|_| rng.random_range(0.3..0.95)).collect();
    let rows = (0..rows)
        .map(|r| {
            let truth = label(rng.random_bool(0.5));
            let responses = accuracies
                .iter()
                .map(|&p| {
                    if rng.random_bool(p) {
                        truth
                    } else {
                        truth.flip()
                    }
                })
                .collect();
            ResponseRow {
                query_id: format!("r{r}"),
                truth,
                responses,
            }
        })
        .collect();
    ResponseMatrix::new((0..models).map(|j| format!("m{j}")).collect(), rows).unwrap()
}

fn criterion_6() -> (bool, String) {
    timed(None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let perms = permutations(&[0, 1, 2, 3]);
        let mut mismatches = 0;
        for _ in 0..20 {
            let rows = rng.random_range(5..300);
            let matrix = random_matrix(&mut rng, 4, rows);
            let prior = if rng.random_bool(0.5) {
                0.5
            } else {
                rng.random_range(0.1..0.9)
            };
            let curve = permutation_average_curve(&matrix, prior).unwrap();
            for m in 1..=4 {
                let mut total = 0u64;
                for perm in &perms {
                    let prefix = &perm[..m];
                    let correct_answers: usize = prefix
                        .iter()
                        .map(|&j| {
                            matrix
                                .rows
                                .iter()
                                .filter(|r| r.responses[j] == r.truth)
                                .count()
                        })
                        .sum();
                    let p = correct_answers as f64 / (m * rows) as f64;
                    total += matrix
                        .rows
                        .iter()
                        .filter(|r| {
                            let k = prefix
                                .iter()
                                .filter(|&&j| r.responses[j] == Label::Positive)
                                .count();
                            map_decide(k as u32, m as u32, p, prior).ok() == Some(r.truth)
                        })
                        .count() as u64;
                }
                let oracle = total as f64 / (perms.len() * rows) as f64;
                if curve.points[m - 1].mean != oracle {
                    mismatches += 1;
                }
            }
        }
        (
            mismatches == 0,
            format!("{mismatches} mismatches over 20 random 4-model matrices x 4 sizes"),
        )
    })
}

fn criterion_7() -> (bool, String) {
    timed(None, || {
        let rows = 100_000;
        let matrix = synthetic_matrix(&[0.75; 7], rows, 0.5, 7).unwrap();
        let curve = permutation_average_curve(&matrix, 0.5).unwrap();
        let mut worst: f64 = 0.0;
        let mut ok = true;
        for point in &curve.points {
            let expected = joint_accuracy_exact(point.m as u32, 0.75, 0.5).unwrap();
            let half = Z99 * (expected * (1.0 - expected) / rows as f64).sqrt();
            let ratio = (point.mean - expected).abs() / half;
            worst = worst.max(ratio);
            ok &= ratio <= 1.0;
        }
        (
            ok,
            format!("largest deviation is {worst:.2} of the 99% half-width across m = 1..7"),
        )
    })
}

fn run_to_file(args: &[&str], out: &Path) -> Vec<u8> {
    let status = Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("run quorum")
        .status;
    assert!(status.success(), "{args:?} failed");
    std::fs::read(out).unwrap()
}

fn criterion_8() -> (bool, String) {
    timed(None, || {
        let dir = tempfile::tempdir().unwrap();
        let sim = [
            "--fig5",
            "--seed",
            "99",
            "simulate",
            "--m",
            "5",
            "--deliveries",
            "20000",
        ];
        let a = run_to_file(&sim, &dir.path().join("a.json"));
        let b = run_to_file(&sim, &dir.path().join("b.json"));
        let opt = ["--fig5", "--seed", "4", "optimize", "--theta", "0.25"];
        let c = run_to_file(&opt, &dir.path().join("c.json"));
        let d = run_to_file(&opt, &dir.path().join("d.json"));
        let curves_equal = std::fs::read(dir.path().join("c.curve.csv")).unwrap()
            == std::fs::read(dir.path().join("d.curve.csv")).unwrap();
        let ok = a == b && c == d && curves_equal;
        (
            ok,
            format!(
                "simulate reports identical: {}; optimize reports identical: {}",
                a == b,
                c == d && curves_equal
            ),
        )
    })
}

fn main() {
    type Criterion = (&'static str, &'static str, fn() -> (bool, String));
    let criteria: Vec<Criterion> = vec![
        ("1", "exact accuracy matches 2^m enumeration", criterion_1),
        ("2a", "reference family argmins", criterion_2a),
        (
            "2b",
            "argmin invariant under common rate scaling",
            criterion_2b,
        ),
        ("3", "simulator agrees with closed forms", criterion_3),
        ("4", "Gaussian approximation within 0.02", criterion_4),
        ("5", "Condorcet monotonicity and limit", criterion_5),
        (
            "6",
            "subset average equals permutation average",
            criterion_6,
        ),
        ("7", "synthetic seven-model closure", criterion_7),
        ("8", "determinism", criterion_8),
    ];
    let mut checks = Vec::new();
    for (id, title, run) in criteria {
        let (pass, detail) = run();
        let check = Check {
            id,
            title,
            pass,
            detail,
        };
        println!(
            "[{}] criterion {:<3} {}: {}",
            if check.pass { "PASS" } else { "FAIL" },
            check.id,
            check.title,
            check.detail
        );
        checks.push(check);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    println!(
        "\n{} of {} criteria passed",
        checks.len() - failed.len(),
        checks.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
