//! Discrete-event simulation of the router: Poisson queries per user,
//! drop-while-busy admission, fan-out to `m` agents with shifted-exponential
//! completion, MAP aggregation and retry-until-correct timing.
//!
//! Random streams are derived from one seed. Each user owns an arrival
//! stream and a truth stream, and every admitted job owns a stream for its
//! transmission delays and agent answers, so draws do not depend on how
//! events interleave.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::ensemble::{
    expected_cluster_response_time, expected_system_time_user, joint_accuracy_exact, map_decide,
    Label,
};
use crate::error::{ModelError, Result};
use crate::stats::{batch_means, Estimate};
use crate::system::SystemSpec;

const ARRIVAL_STREAM: u64 = 1 << 32;
const TRUTH_STREAM: u64 = 2 << 32;
const JOB_STREAM: u64 = 3 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Stop after this many correct deliveries summed over users.
    TotalCorrect(u64),
    /// Stop once every user has this many recorded inter-delivery intervals.
    CorrectPerUser(u64),
    /// Stop at this simulated time; a job still in service is left unresolved.
    Horizon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub system: SystemSpec,
    pub m: u32,
    pub seed: u64,
    pub stop_rule: StopRule,
    /// Correct deliveries discarded before any counter starts.
    #[serde(default)]
    pub warmup_deliveries: u64,
}

impl SimConfig {
    pub fn new(system: SystemSpec, m: u32, seed: u64, stop_rule: StopRule) -> Self {
        Self {
            system,
            m,
            seed,
            stop_rule,
            warmup_deliveries: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate().map_err(ModelError::Config)?;
        if self.m == 0 {
            return Err(ModelError::Config("m must be at least 1".into()));
        }
        match self.stop_rule {
            StopRule::TotalCorrect(0) | StopRule::CorrectPerUser(0) => Err(ModelError::Config(
                "delivery target must be at least 1".into(),
            )),
            StopRule::Horizon(h) if !(h.is_finite() && h > 0.0) => Err(ModelError::Config(
                format!("horizon must be a finite number > 0, got {h}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    pub user: usize,
    pub generated: u64,
    pub admitted: u64,
    pub dropped: u64,
    /// Admitted jobs whose service finished before the run ended.
    pub resolved: u64,
    pub correct: u64,
    /// `correct / resolved`; `None` when nothing was resolved.
    pub accuracy: Option<f64>,
    /// Time between consecutive correct deliveries.
    pub system_time: Option<Estimate>,
    /// Admission to completion.
    pub service_time: Option<Estimate>,
    /// First correct delivery after warmup; intervals are measured from here.
    pub epoch: Option<f64>,
    pub last_correct: Option<f64>,
    pub intervals: u64,
    pub interval_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub m: u32,
    pub seed: u64,
    pub stop_rule: StopRule,
    pub warmup_deliveries: u64,
    pub users: Vec<UserReport>,
    /// Rate-weighted mean of the per-user system times.
    pub system_time_total: Option<f64>,
    pub system_time_total_se: Option<f64>,
    /// Simulated time after warmup.
    pub total_time: f64,
}

/// One row per resolved job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub clock: f64,
    pub user: usize,
    pub truth: i8,
    pub k_true: u32,
    pub decision: i8,
    pub correct: bool,
    pub inter_correct_time: Option<f64>,
}

#[derive(Default)]
struct Counters {
    generated: u64,
    admitted: u64,
    dropped: u64,
    resolved: u64,
    correct: u64,
    epoch: Option<f64>,
    last_correct: Option<f64>,
    intervals: Vec<f64>,
    service: Vec<f64>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    run(config, None)
}

/// Like [`run_simulation`], also appending a row per resolved job after warmup.
pub fn run_simulation_traced(config: &SimConfig, trace: &mut Vec<TraceRow>) -> Result<SimReport> {
    run(config, Some(trace))
}

fn run(config: &SimConfig, mut trace: Option<&mut Vec<TraceRow>>) -> Result<SimReport> {
    config.validate()?;
    let system = &config.system;
    let n = system.n();
    let m = config.m;

    let inter_arrival: Vec<Exp<f64>> = system
        .users
        .iter()
        .map(|u| Exp::new(u.lambda).map_err(|e| ModelError::Domain(e.to_string())))
        .collect::<Result<_>>()?;
    let delay: Vec<Exp<f64>> = system
        .users
        .iter()
        .map(|u| Exp::new(u.mu).map_err(|e| ModelError::Domain(e.to_string())))
        .collect::<Result<_>>()?;
    let mut arrival_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|i| stream(config.seed, ARRIVAL_STREAM + i as u64))
        .collect();
    let mut truth_rng: Vec<ChaCha8Rng> = (0..n)
        .map(|i| stream(config.seed, TRUTH_STREAM + i as u64))
        .collect();
    let mut next_arrival: Vec<f64> = (0..n)
        .map(|i| inter_arrival[i].sample(&mut arrival_rng[i]))
        .collect();

    let horizon = match config.stop_rule {
        StopRule::Horizon(h) => h,
        _ => f64::INFINITY,
    };
    let mut counters: Vec<Counters> = (0..n).map(|_| Counters::default()).collect();
    let mut warmup_left = config.warmup_deliveries;
    let mut measure_start = 0.0;
    let mut total_correct = 0u64;
    let mut job = 0u64;

    let end =
        loop {
            // Idle: the earliest pending arrival is admitted.
            let (i, admitted_at) = next_arrival.iter().copied().enumerate().fold(
                (0, f64::INFINITY),
                |best, (j, t)| if t < best.1 { (j, t) } else { best },
            );
            if admitted_at > horizon {
                break horizon;
            }
            let user = &system.users[i];
            counters[i].generated += 1;
            counters[i].admitted += 1;
            next_arrival[i] += inter_arrival[i].sample(&mut arrival_rng[i]);

            let truth = if truth_rng[i].random_bool(user.w) {
                Label::Positive
            } else {
                Label::Negative
            };
            let mut job_rng = stream(config.seed, JOB_STREAM + job);
            job += 1;
            let mut slowest: f64 = 0.0;
            for _ in 0..m {
                slowest = slowest.max(delay[i].sample(&mut job_rng));
            }
            let mut k_true = 0;
            for _ in 0..m {
                let answer = if job_rng.random_bool(user.p) {
                    truth
                } else {
                    truth.flip()
                };
                if answer == Label::Positive {
                    k_true += 1;
                }
            }
            let decision = map_decide(k_true, m, user.p, user.w)?;
            let completion = admitted_at + user.t + slowest;

            // Busy: everything arriving before completion is dropped.
            for j in 0..n {
                while next_arrival[j] < completion.min(horizon) {
                    counters[j].generated += 1;
                    counters[j].dropped += 1;
                    next_arrival[j] += inter_arrival[j].sample(&mut arrival_rng[j]);
                }
            }
            if completion > horizon {
                break horizon;
            }
            let clock = completion;

            let correct = decision == truth;
            if warmup_left > 0 {
                if correct {
                    warmup_left -= 1;
                    if warmup_left == 0 {
                        counters = (0..n).map(|_| Counters::default()).collect();
                        measure_start = clock;
                    }
                }
                continue;
            }

            let c = &mut counters[i];
            c.resolved += 1;
            c.service.push(completion - admitted_at);
            let mut inter_correct_time = None;
            if correct {
                c.correct += 1;
                total_correct += 1;
                match c.last_correct {
                    Some(previous) => {
                        c.intervals.push(clock - previous);
                        inter_correct_time = Some(clock - previous);
                    }
                    None => c.epoch = Some(clock),
                }
                c.last_correct = Some(clock);
            }
            if let Some(rows) = trace.as_deref_mut() {
                rows.push(TraceRow {
                    clock,
                    user: i,
                    truth: truth.as_i8(),
                    k_true,
                    decision: decision.as_i8(),
                    correct,
                    inter_correct_time,
                });
            }

            let done = match config.stop_rule {
                StopRule::TotalCorrect(target) => total_correct >= target,
                StopRule::CorrectPerUser(target) => {
                    counters.iter().all(|c| c.intervals.len() as u64 >= target)
                }
                StopRule::Horizon(_) => false,
            };
            if done {
                break clock;
            }
        };

    let users: Vec<UserReport> = counters
        .into_iter()
        .enumerate()
        .map(|(user, c)| UserReport {
            user,
            generated: c.generated,
            admitted: c.admitted,
            dropped: c.dropped,
            resolved: c.resolved,
            correct: c.correct,
            accuracy: (c.resolved > 0).then(|| c.correct as f64 / c.resolved as f64),
            system_time: batch_means(&c.intervals),
            service_time: batch_means(&c.service),
            epoch: c.epoch,
            last_correct: c.last_correct,
            intervals: c.intervals.len() as u64,
            interval_sum: c.intervals.iter().sum(),
        })
        .collect();

    let rate = system.total_rate();
    let (system_time_total, system_time_total_se) = match users
        .iter()
        .map(|u| u.system_time)
        .collect::<Option<Vec<_>>>()
    {
        Some(estimates) => {
            let mut total = 0.0;
            let mut var = 0.0;
            for (u, est) in system.users.iter().zip(&estimates) {
                let share = u.lambda / rate;
                total += share * est.mean;
                var += share * share * est.std_error * est.std_error;
            }
            (Some(total), Some(var.sqrt()))
        }
        None => (None, None),
    };

    Ok(SimReport {
        m,
        seed: config.seed,
        stop_rule: config.stop_rule,
        warmup_deliveries: config.warmup_deliveries,
        users,
        system_time_total,
        system_time_total_se,
        total_time: end - measure_start,
    })
}

/// Empirical against closed-form values for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryComparison {
    pub user: usize,
    pub accuracy_empirical: Option<f64>,
    pub accuracy_theory: f64,
    /// Uses the binomial standard error at the theoretical accuracy.
    pub accuracy_z: Option<f64>,
    pub system_time_empirical: Option<Estimate>,
    pub system_time_theory: f64,
    pub system_time_z: Option<f64>,
    pub service_time_empirical: Option<Estimate>,
    pub service_time_theory: f64,
    pub service_time_z: Option<f64>,
}

impl TheoryComparison {
    /// Largest absolute z-score present.
    pub fn max_abs_z(&self) -> Option<f64> {
        [self.accuracy_z, self.system_time_z, self.service_time_z]
            .into_iter()
            .flatten()
            .map(f64::abs)
            .reduce(f64::max)
    }
}

pub fn compare_with_theory(
    system: &SystemSpec,
    report: &SimReport,
) -> Result<Vec<TheoryComparison>> {
    report
        .users
        .iter()
        .map(|u| {
            let spec = system.user(u.user)?;
            let accuracy_theory = joint_accuracy_exact(report.m, spec.p, spec.w)?;
            let accuracy_z = match u.accuracy {
                Some(a) => {
                    let se = (accuracy_theory * (1.0 - accuracy_theory) / u.resolved as f64).sqrt();
                    (se > 0.0).then(|| (a - accuracy_theory) / se)
                }
                None => None,
            };
            let system_time_theory = expected_system_time_user(system, u.user, report.m)?;
            let service_time_theory = expected_cluster_response_time(spec, report.m)?;
            Ok(TheoryComparison {
                user: u.user,
                accuracy_empirical: u.accuracy,
                accuracy_theory,
                accuracy_z,
                system_time_empirical: u.system_time,
                system_time_theory,
                system_time_z: u.system_time.and_then(|e| e.z_score(system_time_theory)),
                service_time_empirical: u.service_time,
                service_time_theory,
                service_time_z: u.service_time.and_then(|e| e.z_score(service_time_theory)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCheck {
    pub user: usize,
    pub empirical: Option<f64>,
    pub analytical: f64,
    pub z: Option<f64>,
}

/// Runs the simulation and compares each user's aggregated accuracy with
/// the exact closed form.
pub fn empirical_accuracy_check(config: &SimConfig) -> Result<Vec<AccuracyCheck>> {
    let report = run_simulation(config)?;
    Ok(compare_with_theory(&config.system, &report)?
        .into_iter()
        .map(|c| AccuracyCheck {
            user: c.user,
            empirical: c.accuracy_empirical,
            analytical: c.accuracy_theory,
            z: c.accuracy_z,
        })
        .collect())
}

/// Writes trace rows as CSV with a header.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        out.write_record([
            "clock",
            "user",
            "truth",
            "k_true",
            "decision",
            "correct",
            "inter_correct_time",
        ])?;
    }
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
