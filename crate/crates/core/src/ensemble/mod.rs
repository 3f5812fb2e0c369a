//! Closed-form accuracy and timeliness of an m-agent ensemble.

pub mod accuracy;
pub mod objective;
pub mod timing;

pub use accuracy::{
    binomial_pmf, concavity_threshold, joint_accuracy_exact, joint_accuracy_gaussian,
    joint_accuracy_gaussian_with, map_decide, map_threshold, map_threshold_real, q_function,
    GaussianForm, Label,
};
pub use objective::{objective, objective_relaxed, objective_relaxed_with, EnsembleMetrics};
pub use timing::{
    expected_cluster_response_time, expected_idle_wait, expected_mean_response_time,
    expected_other_busy_time, expected_system_time_total, expected_system_time_user, harmonic,
    harmonic_approx,
};
