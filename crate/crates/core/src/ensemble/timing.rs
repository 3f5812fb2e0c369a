//! Response time and system time of the drop-while-busy task processor.

use crate::ensemble::accuracy::joint_accuracy_exact;
use crate::error::{ModelError, Result};
use crate::system::{SystemSpec, UserClusterSpec};

/// Euler–Mascheroni constant, truncated to three digits.
pub const EULER_GAMMA_APPROX: f64 = 0.577;

/// `H_m = 1 + 1/2 + ... + 1/m`, by direct summation.
pub fn harmonic(m: u32) -> Result<f64> {
    if m == 0 {
        return Err(ModelError::Domain("harmonic number needs m >= 1".into()));
    }
    // Smallest terms first.
    Ok((1..=m).rev().map(|j| 1.0 / j as f64).sum())
}

/// `log(m) + 0.577`, the large-`m` approximation of `H_m` for real `m`.
pub fn harmonic_approx(m: f64) -> Result<f64> {
    if !m.is_finite() || m < 1.0 {
        return Err(ModelError::Domain(format!(
            "harmonic approximation needs m >= 1, got {m}"
        )));
    }
    Ok(m.ln() + EULER_GAMMA_APPROX)
}

/// Mean of `t + max` of `m` i.i.d. `Exp(mu)` delays, given the harmonic
/// number to use.
pub(crate) fn response_time_with(user: &UserClusterSpec, harmonic_value: f64) -> f64 {
    user.t + harmonic_value / user.mu
}

/// `E[T_i] = t_i + H_m / mu_i`.
pub fn expected_cluster_response_time(user: &UserClusterSpec, m: u32) -> Result<f64> {
    Ok(response_time_with(user, harmonic(m)?))
}

/// Arrival-weighted mean response time over all users, `E[T]`.
pub fn expected_mean_response_time(system: &SystemSpec, m: u32) -> Result<f64> {
    let h = harmonic(m)?;
    let total = system.total_rate();
    Ok(system
        .users
        .iter()
        .map(|u| u.lambda / total * response_time_with(u, h))
        .sum())
}

/// Mean busy period spent on users other than `i`, `E[T_{-i}]`.
/// Zero for a single-user system.
pub fn expected_other_busy_time(system: &SystemSpec, i: usize, m: u32) -> Result<f64> {
    system.user(i)?;
    let h = harmonic(m)?;
    let others: f64 = system
        .users
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != i)
        .map(|(_, u)| u.lambda)
        .sum();
    if others == 0.0 {
        return Ok(0.0);
    }
    Ok(system
        .users
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != i)
        .map(|(_, u)| u.lambda / others * response_time_with(u, h))
        .sum())
}

/// Mean time from the processor going idle until a query of user `i` is
/// admitted: `(Σ_{l≠i} λ_l E[T_l] + 1) / λ_i`.
pub fn expected_idle_wait(system: &SystemSpec, i: usize, m: u32) -> Result<f64> {
    let user = system.user(i)?;
    let h = harmonic(m)?;
    let others: f64 = system
        .users
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != i)
        .map(|(_, u)| u.lambda * response_time_with(u, h))
        .sum();
    Ok((others + 1.0) / user.lambda)
}

/// `Σ_l λ_l (t_l + H/mu_l) + 1`, the numerator shared by every `E[S_i]`.
pub(crate) fn cycle_numerator(system: &SystemSpec, harmonic_value: f64) -> f64 {
    system
        .users
        .iter()
        .map(|u| u.lambda * response_time_with(u, harmonic_value))
        .sum::<f64>()
        + 1.0
}

/// Mean time between consecutive correct deliveries to user `i`.
pub fn expected_system_time_user(system: &SystemSpec, i: usize, m: u32) -> Result<f64> {
    let user = system.user(i)?;
    let accuracy = joint_accuracy_exact(m, user.p, user.w)?;
    if accuracy <= 0.0 {
        return Err(ModelError::InfiniteSystemTime {
            user: i,
            m: m as f64,
        });
    }
    Ok(cycle_numerator(system, harmonic(m)?) / (user.lambda * accuracy))
}

/// `E[S]` given per-user accuracies and the harmonic value to use.
pub(crate) fn system_time_total_with(
    system: &SystemSpec,
    accuracies: &[f64],
    harmonic_value: f64,
    m: f64,
) -> Result<f64> {
    let mut inverse_sum = 0.0;
    for (i, &a) in accuracies.iter().enumerate() {
        if a <= 0.0 {
            return Err(ModelError::InfiniteSystemTime { user: i, m });
        }
        inverse_sum += 1.0 / a;
    }
    Ok(inverse_sum * cycle_numerator(system, harmonic_value) / system.total_rate())
}

/// Expected system time over all users, each user weighted by its share of
/// arrivals.
pub fn expected_system_time_total(system: &SystemSpec, m: u32) -> Result<f64> {
    let accuracies = system
        .users
        .iter()
        .map(|u| joint_accuracy_exact(m, u.p, u.w))
        .collect::<Result<Vec<_>>>()?;
    system_time_total_with(system, &accuracies, harmonic(m)?, m as f64)
}
