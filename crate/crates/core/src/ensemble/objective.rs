//! The weighted accuracy/timeliness objective, in its integer and relaxed
//! forms, and a per-`m` summary of every derived quantity.

use serde::{Deserialize, Serialize};

use crate::ensemble::accuracy::{
    joint_accuracy_exact, joint_accuracy_gaussian, joint_accuracy_gaussian_with, map_threshold,
    GaussianForm,
};
use crate::ensemble::timing::{
    cycle_numerator, expected_cluster_response_time, harmonic, harmonic_approx,
    system_time_total_with,
};
use crate::error::{ModelError, Result};
use crate::system::SystemSpec;

/// Accuracy approximation used by [`objective_relaxed`].
pub const RELAXED_FORM: GaussianForm = GaussianForm::Uncorrected;

fn inverse_sum(accuracies: &[f64], m: f64) -> Result<f64> {
    let mut sum = 0.0;
    for (user, &a) in accuracies.iter().enumerate() {
        if a <= 0.0 {
            return Err(ModelError::InfiniteSystemTime { user, m });
        }
        sum += 1.0 / a;
    }
    Ok(sum)
}

/// `Σ_i 1/p_i,joint(m) + θ E[S]` at integer `m`.
///
/// With `use_approx_accuracy` the accuracies come from the
/// continuity-corrected Gaussian approximation; the harmonic number stays
/// exact either way.
pub fn objective(system: &SystemSpec, m: u32, use_approx_accuracy: bool) -> Result<f64> {
    let accuracies = system
        .users
        .iter()
        .map(|u| {
            if use_approx_accuracy {
                joint_accuracy_gaussian(m as f64, u.p, u.w)
            } else {
                joint_accuracy_exact(m, u.p, u.w)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let accuracy_term = inverse_sum(&accuracies, m as f64)?;
    let system_time = system_time_total_with(system, &accuracies, harmonic(m)?, m as f64)?;
    Ok(accuracy_term + system.theta * system_time)
}

/// Continuous relaxation over real `m >= 1`, using [`RELAXED_FORM`].
pub fn objective_relaxed(system: &SystemSpec, m: f64) -> Result<f64> {
    objective_relaxed_with(system, m, RELAXED_FORM)
}

/// `Σ_i 1/p̃_i(m) · (1 + θ (Σ_l λ_l (t_l + (log m + 0.577)/μ_l) + 1) / Σ_l λ_l)`.
pub fn objective_relaxed_with(system: &SystemSpec, m: f64, form: GaussianForm) -> Result<f64> {
    let h = harmonic_approx(m)?;
    let accuracies = system
        .users
        .iter()
        .map(|u| joint_accuracy_gaussian_with(form, m, u.p, u.w))
        .collect::<Result<Vec<_>>>()?;
    let accuracy_term = inverse_sum(&accuracies, m)?;
    let cycle = cycle_numerator(system, h) / system.total_rate();
    Ok(accuracy_term * (1.0 + system.theta * cycle))
}

/// Every closed-form quantity for one ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub m: u32,
    /// `None` where the threshold form is undefined (p ∈ {0, ½, 1}, w ∈ {0, 1}).
    pub k_star: Vec<Option<f64>>,
    pub p_joint: Vec<f64>,
    pub p_joint_approx: Vec<Option<f64>>,
    pub e_t: Vec<f64>,
    pub e_s: Vec<f64>,
    pub e_s_total: f64,
    pub objective_exact: f64,
    pub objective_approx: Option<f64>,
}

impl EnsembleMetrics {
    pub fn compute(system: &SystemSpec, m: u32) -> Result<Self> {
        let mut k_star = Vec::with_capacity(system.n());
        let mut p_joint = Vec::with_capacity(system.n());
        let mut p_joint_approx = Vec::with_capacity(system.n());
        let mut e_t = Vec::with_capacity(system.n());
        for u in &system.users {
            k_star.push(optional(map_threshold(m, u.p, u.w))?);
            p_joint.push(joint_accuracy_exact(m, u.p, u.w)?);
            p_joint_approx.push(optional(joint_accuracy_gaussian(m as f64, u.p, u.w))?);
            e_t.push(expected_cluster_response_time(u, m)?);
        }
        let numerator = cycle_numerator(system, harmonic(m)?);
        let e_s = system
            .users
            .iter()
            .zip(&p_joint)
            .enumerate()
            .map(|(i, (u, &a))| {
                if a <= 0.0 {
                    Err(ModelError::InfiniteSystemTime {
                        user: i,
                        m: m as f64,
                    })
                } else {
                    Ok(numerator / (u.lambda * a))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let e_s_total = system_time_total_with(system, &p_joint, harmonic(m)?, m as f64)?;
        let objective_exact = objective(system, m, false)?;
        let objective_approx = if p_joint_approx.iter().all(Option::is_some) {
            Some(objective(system, m, true)?)
        } else {
            None
        };
        Ok(Self {
            m,
            k_star,
            p_joint,
            p_joint_approx,
            e_t,
            e_s,
            e_s_total,
            objective_exact,
            objective_approx,
        })
    }
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(ModelError::Degenerate { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}
