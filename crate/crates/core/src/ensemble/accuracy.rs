//! MAP aggregation of binary agent responses and the resulting ensemble
//! accuracy, exact and Gaussian-approximated.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{ModelError, Result};

/// Largest m for which binomial coefficients are computed exactly.
pub const EXACT_BINOMIAL_MAX_M: u32 = 64;

/// Posterior log-ratios within this distance of zero count as ties.
/// Ties decide `Positive`.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// A binary label, `+1` (true) or `-1` (false).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

/// Gaussian tail function, `Q(x) = P(Z > x)` for standard normal `Z`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn check_probability(name: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::Domain(format!(
            "{name} must be in [0, 1], got {value}"
        )))
    }
}

fn nondegenerate(p: f64, w: f64) -> Result<()> {
    check_probability("p", p)?;
    check_probability("w", w)?;
    if p == 0.0 || p == 0.5 || p == 1.0 || w == 0.0 || w == 1.0 {
        return Err(ModelError::Degenerate { p, w });
    }
    Ok(())
}

/// Prior-and-accuracy offset of the threshold from `m/2`.
fn threshold_offset(p: f64, w: f64) -> f64 {
    ((1.0 - w) / w).ln() / (2.0 * (p / (1.0 - p)).ln())
}

/// Minimum count of `+1` responses for the MAP estimate to be `+1` when
/// `p > 0.5`; returned unrounded.
///
/// `k* = m/2 + log((1-w)/w) / (2 log(p/(1-p)))`. For `p < 0.5` the rule flips:
/// the estimate is `-1` when `k >= k*`.
pub fn map_threshold(m: u32, p: f64, w: f64) -> Result<f64> {
    map_threshold_real(m as f64, p, w)
}

/// [`map_threshold`] for real-valued `m`.
pub fn map_threshold_real(m: f64, p: f64, w: f64) -> Result<f64> {
    nondegenerate(p, w)?;
    if !(m.is_finite() && m > 0.0) {
        return Err(ModelError::Domain(format!("m must be positive, got {m}")));
    }
    Ok(m / 2.0 + threshold_offset(p, w))
}

/// MAP decision from `k_true` positive responses out of `m`.
///
/// Works from the posterior log-ratio
/// `log(w/(1-w)) + (2k - m) log(p/(1-p))`, so `p <= 0.5` and boundary priors
/// need no special threshold. `w = 1` always decides `+1`, `w = 0` always
/// `-1`. With `p` in `{0, 1}` only unanimous evidence is possible.
pub fn map_decide(k_true: u32, m: u32, p: f64, w: f64) -> Result<Label> {
    check_probability("p", p)?;
    check_probability("w", w)?;
    if m == 0 {
        return Err(ModelError::Domain("m must be at least 1".into()));
    }
    if k_true > m {
        return Err(ModelError::Domain(format!("k_true={k_true} exceeds m={m}")));
    }
    if w == 1.0 {
        return Ok(Label::Positive);
    }
    if w == 0.0 {
        return Ok(Label::Negative);
    }
    if p == 0.0 || p == 1.0 {
        // Every agent is right (p = 1) or every agent is wrong (p = 0).
        let all_positive = k_true == m;
        let all_negative = k_true == 0;
        return match (p == 1.0, all_positive, all_negative) {
            (true, true, _) | (false, _, true) => Ok(Label::Positive),
            (true, _, true) | (false, true, _) => Ok(Label::Negative),
            _ => Err(ModelError::InconsistentEvidence { k_true, m, p, w }),
        };
    }
    let prior = w.ln() - (1.0 - w).ln();
    let evidence = p.ln() - (1.0 - p).ln();
    let margin = 2.0 * k_true as f64 - m as f64;
    let log_ratio = prior + margin * evidence;
    if log_ratio >= -TIE_TOLERANCE {
        Ok(Label::Positive)
    } else {
        Ok(Label::Negative)
    }
}

/// `P(K = k)` for `K ~ Binomial(m, p)`.
///
/// Exact integer coefficients up to [`EXACT_BINOMIAL_MAX_M`], log-space above.
pub fn binomial_pmf(m: u32, k: u32, p: f64) -> f64 {
    binomial_term(m, k, p, 1.0 - p)
}

/// `C(m, k) · success^k · failure^(m-k)`, with `failure` passed explicitly so
/// that callers can swap the roles of `p` and `1 - p` without rounding.
fn binomial_term(m: u32, k: u32, success: f64, failure: f64) -> f64 {
    if k > m {
        return 0.0;
    }
    if success == 0.0 || failure == 0.0 {
        let all = if success == 0.0 { 0 } else { m };
        return if k == all { 1.0 } else { 0.0 };
    }
    if m <= EXACT_BINOMIAL_MAX_M {
        let coeff = exact_binomial(m, k) as f64;
        coeff * success.powi(k as i32) * failure.powi((m - k) as i32)
    } else {
        let log_pmf = ln_binomial(m as u64, k as u64)
            + k as f64 * success.ln()
            + (m - k) as f64 * failure.ln();
        log_pmf.exp()
    }
}

fn exact_binomial(m: u32, k: u32) -> u128 {
    let k = k.min(m - k) as u128;
    let m = m as u128;
    let mut c: u128 = 1;
    for j in 0..k {
        c = c * (m - j) / (j + 1);
    }
    c
}

/// Probability that the MAP estimate from `m` agents equals the truth.
///
/// Each outcome `k` is decided by [`map_decide`]; the result is
/// `w·P(decide +1 | U=+1) + (1-w)·P(decide -1 | U=-1)`.
pub fn joint_accuracy_exact(m: u32, p: f64, w: f64) -> Result<f64> {
    check_probability("p", p)?;
    check_probability("w", w)?;
    if m == 0 {
        return Err(ModelError::Domain("m must be at least 1".into()));
    }
    let mut total = 0.0;
    for k in 0..=m {
        let under_true = binomial_term(m, k, p, 1.0 - p);
        let under_false = binomial_term(m, k, 1.0 - p, p);
        if under_true == 0.0 && under_false == 0.0 {
            continue;
        }
        total += match map_decide(k, m, p, w)? {
            Label::Positive => w * under_true,
            Label::Negative => (1.0 - w) * under_false,
        };
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Which normal approximation of the binomial tails to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianForm {
    /// Tails shifted by the ±0.5 continuity correction.
    #[default]
    ContinuityCorrected,
    /// Plain normal tails at the real-valued threshold. Smooth in `m`; at
    /// `w = 0.5` it equals `Q(√m (0.5 - p) / √(p(1-p)))`.
    Uncorrected,
}

impl GaussianForm {
    fn shift(self) -> f64 {
        match self {
            GaussianForm::ContinuityCorrected => 0.5,
            GaussianForm::Uncorrected => 0.0,
        }
    }
}

/// Continuity-corrected Gaussian approximation of [`joint_accuracy_exact`],
/// accepting real `m`.
pub fn joint_accuracy_gaussian(m: f64, p: f64, w: f64) -> Result<f64> {
    joint_accuracy_gaussian_with(GaussianForm::ContinuityCorrected, m, p, w)
}

pub fn joint_accuracy_gaussian_with(form: GaussianForm, m: f64, p: f64, w: f64) -> Result<f64> {
    let k_star = map_threshold_real(m, p, w)?;
    let sd = (m * p * (1.0 - p)).sqrt();
    let c = form.shift();
    let accept_true = q_function((k_star - m * p - c) / sd);
    let reject_false = q_function((m * (1.0 - p) - k_star + c) / sd);
    Ok((w * accept_true + (1.0 - w) * reject_false).clamp(0.0, 1.0))
}

/// Value of `m` above which the Gaussian-approximated accuracy is concave
/// in `m`: `|A| / (p - 0.5)` with `A = log((1-w)/w) / (2 log(p/(1-p))) - 0.5`.
pub fn concavity_threshold(p: f64, w: f64) -> Result<f64> {
    if !(p > 0.5 && p < 1.0) {
        return Err(ModelError::Domain(format!(
            "concavity threshold needs 0.5 < p < 1, got {p}"
        )));
    }
    if !(w > 0.0 && w < 1.0) {
        return Err(ModelError::Degenerate { p, w });
    }
    let a = threshold_offset(p, w) - 0.5;
    Ok(a.abs() / (p - 0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn q_function_reference_values() {
        // 30-digit reference values.
        let cases = [
            (-2.0, 0.977_249_868_051_820_8),
            (0.5, 0.308_537_538_725_986_9),
            (1.0, 0.158_655_253_931_457_05),
            (3.0, 0.001_349_898_031_630_094_5),
            (5.0, 2.866_515_718_791_939e-7),
            (8.0, 6.220_960_574_271_784e-16),
        ];
        for (x, want) in cases {
            let got = q_function(x);
            assert!(
                ((got - want) / want).abs() < 1e-10,
                "Q({x}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn threshold_examples() {
        assert_abs_diff_eq!(map_threshold(5, 0.8, 0.5).unwrap(), 2.5, epsilon = 1e-15);
        // Prior 0.75 pulls the threshold below m/2 by exactly 1/2 at p = 0.75.
        assert_abs_diff_eq!(map_threshold(4, 0.75, 0.75).unwrap(), 1.5, epsilon = 1e-12);
        // 3.5 + log(7/3) / (2 log 9), 30-digit value.
        assert_abs_diff_eq!(
            map_threshold(7, 0.9, 0.3).unwrap(),
            3.692_810_937_290_355_6,
            epsilon = 1e-12
        );
    }

    #[test]
    fn threshold_rejects_degenerate() {
        for (p, w) in [(0.0, 0.5), (0.5, 0.5), (1.0, 0.5), (0.7, 0.0), (0.7, 1.0)] {
            assert!(matches!(
                map_threshold(5, p, w),
                Err(ModelError::Degenerate { .. })
            ));
        }
    }

    #[test]
    fn decide_examples() {
        assert_eq!(map_decide(3, 5, 0.8, 0.5).unwrap(), Label::Positive);
        assert_eq!(map_decide(2, 5, 0.8, 0.5).unwrap(), Label::Negative);
        // 0.9·0.8²·0.2³ = 72/15625 against 0.1·0.2²·0.8³ = 32/15625.
        assert_eq!(map_decide(2, 5, 0.8, 0.9).unwrap(), Label::Positive);
        // Even-m tie at w = 0.5.
        assert_eq!(map_decide(2, 4, 0.8, 0.5).unwrap(), Label::Positive);
        // w = 1 - p makes the prior exactly cancel one vote.
        assert_eq!(map_decide(3, 5, 0.7, 0.3).unwrap(), Label::Positive);
        assert_eq!(map_decide(2, 5, 0.7, 0.3).unwrap(), Label::Negative);
    }

    #[test]
    fn decide_degenerate_parameters() {
        assert_eq!(map_decide(0, 5, 0.8, 1.0).unwrap(), Label::Positive);
        assert_eq!(map_decide(5, 5, 0.8, 0.0).unwrap(), Label::Negative);
        // Uninformative agents: the prior decides.
        assert_eq!(map_decide(0, 3, 0.5, 0.6).unwrap(), Label::Positive);
        assert_eq!(map_decide(3, 3, 0.5, 0.4).unwrap(), Label::Negative);
        assert_eq!(map_decide(3, 3, 1.0, 0.5).unwrap(), Label::Positive);
        assert_eq!(map_decide(0, 3, 1.0, 0.5).unwrap(), Label::Negative);
        assert_eq!(map_decide(0, 3, 0.0, 0.5).unwrap(), Label::Positive);
        assert!(matches!(
            map_decide(1, 3, 1.0, 0.5),
            Err(ModelError::InconsistentEvidence { .. })
        ));
        assert!(map_decide(4, 3, 0.8, 0.5).is_err());
        assert!(map_decide(0, 0, 0.8, 0.5).is_err());
    }

    #[test]
    fn decide_flips_below_half() {
        // Agents that are mostly wrong: a majority of +1 votes points to -1.
        assert_eq!(map_decide(4, 5, 0.3, 0.5).unwrap(), Label::Negative);
        assert_eq!(map_decide(1, 5, 0.3, 0.5).unwrap(), Label::Positive);
    }

    #[test]
    fn exact_accuracy_examples() {
        assert_abs_diff_eq!(
            joint_accuracy_exact(1, 0.8, 0.5).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            joint_accuracy_exact(3, 0.8, 0.5).unwrap(),
            0.896,
            epsilon = 1e-14
        );
        // Rational enumeration of the 2³ patterns gives 118/125.
        assert_abs_diff_eq!(
            joint_accuracy_exact(3, 0.8, 0.9).unwrap(),
            0.944,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            joint_accuracy_exact(4, 1.0, 0.3).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            joint_accuracy_exact(4, 0.5, 0.3).unwrap(),
            0.7,
            epsilon = 1e-15
        );
    }

    #[test]
    fn exact_and_log_space_binomials_agree() {
        let m = EXACT_BINOMIAL_MAX_M;
        for k in [0, 1, 20, 32, 50, 64] {
            let exact = binomial_pmf(m, k, 0.37);
            let logspace = (ln_binomial(m as u64, k as u64)
                + k as f64 * 0.37f64.ln()
                + (m - k) as f64 * 0.63f64.ln())
            .exp();
            assert!(
                (exact - logspace).abs() <= 1e-12 * exact.max(1e-300),
                "k={k}"
            );
        }
        let total: f64 = (0..=500).map(|k| binomial_pmf(500, k, 0.61)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_examples() {
        let exact = joint_accuracy_exact(101, 0.7, 0.5).unwrap();
        let approx = joint_accuracy_gaussian(101.0, 0.7, 0.5).unwrap();
        assert!((exact - approx).abs() < 0.005);
        // 0.5·Q(-2) + 0.5·Q(0.5): both tails contribute, unlike the exact 0.8.
        assert_abs_diff_eq!(
            joint_accuracy_gaussian(1.0, 0.8, 0.5).unwrap(),
            0.642_893_703_388_903_8,
            epsilon = 1e-12
        );
        assert!(joint_accuracy_gaussian(401.0, 0.6, 0.5).unwrap() >= 0.99);
        assert!(joint_accuracy_gaussian(10.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn uncorrected_form_is_single_q_at_uniform_prior() {
        for m in [1.0f64, 2.5, 19.0, 80.0] {
            let p: f64 = 0.73;
            let single = q_function(m.sqrt() * (0.5 - p) / (p * (1.0 - p)).sqrt());
            let got = joint_accuracy_gaussian_with(GaussianForm::Uncorrected, m, p, 0.5).unwrap();
            assert_abs_diff_eq!(got, single, epsilon = 1e-14);
        }
    }

    #[test]
    fn concavity_threshold_examples() {
        assert_abs_diff_eq!(concavity_threshold(0.7, 0.5).unwrap(), 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            concavity_threshold(0.75, 0.25).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            concavity_threshold(0.75, 0.75).unwrap(),
            4.0,
            epsilon = 1e-12
        );
        assert!(concavity_threshold(0.5, 0.5).is_err());
        assert!(concavity_threshold(0.4, 0.5).is_err());
    }

    #[test]
    fn concave_above_threshold() {
        let h = 1e-3;
        for (p, w) in [(0.9, 0.3), (0.7, 0.5), (0.6, 0.7), (0.55, 0.5)] {
            let start = concavity_threshold(p, w).unwrap().max(1.0) + h;
            let f = |m: f64| joint_accuracy_gaussian(m, p, w).unwrap();
            for i in 0..2000 {
                let m = start + i as f64 * 0.1;
                let second = (f(m + h) - 2.0 * f(m) + f(m - h)) / (h * h);
                assert!(
                    second <= 1e-6,
                    "p={p} w={w} m={m}: second difference {second}"
                );
            }
        }
    }
}
