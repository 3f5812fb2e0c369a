//! Choice of the ensemble size `m`.
//!
//! Two routes: an exhaustive scan of the integer objective, and projected
//! gradient descent with Armijo backtracking on the continuous relaxation,
//! restarted from several log-uniform initial points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::accuracy::GaussianForm;
use crate::ensemble::objective::{objective, objective_relaxed_with, RELAXED_FORM};
use crate::error::{ModelError, Result};
use crate::system::SystemSpec;

/// Relative slack under which two objective values count as equal; the
/// smaller `m` wins such ties.
pub const TIE_TOLERANCE: f64 = 1e-12;
pub const ARMIJO_CONSTANT: f64 = 1e-4;
pub const FD_RELATIVE_STEP: f64 = 1e-4;
const MAX_HALVINGS: u32 = 60;
const MAX_RESTARTS: u32 = 3;
/// Exact and relaxed answers further apart than this are flagged.
pub const DISAGREEMENT_LIMIT: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    Relaxed,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRequest {
    pub system: SystemSpec,
    pub m_min: u32,
    pub m_max: u32,
    pub method: Method,
    pub starts: u32,
    pub step_tolerance: f64,
    pub max_iterations: u32,
    /// Seed for the placement of descent starting points.
    pub seed: u64,
    pub relaxed_form: GaussianForm,
}

impl OptimizeRequest {
    pub fn new(system: SystemSpec) -> Self {
        Self {
            system,
            m_min: 1,
            m_max: 200,
            method: Method::Both,
            starts: 16,
            step_tolerance: 1e-6,
            max_iterations: 10_000,
            seed: 0,
            relaxed_form: RELAXED_FORM,
        }
    }

    pub fn with_range(mut self, m_min: u32, m_max: u32) -> Self {
        self.m_min = m_min;
        self.m_max = m_max;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate().map_err(ModelError::Config)?;
        if self.m_min == 0 || self.m_min > self.m_max {
            return Err(ModelError::Config(format!(
                "m range must satisfy 1 <= m_min <= m_max, got [{}, {}]",
                self.m_min, self.m_max
            )));
        }
        if self.starts == 0 {
            return Err(ModelError::Config("starts must be at least 1".into()));
        }
        if !(self.step_tolerance.is_finite() && self.step_tolerance > 0.0) {
            return Err(ModelError::Config("step_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(ModelError::Config(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub m: u32,
    /// `None` when the exact objective is infeasible at this `m`.
    pub objective_exact: Option<f64>,
    pub objective_relaxed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: usize,
    pub initial_m: f64,
    pub converged_m: f64,
    pub value: f64,
    pub iterations: u32,
    pub restarts: u32,
    /// False when the start never reached a finite objective.
    pub finite: bool,
    /// Objective value after each accepted step, starting point included.
    #[serde(skip)]
    pub path: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub method: Method,
    pub theta: f64,
    pub m_min: u32,
    pub m_max: u32,
    pub best_m_exact: Option<u32>,
    pub best_value_exact: Option<f64>,
    pub best_m_relaxed_real: Option<f64>,
    pub best_value_relaxed: Option<f64>,
    /// Better of floor/ceil of the relaxed optimum under the exact objective.
    pub best_m_relaxed_rounded: Option<u32>,
    pub per_start_trajectories: Vec<StartTrace>,
    pub objective_curve: Vec<CurvePoint>,
    pub infeasible: Vec<u32>,
    /// Set with [`Method::Both`]: exact and rounded relaxed answers differ
    /// by more than [`DISAGREEMENT_LIMIT`].
    pub disagreement: Option<bool>,
}

fn is_better(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - TIE_TOLERANCE * incumbent.abs().max(1.0)
}

fn feasible(value: Result<f64>) -> Result<Option<f64>> {
    match value {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(e) if e.is_infeasible() => Ok(None),
        Err(e) => Err(e),
    }
}

fn curve(request: &OptimizeRequest) -> Result<Vec<CurvePoint>> {
    (request.m_min..=request.m_max)
        .map(|m| {
            Ok(CurvePoint {
                m,
                objective_exact: feasible(objective(&request.system, m, false))?,
                objective_relaxed: feasible(objective_relaxed_with(
                    &request.system,
                    m as f64,
                    request.relaxed_form,
                ))?,
            })
        })
        .collect()
}

fn empty_report(request: &OptimizeRequest, objective_curve: Vec<CurvePoint>) -> OptimizeReport {
    let infeasible = objective_curve
        .iter()
        .filter(|c| c.objective_exact.is_none())
        .map(|c| c.m)
        .collect();
    OptimizeReport {
        method: request.method,
        theta: request.system.theta,
        m_min: request.m_min,
        m_max: request.m_max,
        best_m_exact: None,
        best_value_exact: None,
        best_m_relaxed_real: None,
        best_value_relaxed: None,
        best_m_relaxed_rounded: None,
        per_start_trajectories: Vec::new(),
        objective_curve,
        infeasible,
        disagreement: None,
    }
}

impl OptimizeReport {
    /// Integer argmin of the relaxed objective over the sampled curve.
    pub fn relaxed_grid_argmin(&self) -> Option<(u32, f64)> {
        argmin_by(&self.objective_curve, |c| c.objective_relaxed)
    }
}

fn grid_argmin(points: &[CurvePoint]) -> Option<(u32, f64)> {
    argmin_by(points, |c| c.objective_exact)
}

fn argmin_by(
    points: &[CurvePoint],
    value: impl Fn(&CurvePoint) -> Option<f64>,
) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for point in points {
        if let Some(v) = value(point) {
            match best {
                Some((_, incumbent)) if !is_better(v, incumbent) => {}
                _ => best = Some((point.m, v)),
            }
        }
    }
    best
}

/// Evaluates the exact objective at every integer `m` in range.
pub fn grid_search(request: &OptimizeRequest) -> Result<OptimizeReport> {
    request.validate()?;
    let mut report = empty_report(request, curve(request)?);
    report.method = Method::Grid;
    let (m, v) = grid_argmin(&report.objective_curve).ok_or(ModelError::AllInfeasible {
        m_min: request.m_min,
        m_max: request.m_max,
    })?;
    report.best_m_exact = Some(m);
    report.best_value_exact = Some(v);
    Ok(report)
}

/// Derivative of the relaxed objective by finite differences with step
/// `1e-4 · max(1, m)`; one-sided where a central step would leave `[lo, hi]`.
pub fn relaxed_gradient(
    system: &SystemSpec,
    m: f64,
    form: GaussianForm,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let h = FD_RELATIVE_STEP * m.max(1.0);
    let f = |x: f64| objective_relaxed_with(system, x, form);
    if m - h < lo {
        Ok((f(m + h)? - f(m)?) / h)
    } else if m + h > hi {
        Ok((f(m)? - f(m - h)?) / h)
    } else {
        Ok((f(m + h)? - f(m - h)?) / (2.0 * h))
    }
}

struct Descent<'a> {
    request: &'a OptimizeRequest,
    lo: f64,
    hi: f64,
}

impl Descent<'_> {
    fn value(&self, m: f64) -> f64 {
        objective_relaxed_with(&self.request.system, m, self.request.relaxed_form)
            .unwrap_or(f64::INFINITY)
    }

    fn run(&self, start: usize, initial_m: f64, rng: &mut ChaCha8Rng) -> StartTrace {
        let mut x = initial_m;
        let mut fx = self.value(x);
        let mut restarts = 0;
        while !fx.is_finite() && restarts < MAX_RESTARTS {
            restarts += 1;
            let jitter: f64 = rng.random_range(-0.25..0.25);
            x = (x * (1.0 + jitter)).clamp(self.lo, self.hi);
            fx = self.value(x);
        }
        let mut trace = StartTrace {
            start,
            initial_m,
            converged_m: x,
            value: fx,
            iterations: 0,
            restarts,
            finite: fx.is_finite(),
            path: vec![fx],
        };
        if !fx.is_finite() {
            return trace;
        }

        let mut alpha = 1.0;
        for iteration in 1..=self.request.max_iterations {
            trace.iterations = iteration;
            let Ok(g) = relaxed_gradient(
                &self.request.system,
                x,
                self.request.relaxed_form,
                self.lo,
                self.hi,
            ) else {
                break;
            };
            if !g.is_finite() {
                break;
            }
            // `None` once the projected step falls below tolerance.
            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let candidate = (x - alpha * g).clamp(self.lo, self.hi);
                if (candidate - x).abs() < self.request.step_tolerance {
                    break;
                }
                let fc = self.value(candidate);
                if fc <= fx + ARMIJO_CONSTANT * g * (candidate - x) {
                    accepted = Some((candidate, fc));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((candidate, fc)) = accepted else {
                break;
            };
            x = candidate;
            fx = fc;
            trace.path.push(fc);
            alpha *= 2.0;
        }
        trace.converged_m = x;
        trace.value = fx;
        trace
    }
}

fn better_rounding(request: &OptimizeRequest, m_real: f64) -> Result<Option<u32>> {
    let floor = (m_real.floor() as u32).clamp(request.m_min, request.m_max);
    let ceil = (m_real.ceil() as u32).clamp(request.m_min, request.m_max);
    let f = feasible(objective(&request.system, floor, false))?;
    let c = feasible(objective(&request.system, ceil, false))?;
    Ok(match (f, c) {
        (Some(fv), Some(cv)) => Some(if is_better(cv, fv) { ceil } else { floor }),
        (Some(_), None) => Some(floor),
        (None, Some(_)) => Some(ceil),
        (None, None) => None,
    })
}

/// Multi-start projected gradient descent on the relaxed objective.
pub fn relaxed_descent(request: &OptimizeRequest) -> Result<OptimizeReport> {
    request.validate()?;
    let mut report = empty_report(request, curve(request)?);
    report.method = Method::Relaxed;
    let lo = request.m_min as f64;
    let hi = request.m_max as f64;
    let descent = Descent { request, lo, hi };
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let initial: Vec<f64> = (0..request.starts)
        .map(|_| {
            if lo == hi {
                lo
            } else {
                let u: f64 = rng.random();
                (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
            }
        })
        .collect();
    let traces: Vec<StartTrace> = initial
        .iter()
        .enumerate()
        .map(|(i, &m0)| descent.run(i, m0, &mut rng))
        .collect();

    let best = traces
        .iter()
        .filter(|t| t.finite)
        .fold(None::<&StartTrace>, |best, t| match best {
            Some(b) if !is_better(t.value, b.value) => Some(b),
            _ => Some(t),
        });
    if let Some(best) = best {
        report.best_m_relaxed_real = Some(best.converged_m);
        report.best_value_relaxed = Some(best.value);
        report.best_m_relaxed_rounded = better_rounding(request, best.converged_m)?;
    }
    report.per_start_trajectories = traces;
    if report.best_m_relaxed_rounded.is_none() {
        return Err(ModelError::AllInfeasible {
            m_min: request.m_min,
            m_max: request.m_max,
        });
    }
    Ok(report)
}

/// Runs the method named in the request.
pub fn optimize(request: &OptimizeRequest) -> Result<OptimizeReport> {
    match request.method {
        Method::Grid => grid_search(request),
        Method::Relaxed => relaxed_descent(request),
        Method::Both => {
            let grid = grid_search(request)?;
            let mut report = relaxed_descent(request)?;
            report.method = Method::Both;
            report.best_m_exact = grid.best_m_exact;
            report.best_value_exact = grid.best_value_exact;
            report.disagreement = match (report.best_m_exact, report.best_m_relaxed_rounded) {
                (Some(a), Some(b)) => Some(a.abs_diff(b) > DISAGREEMENT_LIMIT),
                _ => None,
            };
            Ok(report)
        }
    }
}
