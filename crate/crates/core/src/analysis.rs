//! Ensemble accuracy curves from recorded per-model answers.
//!
//! A response matrix holds one row per query: the true label and every
//! model's answer. Curves average the MAP-aggregated accuracy over all
//! model subsets of each size, which equals the average over growing
//! prefixes of every model ordering because the vote ignores order.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{joint_accuracy_exact, map_decide, Label};
use crate::error::ModelError;

/// Largest model count accepted by [`permutation_average_curve`].
pub const MAX_MODELS: usize = 20;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub query_id: String,
    pub truth: Label,
    pub responses: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub model_names: Vec<String>,
    pub rows: Vec<ResponseRow>,
}

fn parse_label(raw: &str) -> Option<Label> {
    match raw.trim() {
        "1" | "true" => Some(Label::Positive),
        "-1" | "false" => Some(Label::Negative),
        _ => None,
    }
}

impl ResponseMatrix {
    /// Checks shape and uniqueness.
    pub fn new(model_names: Vec<String>, rows: Vec<ResponseRow>) -> Result<Self> {
        if model_names.is_empty() {
            return Err(AnalysisError::Invalid(
                "at least one model is required".into(),
            ));
        }
        if rows.is_empty() {
            return Err(AnalysisError::Invalid(
                "at least one row is required".into(),
            ));
        }
        let mut seen = HashMap::new();
        for (index, row) in rows.iter().enumerate() {
            if row.responses.len() != model_names.len() {
                return Err(AnalysisError::Invalid(format!(
                    "row {index} has {} responses, expected {}",
                    row.responses.len(),
                    model_names.len()
                )));
            }
            if seen.insert(row.query_id.as_str(), index).is_some() {
                return Err(AnalysisError::Invalid(format!(
                    "duplicate query_id {:?}",
                    row.query_id
                )));
            }
        }
        Ok(Self { model_names, rows })
    }

    /// Parses `query_id,true_label,<model_1>,...,<model_M>` with labels
    /// `true`/`false` or `1`/`-1`. Errors carry the 1-based file line.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
        let header = reader.headers()?.clone();
        if header.len() < 3 {
            return Err(AnalysisError::Parse {
                line: 1,
                message: "header must be query_id,true_label followed by at least one model".into(),
            });
        }
        if header[0].trim() != "query_id" || header[1].trim() != "true_label" {
            return Err(AnalysisError::Parse {
                line: 1,
                message: format!(
                    "header must start with query_id,true_label, got {},{}",
                    &header[0], &header[1]
                ),
            });
        }
        let model_names: Vec<String> = header
            .iter()
            .skip(2)
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        let mut first_seen: HashMap<String, u64> = HashMap::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(AnalysisError::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let query_id = record[0].trim().to_string();
            if let Some(previous) = first_seen.insert(query_id.clone(), line) {
                return Err(AnalysisError::Parse {
                    line,
                    message: format!(
                        "duplicate query_id {query_id:?} (first seen on line {previous})"
                    ),
                });
            }
            let mut labels = Vec::with_capacity(header.len() - 1);
            for (column, raw) in record.iter().enumerate().skip(1) {
                labels.push(parse_label(raw).ok_or_else(|| AnalysisError::Parse {
                    line,
                    message: format!("unknown label {raw:?} in column {:?}", &header[column]),
                })?);
            }
            rows.push(ResponseRow {
                query_id,
                truth: labels[0],
                responses: labels[1..].to_vec(),
            });
        }
        if rows.is_empty() {
            return Err(AnalysisError::Parse {
                line: 2,
                message: "no data rows".into(),
            });
        }
        Ok(Self { model_names, rows })
    }

    /// Writes the matrix in the format read by [`ResponseMatrix::from_csv`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["query_id".to_string(), "true_label".to_string()];
        header.extend(self.model_names.iter().cloned());
        out.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.query_id.clone(), row.truth.as_i8().to_string()];
            record.extend(row.responses.iter().map(|l| l.as_i8().to_string()));
            out.write_record(&record)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn n_models(&self) -> usize {
        self.model_names.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Rows answered correctly by each model.
    pub fn correct_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_models()];
        for row in &self.rows {
            for (count, &answer) in counts.iter_mut().zip(&row.responses) {
                if answer == row.truth {
                    *count += 1;
                }
            }
        }
        counts
    }

    pub fn model_accuracies(&self) -> Vec<f64> {
        let rows = self.n_rows() as f64;
        self.correct_counts()
            .into_iter()
            .map(|c| c as f64 / rows)
            .collect()
    }
}

/// Rows packed as bitmasks of positive answers, for fast subset counting.
struct Packed {
    truths: Vec<Label>,
    positives: Vec<u64>,
    correct: Vec<u64>,
}

impl Packed {
    fn new(matrix: &ResponseMatrix) -> Self {
        let positives = matrix
            .rows
            .iter()
            .map(|row| {
                row.responses
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == Label::Positive)
                    .fold(0u64, |mask, (j, _)| mask | 1 << j)
            })
            .collect();
        Self {
            truths: matrix.rows.iter().map(|r| r.truth).collect(),
            positives,
            correct: matrix.correct_counts(),
        }
    }

    /// Number of rows the subset decides correctly.
    fn subset_correct(&self, subset: u64, prior_w: f64) -> Result<u64> {
        let m = subset.count_ones();
        let correct_sum: u64 = (0..self.correct.len())
            .filter(|j| subset & (1 << j) != 0)
            .map(|j| self.correct[j])
            .sum();
        let p = correct_sum as f64 / (m as u64 * self.truths.len() as u64) as f64;
        // With p in {0, 1} only unanimous counts can occur; the rest stay None.
        let mut decisions = Vec::with_capacity(m as usize + 1);
        for k in 0..=m {
            decisions.push(match map_decide(k, m, p, prior_w) {
                Ok(label) => Some(label),
                Err(ModelError::InconsistentEvidence { .. }) => None,
                Err(e) => return Err(e.into()),
            });
        }
        Ok(self
            .positives
            .iter()
            .zip(&self.truths)
            .filter(|(&mask, &truth)| {
                decisions[(mask & subset).count_ones() as usize] == Some(truth)
            })
            .count() as u64)
    }
}

fn check_prior(prior_w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&prior_w) {
        Ok(())
    } else {
        Err(ModelError::Domain(format!("prior must be in [0, 1], got {prior_w}")).into())
    }
}

fn subset_mask(matrix: &ResponseMatrix, subset: &[usize]) -> Result<u64> {
    if subset.is_empty() {
        return Err(AnalysisError::Invalid("subset must not be empty".into()));
    }
    if matrix.n_models() > 64 {
        return Err(AnalysisError::Invalid(format!(
            "at most 64 models supported, got {}",
            matrix.n_models()
        )));
    }
    let mut mask = 0u64;
    for &j in subset {
        if j >= matrix.n_models() {
            return Err(ModelError::IndexOutOfRange {
                index: j,
                len: matrix.n_models(),
            }
            .into());
        }
        if mask & (1 << j) != 0 {
            return Err(AnalysisError::Invalid(format!(
                "model {j} appears twice in the subset"
            )));
        }
        mask |= 1 << j;
    }
    Ok(mask)
}

/// Fraction of rows where the MAP decision of `subset` equals the truth.
///
/// Each row is decided from the count of positive answers in the subset,
/// using the subset's mean per-model accuracy as `p`. Subset order does not
/// matter.
pub fn subset_joint_accuracy(
    matrix: &ResponseMatrix,
    subset: &[usize],
    prior_w: f64,
) -> Result<f64> {
    check_prior(prior_w)?;
    let mask = subset_mask(matrix, subset)?;
    let correct = Packed::new(matrix).subset_correct(mask, prior_w)?;
    Ok(correct as f64 / matrix.n_rows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePoint {
    pub m: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub n_subsets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub points: Vec<EnsemblePoint>,
}

/// Mean, min and max subset accuracy for every ensemble size `1..=M`.
pub fn permutation_average_curve(matrix: &ResponseMatrix, prior_w: f64) -> Result<EnsembleCurve> {
    check_prior(prior_w)?;
    let models = matrix.n_models();
    if models > MAX_MODELS {
        return Err(AnalysisError::Invalid(format!(
            "{models} models exceed the limit of {MAX_MODELS} for exhaustive subset averaging"
        )));
    }
    let packed = Packed::new(matrix);
    let rows = matrix.n_rows() as u64;
    // Per size: total correct rows, min, max, subset count.
    let mut totals = vec![(0u64, u64::MAX, 0u64, 0u64); models + 1];
    for mask in 1u64..(1 << models) {
        let correct = packed.subset_correct(mask, prior_w)?;
        let entry = &mut totals[mask.count_ones() as usize];
        entry.0 += correct;
        entry.1 = entry.1.min(correct);
        entry.2 = entry.2.max(correct);
        entry.3 += 1;
    }
    let points = totals
        .into_iter()
        .enumerate()
        .skip(1)
        .map(|(m, (total, lo, hi, count))| EnsemblePoint {
            m,
            mean: total as f64 / (count * rows) as f64,
            min: lo as f64 / rows as f64,
            max: hi as f64 / rows as f64,
            n_subsets: count,
        })
        .collect();
    Ok(EnsembleCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsPoint {
    pub m: usize,
    pub lower: f64,
    pub upper: f64,
    pub mean_p_theory: f64,
}

/// Closed-form accuracy at the weakest, strongest and mean per-model accuracy.
pub fn bounds_curve(matrix: &ResponseMatrix, prior_w: f64) -> Result<Vec<BoundsPoint>> {
    check_prior(prior_w)?;
    let accuracies = matrix.model_accuracies();
    let p_min = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    let p_max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_avg = matrix.correct_counts().iter().sum::<u64>() as f64
        / (matrix.n_models() * matrix.n_rows()) as f64;
    (1..=matrix.n_models())
        .map(|m| {
            let size = m as u32;
            Ok(BoundsPoint {
                m,
                lower: joint_accuracy_exact(size, p_min, prior_w)?,
                upper: joint_accuracy_exact(size, p_max, prior_w)?,
                mean_p_theory: joint_accuracy_exact(size, p_avg, prior_w)?,
            })
        })
        .collect()
}

/// Sizes whose mean empirical accuracy falls outside `[lower, upper]`.
pub fn containment_violations(curve: &EnsembleCurve, bounds: &[BoundsPoint]) -> Vec<usize> {
    curve
        .points
        .iter()
        .zip(bounds)
        .filter(|(c, b)| c.mean < b.lower - 1e-12 || c.mean > b.upper + 1e-12)
        .map(|(c, _)| c.m)
        .collect()
}

/// Independent Bernoulli models: each query has truth `+1` with probability
/// `prior_w`, and model `j` answers correctly with probability `accuracies[j]`.
pub fn synthetic_matrix(
    accuracies: &[f64],
    rows: usize,
    prior_w: f64,
    seed: u64,
) -> Result<ResponseMatrix> {
    check_prior(prior_w)?;
    if let Some(bad) = accuracies.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(
            ModelError::Domain(format!("model accuracy must be in [0, 1], got {bad}")).into(),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model_names = (1..=accuracies.len())
        .map(|j| format!("model_{j}"))
        .collect();
    let rows = (0..rows)
        .map(|r| {
            let truth = if rng.random_bool(prior_w) {
                Label::Positive
            } else {
                Label::Negative
            };
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
                query_id: format!("q{}", r + 1),
                truth,
                responses,
            }
        })
        .collect();
    ResponseMatrix::new(model_names, rows)
}

pub fn write_curve_csv<W: Write>(curve: &EnsembleCurve, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["m", "mean", "min", "max", "n_subsets"])?;
    for p in &curve.points {
        out.write_record([
            p.m.to_string(),
            p.mean.to_string(),
            p.min.to_string(),
            p.max.to_string(),
            p.n_subsets.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_bounds_csv<W: Write>(bounds: &[BoundsPoint], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["m", "lower", "upper", "mean_p_theory"])?;
    for b in bounds {
        out.write_record([
            b.m.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            b.mean_p_theory.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
