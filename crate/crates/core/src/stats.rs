//! Sample summaries for simulation output.

use serde::{Deserialize, Serialize};

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 20;

/// Below this many samples each batch would hold a single point, so the
/// i.i.d. formula is used instead.
pub const MIN_BATCHED_SAMPLES: usize = 2 * BATCHES;

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    /// `(value - mean) / std_error`, or `None` for a zero standard error.
    pub fn z_score(&self, value: f64) -> Option<f64> {
        if self.std_error > 0.0 {
            Some((self.mean - value) / self.std_error)
        } else {
            None
        }
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    Some(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Standard error of the mean assuming independent samples.
pub fn iid_estimate(xs: &[f64]) -> Option<Estimate> {
    let var = sample_variance(xs)?;
    Some(Estimate {
        mean: mean(xs)?,
        std_error: (var / xs.len() as f64).sqrt(),
        samples: xs.len(),
    })
}

/// Batch-means estimate with [`BATCHES`] equal batches; trailing samples
/// that do not fill a batch count toward the mean only.
pub fn batch_means(xs: &[f64]) -> Option<Estimate> {
    if xs.len() < MIN_BATCHED_SAMPLES {
        return iid_estimate(xs);
    }
    let size = xs.len() / BATCHES;
    let batch_avgs: Vec<f64> = xs
        .chunks_exact(size)
        .take(BATCHES)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let var = sample_variance(&batch_avgs)?;
    Some(Estimate {
        mean: mean(xs)?,
        std_error: (var / BATCHES as f64).sqrt(),
        samples: xs.len(),
    })
}
