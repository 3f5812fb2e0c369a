use thiserror::Error;

/// Errors raised by the closed-form model, the optimizer and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),

    /// The threshold form divides by log(p/(1-p)) and log((1-w)/w).
    #[error("degenerate parameters p={p}, w={w}: threshold form undefined")]
    Degenerate { p: f64, w: f64 },

    #[error(
        "inconsistent evidence: {k_true} of {m} positive responses is impossible with p={p}, w={w}"
    )]
    InconsistentEvidence { k_true: u32, m: u32, p: f64, w: f64 },

    #[error("user {user}: aggregated accuracy is zero at m={m}, expected system time is infinite")]
    InfiniteSystemTime { user: usize, m: f64 },

    #[error("user index {index} out of range for {len} users")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("every m in [{m_min}, {m_max}] is infeasible")]
    AllInfeasible { m_min: u32, m_max: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl ModelError {
    /// True for errors that stem from the model being infeasible rather than
    /// from malformed input.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            ModelError::Degenerate { .. }
                | ModelError::InfiniteSystemTime { .. }
                | ModelError::AllInfeasible { .. }
                | ModelError::InconsistentEvidence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
