//! System description: one parameter block per user/cluster pair plus the
//! timeliness weight.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Parameters of one user and the LLM cluster that serves it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserClusterSpec {
    /// Poisson query rate.
    pub lambda: f64,
    /// Prior probability that a query is true.
    pub w: f64,
    /// Per-agent probability of a correct response.
    pub p: f64,
    /// Fixed per-agent processing time.
    pub t: f64,
    /// Rate of the exponential transmission delay to each agent.
    pub mu: f64,
}

impl UserClusterSpec {
    pub fn new(lambda: f64, w: f64, p: f64, t: f64, mu: f64) -> Result<Self> {
        let spec = Self {
            lambda,
            w,
            p,
            t,
            mu,
        };
        spec.validate().map_err(ModelError::Config)?;
        Ok(spec)
    }

    /// Checks the parameter domains, returning a human-readable diagnostic.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut problems = Vec::new();
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            problems.push(format!(
                "lambda must be a finite number > 0, got {}",
                self.lambda
            ));
        }
        if !(0.0..=1.0).contains(&self.w) {
            problems.push(format!("w must be in [0, 1], got {}", self.w));
        }
        if !(0.0..=1.0).contains(&self.p) {
            problems.push(format!("p must be in [0, 1], got {}", self.p));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            problems.push(format!("t must be a finite number >= 0, got {}", self.t));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            problems.push(format!("mu must be a finite number > 0, got {}", self.mu));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

/// The full system: every user/cluster plus the weight on expected system time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub users: Vec<UserClusterSpec>,
    pub theta: f64,
}

impl SystemSpec {
    pub fn new(users: Vec<UserClusterSpec>, theta: f64) -> Result<Self> {
        let system = Self { users, theta };
        system.validate().map_err(ModelError::Config)?;
        Ok(system)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut problems = Vec::new();
        if self.users.is_empty() {
            problems.push("users must be a nonempty array".to_string());
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            problems.push(format!(
                "theta must be a finite number >= 0, got {}",
                self.theta
            ));
        }
        for (i, user) in self.users.iter().enumerate() {
            if let Err(e) = user.validate() {
                problems.push(format!("users[{i}]: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }

    pub fn n(&self) -> usize {
        self.users.len()
    }

    pub fn total_rate(&self) -> f64 {
        self.users.iter().map(|u| u.lambda).sum()
    }

    pub fn user(&self, index: usize) -> Result<&UserClusterSpec> {
        self.users.get(index).ok_or(ModelError::IndexOutOfRange {
            index,
            len: self.users.len(),
        })
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        Self {
            users: self.users.clone(),
            theta,
        }
    }

    /// Multiplies every arrival rate by `factor`.
    pub fn scale_rates(&self, factor: f64) -> Self {
        let users = self
            .users
            .iter()
            .map(|u| UserClusterSpec {
                lambda: u.lambda * factor,
                ..*u
            })
            .collect();
        Self {
            users,
            theta: self.theta,
        }
    }

    /// The ten-cluster reference family: λ_i = 1, w_i = 0.5,
    /// p_i = 0.7 + (i-1)/90, t_i = 1 + (i-1)/9, μ_i = 2 + 2(i-1)/9.
    pub fn reference_family(theta: f64) -> Self {
        let users = (0..10)
            .map(|i| {
                let i = i as f64;
                UserClusterSpec {
                    lambda: 1.0,
                    w: 0.5,
                    p: 0.7 + i / 90.0,
                    t: 1.0 + i / 9.0,
                    mu: 2.0 + 2.0 * i / 9.0,
                }
            })
            .collect();
        Self { users, theta }
    }
}

/// On-disk JSON configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub theta: f64,
    pub users: Vec<UserClusterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_range: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ConfigFile =
            serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate().map_err(ModelError::Config)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut problems = Vec::new();
        if let Err(e) = self.system().validate() {
            problems.push(e);
        }
        if let Some([lo, hi]) = self.m_range {
            if lo == 0 || lo > hi {
                problems.push(format!(
                    "m_range must satisfy 1 <= min <= max, got [{lo}, {hi}]"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }

    pub fn system(&self) -> SystemSpec {
        SystemSpec {
            users: self.users.clone(),
            theta: self.theta,
        }
    }

    pub fn from_system(system: &SystemSpec) -> Self {
        Self {
            theta: system.theta,
            users: system.users.clone(),
            m_range: None,
            seed: None,
        }
    }
}
