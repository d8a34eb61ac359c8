//! Prediction-powered arm means from propensity-logged samples.
//!
//! Each arm keeps running sums only; the estimate is the proxy mean plus the
//! IPW residual mean `(1/n) * sum A/pi * (Y - F)`, and its confidence interval
//! adds the proxy and residual widths from [`crate::boundary`].

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryParams, CsBudget};
use crate::error::{Error, Result};

/// Opaque context token. The synthetic environments use a segment index.
pub type Context = u32;

/// One pull's log entry, as persisted by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: u64,
    pub arm_id: usize,
    pub context: Context,
    pub f: f64,
    pub pi: f64,
    pub audited: bool,
    pub y: Option<f64>,
    pub cost: f64,
}

impl SampleRecord {
    /// IPW residual `A / pi * (Y - F)`; zero when not audited.
    pub fn ipw_residual(&self) -> Result<f64> {
        if !self.audited {
            return Ok(0.0);
        }
        let y = self.y.ok_or(Error::MissingLabel { t: self.t })?;
        Ok((y - self.f) / self.pi)
    }

    /// Rejects records whose logged propensity falls under the positivity floor.
    pub fn check_propensity(&self, pi_min: f64) -> Result<()> {
        if self.pi < pi_min || !(self.pi > 0.0) {
            return Err(Error::PropensityBelowFloor {
                t: self.t,
                pi: self.pi,
                pi_min,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
}

impl ConfidenceInterval {
    /// Full outcome range, used before an arm's first pull.
    pub const UNBOUNDED: Self = Self {
        lower: 0.0,
        upper: 1.0,
    };

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Per-arm sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub arm_id: usize,
    pub n_pulls: u64,
    pub sum_f: f64,
    pub sum_r: f64,
    pub sum_r_sq: f64,
    pub n_audits: u64,
}

impl ArmState {
    pub fn new(arm_id: usize) -> Self {
        Self {
            arm_id,
            n_pulls: 0,
            sum_f: 0.0,
            sum_r: 0.0,
            sum_r_sq: 0.0,
            n_audits: 0,
        }
    }

    /// Folds one record into the sums. On error the state is left untouched.
    pub fn update(&mut self, rec: &SampleRecord) -> Result<()> {
        if rec.arm_id != self.arm_id {
            return Err(Error::ArmMismatch {
                record: rec.arm_id,
                state: self.arm_id,
            });
        }
        if !(rec.pi > 0.0) {
            return Err(Error::PropensityBelowFloor {
                t: rec.t,
                pi: rec.pi,
                pi_min: 0.0,
            });
        }
        let r = rec.ipw_residual()?;
        self.n_pulls += 1;
        self.sum_f += rec.f;
        if rec.audited {
            self.n_audits += 1;
            self.sum_r += r;
            self.sum_r_sq += r * r;
        }
        Ok(())
    }

    /// Consuming form of [`ArmState::update`].
    pub fn updated(mut self, rec: &SampleRecord) -> Result<Self> {
        self.update(rec)?;
        Ok(self)
    }

    pub fn proxy_mean(&self) -> Result<f64> {
        self.require_data()?;
        Ok(self.sum_f / self.n_pulls as f64)
    }

    pub fn residual_mean(&self) -> Result<f64> {
        self.require_data()?;
        Ok(self.sum_r / self.n_pulls as f64)
    }

    /// `theta_hat = mean(F) + mean(R)`.
    pub fn point_estimate(&self) -> Result<f64> {
        self.require_data()?;
        Ok((self.sum_f + self.sum_r) / self.n_pulls as f64)
    }

    pub fn interval(&self, budget: &CsBudget, pi_min: f64) -> ConfidenceInterval {
        self.interval_with(&BoundaryParams::default(), budget, pi_min)
    }

    pub fn interval_with(
        &self,
        params: &BoundaryParams,
        budget: &CsBudget,
        pi_min: f64,
    ) -> ConfidenceInterval {
        if self.n_pulls == 0 {
            return ConfidenceInterval::UNBOUNDED;
        }
        let dk = budget.delta_k();
        let theta = (self.sum_f + self.sum_r) / self.n_pulls as f64;
        let w = params.width_proxy_unchecked(self.n_pulls, dk)
            + params.width_residual_unchecked(self.n_pulls, self.sum_r_sq, pi_min, dk);
        ConfidenceInterval {
            lower: theta - w,
            upper: theta + w,
        }
    }

    fn require_data(&self) -> Result<()> {
        if self.n_pulls == 0 {
            Err(Error::NoData { arm: self.arm_id })
        } else {
            Ok(())
        }
    }
}
