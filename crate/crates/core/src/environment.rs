//! Seedable synthetic arms: contexts, judge scores, and latent labels.
//!
//! Within one pull the stream is consumed in a fixed order:
//! 1. one uniform for the context segment (only when more than one segment exists),
//! 2. one uniform for the label,
//! 3. one standard normal for the judge noise.
//!
//! The engine then draws one uniform for the audit coin. Joint-table instances
//! draw one uniform for the table row and nothing else.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::Context;

pub type TrialRng = ChaCha8Rng;

/// One independent stream per trial, seeded with `base_seed + trial_id`.
pub fn trial_rng(base_seed: u64, trial_id: u64) -> TrialRng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(trial_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_f: f64,
    pub c_y: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { c_f: 1.0, c_y: 20.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_f > 0.0) {
            return Err(invalid("c_f", "must be positive"));
        }
        if !(self.c_y > 0.0) {
            return Err(invalid("c_y", "must be positive"));
        }
        Ok(())
    }
}

/// Output of one environment draw. `y` is withheld from the learner unless audited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub context: Context,
    pub f: f64,
    pub y: f64,
}

/// Anything the engine can pull arms from.
pub trait Environment {
    fn num_arms(&self) -> usize;
    fn arm_means(&self) -> Vec<f64>;
    fn sample_round(&self, arm: usize, rng: &mut TrialRng) -> Result<Draw>;

    /// Unique maximiser of the arm means, or `None` on ties.
    fn best_arm(&self) -> Option<usize> {
        unique_argmax(&self.arm_means())
    }
}

pub(crate) fn unique_argmax(xs: &[f64]) -> Option<usize> {
    let (best, &max) = xs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if xs.iter().filter(|&&x| x == max).count() > 1 {
        None
    } else {
        Some(best)
    }
}

/// Label family. Only Bernoulli labels are produced by the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OutcomeModel {
    #[default]
    Bernoulli,
}

/// `F = clip(Y + b_k(x) + eps, 0, 1)` with `eps ~ N(0, noise_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum JudgeModel {
    #[default]
    ClippedAdditive,
}

/// Categorical distribution over context segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextModel {
    pub segment_weights: Vec<f64>,
}

impl Default for ContextModel {
    fn default() -> Self {
        Self {
            segment_weights: vec![1.0],
        }
    }
}

impl ContextModel {
    pub fn num_segments(&self) -> usize {
        self.segment_weights.len()
    }

    fn sample(&self, rng: &mut TrialRng) -> Context {
        if self.segment_weights.len() <= 1 {
            return 0;
        }
        let total: f64 = self.segment_weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, &w) in self.segment_weights.iter().enumerate() {
            if u < w {
                return i as Context;
            }
            u -= w;
        }
        (self.segment_weights.len() - 1) as Context
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub arm_means: Vec<f64>,
    /// `bias[k][segment]`.
    pub bias: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub context_model: ContextModel,
    pub outcome_model: OutcomeModel,
    pub judge_model: JudgeModel,
}

impl EnvironmentSpec {
    /// Single-segment instance with the same bias on every arm.
    pub fn homogeneous(arm_means: Vec<f64>, bias: f64, noise_sd: f64) -> Result<Self> {
        let k = arm_means.len();
        let spec = Self {
            arm_means,
            bias: vec![vec![bias]; k],
            noise_sd,
            context_model: ContextModel::default(),
            outcome_model: OutcomeModel::Bernoulli,
            judge_model: JudgeModel::ClippedAdditive,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Four arms with means (0.7, 0.6, 0.5, 0.4), bias 0.1, noise sd 0.15.
    pub fn default_instance() -> Self {
        Self::with_gap(0.1)
    }

    /// Means `(0.6 + gap, 0.6, 0.5, 0.4)`; `gap = 0.1` is the default instance.
    pub fn with_gap(gap: f64) -> Self {
        Self::homogeneous(vec![0.6 + gap, 0.6, 0.5, 0.4], 0.1, 0.15)
            .expect("gap keeps the top mean inside [0, 1]")
    }

    pub fn validate(&self) -> Result<()> {
        if self.arm_means.is_empty() {
            return Err(invalid("arm_means", "at least one arm is required"));
        }
        if self.arm_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(invalid("arm_means", "every mean must lie in [0, 1]"));
        }
        if self.bias.len() != self.arm_means.len() {
            return Err(invalid("bias", "needs one row per arm"));
        }
        let segs = self.context_model.num_segments();
        if segs == 0 || self.context_model.segment_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("segment_weights", "must be a nonempty list of nonnegative weights"));
        }
        if self.bias.iter().any(|row| row.len() != segs || row.iter().any(|b| !b.is_finite())) {
            return Err(invalid("bias", "needs one finite offset per context segment"));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(invalid("noise_sd", "must be finite and nonnegative"));
        }
        Ok(())
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.arm_means.len() {
            Err(Error::InvalidArm {
                arm,
                num_arms: self.arm_means.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Monte-Carlo estimate of `E[(Y - F)^2 | arm]` with its standard error.
    pub fn true_residual_second_moment(
        &self,
        arm: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        self.check_arm(arm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n_samples {
            let d = self.sample_round(arm, &mut rng)?;
            let sq = (d.y - d.f).powi(2);
            s += sq;
            s2 += sq * sq;
        }
        Ok(mean_and_se(s, s2, n_samples))
    }

    /// Monte-Carlo `E[(Y - F)^2 | arm, F in bin]` over `num_bins` equal-width bins of F.
    /// Empty bins report zero.
    pub fn residual_second_moment_by_bin(
        &self,
        arm: usize,
        num_bins: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        self.check_arm(arm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sums = vec![0.0; num_bins];
        let mut counts = vec![0u64; num_bins];
        for _ in 0..n_samples {
            let d = self.sample_round(arm, &mut rng)?;
            let b = score_bin(d.f, num_bins);
            sums[b] += (d.y - d.f).powi(2);
            counts[b] += 1;
        }
        Ok(sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect())
    }
}

/// Index of the equal-width bin of `[0, 1]` holding `f`; `f = 1` falls in the last bin.
pub fn score_bin(f: f64, num_bins: usize) -> usize {
    ((f * num_bins as f64) as usize).min(num_bins.saturating_sub(1))
}

fn mean_and_se(s: f64, s2: f64, n: usize) -> (f64, f64) {
    let n = n as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

impl Environment for EnvironmentSpec {
    fn num_arms(&self) -> usize {
        self.arm_means.len()
    }

    fn arm_means(&self) -> Vec<f64> {
        self.arm_means.clone()
    }

    fn sample_round(&self, arm: usize, rng: &mut TrialRng) -> Result<Draw> {
        self.check_arm(arm)?;
        let context = self.context_model.sample(rng);
        let y = if rng.random::<f64>() < self.arm_means[arm] {
            1.0
        } else {
            0.0
        };
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * self.noise_sd;
        let b = self.bias[arm][context as usize];
        let f = (y + b + eps).clamp(0.0, 1.0);
        Ok(Draw { context, f, y })
    }
}

/// Finite joint law of `(F, Y)` per arm: `rows[k] = [(f, y, prob), ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTableInstance {
    pub rows: Vec<Vec<(f64, f64, f64)>>,
}

impl JointTableInstance {
    pub fn new(rows: Vec<Vec<(f64, f64, f64)>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("rows", "at least one arm is required"));
        }
        for arm in &rows {
            let total: f64 = arm.iter().map(|r| r.2).sum();
            if (total - 1.0).abs() > 1e-9 || arm.iter().any(|r| r.2 < 0.0) {
                return Err(invalid("rows", "probabilities must be nonnegative and sum to 1 per arm"));
            }
            let unit = 0.0..=1.0;
            if arm.iter().any(|r| !unit.contains(&r.0) || !unit.contains(&r.1)) {
                return Err(invalid("rows", "support points must lie in [0, 1]^2"));
            }
        }
        Ok(Self { rows })
    }

    fn check_arm(&self, arm: usize) -> Result<()> {
        if arm >= self.rows.len() {
            Err(Error::InvalidArm {
                arm,
                num_arms: self.rows.len(),
            })
        } else {
            Ok(())
        }
    }

    /// Exact `E[(Y - F)^2 | arm]`.
    pub fn residual_second_moment(&self, arm: usize) -> Result<f64> {
        self.check_arm(arm)?;
        Ok(self.rows[arm].iter().map(|&(f, y, p)| p * (y - f).powi(2)).sum())
    }

    /// Marginal law of F for one arm, merged over equal support points and sorted.
    pub fn judge_marginal(&self, arm: usize) -> Result<Vec<(f64, f64)>> {
        self.check_arm(arm)?;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(f, _, p) in &self.rows[arm] {
            match out.iter_mut().find(|e| e.0 == f) {
                Some(e) => e.1 += p,
                None => out.push((f, p)),
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(out)
    }

    /// Draws a `(F, Y)` row; also used by judge-only learners that ignore `y`.
    pub fn sample_pair(&self, arm: usize, rng: &mut TrialRng) -> Result<(f64, f64)> {
        self.check_arm(arm)?;
        let rows = &self.rows[arm];
        let mut u = rng.random::<f64>();
        for &(f, y, p) in rows {
            if u < p {
                return Ok((f, y));
            }
            u -= p;
        }
        let last = rows.last().expect("validated nonempty");
        Ok((last.0, last.1))
    }
}

impl Environment for JointTableInstance {
    fn num_arms(&self) -> usize {
        self.rows.len()
    }

    fn arm_means(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|arm| arm.iter().map(|&(_, y, p)| p * y).sum())
            .collect()
    }

    fn sample_round(&self, arm: usize, rng: &mut TrialRng) -> Result<Draw> {
        let (f, y) = self.sample_pair(arm, rng)?;
        Ok(Draw { context: 0, f, y })
    }
}

/// The two-arm pair whose judge streams are identical in law while the best arm differs.
///
/// Instance A: arm 1 has `F ~ Bern(0.5)` with `Y = 0.2 / 1.0` by F (mean 0.6), arm 2
/// has `Y = 0.0 / 0.8` by F (mean 0.4). Instance B swaps the arms.
pub fn judge_twin_instances() -> (JointTableInstance, JointTableInstance) {
    let strong = vec![(0.0, 0.2, 0.5), (1.0, 1.0, 0.5)];
    let weak = vec![(0.0, 0.0, 0.5), (1.0, 0.8, 0.5)];
    let a = JointTableInstance::new(vec![strong.clone(), weak.clone()]).expect("valid table");
    let b = JointTableInstance::new(vec![weak, strong]).expect("valid table");
    (a, b)
}

/// Either kind of instance, as selected by name in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Instance {
    Synthetic(EnvironmentSpec),
    Table(JointTableInstance),
}

impl Environment for Instance {
    fn num_arms(&self) -> usize {
        match self {
            Instance::Synthetic(e) => e.num_arms(),
            Instance::Table(e) => e.num_arms(),
        }
    }

    fn arm_means(&self) -> Vec<f64> {
        match self {
            Instance::Synthetic(e) => e.arm_means(),
            Instance::Table(e) => e.arm_means(),
        }
    }

    fn sample_round(&self, arm: usize, rng: &mut TrialRng) -> Result<Draw> {
        match self {
            Instance::Synthetic(e) => e.sample_round(arm, rng),
            Instance::Table(e) => e.sample_round(arm, rng),
        }
    }
}

impl Instance {
    /// Arm-level `E[(Y - F)^2 | k]`, exact for tables and Monte Carlo otherwise.
    pub fn residual_second_moments(&self, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
        (0..self.num_arms())
            .map(|k| match self {
                Instance::Synthetic(e) => e
                    .true_residual_second_moment(k, n_samples, seed.wrapping_add(k as u64))
                    .map(|(g, _)| g),
                Instance::Table(t) => t.residual_second_moment(k),
            })
            .collect()
    }

    /// Per-arm, per-score-bin `E[(Y - F)^2 | k, bin]`.
    pub fn residual_second_moments_by_bin(
        &self,
        num_bins: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        (0..self.num_arms())
            .map(|k| match self {
                Instance::Synthetic(e) => {
                    e.residual_second_moment_by_bin(k, num_bins, n_samples, seed.wrapping_add(k as u64))
                }
                Instance::Table(t) => {
                    let mut sums = vec![0.0; num_bins];
                    let mut mass = vec![0.0; num_bins];
                    for &(f, y, p) in &t.rows[k] {
                        let b = score_bin(f, num_bins);
                        sums[b] += p * (y - f).powi(2);
                        mass[b] += p;
                    }
                    Ok(sums
                        .iter()
                        .zip(&mass)
                        .map(|(s, m)| if *m > 0.0 { s / m } else { 0.0 })
                        .collect())
                }
            })
            .collect()
    }
}
