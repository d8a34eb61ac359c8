//! Audit-propensity policies.
//!
//! The Neyman-shaped rule audits with `clip(lambda * s_hat, pi_min, 1)` where
//! `s_hat` estimates the root of the residual second moment `E[(Y - F)^2 | k]`
//! and `lambda` is solved so the candidates' mean propensity hits the target
//! rate `rho`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::environment::score_bin;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Uniform,
    PriceOfPrecision,
    UncertaintyWeighted,
    Neyman,
    Oracle,
    Always,
    Never,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Uniform,
        PolicyKind::PriceOfPrecision,
        PolicyKind::UncertaintyWeighted,
        PolicyKind::Neyman,
        PolicyKind::Oracle,
        PolicyKind::Always,
        PolicyKind::Never,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Uniform => "uniform",
            PolicyKind::PriceOfPrecision => "price_of_precision",
            PolicyKind::UncertaintyWeighted => "uncertainty_weighted",
            PolicyKind::Neyman => "neyman",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Always => "always",
            PolicyKind::Never => "never",
        }
    }

    /// Whether the round's propensities are budget-normalized with [`solve_lambda`].
    pub fn is_budget_normalized(self) -> bool {
        matches!(
            self,
            PolicyKind::Neyman | PolicyKind::Oracle | PolicyKind::UncertaintyWeighted
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "priceofprecision" | "pop" => "price_of_precision",
            "uncertaintyweighted" | "uw" | "adaptive" => "uncertainty_weighted",
            "fixed" => "uniform",
            "no_judge" => "always",
            "no_audit" => "never",
            other => other,
        };
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}`")))
    }
}

/// How finely the plug-in `s_hat` is stratified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    /// One scalar per arm.
    Arm,
    /// Equal-width bins on the judge score within each arm.
    ScoreBins(usize),
}

impl Granularity {
    pub fn num_bins(self) -> usize {
        match self {
            Granularity::Arm => 1,
            Granularity::ScoreBins(b) => b.max(1),
        }
    }

    pub fn bin(self, f: f64) -> usize {
        score_bin(f, self.num_bins())
    }
}

pub const DEFAULT_WARMUP_AUDITS: u64 = 10;
pub const PRIOR_SECOND_MOMENT: f64 = 0.25;
const UW_REG: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPolicyConfig {
    pub kind: PolicyKind,
    pub rho: f64,
    pub pi_min: f64,
    /// Audited samples needed before a plug-in estimate replaces the prior.
    pub warmup_audits: u64,
    pub granularity: Granularity,
    /// True `g[arm][bin]` for the oracle policy.
    pub oracle_g: Option<Vec<Vec<f64>>>,
    /// Cost ratio `c_F / c_Y` used by the price-of-precision rule.
    pub cost_ratio: f64,
}

impl AuditPolicyConfig {
    pub fn new(kind: PolicyKind, rho: f64, pi_min: f64) -> Self {
        Self {
            kind,
            rho,
            pi_min,
            warmup_audits: DEFAULT_WARMUP_AUDITS,
            granularity: Granularity::Arm,
            oracle_g: None,
            cost_ratio: 1.0 / 20.0,
        }
    }

    pub fn uniform(rho: f64, pi_min: f64) -> Self {
        Self::new(PolicyKind::Uniform, rho, pi_min)
    }

    pub fn with_oracle_g(mut self, g: Vec<Vec<f64>>) -> Self {
        self.oracle_g = Some(g);
        self
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi_min > 0.0 && self.pi_min <= 1.0) {
            return Err(invalid("pi_min", format!("{} is not in (0, 1]", self.pi_min)));
        }
        if !(self.rho >= self.pi_min && self.rho <= 1.0) {
            return Err(invalid(
                "rho",
                format!("{} is not in [pi_min, 1] = [{}, 1]", self.rho, self.pi_min),
            ));
        }
        if !(self.cost_ratio > 0.0) {
            return Err(invalid("cost_ratio", "must be positive"));
        }
        if self.kind == PolicyKind::Oracle {
            let g = self
                .oracle_g
                .as_ref()
                .ok_or_else(|| invalid("oracle_g", "the oracle policy needs true second moments"))?;
            let bins = self.granularity.num_bins();
            if g.iter().any(|row| row.len() != bins || row.iter().any(|v| !(*v >= 0.0))) {
                return Err(invalid("oracle_g", "needs one nonnegative value per score bin"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Stratum {
    n_pulls: u64,
    n_audits: u64,
    /// `sum A / pi * (Y - F)^2`
    sum_ipw_sq: f64,
}

impl Stratum {
    fn g_hat(&self) -> f64 {
        if self.n_pulls == 0 {
            0.0
        } else {
            self.sum_ipw_sq / self.n_pulls as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct ArmMoments {
    total: Stratum,
    bins: Vec<Stratum>,
    sum_f: f64,
    sum_f_sq: f64,
    sum_r: f64,
    sum_r_sq: f64,
}

/// Running plug-in estimates of the residual second moment per arm (and bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProxyState {
    granularity: Granularity,
    warmup_audits: u64,
    arms: Vec<ArmMoments>,
}

impl VarianceProxyState {
    pub fn new(num_arms: usize, granularity: Granularity, warmup_audits: u64) -> Self {
        let arm = ArmMoments {
            bins: vec![Stratum::default(); granularity.num_bins()],
            ..Default::default()
        };
        Self {
            granularity,
            warmup_audits,
            arms: vec![arm; num_arms],
        }
    }

    pub fn for_policy(num_arms: usize, cfg: &AuditPolicyConfig) -> Self {
        Self::new(num_arms, cfg.granularity, cfg.warmup_audits)
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    /// Records one pull; `y` is `Some` exactly when audited.
    pub fn observe(&mut self, arm: usize, f: f64, pi: f64, y: Option<f64>) {
        let bin = self.granularity.bin(f);
        let a = &mut self.arms[arm];
        a.sum_f += f;
        a.sum_f_sq += f * f;
        a.total.n_pulls += 1;
        a.bins[bin].n_pulls += 1;
        if let Some(y) = y {
            let resid = y - f;
            let r = resid / pi;
            a.sum_r += r;
            a.sum_r_sq += r * r;
            let w = resid * resid / pi;
            a.total.n_audits += 1;
            a.total.sum_ipw_sq += w;
            a.bins[bin].n_audits += 1;
            a.bins[bin].sum_ipw_sq += w;
        }
    }

    pub fn audits(&self, arm: usize) -> u64 {
        self.arms[arm].total.n_audits
    }

    /// Plug-in `g_hat` for the arm (and the bin of `f`), with warm-up fallback:
    /// bin estimate, else arm estimate, else the prior.
    pub fn g_hat(&self, arm: usize, f: f64) -> f64 {
        let a = &self.arms[arm];
        let bin = &a.bins[self.granularity.bin(f)];
        if self.granularity.num_bins() > 1 && bin.n_audits >= self.warmup_audits {
            bin.g_hat()
        } else if a.total.n_audits >= self.warmup_audits {
            a.total.g_hat()
        } else {
            PRIOR_SECOND_MOMENT
        }
    }

    pub fn residual_mean(&self, arm: usize) -> f64 {
        let a = &self.arms[arm];
        if a.total.n_pulls == 0 {
            0.0
        } else {
            a.sum_r / a.total.n_pulls as f64
        }
    }

    fn sample_sd(n: u64, sum: f64, sum_sq: f64) -> Option<f64> {
        if n < 2 {
            return None;
        }
        let n = n as f64;
        let mean = sum / n;
        Some(((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0).sqrt())
    }

    /// Sample standard deviations `(sd(R), sd(F))` for the arm.
    pub fn residual_and_proxy_sd(&self, arm: usize) -> Option<(f64, f64)> {
        let a = &self.arms[arm];
        let n = a.total.n_pulls;
        Some((
            Self::sample_sd(n, a.sum_r, a.sum_r_sq)?,
            Self::sample_sd(n, a.sum_f, a.sum_f_sq)?,
        ))
    }
}

/// Pre-normalization score `s` for budget-normalized kinds; `None` otherwise.
pub fn audit_score(
    cfg: &AuditPolicyConfig,
    vp: &VarianceProxyState,
    arm: usize,
    f: f64,
    gap_estimate: f64,
) -> Option<f64> {
    match cfg.kind {
        PolicyKind::Neyman => Some(vp.g_hat(arm, f).sqrt()),
        PolicyKind::Oracle => {
            let g = cfg.oracle_g.as_ref()?;
            Some(g[arm][cfg.granularity.bin(f)].sqrt())
        }
        PolicyKind::UncertaintyWeighted => {
            let gap = gap_estimate.max(0.0);
            Some(
                (1.0 / (gap + UW_REG))
                    * (vp.residual_mean(arm).abs() + UW_REG)
                    * (vp.g_hat(arm, f) + UW_REG),
            )
        }
        _ => None,
    }
}

/// Audit propensity for one pull.
///
/// `lambda` is only read by the budget-normalized kinds. The `never` kind
/// returns 0 and is rejected by the engine.
pub fn propensity(
    cfg: &AuditPolicyConfig,
    vp: &VarianceProxyState,
    arm: usize,
    f: f64,
    gap_estimate: f64,
    lambda: f64,
) -> f64 {
    let clip = |x: f64| x.clamp(cfg.pi_min, 1.0);
    match cfg.kind {
        PolicyKind::Uniform => cfg.rho,
        PolicyKind::Always => 1.0,
        PolicyKind::Never => 0.0,
        PolicyKind::PriceOfPrecision => match vp.residual_and_proxy_sd(arm) {
            Some((sd_r, sd_f)) if vp.audits(arm) >= vp.warmup_audits && sd_f > 0.0 => {
                clip(sd_r / sd_f * cfg.cost_ratio.sqrt())
            }
            _ => clip(cfg.rho),
        },
        PolicyKind::Neyman | PolicyKind::Oracle | PolicyKind::UncertaintyWeighted => {
            let s = audit_score(cfg, vp, arm, f, gap_estimate).unwrap_or(0.0);
            clip(lambda * s)
        }
    }
}

const LAMBDA_LO: f64 = 1e-9;
const LAMBDA_HI: f64 = 1e9;

fn clipped_mean(lambda: f64, s: &[f64], pi_min: f64) -> f64 {
    s.iter().map(|&x| (lambda * x).clamp(pi_min, 1.0)).sum::<f64>() / s.len() as f64
}

/// Solves `mean_i clip(lambda * s_i, pi_min, 1) = rho` by bisection over
/// `lambda` in `[1e-9, 1e9]` (log scale).
///
/// When every `s_i` is zero the floor decides the propensities and `1.0` is
/// returned. When the target is unreachable the nearest endpoint is returned.
pub fn solve_lambda(s_values: &[f64], rho: f64, pi_min: f64) -> Result<f64> {
    if s_values.is_empty() {
        return Err(invalid("s_values", "at least one score is required"));
    }
    if s_values.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(invalid("s_values", "scores must be finite and nonnegative"));
    }
    if !(pi_min > 0.0 && pi_min <= 1.0) {
        return Err(invalid("pi_min", format!("{pi_min} is not in (0, 1]")));
    }
    if !(rho >= pi_min && rho <= 1.0) {
        return Err(invalid("rho", format!("{rho} is not in [pi_min, 1]")));
    }
    if s_values.iter().all(|&s| s == 0.0) {
        return Ok(1.0);
    }
    if clipped_mean(LAMBDA_LO, s_values, pi_min) >= rho {
        return Ok(LAMBDA_LO);
    }
    if clipped_mean(LAMBDA_HI, s_values, pi_min) <= rho {
        return Ok(LAMBDA_HI);
    }
    let (mut lo, mut hi) = (LAMBDA_LO.ln(), LAMBDA_HI.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_mean(mid.exp(), s_values, pi_min) < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(hi.exp())
}

/// Clipped square-root rule: `clip(lambda* * sqrt(g_i), pi_min, 1)` with
/// `lambda*` from the budget equation.
pub fn neyman_oracle_policy(g_values: &[f64], rho: f64, pi_min: f64) -> Result<Vec<f64>> {
    if g_values.iter().any(|g| !(*g >= 0.0)) {
        return Err(invalid("g_values", "second moments must be nonnegative"));
    }
    let s: Vec<f64> = g_values.iter().map(|g| g.sqrt()).collect();
    let lambda = solve_lambda(&s, rho, pi_min)?;
    Ok(s.iter().map(|x| (lambda * x).clamp(pi_min, 1.0)).collect())
}

/// IPW variance objective `sum_i g_i / pi_i`.
pub fn audit_objective(g_values: &[f64], pis: &[f64]) -> f64 {
    g_values.iter().zip(pis).map(|(g, p)| g / p).sum()
}
