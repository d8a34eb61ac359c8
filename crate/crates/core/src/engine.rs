//! LUCB-style outer loop with propensity-logged audits.
//!
//! Each round recomputes every arm's interval from its sums, picks the
//! empirical best `b` and the strongest challenger `c`, stops once
//! `L_b > max_{k != b} U_k`, and otherwise pulls both `b` and `c`.
//!
//! Per round the trial stream is consumed as: draw for `b`, draw for `c`
//! (see [`crate::environment`]), then the audit coin for `b`, then for `c`.
//! Every judge observation costs `c_f`; each audit adds `c_y`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    audit_score, propensity, solve_lambda, AuditPolicyConfig, PolicyKind, VarianceProxyState,
};
use crate::boundary::{BoundaryParams, CsBudget};
use crate::environment::{trial_rng, CostModel, Environment, TrialRng};
use crate::error::{invalid, Error, Result};
use crate::estimator::{ArmState, ConfidenceInterval, SampleRecord};

/// Audit propensity used during the initialization pulls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitAudit {
    /// `max(rho, pi_min)`, so the plug-in estimates start from real audits.
    #[default]
    Warm,
    /// Bare `pi_min`.
    PiMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub delta: f64,
    pub pi_min: f64,
    pub rho: f64,
    pub cost_model: CostModel,
    /// Cap on LUCB rounds (two pulls each), not counting initialization.
    pub t_max: u64,
    pub n_init: u64,
    pub init_audit: InitAudit,
    pub boundary: BoundaryParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            delta: 0.05,
            pi_min: 0.05,
            rho: 0.1,
            cost_model: CostModel::default(),
            t_max: 20_000,
            n_init: 5,
            init_audit: InitAudit::Warm,
            boundary: BoundaryParams::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self, num_arms: usize) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("{} is not in (0, 1)", self.delta)));
        }
        if !(self.pi_min > 0.0 && self.pi_min <= 1.0) {
            return Err(invalid("pi_min", format!("{} is not in (0, 1]", self.pi_min)));
        }
        if !(self.rho >= self.pi_min && self.rho <= 1.0) {
            return Err(invalid("rho", format!("{} is not in [pi_min, 1]", self.rho)));
        }
        self.cost_model.validate()?;
        if self.n_init == 0 {
            return Err(invalid("n_init", "every arm needs at least one initial pull"));
        }
        if self.t_max < num_arms as u64 * self.n_init {
            return Err(invalid("t_max", "must be at least num_arms * n_init"));
        }
        Ok(())
    }

    fn init_propensity(&self, kind: PolicyKind) -> f64 {
        match (kind, self.init_audit) {
            (PolicyKind::Always, _) => 1.0,
            (_, InitAudit::Warm) => self.rho.max(self.pi_min),
            (_, InitAudit::PiMin) => self.pi_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stopped,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: u64,
    pub seed: u64,
    pub selected_arm: usize,
    /// LUCB rounds completed when the trial ended.
    pub stop_round: u64,
    pub n_pulls: u64,
    pub n_audits: u64,
    pub total_cost: f64,
    pub audit_rate: f64,
    /// `None` when the environment has no unique best arm.
    pub correct: Option<bool>,
    pub termination: Termination,
}

/// `b = argmax theta_hat`, `c = argmax_{k != b} U_k`, ties to the lowest index.
pub fn select_candidates(
    states: &[ArmState],
    intervals: &[ConfidenceInterval],
) -> Result<(usize, usize)> {
    if states.len() < 2 || intervals.len() != states.len() {
        return Err(invalid("states", "need at least two arms with one interval each"));
    }
    let estimates = states
        .iter()
        .map(ArmState::point_estimate)
        .collect::<Result<Vec<_>>>()?;
    Ok(select_from_estimates(&estimates, intervals))
}

fn first_argmax(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

fn select_from_estimates(estimates: &[f64], intervals: &[ConfidenceInterval]) -> (usize, usize) {
    let b = first_argmax(estimates.iter().copied().enumerate());
    let c = first_argmax(
        intervals
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != b)
            .map(|(k, ci)| (k, ci.upper)),
    );
    (b, c)
}

/// Strict separation `L_b > max_{k != b} U_k`.
pub fn should_stop(intervals: &[ConfidenceInterval], b: usize) -> bool {
    let lower = intervals[b].lower;
    intervals
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != b)
        .all(|(_, ci)| lower > ci.upper)
}

/// Runs one trial and returns its summary together with the full sample log.
pub fn run_trial<E: Environment + ?Sized>(
    env: &E,
    cfg: &EngineConfig,
    policy: &AuditPolicyConfig,
    seed: u64,
) -> Result<(TrialResult, Vec<SampleRecord>)> {
    let mut log = Vec::new();
    let mut rng = trial_rng(seed, 0);
    let result = simulate(env, cfg, policy, &mut rng, Some(&mut log))?;
    Ok((TrialResult { seed, ..result }, log))
}

/// Trial `trial_id` of an experiment seeded at `base_seed`, without the sample log.
pub fn run_trial_summary<E: Environment + ?Sized>(
    env: &E,
    cfg: &EngineConfig,
    policy: &AuditPolicyConfig,
    base_seed: u64,
    trial_id: u64,
) -> Result<TrialResult> {
    let mut rng = trial_rng(base_seed, trial_id);
    let r = simulate(env, cfg, policy, &mut rng, None)?;
    Ok(TrialResult {
        trial_id,
        seed: base_seed.wrapping_add(trial_id),
        ..r
    })
}

/// Same as [`run_trial_summary`] but keeps the sample log.
pub fn run_trial_logged<E: Environment + ?Sized>(
    env: &E,
    cfg: &EngineConfig,
    policy: &AuditPolicyConfig,
    base_seed: u64,
    trial_id: u64,
) -> Result<(TrialResult, Vec<SampleRecord>)> {
    let mut log = Vec::new();
    let mut rng = trial_rng(base_seed, trial_id);
    let r = simulate(env, cfg, policy, &mut rng, Some(&mut log))?;
    Ok((
        TrialResult {
            trial_id,
            seed: base_seed.wrapping_add(trial_id),
            ..r
        },
        log,
    ))
}

struct Pull {
    arm: usize,
    context: u32,
    f: f64,
    y: f64,
}

struct Learner<'a> {
    cfg: &'a EngineConfig,
    budget: CsBudget,
    states: Vec<ArmState>,
    vp: VarianceProxyState,
    t: u64,
    n_audits: u64,
    cost: f64,
}

impl Learner<'_> {
    fn commit(
        &mut self,
        pull: &Pull,
        pi: f64,
        rng: &mut TrialRng,
        log: &mut Option<&mut Vec<SampleRecord>>,
    ) -> Result<()> {
        self.t += 1;
        let audited = rng.random::<f64>() < pi;
        let mut cost = self.cfg.cost_model.c_f;
        if audited {
            cost += self.cfg.cost_model.c_y;
            self.n_audits += 1;
        }
        self.cost += cost;
        let rec = SampleRecord {
            t: self.t,
            arm_id: pull.arm,
            context: pull.context,
            f: pull.f,
            pi,
            audited,
            y: audited.then_some(pull.y),
            cost,
        };
        rec.check_propensity(self.cfg.pi_min)?;
        self.states[pull.arm].update(&rec)?;
        self.vp.observe(pull.arm, pull.f, pi, rec.y);
        if let Some(log) = log.as_deref_mut() {
            log.push(rec);
        }
        Ok(())
    }

    fn draw<E: Environment + ?Sized>(&self, env: &E, arm: usize, rng: &mut TrialRng) -> Result<Pull> {
        let d = env.sample_round(arm, rng)?;
        Ok(Pull {
            arm,
            context: d.context,
            f: d.f,
            y: d.y,
        })
    }
}

fn simulate<E: Environment + ?Sized>(
    env: &E,
    cfg: &EngineConfig,
    policy: &AuditPolicyConfig,
    rng: &mut TrialRng,
    mut log: Option<&mut Vec<SampleRecord>>,
) -> Result<TrialResult> {
    let k = env.num_arms();
    if k < 2 {
        return Err(invalid("num_arms", "best-arm identification needs at least two arms"));
    }
    if policy.kind == PolicyKind::Never {
        return Err(Error::PositivityViolation);
    }
    cfg.validate(k)?;
    policy.validate()?;
    if policy.pi_min < cfg.pi_min {
        return Err(invalid("pi_min", "policy floor is below the engine's positivity floor"));
    }
    if let Some(g) = &policy.oracle_g {
        if g.len() != k {
            return Err(invalid("oracle_g", "needs one row per arm"));
        }
    }

    let mut learner = Learner {
        cfg,
        budget: CsBudget::new(cfg.delta, k)?,
        states: (0..k).map(ArmState::new).collect(),
        vp: VarianceProxyState::for_policy(k, policy),
        t: 0,
        n_audits: 0,
        cost: 0.0,
    };

    let init_pi = cfg.init_propensity(policy.kind);
    for _ in 0..cfg.n_init {
        for arm in 0..k {
            let pull = learner.draw(env, arm, rng)?;
            learner.commit(&pull, init_pi, rng, &mut log)?;
        }
    }

    let mut estimates = vec![0.0; k];
    let mut intervals = vec![ConfidenceInterval::UNBOUNDED; k];
    let mut round = 0u64;
    let (selected, termination) = loop {
        for (i, s) in learner.states.iter().enumerate() {
            estimates[i] = s.point_estimate()?;
            intervals[i] = s.interval_with(&cfg.boundary, &learner.budget, cfg.pi_min);
        }
        let (b, c) = select_from_estimates(&estimates, &intervals);
        if should_stop(&intervals, b) {
            break (b, Termination::Stopped);
        }
        if round >= cfg.t_max {
            break (b, Termination::BudgetExhausted);
        }
        round += 1;

        let runner_up = estimates
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != b)
            .map(|(_, e)| *e)
            .fold(f64::NEG_INFINITY, f64::max);
        let gaps = [estimates[b] - runner_up, estimates[b] - estimates[c]];
        let pulls = [learner.draw(env, b, rng)?, learner.draw(env, c, rng)?];

        let pis: [f64; 2] = if policy.kind.is_budget_normalized() {
            let scores: Vec<f64> = pulls
                .iter()
                .zip(gaps)
                .map(|(p, gap)| audit_score(policy, &learner.vp, p.arm, p.f, gap).unwrap_or(0.0))
                .collect();
            let lambda = solve_lambda(&scores, policy.rho, policy.pi_min)?;
            [0, 1].map(|i| propensity(policy, &learner.vp, pulls[i].arm, pulls[i].f, gaps[i], lambda))
        } else {
            [0, 1].map(|i| propensity(policy, &learner.vp, pulls[i].arm, pulls[i].f, gaps[i], 1.0))
        };
        for (pull, pi) in pulls.iter().zip(pis) {
            learner.commit(pull, pi, rng, &mut log)?;
        }
    };

    let n_pulls = learner.t;
    Ok(TrialResult {
        trial_id: 0,
        seed: 0,
        selected_arm: selected,
        stop_round: round,
        n_pulls,
        n_audits: learner.n_audits,
        total_cost: cfg.cost_model.c_f * n_pulls as f64 + cfg.cost_model.c_y * learner.n_audits as f64,
        audit_rate: learner.n_audits as f64 / n_pulls as f64,
        correct: env.best_arm().map(|best| best == selected),
        termination,
    })
}

/// Judge-only baseline: never audits, pulls arms round-robin (two pulls per
/// round for `t_max` rounds), and returns the arm with the largest judge mean.
/// It is not delta-correct under arm-dependent bias.
pub fn run_judge_only_trial<E: Environment + ?Sized>(
    env: &E,
    cfg: &EngineConfig,
    base_seed: u64,
    trial_id: u64,
) -> Result<TrialResult> {
    let k = env.num_arms();
    if k < 2 {
        return Err(invalid("num_arms", "best-arm identification needs at least two arms"));
    }
    cfg.cost_model.validate()?;
    let mut rng = trial_rng(base_seed, trial_id);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0u64; k];
    let n_pulls = 2 * cfg.t_max.max(1);
    for t in 0..n_pulls {
        let arm = (t % k as u64) as usize;
        sums[arm] += env.sample_round(arm, &mut rng)?.f;
        counts[arm] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { f64::NEG_INFINITY } else { s / n as f64 });
    let selected = first_argmax(means.enumerate());
    Ok(TrialResult {
        trial_id,
        seed: base_seed.wrapping_add(trial_id),
        selected_arm: selected,
        stop_round: cfg.t_max,
        n_pulls,
        n_audits: 0,
        total_cost: cfg.cost_model.c_f * n_pulls as f64,
        audit_rate: 0.0,
        correct: env.best_arm().map(|best| best == selected),
        termination: Termination::BudgetExhausted,
    })
}
