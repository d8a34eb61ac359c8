//! Experiment driver: anytime coverage of the proxy sequence, allocator
//! comparison across gaps, failure-mode baselines, and single verbose runs.
//!
//! Trials are seeded `base_seed + trial_id` and fanned out with
//! [`crate::parallel::map_trials`]; rows are assembled in a fixed order, so
//! reruns with the same config produce byte-identical files regardless of the
//! worker count.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{AuditPolicyConfig, Granularity, PolicyKind};
use crate::boundary::{BoundaryParams, CsBudget};
use crate::engine::{
    run_judge_only_trial, run_trial_logged, run_trial_summary, EngineConfig, InitAudit, TrialResult,
};
use crate::environment::{judge_twin_instances, trial_rng, CostModel, EnvironmentSpec, Instance};
use crate::error::{invalid, Error, Result};
use crate::estimator::SampleRecord;
use crate::oracle::{judge_only_error_rate, JudgeOnlyRule};
use crate::parallel::map_trials;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Coverage,
    Compare,
    FailureModes,
    Run,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::Compare => "compare",
            ExperimentKind::FailureModes => "failure_modes",
            ExperimentKind::Run => "run",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "coverage" => Ok(ExperimentKind::Coverage),
            "compare" => Ok(ExperimentKind::Compare),
            "failure_modes" => Ok(ExperimentKind::FailureModes),
            "run" => Ok(ExperimentKind::Run),
            other => Err(Error::Config(format!("unknown experiment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Falls back to the experiment's default when unset.
    pub n_trials: Option<u64>,
    pub base_seed: u64,
    /// `default`, `twin_a`, `twin_b`, or `custom` (uses `arm_means`).
    pub environment: String,
    pub arm_means: Option<Vec<f64>>,
    pub bias: f64,
    pub noise_sd: f64,
    pub policies: Vec<PolicyKind>,
    pub deltas: Vec<f64>,
    pub gaps: Vec<f64>,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub workers: Option<usize>,
    pub pi_min: f64,
    pub rho: f64,
    pub t_max: u64,
    pub n_init: u64,
    pub c_f: f64,
    pub c_y: f64,
    pub init_audit: InitAudit,
    pub granularity: Granularity,
    pub mus: Vec<f64>,
    pub sample_sizes: Vec<u64>,
    pub judge_only_horizons: Vec<u64>,
    pub judge_only_trials: u64,
    pub oracle_mc_samples: usize,
    pub dump_logs: bool,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let policies = match experiment {
            ExperimentKind::Coverage => vec![],
            ExperimentKind::Compare => vec![
                PolicyKind::Oracle,
                PolicyKind::Neyman,
                PolicyKind::PriceOfPrecision,
                PolicyKind::UncertaintyWeighted,
                PolicyKind::Uniform,
            ],
            ExperimentKind::FailureModes => vec![
                PolicyKind::Always,
                PolicyKind::Never,
                PolicyKind::Uniform,
                PolicyKind::UncertaintyWeighted,
            ],
            ExperimentKind::Run => vec![PolicyKind::Neyman],
        };
        let deltas = match experiment {
            ExperimentKind::Coverage => vec![0.01, 0.05, 0.1, 0.2],
            _ => vec![0.05],
        };
        let gaps = match experiment {
            ExperimentKind::Compare => vec![0.10, 0.15, 0.20],
            _ => vec![0.10],
        };
        Self {
            experiment,
            n_trials: None,
            base_seed: 42,
            environment: "default".into(),
            arm_means: None,
            bias: 0.1,
            noise_sd: 0.15,
            policies,
            deltas,
            gaps,
            out_dir: PathBuf::from("results"),
            format: OutputFormat::Csv,
            workers: None,
            pi_min: 0.05,
            rho: 0.1,
            t_max: 20_000,
            n_init: 5,
            c_f: 1.0,
            c_y: 20.0,
            init_audit: InitAudit::Warm,
            granularity: Granularity::ScoreBins(4),
            mus: vec![0.3, 0.5, 0.7],
            sample_sizes: vec![50, 100, 200, 500],
            judge_only_horizons: vec![1_000, 100_000],
            judge_only_trials: 1000,
            oracle_mc_samples: 1_000_000,
            dump_logs: false,
        }
    }

    pub fn trials(&self) -> u64 {
        self.n_trials.unwrap_or(match self.experiment {
            ExperimentKind::Coverage => 1000,
            ExperimentKind::Compare => 20,
            ExperimentKind::FailureModes => 30,
            ExperimentKind::Run => 1,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        self.apply_kv_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => {
                let kind: ExperimentKind = value.parse()?;
                if kind != self.experiment {
                    return Err(Error::Config(format!(
                        "config is for `{}` but `{}` was requested",
                        kind.name(),
                        self.experiment.name()
                    )));
                }
            }
            "n_trials" | "trials" => self.n_trials = Some(parse(key, value)?),
            "base_seed" | "seed" => self.base_seed = parse(key, value)?,
            "environment" => self.environment = value.to_string(),
            "arm_means" => self.arm_means = Some(parse_list(key, value)?),
            "bias" => self.bias = parse(key, value)?,
            "noise_sd" => self.noise_sd = parse(key, value)?,
            "policies" | "policy" => self.policies = parse_list(key, value)?,
            "deltas" | "delta" => self.deltas = parse_list(key, value)?,
            "gaps" | "gap" => self.gaps = parse_list(key, value)?,
            "out_dir" | "out" => self.out_dir = PathBuf::from(value),
            "format" => self.format = value.parse()?,
            "workers" => {
                let n: usize = parse(key, value)?;
                self.workers = (n > 0).then_some(n);
            }
            "pi_min" => self.pi_min = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "t_max" => self.t_max = parse(key, value)?,
            "n_init" => self.n_init = parse(key, value)?,
            "c_f" => self.c_f = parse(key, value)?,
            "c_y" => self.c_y = parse(key, value)?,
            "init_audit" => {
                self.init_audit = match value {
                    "warm" => InitAudit::Warm,
                    "pi_min" => InitAudit::PiMin,
                    _ => return Err(Error::Config(format!("init_audit: unknown mode `{value}`"))),
                }
            }
            "granularity" => {
                self.granularity = match value {
                    "arm" => Granularity::Arm,
                    v => match v.strip_prefix("bins").map(str::parse::<usize>) {
                        Some(Ok(n)) if n >= 1 => Granularity::ScoreBins(n),
                        _ => return Err(Error::Config(format!("granularity: expected `arm` or `binsN`, got `{v}`"))),
                    },
                }
            }
            "mus" | "mu" => self.mus = parse_list(key, value)?,
            "sample_sizes" => self.sample_sizes = parse_list(key, value)?,
            "judge_only_horizons" => self.judge_only_horizons = parse_list(key, value)?,
            "judge_only_trials" => self.judge_only_trials = parse(key, value)?,
            "oracle_mc_samples" => self.oracle_mc_samples = parse(key, value)?,
            "dump_logs" => self.dump_logs = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials() == 0 {
            return Err(invalid("n_trials", "must be at least 1"));
        }
        if self.deltas.is_empty() {
            return Err(invalid("deltas", "at least one delta is required"));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(invalid("deltas", "every delta must lie in (0, 1)"));
        }
        match self.experiment {
            ExperimentKind::Coverage => {
                if self.mus.is_empty() || self.mus.iter().any(|m| !(0.0..=1.0).contains(m)) {
                    return Err(invalid("mus", "need at least one mean in [0, 1]"));
                }
                if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
                    return Err(invalid("sample_sizes", "need at least one positive sample size"));
                }
            }
            _ => {
                if self.policies.is_empty() {
                    return Err(invalid("policies", "the policy list is empty"));
                }
                if self.gaps.is_empty() {
                    return Err(invalid("gaps", "at least one gap is required"));
                }
                for &gap in &self.gaps {
                    if !(0.0..=0.4).contains(&gap) {
                        return Err(invalid("gaps", "gap must lie in [0, 0.4] so 0.6 + gap stays in [0, 1]"));
                    }
                }
                self.engine_config(self.deltas[0]).validate(2)?;
                self.cost_model().validate()?;
                self.environment_for_gap(self.gaps[0])?;
            }
        }
        Ok(())
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            c_f: self.c_f,
            c_y: self.c_y,
        }
    }

    pub fn engine_config(&self, delta: f64) -> EngineConfig {
        EngineConfig {
            delta,
            pi_min: self.pi_min,
            rho: self.rho,
            cost_model: self.cost_model(),
            t_max: self.t_max,
            n_init: self.n_init,
            init_audit: self.init_audit,
            boundary: BoundaryParams::default(),
        }
    }

    /// Environment for one gap setting. Only the `default` environment is
    /// reparameterized by the gap (`theta = (0.6 + gap, 0.6, 0.5, 0.4)`).
    pub fn environment_for_gap(&self, gap: f64) -> Result<Instance> {
        let (a, b) = judge_twin_instances();
        Ok(match self.environment.as_str() {
            "default" => Instance::Synthetic(
                EnvironmentSpec::homogeneous(vec![0.6 + gap, 0.6, 0.5, 0.4], self.bias, self.noise_sd)?,
            ),
            "twin_a" => Instance::Table(a),
            "twin_b" => Instance::Table(b),
            "custom" => {
                let means = self
                    .arm_means
                    .clone()
                    .ok_or_else(|| invalid("arm_means", "required for the custom environment"))?;
                Instance::Synthetic(EnvironmentSpec::homogeneous(means, self.bias, self.noise_sd)?)
            }
            other => return Err(Error::Config(format!("unknown environment `{other}`"))),
        })
    }

    fn gap_label(&self, gap: f64) -> Option<f64> {
        (self.environment == "default").then_some(gap)
    }

    fn gaps_to_run(&self) -> Vec<f64> {
        if self.environment == "default" {
            self.gaps.clone()
        } else {
            vec![self.gaps[0]]
        }
    }

    fn policy_config(&self, kind: PolicyKind, env: &Instance) -> Result<AuditPolicyConfig> {
        let mut p = AuditPolicyConfig::new(kind, self.rho, self.pi_min).with_granularity(self.granularity);
        p.cost_ratio = self.c_f / self.c_y;
        if kind == PolicyKind::Oracle {
            let seed = self.base_seed.wrapping_add(0x5eed_0000);
            p.oracle_g = Some(env.residual_second_moments_by_bin(
                self.granularity.num_bins(),
                self.oracle_mc_samples,
                seed,
            )?);
        }
        Ok(p)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// One output row; fields that do not apply to an experiment are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub config_id: String,
    pub policy: String,
    pub delta: Option<f64>,
    pub gap: Option<f64>,
    pub seed_base: u64,
    pub n_trials: u64,
    pub mean_cost: Option<f64>,
    pub sd_cost: Option<f64>,
    pub audit_rate: Option<f64>,
    pub accuracy: Option<f64>,
    pub coverage: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

pub const CSV_HEADER: &str = "experiment,config_id,policy,delta,gap,seed_base,n_trials,mean_cost,sd_cost,audit_rate,accuracy,coverage,ci_low,ci_high";

/// Per-trial outcome kept alongside the aggregate rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub config_id: String,
    pub result: TrialResult,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log: Option<Vec<SampleRecord>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    #[serde(skip)]
    pub trials: Vec<TrialEntry>,
}

impl AggregateReport {
    pub fn row(&self, config_id: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.config_id == config_id)
    }
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Percentile bootstrap 95% interval for the mean.
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    if xs.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = ((resamples as f64) * 0.025).floor() as usize;
    let hi = (((resamples as f64) * 0.975).ceil() as usize).min(resamples) - 1;
    (means[lo], means[hi])
}

fn row_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(index as u64 + 1)
}

/// First time `t` (1-based) at which a Bernoulli(mu) running mean leaves
/// `mu ± width_proxy(t, delta)`, or `None` within `horizon`.
pub fn first_violation(mu: f64, delta: f64, horizon: u64, rng: &mut crate::environment::TrialRng) -> Option<u64> {
    let params = BoundaryParams::default();
    let mut sum = 0.0;
    for t in 1..=horizon {
        if rng.random::<f64>() < mu {
            sum += 1.0;
        }
        let w = params.width_proxy_unchecked(t, delta);
        if (sum / t as f64 - mu).abs() > w {
            return Some(t);
        }
    }
    None
}

/// Anytime coverage of the single-arm proxy sequence (`K = 1`, so
/// `delta_k = delta`) on Bernoulli streams.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    let n = cfg.trials();
    let horizon = *cfg.sample_sizes.iter().max().expect("validated nonempty");
    let mut report = AggregateReport::default();
    for &delta in &cfg.deltas {
        CsBudget::new(delta, 1)?;
        for &mu in &cfg.mus {
            let firsts = map_trials(n, cfg.workers, |trial| {
                let mut rng = trial_rng(cfg.base_seed, trial);
                first_violation(mu, delta, horizon, &mut rng)
            });
            for &size in &cfg.sample_sizes {
                let covered: Vec<f64> = firsts
                    .iter()
                    .map(|v| if v.is_some_and(|t| t <= size) { 0.0 } else { 1.0 })
                    .collect();
                let (cov, _) = mean_sd(&covered);
                let (lo, hi) = bootstrap_mean_ci(&covered, BOOTSTRAP_RESAMPLES, row_seed(cfg.base_seed, report.rows.len()));
                report.rows.push(AggregateRow {
                    experiment: ExperimentKind::Coverage.name().into(),
                    config_id: format!("delta={delta}/mu={mu}/n={size}"),
                    policy: "proxy_cs".into(),
                    delta: Some(delta),
                    gap: None,
                    seed_base: cfg.base_seed,
                    n_trials: n,
                    mean_cost: None,
                    sd_cost: None,
                    audit_rate: None,
                    accuracy: None,
                    coverage: Some(cov),
                    ci_low: Some(lo),
                    ci_high: Some(hi),
                });
            }
        }
    }
    Ok(report)
}

fn run_policy_cell(
    cfg: &ExperimentConfig,
    env: &Instance,
    engine: &EngineConfig,
    policy: &AuditPolicyConfig,
    config_id: &str,
) -> Result<Vec<TrialEntry>> {
    let entries = map_trials(cfg.trials(), cfg.workers, |trial| -> Result<TrialEntry> {
        let (result, log) = if cfg.dump_logs {
            let (r, l) = run_trial_logged(env, engine, policy, cfg.base_seed, trial)?;
            (r, Some(l))
        } else {
            (run_trial_summary(env, engine, policy, cfg.base_seed, trial)?, None)
        };
        Ok(TrialEntry {
            config_id: config_id.to_string(),
            result,
            log,
        })
    });
    entries.into_iter().collect()
}

fn judge_only_cell(
    cfg: &ExperimentConfig,
    env: &Instance,
    engine: &EngineConfig,
    config_id: &str,
) -> Result<Vec<TrialEntry>> {
    let entries = map_trials(cfg.trials(), cfg.workers, |trial| -> Result<TrialEntry> {
        Ok(TrialEntry {
            config_id: config_id.to_string(),
            result: run_judge_only_trial(env, engine, cfg.base_seed, trial)?,
            log: None,
        })
    });
    entries.into_iter().collect()
}

fn summarize(
    cfg: &ExperimentConfig,
    config_id: &str,
    policy: &str,
    delta: f64,
    gap: Option<f64>,
    entries: &[TrialEntry],
    row_index: usize,
) -> AggregateRow {
    let costs: Vec<f64> = entries.iter().map(|e| e.result.total_cost).collect();
    let (mean_cost, sd_cost) = mean_sd(&costs);
    let (audit_rate, _) = mean_sd(&entries.iter().map(|e| e.result.audit_rate).collect::<Vec<_>>());
    let scored: Vec<f64> = entries
        .iter()
        .filter_map(|e| e.result.correct)
        .map(|c| if c { 1.0 } else { 0.0 })
        .collect();
    let accuracy = (!scored.is_empty()).then(|| mean_sd(&scored).0);
    let (lo, hi) = bootstrap_mean_ci(&costs, BOOTSTRAP_RESAMPLES, row_seed(cfg.base_seed, row_index));
    AggregateRow {
        experiment: cfg.experiment.name().into(),
        config_id: config_id.into(),
        policy: policy.into(),
        delta: Some(delta),
        gap,
        seed_base: cfg.base_seed,
        n_trials: entries.len() as u64,
        mean_cost: Some(mean_cost),
        sd_cost: Some(sd_cost),
        audit_rate: Some(audit_rate),
        accuracy,
        coverage: None,
        ci_low: Some(lo),
        ci_high: Some(hi),
    }
}

/// Cost and accuracy of each policy across the gap settings.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    let mut report = AggregateReport::default();
    for gap in cfg.gaps_to_run() {
        let env = cfg.environment_for_gap(gap)?;
        for &delta in &cfg.deltas {
            let engine = cfg.engine_config(delta);
            for &kind in &cfg.policies {
                if kind == PolicyKind::Never {
                    return Err(Error::PositivityViolation);
                }
                let policy = cfg.policy_config(kind, &env)?;
                let id = match cfg.gap_label(gap) {
                    Some(g) => format!("gap={g}/delta={delta}/policy={kind}"),
                    None => format!("env={}/delta={delta}/policy={kind}", cfg.environment),
                };
                let entries = run_policy_cell(cfg, &env, &engine, &policy, &id)?;
                let row = summarize(cfg, &id, kind.name(), delta, cfg.gap_label(gap), &entries, report.rows.len());
                report.rows.push(row);
                report.trials.extend(entries);
            }
        }
    }
    Ok(report)
}

fn strategy_label(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Always => "no_judge",
        PolicyKind::Never => "no_audit",
        PolicyKind::Uniform => "fixed",
        PolicyKind::UncertaintyWeighted => "adaptive",
        other => other.name(),
    }
}

/// No-Judge, No-Audit, Fixed, and Adaptive strategies on the configured
/// environment, plus the judge-only learner on the two-instance construction.
pub fn run_failure_modes(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    let mut report = AggregateReport::default();
    let gap = cfg.gaps[0];
    let env = cfg.environment_for_gap(gap)?;
    let delta = cfg.deltas[0];
    let engine = cfg.engine_config(delta);
    for &kind in &cfg.policies {
        let id = format!("strategy={}/delta={delta}", strategy_label(kind));
        let entries = if kind == PolicyKind::Never {
            judge_only_cell(cfg, &env, &engine, &id)?
        } else {
            let policy = cfg.policy_config(kind, &env)?;
            run_policy_cell(cfg, &env, &engine, &policy, &id)?
        };
        let row = summarize(cfg, &id, kind.name(), delta, cfg.gap_label(gap), &entries, report.rows.len());
        report.rows.push(row);
        report.trials.extend(entries);
    }
    if cfg.policies.contains(&PolicyKind::Never) {
        let (a, b) = judge_twin_instances();
        for &horizon in &cfg.judge_only_horizons {
            let e = judge_only_error_rate(
                (&a, &b),
                JudgeOnlyRule::MeanArgmax,
                cfg.judge_only_trials,
                horizon,
                cfg.base_seed,
                cfg.workers,
            )?;
            report.rows.push(AggregateRow {
                experiment: ExperimentKind::FailureModes.name().into(),
                config_id: format!("strategy=no_audit/instances=judge_twins/horizon={horizon}"),
                policy: PolicyKind::Never.name().into(),
                delta: None,
                gap: None,
                seed_base: cfg.base_seed,
                n_trials: cfg.judge_only_trials,
                mean_cost: Some(cfg.c_f * horizon as f64),
                sd_cost: Some(0.0),
                audit_rate: Some(0.0),
                accuracy: Some(1.0 - e.max_error()),
                coverage: None,
                ci_low: None,
                ci_high: None,
            });
        }
    }
    Ok(report)
}

/// One trial (`trial_id = 0`) of the first configured policy, with its sample log.
pub fn run_single(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    let gap = cfg.gaps[0];
    let env = cfg.environment_for_gap(gap)?;
    let delta = cfg.deltas[0];
    let kind = cfg.policies[0];
    let engine = cfg.engine_config(delta);
    let id = format!("policy={kind}/delta={delta}/seed={}", cfg.base_seed);
    let entry = if kind == PolicyKind::Never {
        TrialEntry {
            config_id: id.clone(),
            result: run_judge_only_trial(&env, &engine, cfg.base_seed, 0)?,
            log: None,
        }
    } else {
        let policy = cfg.policy_config(kind, &env)?;
        let (result, log) = run_trial_logged(&env, &engine, &policy, cfg.base_seed, 0)?;
        TrialEntry {
            config_id: id.clone(),
            result,
            log: Some(log),
        }
    };
    let entries = vec![entry];
    let row = summarize(cfg, &id, kind.name(), delta, cfg.gap_label(gap), &entries, 0);
    Ok(AggregateReport {
        rows: vec![row],
        trials: entries,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    match cfg.experiment {
        ExperimentKind::Coverage => run_coverage(cfg),
        ExperimentKind::Compare => run_compare(cfg),
        ExperimentKind::FailureModes => run_failure_modes(cfg),
        ExperimentKind::Run => run_single(cfg),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn to_csv(report: &AggregateReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.config_id,
            r.policy,
            fmt_opt(r.delta),
            fmt_opt(r.gap),
            r.seed_base,
            r.n_trials,
            fmt_opt(r.mean_cost),
            fmt_opt(r.sd_cost),
            fmt_opt(r.audit_rate),
            fmt_opt(r.accuracy),
            fmt_opt(r.coverage),
            fmt_opt(r.ci_low),
            fmt_opt(r.ci_high),
        );
    }
    out
}

pub fn to_json(report: &AggregateReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&report.rows)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Writes `<name>.csv` or `<name>.json` into `out_dir`, plus
/// `<name>_trials.jsonl` (one trial per line, with its sample log when kept)
/// when `with_trials` is set. Returns the written paths.
pub fn emit(
    report: &AggregateReport,
    format: OutputFormat,
    out_dir: &Path,
    name: &str,
    with_trials: bool,
) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(invalid("report", "nothing to emit"));
    }
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    let path = match format {
        OutputFormat::Csv => {
            let p = out_dir.join(format!("{name}.csv"));
            write_file(&p, to_csv(report).as_bytes())?;
            p
        }
        OutputFormat::Json => {
            let p = out_dir.join(format!("{name}.json"));
            write_file(&p, to_json(report)?.as_bytes())?;
            p
        }
    };
    written.push(path);
    if with_trials && !report.trials.is_empty() {
        let p = out_dir.join(format!("{name}_trials.jsonl"));
        let file = fs::File::create(&p).map_err(|source| Error::Io {
            path: p.clone(),
            source,
        })?;
        let mut w = std::io::BufWriter::new(file);
        for entry in &report.trials {
            serde_json::to_writer(&mut w, entry)?;
            w.write_all(b"\n").map_err(|source| Error::Io {
                path: p.clone(),
                source,
            })?;
        }
        w.flush().map_err(|source| Error::Io {
            path: p.clone(),
            source,
        })?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing_and_overrides() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
        cfg.apply_kv_text(
            "# comment\n experiment = compare\ntrials=3\npolicies = neyman, uniform\n\
             deltas=0.1\ngaps=0.2\ngranularity=arm\nworkers=2\ndump_logs=true # inline\n",
        )
        .unwrap();
        assert_eq!(cfg.trials(), 3);
        assert_eq!(cfg.policies, vec![PolicyKind::Neyman, PolicyKind::Uniform]);
        assert_eq!(cfg.deltas, vec![0.1]);
        assert_eq!(cfg.granularity, Granularity::Arm);
        assert_eq!(cfg.workers, Some(2));
        assert!(cfg.dump_logs);
        cfg.set("granularity", "bins8").unwrap();
        assert_eq!(cfg.granularity, Granularity::ScoreBins(8));
    }

    #[test]
    fn kv_errors() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
        assert!(cfg.apply_kv_text("nonsense").is_err());
        assert!(cfg.apply_kv_text("bogus_key=1").is_err());
        assert!(cfg.apply_kv_text("trials=abc").is_err());
        assert!(cfg.apply_kv_text("experiment=coverage").is_err());
        assert!(cfg.apply_kv_text("policies=neyman,wat").is_err());
        assert!(cfg.apply_kv_text("granularity=bins0").is_err());
    }

    #[test]
    fn empty_policy_list_rejected() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
        cfg.policies.clear();
        assert!(run_compare(&cfg).is_err());
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::FailureModes);
        cfg.apply_kv_text("policies=").unwrap();
        assert!(run_failure_modes(&cfg).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
        cfg.pi_min = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
        cfg.rho = 0.01;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Coverage);
        cfg.deltas = vec![1.5];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
        cfg.environment = "mars".into();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
        cfg.n_trials = Some(0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bootstrap_contains_mean() {
        let xs: Vec<f64> = (0..50).map(|i| (i * 37 % 11) as f64).collect();
        let (m, _) = mean_sd(&xs);
        let (lo, hi) = bootstrap_mean_ci(&xs, 1000, 1);
        assert!(lo <= m && m <= hi && lo < hi);
        assert_eq!(bootstrap_mean_ci(&[1.0; 10], 1000, 1), (1.0, 1.0));
        assert_eq!(bootstrap_mean_ci(&xs, 1000, 5), bootstrap_mean_ci(&xs, 1000, 5));
    }

    #[test]
    fn mean_sd_basic() {
        assert_eq!(mean_sd(&[2.0, 4.0]), (3.0, 2f64.sqrt()));
        assert_eq!(mean_sd(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn csv_shape() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Coverage);
        cfg.n_trials = Some(20);
        cfg.deltas = vec![0.1];
        cfg.mus = vec![0.5];
        cfg.sample_sizes = vec![10, 20];
        let report = run_coverage(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        let csv = to_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        for line in lines {
            assert_eq!(line.split(',').count(), 14);
        }
    }

    #[test]
    fn single_run_keeps_log() {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Run);
        cfg.t_max = 200;
        let report = run_single(&cfg).unwrap();
        let entry = &report.trials[0];
        let log = entry.log.as_ref().unwrap();
        assert_eq!(log.len() as u64, entry.result.n_pulls);
        let cost: f64 = log.iter().map(|r| r.cost).sum();
        assert!((cost - report.rows[0].mean_cost.unwrap()).abs() < 1e-9);
    }
}
