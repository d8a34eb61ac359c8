//! Brute-force reference computations.
//!
//! Nothing in the engine calls into this module. It backs the test suites and
//! the judge-only demonstration in the failure-mode experiment.

use serde::{Deserialize, Serialize};

use crate::environment::{trial_rng, JointTableInstance};
use crate::error::{invalid, Error, Result};
use crate::parallel::map_trials;

/// Exact `(theta, mu_f, mu_r, g)` by enumeration of one arm's table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactArmStats {
    pub theta: f64,
    pub mu_f: f64,
    pub mu_r: f64,
    pub g: f64,
}

pub fn exact_arm_stats(inst: &JointTableInstance, arm: usize) -> Result<ExactArmStats> {
    let rows = inst.rows.get(arm).ok_or(Error::InvalidArm {
        arm,
        num_arms: inst.rows.len(),
    })?;
    let (mut theta, mut mu_f, mut mu_r, mut g) = (0.0, 0.0, 0.0, 0.0);
    for &(f, y, p) in rows {
        theta += p * y;
        mu_f += p * f;
        mu_r += p * (y - f);
        g += p * (y - f) * (y - f);
    }
    Ok(ExactArmStats { theta, mu_f, mu_r, g })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPolicy {
    pub propensities: Vec<f64>,
    pub step: f64,
}

/// Exhaustive search over propensity vectors on the grid `pi_min + j * step`
/// (capped at 1) whose mean does not exceed `rho`, minimizing
/// `sum_i g_i / pi_i`. Up to four strata.
pub fn grid_optimal_policy(
    g_values: &[f64],
    rho: f64,
    pi_min: f64,
    step: f64,
) -> Result<(GridPolicy, f64)> {
    let m = g_values.len();
    if m == 0 || m > 4 {
        return Err(invalid("g_values", "grid search supports 1 to 4 strata"));
    }
    if !(step > 0.0) || !(pi_min > 0.0 && pi_min <= 1.0) || !(rho >= pi_min && rho <= 1.0) {
        return Err(invalid("step", "need step > 0 and pi_min <= rho <= 1"));
    }
    let mut grid: Vec<f64> = Vec::new();
    let mut j = 0u64;
    loop {
        let p = pi_min + j as f64 * step;
        if p >= 1.0 - 1e-12 {
            grid.push(1.0);
            break;
        }
        grid.push(p);
        j += 1;
    }
    let n = grid.len();
    let target = rho * m as f64;

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut idx = vec![0usize; m];
    // Enumerate the first m - 1 coordinates; the objective falls in every
    // coordinate, so the last takes the largest grid point the budget allows.
    loop {
        let partial: f64 = idx[..m - 1].iter().map(|&i| grid[i]).sum();
        let need = target - partial;
        if let Some(last) = largest_at_most(&grid, need + 1e-9) {
            let pis: Vec<f64> = idx[..m - 1].iter().map(|&i| grid[i]).chain([grid[last]]).collect();
            let obj: f64 = g_values.iter().zip(&pis).map(|(g, p)| g / p).sum();
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((pis, obj));
            }
        }
        // odometer over the free coordinates
        let mut pos = 0;
        loop {
            if pos == m - 1 {
                let (pis, obj) = best.ok_or_else(|| {
                    invalid("step", "no grid policy fits the budget")
                })?;
                return Ok((GridPolicy { propensities: pis, step }, obj));
            }
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn largest_at_most(grid: &[f64], x: f64) -> Option<usize> {
    grid.partition_point(|&p| p <= x).checked_sub(1)
}

/// Judge-only decision rules; each sees only `(arm, F)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeOnlyRule {
    /// Largest judge mean, ties to the lowest index.
    MeanArgmax,
    /// Largest count of `F > 0.5` over the second half of each arm's pulls,
    /// ties broken toward the arm with more recent high scores.
    LateMajority,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeOnlyErrors {
    pub error_a: f64,
    pub error_b: f64,
}

impl JudgeOnlyErrors {
    pub fn max_error(&self) -> f64 {
        self.error_a.max(self.error_b)
    }
}

fn judge_only_select(
    inst: &JointTableInstance,
    rule: JudgeOnlyRule,
    horizon: u64,
    seed: u64,
    trial: u64,
) -> Result<usize> {
    let k = inst.rows.len();
    let mut rng = trial_rng(seed, trial);
    let per_arm = horizon.div_ceil(k as u64);
    let mut sums = vec![0.0; k];
    let mut late_hits = vec![0u64; k];
    let mut last_hit = vec![0u64; k];
    for t in 0..horizon {
        let arm = (t % k as u64) as usize;
        let (f, _) = inst.sample_pair(arm, &mut rng)?;
        sums[arm] += f;
        if t / k as u64 >= per_arm / 2 && f > 0.5 {
            late_hits[arm] += 1;
            last_hit[arm] = t;
        }
    }
    let pick = |score: &dyn Fn(usize) -> (f64, f64)| {
        (0..k)
            .max_by(|&a, &b| {
                let (sa, sb) = (score(a), score(b));
                sa.0.total_cmp(&sb.0)
                    .then(sa.1.total_cmp(&sb.1))
                    .then(b.cmp(&a))
            })
            .expect("at least one arm")
    };
    Ok(match rule {
        JudgeOnlyRule::MeanArgmax => pick(&|a| (sums[a], 0.0)),
        JudgeOnlyRule::LateMajority => pick(&|a| (late_hits[a] as f64, last_hit[a] as f64)),
    })
}

/// Runs a judge-only learner on both instances with shared seeds and returns
/// the per-instance error rates.
pub fn judge_only_error_rate(
    instances: (&JointTableInstance, &JointTableInstance),
    rule: JudgeOnlyRule,
    n_trials: u64,
    horizon: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<JudgeOnlyErrors> {
    use crate::environment::Environment;
    let (a, b) = instances;
    let best_a = a.best_arm().ok_or_else(|| invalid("instances", "instance A has no unique best arm"))?;
    let best_b = b.best_arm().ok_or_else(|| invalid("instances", "instance B has no unique best arm"))?;
    if n_trials == 0 || horizon == 0 {
        return Err(invalid("n_trials", "need at least one trial and one pull"));
    }
    let picks = map_trials(n_trials, workers, |trial| -> Result<(usize, usize)> {
        Ok((
            judge_only_select(a, rule, horizon, seed, trial)?,
            judge_only_select(b, rule, horizon, seed, trial)?,
        ))
    });
    let (mut err_a, mut err_b) = (0u64, 0u64);
    for p in picks {
        let (pa, pb) = p?;
        err_a += u64::from(pa != best_a);
        err_b += u64::from(pb != best_b);
    }
    Ok(JudgeOnlyErrors {
        error_a: err_a as f64 / n_trials as f64,
        error_b: err_b as f64 / n_trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::{audit_objective, neyman_oracle_policy};
    use crate::environment::judge_twin_instances;
    use approx::assert_abs_diff_eq;

    #[test]
    fn instance_a_arm_stats() {
        let (a, _) = judge_twin_instances();
        let s = exact_arm_stats(&a, 0).unwrap();
        assert_abs_diff_eq!(s.theta, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu_f, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu_r, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.g, 0.02, epsilon = 1e-15);
        let s = exact_arm_stats(&a, 1).unwrap();
        assert_abs_diff_eq!(s.theta, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu_f, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu_r, -0.1, epsilon = 1e-15);
        assert!(exact_arm_stats(&a, 2).is_err());
    }

    #[test]
    fn one_point_table() {
        let t = JointTableInstance::new(vec![vec![(1.0, 1.0, 1.0)]]).unwrap();
        let s = exact_arm_stats(&t, 0).unwrap();
        assert_eq!((s.theta, s.mu_f, s.mu_r, s.g), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn grid_recovers_sqrt_rule() {
        let (p, obj) = grid_optimal_policy(&[0.04, 0.16], 0.3, 0.01, 0.005).unwrap();
        assert_abs_diff_eq!(p.propensities[0], 0.2, epsilon = 0.0051);
        assert_abs_diff_eq!(p.propensities[1], 0.4, epsilon = 0.0051);
        assert_abs_diff_eq!(obj, 0.6, epsilon = 0.01);
        let uniform = audit_objective(&[0.04, 0.16], &[0.3, 0.3]);
        assert_abs_diff_eq!(uniform, 0.666_666_666_666_666_6, epsilon = 1e-12);
        assert!(obj < uniform);
    }

    #[test]
    fn grid_symmetric_case_is_uniform() {
        let (p, _) = grid_optimal_policy(&[0.1, 0.1, 0.1], 0.25, 0.01, 0.005).unwrap();
        for x in p.propensities {
            assert_abs_diff_eq!(x, 0.25, epsilon = 0.0051);
        }
    }

    #[test]
    fn grid_errors() {
        assert!(grid_optimal_policy(&[], 0.3, 0.01, 0.005).is_err());
        assert!(grid_optimal_policy(&[0.1; 5], 0.3, 0.01, 0.005).is_err());
        assert!(grid_optimal_policy(&[0.1, 0.2], 0.3, 0.01, 0.0).is_err());
    }

    #[test]
    fn strict_dominance_on_heterogeneous_strata() {
        let g = [0.01, 0.09, 0.25];
        let ney = neyman_oracle_policy(&g, 0.2, 0.01).unwrap();
        assert!(audit_objective(&g, &ney) < audit_objective(&g, &[0.2; 3]) - 1e-6);
    }

    #[test]
    fn judge_only_errors_are_complementary() {
        let (a, b) = judge_twin_instances();
        for rule in [JudgeOnlyRule::MeanArgmax, JudgeOnlyRule::LateMajority] {
            let e = judge_only_error_rate((&a, &b), rule, 200, 500, 42, None).unwrap();
            assert_abs_diff_eq!(e.error_a + e.error_b, 1.0, epsilon = 1e-12);
            assert!(e.max_error() >= 0.5);
        }
    }
}
