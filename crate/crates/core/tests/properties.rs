use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pplucb::allocator::neyman_oracle_policy;
use pplucb::engine::run_trial_summary;
use pplucb::oracle::grid_optimal_policy;
use pplucb::parallel::map_trials;
use pplucb::{AuditPolicyConfig, EngineConfig, EnvironmentSpec, Instance, PolicyKind};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn residual_second_moment_matches_quadrature() {
    let spec = EnvironmentSpec::default_instance();
    for arm in 0..spec.arm_means.len() {
        let theta = spec.arm_means[arm];
        let (b, sd) = (spec.bias[arm][0], spec.noise_sd);
        let sq_resid = |y: f64| {
            simpson(|z| (y - (y + b + sd * z).clamp(0.0, 1.0)).powi(2) * normal_pdf(z), -10.0, 10.0, 100_000)
        };
        let exact = theta * sq_resid(1.0) + (1.0 - theta) * sq_resid(0.0);
        let (mc, se) = spec.true_residual_second_moment(arm, 200_000, 11).unwrap();
        assert!((mc - exact).abs() <= 4.0 * se, "arm {arm}: mc {mc} vs quadrature {exact} (se {se})");
    }
}

#[test]
fn grid_minimizer_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let m = rng.random_range(2..=3);
        let g: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        // budget on the grid lattice so the grid can spend it exactly
        let rho = 0.05 + 0.005 * rng.random_range(10..90) as f64;
        let closed = neyman_oracle_policy(&g, rho, 0.05).unwrap();
        let (grid, _) = grid_optimal_policy(&g, rho, 0.05, 0.005).unwrap();
        let mean = grid.propensities.iter().sum::<f64>() / m as f64;
        assert!(mean <= rho + 1e-9);
        for (c, p) in closed.iter().zip(&grid.propensities) {
            assert!((c - p).abs() <= 0.005 + 1e-9, "g={g:?} rho={rho}: closed {closed:?} grid {:?}", grid.propensities);
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[test]
fn smaller_delta_never_lowers_median_cost() {
    let env = Instance::Synthetic(EnvironmentSpec::with_gap(0.3));
    let policy = AuditPolicyConfig::uniform(0.1, 0.05);
    let mut last = 0.0;
    for delta in [0.2, 0.1, 0.05, 0.01] {
        let cfg = EngineConfig {
            delta,
            ..EngineConfig::default()
        };
        let costs = map_trials(21, None, |t| run_trial_summary(&env, &cfg, &policy, 5, t).unwrap().total_cost);
        let m = median(costs);
        assert!(m >= last, "delta {delta}: median cost {m} < {last}");
        last = m;
    }
}

#[test]
fn full_audit_policies_agree_on_cost_accounting() {
    let env = Instance::Synthetic(EnvironmentSpec::with_gap(0.3));
    let cfg = EngineConfig::default();
    let policy = AuditPolicyConfig::new(PolicyKind::Always, cfg.rho, cfg.pi_min);
    for t in 0..5 {
        let r = run_trial_summary(&env, &cfg, &policy, 9, t).unwrap();
        assert_eq!(r.n_audits, r.n_pulls);
        assert_eq!(r.total_cost, 21.0 * r.n_pulls as f64);
        assert_eq!(r.correct, Some(true));
    }
}
