use std::collections::BTreeMap;

use pplucb::harness::{
    emit, run_compare, run_experiment, run_failure_modes, to_csv, AggregateRow, ExperimentConfig, ExperimentKind,
    OutputFormat, TrialEntry, CSV_HEADER,
};
use pplucb::PolicyKind;

fn small_compare() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
    cfg.n_trials = Some(4);
    cfg.gaps = vec![0.2];
    cfg.policies = vec![PolicyKind::Neyman, PolicyKind::Uniform];
    cfg.oracle_mc_samples = 20_000;
    cfg
}

fn parse_opt(s: &str) -> Option<f64> {
    (!s.is_empty()).then(|| s.parse().unwrap())
}

#[test]
fn csv_and_json_carry_the_same_rows() {
    let report = run_compare(&small_compare()).unwrap();
    let json: Vec<AggregateRow> = serde_json::from_str(&pplucb::harness::to_json(&report).unwrap()).unwrap();
    assert_eq!(json, report.rows);

    let csv = to_csv(&report);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    for (line, row) in lines.zip(&report.rows) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 14);
        assert_eq!((f[0], f[1], f[2]), (row.experiment.as_str(), row.config_id.as_str(), row.policy.as_str()));
        assert_eq!(parse_opt(f[3]), row.delta);
        assert_eq!(parse_opt(f[4]), row.gap);
        assert_eq!(f[5].parse::<u64>().unwrap(), row.seed_base);
        assert_eq!(f[6].parse::<u64>().unwrap(), row.n_trials);
        assert_eq!(parse_opt(f[7]), row.mean_cost);
        assert_eq!(parse_opt(f[10]), row.accuracy);
        assert_eq!(parse_opt(f[11]), row.coverage);
    }
}

#[test]
fn rows_match_their_trials() {
    let report = run_compare(&small_compare()).unwrap();
    let mut by_id: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in &report.trials {
        by_id.entry(&e.config_id).or_default().push(e.result.total_cost);
    }
    for row in &report.rows {
        let costs = &by_id[row.config_id.as_str()];
        assert_eq!(costs.len() as u64, row.n_trials);
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        assert!((mean - row.mean_cost.unwrap()).abs() < 1e-9);
        let (lo, hi) = (row.ci_low.unwrap(), row.ci_high.unwrap());
        assert!(lo <= mean && mean <= hi);
    }
}

#[test]
fn dumped_logs_reproduce_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_compare();
    cfg.dump_logs = true;
    let report = run_compare(&cfg).unwrap();
    let paths = emit(&report, OutputFormat::Csv, dir.path(), "compare", true).unwrap();
    assert_eq!(paths.len(), 2);
    let text = std::fs::read_to_string(&paths[1]).unwrap();
    let entries: Vec<TrialEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), report.trials.len());
    let k = 4;
    for e in &entries {
        let log = e.log.as_ref().unwrap();
        let r = &e.result;
        assert_eq!(log.len() as u64, r.n_pulls);
        assert_eq!(log.iter().filter(|s| s.audited).count() as u64, r.n_audits);
        assert_eq!(log.iter().map(|s| s.cost).sum::<f64>(), r.total_cost);
        // every round after the init block pulls exactly two arms
        let init = cfg.n_init as usize * k;
        assert_eq!(log.len() - init, 2 * r.stop_round as usize);
        for pair in log[init..].chunks(2) {
            assert_ne!(pair[0].arm_id, pair[1].arm_id);
        }
        for (i, s) in log.iter().enumerate() {
            assert_eq!(s.t, i as u64 + 1);
            assert!(s.pi >= cfg.pi_min && s.pi <= 1.0);
            assert_eq!(s.audited, s.y.is_some());
        }
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let mut a = small_compare();
    a.workers = Some(1);
    let mut b = small_compare();
    b.workers = Some(3);
    assert_eq!(to_csv(&run_compare(&a).unwrap()), to_csv(&run_compare(&b).unwrap()));
}

#[test]
fn seed_changes_output() {
    let a = small_compare();
    let mut b = small_compare();
    b.base_seed = 7;
    assert_ne!(run_compare(&a).unwrap().rows[0].mean_cost, run_compare(&b).unwrap().rows[0].mean_cost);
}

#[test]
fn failure_modes_rows() {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::FailureModes);
    cfg.n_trials = Some(3);
    cfg.t_max = 2_000;
    cfg.judge_only_trials = 50;
    cfg.judge_only_horizons = vec![200];
    let report = run_failure_modes(&cfg).unwrap();
    let ids: Vec<&str> = report.rows.iter().map(|r| r.config_id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "strategy=no_judge/delta=0.05",
            "strategy=no_audit/delta=0.05",
            "strategy=fixed/delta=0.05",
            "strategy=adaptive/delta=0.05",
            "strategy=no_audit/instances=judge_twins/horizon=200",
        ]
    );
    let no_judge = &report.rows[0];
    assert_eq!(no_judge.audit_rate, Some(1.0));
    let no_audit = &report.rows[1];
    assert_eq!(no_audit.audit_rate, Some(0.0));
    assert_eq!(no_audit.mean_cost, Some(2.0 * cfg.t_max as f64));
}

#[test]
fn empty_policy_list_fails_before_running() {
    for kind in [ExperimentKind::Compare, ExperimentKind::FailureModes, ExperimentKind::Run] {
        let mut cfg = ExperimentConfig::defaults(kind);
        cfg.policies.clear();
        assert!(run_experiment(&cfg).is_err(), "{kind:?}");
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    std::fs::write(
        &path,
        "experiment = compare\n# four trials is plenty\ntrials = 4\ngaps = 0.2\npolicies = neyman,uniform\n\
         oracle_mc_samples = 20000\n",
    )
    .unwrap();
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
    cfg.load_file(&path).unwrap();
    assert_eq!(cfg, small_compare());
    assert!(cfg.load_file(&dir.path().join("missing.cfg")).is_err());
}

#[test]
fn custom_environment() {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Compare);
    cfg.n_trials = Some(2);
    cfg.policies = vec![PolicyKind::Uniform];
    cfg.environment = "custom".into();
    cfg.arm_means = Some(vec![0.9, 0.2]);
    let report = run_compare(&cfg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].gap, None);
    assert_eq!(report.rows[0].accuracy, Some(1.0));

    cfg.arm_means = None;
    assert!(run_compare(&cfg).is_err());
}
