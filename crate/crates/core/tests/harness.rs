use mec_offload::baselines::PolicyKind;
use mec_offload::config::{load_config, ExperimentConfig};
use mec_offload::harness::{
    compare_rows, evaluate, obtain_policy, run_experiment, sweep_data_size, sweep_mec_count, train_policy,
};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.topology.num_mecs = 2;
    c.topology.num_nodes = 3;
    c.env.steps = 12;
    c.run.episodes = 4;
    c.run.eval_episodes = 2;
    c.run.seeds = 2;
    c.ddql.batch_size = 8;
    c.dql.batch_size = 8;
    c
}

fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_desk_profile_matches_the_builtin_one() {
    let cfg = load_config(&configs_dir().join("desk.cfg")).unwrap();
    assert_eq!(cfg, ExperimentConfig::desk());
    assert_eq!((cfg.topology.num_mecs, cfg.topology.num_nodes), (4, 10));
    assert_eq!((cfg.run.episodes, cfg.env.steps), (500, 200));
    assert_eq!(cfg.ddql.batch_size, 64);
    assert_eq!(cfg.ddql.hidden, vec![64, 32]);
}

#[test]
fn shipped_paper_profile_loads_with_published_values() {
    let cfg = load_config(&configs_dir().join("paper.cfg")).unwrap();
    assert_eq!(cfg, ExperimentConfig::paper());
    assert_eq!(cfg.ddql.zeta, 0.9);
    assert_eq!(cfg.ddql.psi, 1e-4);
    assert_eq!(cfg.run.episodes, 5000);
    assert_eq!(cfg.ddql.batch_size, 1500);
    assert_eq!((cfg.topology.num_mecs, cfg.topology.num_nodes), (14, 55));
    assert_eq!(cfg.tasks.data_mbits, [10.0, 80.0]);
    assert_eq!(cfg.tasks.ck_mcycles, [1000.0, 5000.0]);
}

#[test]
fn metrics_are_byte_identical_across_runs() {
    let cfg = tiny();
    for kind in [PolicyKind::Ddql, PolicyKind::Ql, PolicyKind::Rosrs] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&cfg, kind, a.path()).unwrap();
        run_experiment(&cfg, kind, b.path()).unwrap();
        let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("metrics.csv")).unwrap();
        assert_eq!(read(&a), read(&b), "{kind}");
        assert_eq!(
            std::fs::read(a.path().join("summary.csv")).unwrap(),
            std::fs::read(b.path().join("summary.csv")).unwrap()
        );
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let mut cfg = tiny();
    let a = train_policy(&cfg, PolicyKind::Ddql, 1, |_, _| Ok(())).unwrap();
    cfg.run.seed = 2;
    let b = train_policy(&cfg, PolicyKind::Ddql, 2, |_, _| Ok(())).unwrap();
    assert_ne!(a.metrics[0].sum_cost, b.metrics[0].sum_cost);
}

#[test]
fn static_policies_record_no_loss() {
    let cfg = tiny();
    for kind in PolicyKind::STATIC {
        let out = train_policy(&cfg, kind, 3, |_, _| Ok(())).unwrap();
        assert_eq!(out.metrics.len(), cfg.run.episodes);
        assert!(out.metrics.iter().all(|m| m.loss == 0.0 && m.train_steps == 0), "{kind}");
    }
}

#[test]
fn learners_record_losses_and_shared_memory_is_clean() {
    let cfg = tiny();
    let out = train_policy(&cfg, PolicyKind::Ddql, 3, |_, _| Ok(())).unwrap();
    assert!(out.metrics.iter().any(|m| m.train_steps > 0 && m.loss > 0.0));
    assert!(out.metrics.iter().all(|m| m.hash_rejections == 0));
    assert!(out.metrics.iter().all(|m| m.agent_losses.split(';').count() == 3));
}

#[test]
fn evaluation_is_paired_across_policies() {
    let cfg = tiny();
    let flc = obtain_policy(&cfg, PolicyKind::Flc, 5).unwrap();
    let a = evaluate(&cfg, &flc.policy).unwrap();
    let b = evaluate(&cfg, &flc.policy).unwrap();
    assert_eq!(a.mean_sum_cost, b.mean_sum_cost);
    assert_eq!(a.offload_rate, 0.0);
    let foc = obtain_policy(&cfg, PolicyKind::Foc, 5).unwrap();
    assert_eq!(evaluate(&cfg, &foc.policy).unwrap().offload_rate, 1.0);
}

#[test]
fn sweep_tables_have_one_row_per_cell() {
    let cfg = tiny();
    let rows = sweep_data_size(&cfg, &PolicyKind::ALL, &[10.0, 40.0, 80.0]).unwrap();
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.seeds == 2));
    let rows = sweep_mec_count(&cfg, &[PolicyKind::Flc, PolicyKind::Foc], &[1, 2]).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().any(|r| r.x == 1.0));
}

#[test]
fn compare_reports_reductions_against_ddql() {
    let rows = compare_rows(&[(PolicyKind::Flc, vec![100.0, 100.0]), (PolicyKind::Ddql, vec![60.0, 66.0])]);
    assert!((rows[0].ddql_reduction.unwrap() - 0.37).abs() < 1e-12);
    assert_eq!(rows[1].ddql_reduction, Some(0.0));
}
