use mec_offload::channel::Position3D;
use mec_offload::cost::{Category, Constraint, ConstraintReport, Task};
use mec_offload::env::{
    classify_task, cumulative_reward, ActionCatalogue, ActionVector, Completion, EnvConfig, MecEnv, RewardParams,
    RhoChoice, UrgencyMatrix, STATE_DIM,
};

fn small(num_mecs: usize, num_nodes: usize) -> EnvConfig {
    let mut cfg = EnvConfig::desk();
    cfg.topology.num_mecs = num_mecs;
    cfg.topology.num_nodes = num_nodes;
    cfg.episode.steps = 20;
    cfg
}

fn env(cfg: EnvConfig) -> MecEnv {
    MecEnv::new(cfg, RewardParams::new(10.0, None, 0.9).unwrap()).unwrap()
}

#[test]
fn reset_is_deterministic() {
    let mut a = env(small(3, 5));
    let mut b = env(small(3, 5));
    let sa = a.reset(11).unwrap();
    let sb = b.reset(11).unwrap();
    assert_eq!(sa, sb);
    let sc = a.reset(12).unwrap();
    assert_ne!(sa, sc);
}

#[test]
fn zero_nodes_is_a_config_error() {
    let err = MecEnv::new(small(2, 0), RewardParams::new(1.0, None, 0.9).unwrap())
        .err()
        .unwrap();
    assert!(err.is_config(), "{err}");
}

#[test]
fn sizes_follow_the_config() {
    let mut e = env(small(14, 55));
    let s = e.reset(0).unwrap();
    assert_eq!(s.len(), 55);
    assert_eq!(e.num_agents(), 55);
    assert_eq!(e.mec_nodes().len(), 14);
    assert_eq!(s[0].0.len(), STATE_DIM);
}

#[test]
fn classification_bands() {
    let urg = UrgencyMatrix { edges: [12.0, 24.0] };
    let task = |th| Task::new(Category::Low, 1.0, 1.0, th, Position3D::default(), 0.1).unwrap();
    assert_eq!(classify_task(&task(8.0), &urg), Category::High);
    assert_eq!(classify_task(&task(30.0), &urg), Category::Low);
    assert_eq!(classify_task(&task(18.0), &urg), Category::Medium);
    assert_eq!(classify_task(&task(12.0), &urg), Category::High);
    assert_eq!(classify_task(&task(24.0), &urg), Category::Medium);
}

#[test]
fn sampled_tasks_match_their_band() {
    let mut e = env(small(2, 30));
    e.reset(5).unwrap();
    let urg = e.config().tasks.urgency();
    for _ in 0..5 {
        for i in 0..e.num_agents() {
            let v = e.view(i);
            assert_eq!(classify_task(&v.task, &urg), v.task.category);
        }
        let acts = vec![ActionVector::local(0); e.num_agents()];
        e.step(&acts).unwrap();
    }
}

#[test]
fn reward_offsets_cost() {
    let p = RewardParams::new(4.0, None, 0.9).unwrap();
    let ok = ConstraintReport { violations: vec![] };
    assert_eq!(p.reward(4.0, &ok), 0.0);
    assert_eq!(p.reward(1.5, &ok), 2.5);
    let bad = ConstraintReport {
        violations: vec![Constraint::C4],
    };
    assert_eq!(p.reward(0.0, &bad), -4.0);
    let q = RewardParams::new(4.0, Some(-7.0), 0.9).unwrap();
    assert_eq!(q.reward(0.0, &bad), -7.0);
    assert!(RewardParams::new(4.0, Some(1.0), 0.9).is_err());
    assert!(RewardParams::new(4.0, None, 1.0).is_err());
}

#[test]
fn cumulative_reward_examples() {
    assert_eq!(cumulative_reward(&[1.0], 0.3), 1.0);
    assert_eq!(cumulative_reward(&[1.0, 1.0], 0.5), 1.5);
    assert_eq!(cumulative_reward(&[0.0; 7], 0.9), 0.0);
}

#[test]
fn concurrent_claims_are_renormalized() {
    let mut cfg = small(1, 2);
    cfg.grid.rho = vec![0.4, 0.8];
    let mut e = env(cfg);
    e.reset(3).unwrap();
    let claim = ActionVector {
        subband: 0,
        tr: 1,
        gamma: 1,
        rho: RhoChoice::Level(1),
        p_tx: 1,
        ue_tr: 0,
        mec: Some(0),
    };
    let ev = e.evaluate_joint(&[claim, ActionVector { subband: 1, ..claim }]).unwrap();
    for o in &ev.outcomes {
        assert!((o.as_ref().unwrap().rho_granted - 0.5).abs() < 1e-12);
    }
    assert!((ev.mec_load[0] - 1.0).abs() < 1e-12);
}

#[test]
fn fair_share_splits_between_offloaders() {
    let mut e = env(small(1, 3));
    e.reset(3).unwrap();
    let fair = ActionVector {
        subband: 0,
        tr: 1,
        gamma: 1,
        rho: RhoChoice::FairShare,
        p_tx: 1,
        ue_tr: 0,
        mec: None,
    };
    let ev = e.evaluate_joint(&[fair, fair, ActionVector::local(0)]).unwrap();
    assert!((ev.outcomes[0].as_ref().unwrap().rho_granted - 0.5).abs() < 1e-12);
    assert_eq!(ev.outcomes[2].as_ref().unwrap().rho_granted, 0.0);
    assert_eq!(ev.stats.offloads, 2);
}

#[test]
fn sub_band_collisions_share_the_rate() {
    let mut e = env(small(1, 2));
    e.reset(4).unwrap();
    let a = ActionVector {
        subband: 0,
        tr: 1,
        gamma: 1,
        rho: RhoChoice::Level(0),
        p_tx: 2,
        ue_tr: 0,
        mec: Some(0),
    };
    let apart = e.evaluate_joint(&[a, ActionVector { subband: 1, ..a }]).unwrap();
    let shared = e.evaluate_joint(&[a, a]).unwrap();
    let t = |ev: &mec_offload::env::JointEval| ev.outcomes[0].as_ref().unwrap().costs.t_tr_n;
    assert!(t(&shared) > t(&apart));
}

#[test]
fn off_grid_actions_are_rejected() {
    let mut e = env(small(2, 1));
    e.reset(0).unwrap();
    let bad = ActionVector {
        p_tx: 9,
        ..ActionVector::local(0)
    };
    assert!(e.step(&[bad]).is_err());
    let bad_mec = ActionVector {
        subband: 0,
        tr: 0,
        gamma: 1,
        rho: RhoChoice::Level(0),
        p_tx: 0,
        ue_tr: 0,
        mec: Some(5),
    };
    assert!(e.evaluate_joint(&[bad_mec]).is_err());
    assert!(e.evaluate_joint(&[]).is_err());
}

#[test]
fn catalogue_covers_the_grid() {
    let cfg = EnvConfig::desk();
    let cat = ActionCatalogue::new(&cfg.grid);
    assert_eq!(cat.len(), 3 + 2 * 3 * 4 * 3 * 2);
    for (i, a) in cat.iter().enumerate() {
        assert_eq!(cat.index_of(a), Some(i));
    }
    assert!(cat.action(cat.len()).is_err());
}

#[test]
fn episode_ends_at_the_horizon() {
    let mut e = env(small(2, 3));
    e.reset(1).unwrap();
    let acts = vec![ActionVector::local(0); 3];
    let mut steps = 0;
    while !e.done() {
        let (tr, _) = e.step(&acts).unwrap();
        steps += 1;
        let expect = if steps == 20 { Completion::Done } else { Completion::Ongoing };
        assert!(tr.iter().all(|t| t.comp == expect));
    }
    assert_eq!(steps, 20);
}

#[test]
fn exhausted_nodes_go_inactive() {
    let mut cfg = small(1, 2);
    cfg.episode.energy_drain = 10.0;
    let mut e = env(cfg);
    e.reset(2).unwrap();
    let acts = vec![ActionVector::local(2); 2];
    let (tr, _) = e.step(&acts).unwrap();
    assert!(tr.iter().all(|t| t.comp == Completion::Done));
    assert!(e.done());
    let (tr, stats) = e.step(&acts).unwrap();
    assert!(tr.is_empty());
    assert_eq!(stats.active, 0);
}
