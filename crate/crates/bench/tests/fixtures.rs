use mec_offload_bench::{ddql_fixture, desk_env};

#[test]
fn fixtures_build_and_run() {
    let mut fx = desk_env(1).unwrap();
    assert_eq!(fx.joint.len(), fx.env.num_agents());
    fx.env.step(&fx.joint).unwrap();
    let (agent, batch) = ddql_fixture(1).unwrap();
    assert_eq!(batch.actions.len(), 64);
    let ((lv, gv), (lu, gu)) = agent.losses(&batch).unwrap();
    assert!(lv.is_finite() && lu.is_finite());
    assert_eq!(gv.len(), gu.len());
}
