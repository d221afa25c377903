use mec_offload::testbeds::gradient_draws;

#[test]
fn both_losses_match_central_differences_on_100_draws() {
    let (mean, unc) = gradient_draws(100, 11).unwrap();
    for r in [mean, unc] {
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 1500, "{r:?}");
    }
}

#[test]
fn draws_are_seeded() {
    assert_eq!(gradient_draws(5, 3).unwrap(), gradient_draws(5, 3).unwrap());
}
