use criterion::{criterion_group, criterion_main, Criterion};
use mec_offload::channel::{channel_gain, db_to_linear, p_los_ground, path_loss, FadingState, ObstructionModel, Position3D};
use mec_offload::channel::ChannelParams;
use mec_offload::env::STATE_DIM;
use mec_offload_bench::{ddql_fixture, desk_env};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn channel(c: &mut Criterion) {
    let m = Position3D::new(0.0, 0.0, 25.0);
    let n = Position3D::new(420.0, 130.0, 1.5);
    let o = ObstructionModel::default();
    let p = ChannelParams::default();
    c.bench_function("p_los_ground_512_panels", |b| b.iter(|| p_los_ground(black_box(&m), black_box(&n), &o)));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("fading_and_gain", |b| {
        b.iter(|| {
            let f = FadingState::sample(&mut rng, 3.0);
            let pl = path_loss(&m, &n, &p, 10.0).unwrap();
            channel_gain(&m, &n, &f, db_to_linear(pl)).unwrap()
        })
    });
}

fn env_step(c: &mut Criterion) {
    let mut fx = desk_env(5).unwrap();
    let mut seed = 0u64;
    c.bench_function("desk_env_step", |b| {
        b.iter(|| {
            if fx.env.step(&fx.joint).is_err() {
                seed += 1;
                fx.env.reset(seed).unwrap();
            }
        })
    });
    c.bench_function("desk_env_reset", |b| b.iter(|| fx.env.reset(black_box(9)).unwrap()));
}

fn learner(c: &mut Criterion) {
    let (agent, batch) = ddql_fixture(3).unwrap();
    let s = vec![0.1; STATE_DIM];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("ddql_act", |b| b.iter(|| agent.act(black_box(&s), 0.1, &mut rng).unwrap()));
    c.bench_function("ddql_losses_batch64", |b| b.iter(|| agent.losses(black_box(&batch)).unwrap()));
    let mut trained = agent.clone();
    c.bench_function("ddql_train_on_batch64", |b| b.iter(|| trained.train_on(black_box(&batch)).unwrap()));
}

criterion_group!(benches, channel, env_step, learner);
criterion_main!(benches);
