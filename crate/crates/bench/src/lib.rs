//! Fixtures shared by the benchmarks: a desk-scale environment, a trained
//! agent shape and a filled replay batch.

use mec_offload::agents::{DdqlAgent, Minibatch, ReplayMemory};
use mec_offload::config::ExperimentConfig;
use mec_offload::env::{ActionCatalogue, ActionVector, MecEnv, RewardParams, STATE_DIM};
use mec_offload::rng::{substream, Stream};
use mec_offload::Result;

pub struct EnvFixture {
    pub env: MecEnv,
    pub joint: Vec<ActionVector>,
}

/// Desk environment after reset, with every node offloading at mid grid.
pub fn desk_env(seed: u64) -> Result<EnvFixture> {
    let cfg = ExperimentConfig::desk();
    let cat = ActionCatalogue::new(&cfg.grid);
    let mut env = MecEnv::new(cfg.env_config(), RewardParams::new(10.0, None, 0.9)?)?;
    env.reset(seed)?;
    let joint = (0..env.num_agents()).map(|i| cat.get((i * 37 + 3) % cat.len()).copied().unwrap()).collect();
    Ok(EnvFixture { env, joint })
}

/// Desk-shaped DDQL agent and a batch gathered from a memory of random
/// transitions.
pub fn ddql_fixture(seed: u64) -> Result<(DdqlAgent, Minibatch)> {
    let cfg = ExperimentConfig::desk();
    let actions = ActionCatalogue::new(&cfg.grid).len();
    let mut rng = substream(seed, Stream::Init);
    let agent = DdqlAgent::new(0, cfg.ddql.clone(), STATE_DIM, actions, &mut rng)?;
    let mut mem = ReplayMemory::new(0, cfg.ddql.batch_size * 4);
    let mut rng = substream(seed, Stream::Replay);
    for k in 0..mem.capacity() {
        let s: Vec<f64> = (0..STATE_DIM).map(|j| ((k * 7 + j * 3) % 11) as f64 / 5.5 - 1.0).collect();
        let s_next: Vec<f64> = s.iter().map(|x| -x).collect();
        mem.push(&s, k % actions, (k % 5) as f64 / 5.0 - 0.4, &s_next, k % 50 == 49);
    }
    let idx = mem.sample_indices(cfg.ddql.batch_size, &mut rng);
    Ok((agent, Minibatch::gather(&mem, &idx)))
}
