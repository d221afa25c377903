//! Learning agents: tabular Q-learning, deep Q-learning and the
//! decentralized double deep Q-learner with mean and uncertainty networks,
//! plus the replay memory and its hashed distribution between agents.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{self, AdamState, Mlp, MlpSpec, TdBatch};

/// Exponential decay from `start` to `end`, reaching `end` after
/// `floor_at` of the training episodes and staying there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub episodes: usize,
    pub floor_at: f64,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, episodes: usize) -> Self {
        Self {
            start,
            end,
            episodes,
            floor_at: 0.8,
        }
    }

    pub fn value(&self, episode: usize) -> f64 {
        let horizon = (self.floor_at * self.episodes as f64).max(1.0);
        let frac = (episode as f64 / horizon).min(1.0);
        if self.start <= 0.0 || self.end <= 0.0 {
            return self.start + (self.end - self.start) * frac;
        }
        (self.start * (self.end / self.start).powf(frac)).max(self.end.min(self.start))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q.is_empty() {
        return Err(Error::Action("empty action set".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Action(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(argmax(q))
    }
}

/// Tabular action values over bucketized states; unseen entries are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QTable {
    actions: usize,
    rows: HashMap<u64, Vec<f64>>,
    visits: HashMap<(u64, usize), u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularTransition {
    pub s: u64,
    pub a: usize,
    pub r: f64,
    pub s_next: u64,
    pub terminal: bool,
}

impl QTable {
    pub fn new(actions: usize) -> Self {
        Self {
            actions,
            rows: HashMap::new(),
            visits: HashMap::new(),
        }
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, s: u64, a: usize) -> f64 {
        self.rows.get(&s).map_or(0.0, |r| r[a])
    }

    pub fn set(&mut self, s: u64, a: usize, v: f64) {
        let n = self.actions;
        self.rows.entry(s).or_insert_with(|| vec![0.0; n])[a] = v;
    }

    pub fn row(&self, s: u64) -> Vec<f64> {
        self.rows.get(&s).cloned().unwrap_or_else(|| vec![0.0; self.actions])
    }

    pub fn max(&self, s: u64) -> f64 {
        self.rows
            .get(&s)
            .map_or(0.0, |r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn visits(&self, s: u64, a: usize) -> u64 {
        self.visits.get(&(s, a)).copied().unwrap_or(0)
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }
}

/// `Q <- Q + psi * (r + zeta * max Q(s') - Q)`, with no bootstrap at
/// terminal transitions. Returns the new entry.
pub fn q_update_tabular(qt: &mut QTable, tr: &TabularTransition, psi: f64, zeta: f64) -> f64 {
    let q = qt.get(tr.s, tr.a);
    let boot = if tr.terminal { 0.0 } else { qt.max(tr.s_next) };
    let new = q + psi * (tr.r + zeta * boot - q);
    qt.set(tr.s, tr.a, new);
    *qt.visits.entry((tr.s, tr.a)).or_insert(0) += 1;
    new
}

/// One stored transition. `(agent, seq)` identifies it across memories.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub agent: u32,
    pub seq: u64,
    pub s: Vec<f64>,
    pub a: u32,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Bounded replay buffer; the oldest record is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    owner: u32,
    capacity: usize,
    buf: VecDeque<Experience>,
    keys: HashSet<(u32, u64)>,
    pending: Vec<Experience>,
    next_seq: u64,
}

impl ReplayMemory {
    pub fn new(owner: u32, capacity: usize) -> Self {
        Self {
            owner,
            capacity: capacity.max(1),
            buf: VecDeque::new(),
            keys: HashSet::new(),
            pending: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn owner(&self) -> u32 {
        self.owner
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.buf.get(i)
    }

    fn insert(&mut self, e: Experience) -> bool {
        if !self.keys.insert((e.agent, e.seq)) {
            return false;
        }
        if self.buf.len() == self.capacity {
            if let Some(old) = self.buf.pop_front() {
                self.keys.remove(&(old.agent, old.seq));
            }
        }
        self.buf.push_back(e);
        true
    }

    /// Record one of the owner's own transitions.
    pub fn push(&mut self, s: &[f64], a: usize, r: f64, s_next: &[f64], done: bool) {
        let e = Experience {
            agent: self.owner,
            seq: self.next_seq,
            s: s.to_vec(),
            a: a as u32,
            r,
            s_next: s_next.to_vec(),
            done,
        };
        self.next_seq += 1;
        self.pending.push(e.clone());
        self.insert(e);
    }

    /// Merge foreign records, skipping ones already held. Returns the
    /// number inserted.
    pub fn merge(&mut self, records: Vec<Experience>) -> usize {
        records.into_iter().map(|e| usize::from(self.insert(e))).sum()
    }

    /// Own records added since the last shard was taken.
    pub fn take_shard(&mut self) -> MemoryShard {
        MemoryShard {
            agent: self.owner,
            records: std::mem::take(&mut self.pending),
        }
    }

    /// `batch` distinct indices drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        index::sample(rng, self.buf.len(), batch.min(self.buf.len())).into_vec()
    }
}

/// Batch columns gathered from a memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub done: Vec<bool>,
}

impl Minibatch {
    pub fn gather(mem: &ReplayMemory, idx: &[usize]) -> Self {
        let mut b = Minibatch {
            states: Vec::new(),
            actions: Vec::with_capacity(idx.len()),
            rewards: Vec::with_capacity(idx.len()),
            next_states: Vec::new(),
            done: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            let e = &mem.buf[i];
            b.states.extend_from_slice(&e.s);
            b.next_states.extend_from_slice(&e.s_next);
            b.actions.push(e.a as usize);
            b.rewards.push(e.r);
            b.done.push(e.done);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// The newest records of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryShard {
    pub agent: u32,
    pub records: Vec<Experience>,
}

impl MemoryShard {
    /// Little-endian: agent u32, record count u64, then per record agent
    /// u32, seq u64, state width u32, state f64s, action u32, reward f64,
    /// next state f64s, done u8.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.agent.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for e in &self.records {
            out.extend_from_slice(&e.agent.to_le_bytes());
            out.extend_from_slice(&e.seq.to_le_bytes());
            out.extend_from_slice(&(e.s.len() as u32).to_le_bytes());
            for x in &e.s {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.extend_from_slice(&e.a.to_le_bytes());
            out.extend_from_slice(&e.r.to_le_bytes());
            for x in &e.s_next {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.push(u8::from(e.done));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, at: 0 };
        let agent = cur.u32()?;
        let n = cur.u64()? as usize;
        let mut records = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let ea = cur.u32()?;
            let seq = cur.u64()?;
            let dim = cur.u32()? as usize;
            let s = (0..dim).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            let a = cur.u32()?;
            let r = cur.f64()?;
            let s_next = (0..dim).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            let done = cur.take(1)?[0] != 0;
            records.push(Experience {
                agent: ea,
                seq,
                s,
                a,
                r,
                s_next,
                done,
            });
        }
        if cur.at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes in memory shard".into()));
        }
        Ok(Self { agent, records })
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl ByteCursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated memory shard".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// A serialized shard with its SHA-256 digest.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryDigest {
    pub hash: [u8; 32],
    pub payload: Vec<u8>,
}

impl MemoryDigest {
    pub fn seal(shard: &MemoryShard) -> Self {
        let payload = shard.to_bytes();
        Self {
            hash: Sha256::digest(&payload).into(),
            payload,
        }
    }

    pub fn verify(&self) -> bool {
        let h: [u8; 32] = Sha256::digest(&self.payload).into();
        h == self.hash
    }

    pub fn hex(&self) -> String {
        hex::encode(self.hash)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AggregationReport {
    pub aggregator: usize,
    pub shards: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub merged_records: usize,
}

/// Called on every delivery as `(receiver, sender, payload)`; lets tests
/// corrupt shards in transit.
pub type TamperHook<'a> = dyn FnMut(usize, usize, &mut Vec<u8>) + 'a;

/// Rotate the aggregator, collect each member's newest shard, seal it, and
/// deliver it to every member. Receivers verify the digest before merging.
pub fn aggregate_and_distribute(
    members: &mut [&mut ReplayMemory],
    round: usize,
    mut tamper: Option<&mut TamperHook<'_>>,
) -> Result<AggregationReport> {
    if members.is_empty() {
        return Err(Error::Action("aggregation needs at least one agent".into()));
    }
    let n = members.len();
    let mut report = AggregationReport {
        aggregator: round % n,
        ..AggregationReport::default()
    };
    // the aggregator seals every shard it collects
    let sealed: Vec<MemoryDigest> = members
        .iter_mut()
        .map(|m| MemoryDigest::seal(&m.take_shard()))
        .collect();
    report.shards = sealed.len();
    for (receiver, member) in members.iter_mut().enumerate() {
        for (sender, d) in sealed.iter().enumerate() {
            let mut delivered = d.clone();
            if let Some(hook) = tamper.as_mut() {
                hook(receiver, sender, &mut delivered.payload);
            }
            if !delivered.verify() {
                report.rejected += 1;
                continue;
            }
            let shard = MemoryShard::from_bytes(&delivered.payload)?;
            report.accepted += 1;
            report.merged_records += member.merge(shard.records);
        }
    }
    Ok(report)
}

/// Mean network output plus an exploration sample.
pub fn q_compose(mean_out: &[f64], uncertainty_sample: &[f64]) -> Result<Vec<f64>> {
    if mean_out.len() != uncertainty_sample.len() {
        return Err(Error::Shape(format!(
            "mean of width {} vs uncertainty of width {}",
            mean_out.len(),
            uncertainty_sample.len()
        )));
    }
    Ok(mean_out.iter().zip(uncertainty_sample).map(|(a, b)| a + b).collect())
}

/// Gaussian-scaled disagreement between the uncertainty and mean heads:
/// `scale * xi_a * (m_a - v_a)` with `xi_a ~ N(0, 1)`.
pub fn uncertainty_sample<R: Rng + ?Sized>(mean_out: &[f64], unc_out: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    mean_out
        .iter()
        .zip(unc_out)
        .map(|(v, m)| {
            if scale == 0.0 {
                0.0
            } else {
                let xi: f64 = rng.sample(StandardNormal);
                scale * xi * (m - v)
            }
        })
        .collect()
}

/// Hyperparameters shared by the network learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Adam learning rate.
    pub psi: f64,
    /// Discount.
    pub zeta: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    /// Train steps between target syncs.
    pub target_sync: usize,
    /// Environment steps between train steps.
    pub train_every: usize,
    pub hidden: Vec<usize>,
    /// Clip the gradient to this L2 norm.
    pub grad_clip: Option<f64>,
    pub output_scale: f64,
    // DDQL only
    pub use_prev_net_sum: bool,
    pub tvf_verbatim: bool,
    pub uncertainty_scale: f64,
    pub share_memory: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            psi: 3e-4,
            zeta: 0.9,
            batch_size: 64,
            memory_capacity: 20_000,
            target_sync: 20,
            train_every: 10,
            hidden: vec![64, 32],
            grad_clip: Some(10.0),
            output_scale: 0.01,
            use_prev_net_sum: true,
            tvf_verbatim: false,
            uncertainty_scale: 1.0,
            share_memory: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{section}.{field}"), msg))
            }
        };
        check(self.psi > 0.0 && self.psi.is_finite(), "psi", "must be > 0")?;
        check(self.zeta > 0.0 && self.zeta < 1.0, "zeta", "must lie in (0, 1)")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(
            self.memory_capacity >= self.batch_size,
            "memory_capacity",
            "must be >= batch_size",
        )?;
        check(self.target_sync >= 1, "target_sync", "must be >= 1")?;
        check(self.train_every >= 1, "train_every", "must be >= 1")?;
        check(
            !self.hidden.is_empty() && !self.hidden.contains(&0),
            "hidden",
            "needs at least one non-empty hidden layer",
        )?;
        if let Some(c) = self.grad_clip {
            check(c > 0.0, "grad_clip", "must be > 0")?;
        }
        check(self.output_scale > 0.0, "output_scale", "must be > 0")?;
        check(self.uncertainty_scale >= 0.0, "uncertainty_scale", "must be >= 0")?;
        Ok(())
    }

    pub fn spec(&self, input: usize, actions: usize) -> MlpSpec {
        MlpSpec::q_network(input, &self.hidden, actions)
    }
}

fn clip(grads: &mut [f64], max_norm: Option<f64>) {
    if let Some(c) = max_norm {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > c {
            let k = c / norm;
            grads.iter_mut().for_each(|g| *g *= k);
        }
    }
}

/// Losses of one train step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossRecord {
    pub mean: f64,
    pub uncertainty: f64,
}

fn rows(out: &[f64], width: usize) -> impl Iterator<Item = &[f64]> {
    out.chunks(width)
}

/// Deep Q-learner with its own replay memory and a max-operator target.
#[derive(Debug, Clone)]
pub struct DqlAgent {
    pub cfg: NetConfig,
    pub net: Mlp,
    pub target: Mlp,
    pub adam: AdamState,
    pub memory: ReplayMemory,
    train_steps: u64,
}

impl DqlAgent {
    pub fn new<R: Rng + ?Sized>(id: u32, cfg: NetConfig, input: usize, actions: usize, rng: &mut R) -> Result<Self> {
        let net = Mlp::init(cfg.spec(input, actions), cfg.output_scale, rng)?;
        Ok(Self {
            target: net.clone(),
            adam: AdamState::new(net.params.len(), cfg.psi),
            memory: ReplayMemory::new(id, cfg.memory_capacity),
            net,
            cfg,
            train_steps: 0,
        })
    }

    pub fn q_values(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(s)
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        epsilon_greedy(&self.q_values(s)?, epsilon, rng)
    }

    pub fn greedy(&self, s: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(s)?))
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// `r + zeta * max_a Q_target(s', a)`, zero bootstrap at terminals.
    pub fn targets(&self, b: &Minibatch) -> Result<Vec<f64>> {
        let out_w = self.net.spec().output_dim();
        let next = self.target.forward_batch(&b.next_states, b.len())?;
        Ok(rows(next.output(), out_w)
            .zip(b.rewards.iter().zip(&b.done))
            .map(|(q, (&r, &done))| {
                if done {
                    r
                } else {
                    r + self.cfg.zeta * q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect())
    }

    /// One gradient step on a sampled batch; `None` while the memory holds
    /// fewer than `batch_size` records.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.memory.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let idx = self.memory.sample_indices(self.cfg.batch_size, rng);
        let b = Minibatch::gather(&self.memory, &idx);
        let batch = TdBatch {
            targets: self.targets(&b)?,
            states: b.states,
            actions: b.actions,
        };
        let (loss, mut grads) = nn::td_loss(&self.net, None, &batch)?;
        clip(&mut grads, self.cfg.grad_clip);
        self.adam.step(&mut self.net.params, &grads)?;
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_sync as u64 == 0 {
            self.target.copy_from(&self.net);
        }
        Ok(Some(loss))
    }
}

/// Decentralized double deep Q-learner: mean network `v` (online, target,
/// previous step) and uncertainty network `m` with the same triple.
#[derive(Debug, Clone)]
pub struct DdqlAgent {
    pub cfg: NetConfig,
    pub theta: Mlp,
    pub theta_target: Mlp,
    pub theta_prev: Mlp,
    pub phi: Mlp,
    pub phi_target: Mlp,
    pub phi_prev: Mlp,
    pub adam_theta: AdamState,
    pub adam_phi: AdamState,
    pub memory: ReplayMemory,
    train_steps: u64,
    /// Multiplier on the uncertainty sample, annealed by the trainer.
    pub exploration_scale: f64,
}

impl DdqlAgent {
    pub fn new<R: Rng + ?Sized>(id: u32, cfg: NetConfig, input: usize, actions: usize, rng: &mut R) -> Result<Self> {
        let spec = cfg.spec(input, actions);
        let theta = Mlp::init(spec.clone(), cfg.output_scale, rng)?;
        let phi = Mlp::init(spec, cfg.output_scale, rng)?;
        Ok(Self {
            theta_target: theta.clone(),
            theta_prev: theta.clone(),
            phi_target: phi.clone(),
            phi_prev: phi.clone(),
            adam_theta: AdamState::new(theta.params.len(), cfg.psi),
            adam_phi: AdamState::new(phi.params.len(), cfg.psi),
            memory: ReplayMemory::new(id, cfg.memory_capacity),
            exploration_scale: cfg.uncertainty_scale,
            theta,
            phi,
            cfg,
            train_steps: 0,
        })
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Evaluation-time values: the mean network alone.
    pub fn mean_values(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.theta.forward(s)
    }

    /// Exploration-time values: mean plus the Gaussian-scaled uncertainty.
    pub fn explore_values<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let v = self.theta.forward(s)?;
        if self.exploration_scale == 0.0 {
            return Ok(v);
        }
        let m = self.phi.forward(s)?;
        let sample = uncertainty_sample(&v, &m, self.exploration_scale, rng);
        q_compose(&v, &sample)
    }

    pub fn act<R: Rng + ?Sized>(&self, s: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        let q = self.explore_values(s, rng)?;
        epsilon_greedy(&q, epsilon, rng)
    }

    pub fn greedy(&self, s: &[f64]) -> Result<usize> {
        Ok(argmax(&self.mean_values(s)?))
    }

    /// Double-Q targets for one network triple: the online network picks
    /// `a*` at `s'`, the target network evaluates it.
    fn targets_for(&self, online: &Mlp, target: &Mlp, b: &Minibatch) -> Result<Vec<f64>> {
        let out_w = online.spec().output_dim();
        let n = b.len();
        let sel = online.forward_batch(&b.next_states, n)?;
        let eval = target.forward_batch(&b.next_states, n)?;
        let coef = if self.cfg.tvf_verbatim { self.cfg.psi } else { self.cfg.zeta };
        // with the two-network sum, the bootstrapped value is the sum too
        let k = if self.cfg.use_prev_net_sum { 2.0 } else { 1.0 };
        Ok(rows(sel.output(), out_w)
            .zip(rows(eval.output(), out_w))
            .zip(b.rewards.iter().zip(&b.done))
            .map(|((qs, qt), (&r, &done))| {
                if done {
                    r
                } else {
                    r + coef * k * qt[argmax(qs)]
                }
            })
            .collect())
    }

    /// Mean-network target of a single transition.
    pub fn ddql_target(&self, s_next: &[f64], r: f64, terminal: bool) -> Result<f64> {
        let b = Minibatch {
            states: s_next.to_vec(),
            actions: vec![0],
            rewards: vec![r],
            next_states: s_next.to_vec(),
            done: vec![terminal],
        };
        Ok(self.targets_for(&self.theta, &self.theta_target, &b)?[0])
    }

    /// Loss and gradient of both networks on a batch, without updating.
    pub fn losses(&self, b: &Minibatch) -> Result<((f64, Vec<f64>), (f64, Vec<f64>))> {
        let mean_batch = TdBatch {
            states: b.states.clone(),
            actions: b.actions.clone(),
            targets: self.targets_for(&self.theta, &self.theta_target, b)?,
        };
        let unc_batch = TdBatch {
            states: b.states.clone(),
            actions: b.actions.clone(),
            targets: self.targets_for(&self.phi, &self.phi_target, b)?,
        };
        let sum = self.cfg.use_prev_net_sum;
        let mean = nn::td_loss_mean(&self.theta, sum.then_some(&self.theta_prev), &mean_batch)?;
        let unc = nn::td_loss_uncertainty(&self.phi, sum.then_some(&self.phi_prev), &unc_batch)?;
        Ok((mean, unc))
    }

    /// Train both networks on one batch drawn from the memory.
    pub fn train_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<LossRecord>> {
        if self.memory.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let idx = self.memory.sample_indices(self.cfg.batch_size, rng);
        let b = Minibatch::gather(&self.memory, &idx);
        self.train_on(&b).map(Some)
    }

    pub fn train_on(&mut self, b: &Minibatch) -> Result<LossRecord> {
        let ((lv, mut gv), (lm, mut gm)) = self.losses(b)?;
        clip(&mut gv, self.cfg.grad_clip);
        clip(&mut gm, self.cfg.grad_clip);
        // the current parameters become the previous-step snapshot
        self.theta_prev.copy_from(&self.theta);
        self.phi_prev.copy_from(&self.phi);
        self.adam_theta.step(&mut self.theta.params, &gv)?;
        self.adam_phi.step(&mut self.phi.params, &gm)?;
        self.train_steps += 1;
        if self.train_steps % self.cfg.target_sync as u64 == 0 {
            self.theta_target.copy_from(&self.theta);
            self.phi_target.copy_from(&self.phi);
        }
        Ok(LossRecord {
            mean: lv,
            uncertainty: lm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_greedy_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&[1.0, 5.0, 3.0], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(epsilon_greedy(&[2.0, 2.0], 0.0, &mut rng).unwrap(), 0);
        assert!(epsilon_greedy(&[], 0.5, &mut rng).is_err());
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[epsilon_greedy(&[0.0, 9.0, 1.0, 2.0], 1.0, &mut rng).unwrap()] += 1;
        }
        // binomial(10000, 0.25): sigma ~ 43.3
        for c in counts {
            assert!((c as f64 - 2500.0).abs() < 3.0 * 43.3, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule_is_monotone() {
        let s = EpsilonSchedule::new(1.0, 0.001, 500);
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(400) - 0.001).abs() < 1e-12);
        assert!((s.value(499) - 0.001).abs() < 1e-12);
        let mut last = f64::INFINITY;
        for e in 0..500 {
            let v = s.value(e);
            assert!(v <= last && (0.001..=1.0).contains(&v));
            last = v;
        }
    }

    #[test]
    fn tabular_update_examples() {
        let mut qt = QTable::new(2);
        qt.set(1, 0, 2.0);
        let tr = TabularTransition {
            s: 0,
            a: 0,
            r: 1.0,
            s_next: 1,
            terminal: false,
        };
        assert!((q_update_tabular(&mut qt, &tr, 0.5, 0.9) - 1.4).abs() < 1e-12);
        let before = qt.get(0, 0);
        assert_eq!(q_update_tabular(&mut qt, &tr, 0.0, 0.9), before);
        let mut qt = QTable::new(2);
        qt.set(1, 0, 50.0);
        let term = TabularTransition { terminal: true, ..tr };
        assert_eq!(q_update_tabular(&mut qt, &term, 1.0, 0.9), 1.0);
        assert_eq!(qt.visits(0, 0), 1);
    }

    #[test]
    fn q_compose_examples() {
        assert_eq!(q_compose(&[1.0, 2.0], &[0.5, -0.5]).unwrap(), vec![1.5, 1.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = [1.0, -3.0, 0.25];
        let zero = uncertainty_sample(&v, &[5.0, 5.0, 5.0], 0.0, &mut rng);
        assert_eq!(q_compose(&v, &zero).unwrap(), v.to_vec());
        let a = uncertainty_sample(&v, &[2.0, 0.0, 1.0], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let b = uncertainty_sample(&v, &[2.0, 0.0, 1.0], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert!(q_compose(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn filled(owner: u32, n: usize, cap: usize) -> ReplayMemory {
        let mut m = ReplayMemory::new(owner, cap);
        for i in 0..n {
            let x = i as f64 + 100.0 * owner as f64;
            m.push(&[x, -x], i % 3, x * 0.5, &[x + 1.0, 0.0], i % 5 == 0);
        }
        m
    }

    #[test]
    fn replay_memory_is_bounded_and_dedups() {
        let mut m = filled(0, 10, 4);
        assert_eq!(m.len(), 4);
        assert_eq!(m.get(0).unwrap().seq, 6);
        let again = m.get(1).unwrap().clone();
        assert_eq!(m.merge(vec![again]), 0);
        let idx = m.sample_indices(4, &mut ChaCha8Rng::seed_from_u64(1));
        let set: HashSet<_> = idx.iter().collect();
        assert_eq!(set.len(), 4);
    }

    #[test]
    fn shard_round_trip() {
        let mut m = filled(3, 5, 10);
        let shard = m.take_shard();
        assert_eq!(shard.records.len(), 5);
        assert!(m.take_shard().records.is_empty());
        let back = MemoryShard::from_bytes(&shard.to_bytes()).unwrap();
        assert_eq!(back, shard);
        let d = MemoryDigest::seal(&shard);
        assert!(d.verify());
        assert_eq!(d.hex().len(), 64);
    }

    #[test]
    fn aggregation_rotates_and_merges() {
        let mut mems: Vec<ReplayMemory> = (0..3).map(|i| filled(i, 4, 100)).collect();
        let mut seq = Vec::new();
        for round in 0..6 {
            let mut refs: Vec<&mut ReplayMemory> = mems.iter_mut().collect();
            let rep = aggregate_and_distribute(&mut refs, round, None).unwrap();
            seq.push(rep.aggregator);
            if round == 0 {
                assert_eq!(rep.rejected, 0);
                assert_eq!(rep.merged_records, 2 * 3 * 4);
            }
        }
        assert_eq!(seq, vec![0, 1, 2, 0, 1, 2]);
        assert!(mems.iter().all(|m| m.len() == 12));
    }

    #[test]
    fn single_agent_aggregation_is_noop() {
        let mut m = filled(0, 4, 100);
        let before = m.len();
        let rep = aggregate_and_distribute(&mut [&mut m], 7, None).unwrap();
        assert_eq!(rep.aggregator, 0);
        assert_eq!(rep.merged_records, 0);
        assert_eq!(m.len(), before);
    }

    #[test]
    fn corrupted_shard_is_rejected() {
        let mut a = filled(0, 4, 100);
        let mut b = filled(1, 4, 100);
        let mut hook = |receiver: usize, sender: usize, p: &mut Vec<u8>| {
            if receiver == 0 && sender == 1 {
                p[20] ^= 0xff;
            }
        };
        let rep = aggregate_and_distribute(&mut [&mut a, &mut b], 0, Some(&mut hook)).unwrap();
        assert_eq!(rep.rejected, 1);
        assert_eq!(a.len(), 4);
        assert_eq!(b.len(), 8);
    }

    fn cfg(prev: bool, scale: f64) -> NetConfig {
        NetConfig {
            hidden: vec![8],
            batch_size: 4,
            memory_capacity: 64,
            use_prev_net_sum: prev,
            uncertainty_scale: scale,
            grad_clip: None,
            ..NetConfig::default()
        }
    }

    #[test]
    fn ddql_target_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = DdqlAgent::new(0, cfg(false, 1.0), 2, 2, &mut rng).unwrap();
        assert_eq!(agent.ddql_target(&[0.1, 0.2], 5.0, true).unwrap(), 5.0);
        agent.theta_target.params.iter_mut().for_each(|p| *p = 0.0);
        assert_eq!(agent.ddql_target(&[0.1, 0.2], 1.5, false).unwrap(), 1.5);
        // online net prefers a1, target values a1 at 2
        let spec = agent.theta.spec().clone();
        let mut online = Mlp::zeros(spec.clone()).unwrap();
        let n = online.params.len();
        online.params[n - 1] = 1.0;
        let mut target = Mlp::zeros(spec).unwrap();
        target.params[n - 2] = 7.0;
        target.params[n - 1] = 2.0;
        agent.theta = online;
        agent.theta_target = target;
        assert!((agent.ddql_target(&[0.1, 0.2], 1.0, false).unwrap() - 2.8).abs() < 1e-12);
    }

    #[test]
    fn ddql_reduces_to_double_dqn() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut agent = DdqlAgent::new(0, cfg(false, 0.0), 3, 4, &mut rng).unwrap();
        for i in 0..16 {
            let x = i as f64 / 16.0;
            agent.memory.push(&[x, 1.0 - x, 0.5], i % 4, x, &[x * x, x, 0.0], i % 7 == 0);
        }
        // perturb the target so selection and evaluation differ
        agent.theta_target.params.iter_mut().enumerate().for_each(|(i, p)| *p += 0.01 * (i as f64).sin());
        let idx: Vec<usize> = (0..4).collect();
        let b = Minibatch::gather(&agent.memory, &idx);

        // hand-composed double-DQN update
        let out_w = 4;
        let sel = agent.theta.forward_batch(&b.next_states, 4).unwrap();
        let ev = agent.theta_target.forward_batch(&b.next_states, 4).unwrap();
        let targets: Vec<f64> = (0..4)
            .map(|k| {
                let qs = &sel.output()[k * out_w..(k + 1) * out_w];
                let qt = &ev.output()[k * out_w..(k + 1) * out_w];
                if b.done[k] {
                    b.rewards[k]
                } else {
                    b.rewards[k] + 0.9 * qt[argmax(qs)]
                }
            })
            .collect();
        let batch = TdBatch {
            states: b.states.clone(),
            actions: b.actions.clone(),
            targets,
        };
        let (_, g) = nn::td_loss(&agent.theta, None, &batch).unwrap();
        let mut expected = agent.theta.params.clone();
        let mut adam = agent.adam_theta.clone();
        adam.step(&mut expected, &g).unwrap();

        agent.train_on(&b).unwrap();
        assert_eq!(agent.theta.params, expected);
        // exploration reduces to the mean network
        let s = [0.3, 0.3, 0.3];
        assert_eq!(
            agent.explore_values(&s, &mut rng).unwrap(),
            agent.mean_values(&s).unwrap()
        );
    }

    #[test]
    fn ddql_step_is_adam_of_the_mean_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut agent = DdqlAgent::new(0, cfg(true, 1.0), 3, 4, &mut rng).unwrap();
        for i in 0..8 {
            let x = i as f64 / 8.0;
            agent.memory.push(&[x, -x, 1.0], i % 4, 1.0 - x, &[x, x, x], false);
        }
        let b = Minibatch::gather(&agent.memory, &[0, 2, 4, 6]);
        let ((_, gv), _) = agent.losses(&b).unwrap();
        let mut expected = agent.theta.params.clone();
        let mut adam = agent.adam_theta.clone();
        adam.step(&mut expected, &gv).unwrap();
        let before = agent.theta.params.clone();
        agent.train_on(&b).unwrap();
        assert_eq!(agent.theta.params, expected);
        assert_eq!(agent.theta_prev.params, before);
    }

    #[test]
    fn target_changes_only_at_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut c = cfg(true, 1.0);
        c.target_sync = 3;
        let mut agent = DdqlAgent::new(0, c.clone(), 2, 3, &mut rng).unwrap();
        let mut dql = DqlAgent::new(1, c, 2, 3, &mut rng).unwrap();
        for i in 0..20 {
            let x = i as f64 / 20.0;
            agent.memory.push(&[x, 1.0], i % 3, x, &[1.0, x], false);
            dql.memory.push(&[x, 1.0], i % 3, x, &[1.0, x], false);
        }
        let mut last = agent.theta_target.params.clone();
        let mut last_dql = dql.target.params.clone();
        for step in 1..=9u64 {
            agent.train_step(&mut rng).unwrap().unwrap();
            dql.train_step(&mut rng).unwrap().unwrap();
            if step % 3 == 0 {
                assert_eq!(agent.theta_target.params, agent.theta.params);
                assert_eq!(dql.target.params, dql.net.params);
                last = agent.theta_target.params.clone();
                last_dql = dql.target.params.clone();
            } else {
                assert_eq!(agent.theta_target.params, last);
                assert_eq!(dql.target.params, last_dql);
            }
        }
    }

    #[test]
    fn warmup_skips_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dql = DqlAgent::new(0, cfg(false, 0.0), 2, 2, &mut rng).unwrap();
        dql.memory.push(&[0.0, 0.0], 0, 1.0, &[0.0, 0.0], true);
        assert_eq!(dql.train_step(&mut rng).unwrap(), None);
        let mut ddql = DdqlAgent::new(0, cfg(false, 0.0), 2, 2, &mut rng).unwrap();
        assert_eq!(ddql.train_step(&mut rng).unwrap(), None);
    }

    #[test]
    fn exact_targets_leave_params_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut dql = DqlAgent::new(0, cfg(false, 0.0), 2, 2, &mut rng).unwrap();
        let s = [0.4, -0.2];
        let q = dql.q_values(&s).unwrap();
        for _ in 0..4 {
            dql.memory.push(&s, 1, q[1], &s, true);
        }
        let before = dql.net.params.clone();
        let loss = dql.train_step(&mut rng).unwrap().unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(dql.net.params, before);
    }
}
