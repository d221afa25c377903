//! Experiment execution: reward calibration, the decentralized training
//! loop, greedy evaluation on fixed seeds, policy comparison, sweeps and
//! CSV outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    aggregate_and_distribute, argmax, epsilon_greedy, q_update_tabular, DdqlAgent, DqlAgent, EpsilonSchedule,
    QTable, ReplayMemory, TabularTransition,
};
use crate::baselines::{flc_policy, foc_policy, rodrs_policy, rosrs_policy, PolicyKind};
use crate::config::ExperimentConfig;
use crate::env::{ActionCatalogue, ActionVector, Completion, EnvConfig, EpisodeStats, MecEnv, RewardParams, StateVector, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn;
use crate::rng::{derive_seed, substream, substream_indexed, Stream};

/// Bumped whenever a CSV column changes.
pub const METRICS_SCHEMA: u32 = 1;

const EVAL_SEED_BASE: u64 = 1 << 40;
const CALIBRATION_SEED_BASE: u64 = 1 << 41;

/// State features used by the tabular learner: data, ck, rate, MEC height.
const QL_FEATURES: [usize; 4] = [1, 14, 11, 5];

/// Tabular learner over bucketized states.
#[derive(Debug, Clone)]
pub struct QlAgent {
    pub table: QTable,
    pub bins: usize,
}

impl QlAgent {
    pub fn bucket(&self, s: &StateVector) -> u64 {
        let b = self.bins as u64;
        QL_FEATURES.iter().fold(0u64, |acc, &f| {
            let x = ((s.0[f] + 1.0) / 2.0 * self.bins as f64).floor() as i64;
            acc * b + x.clamp(0, self.bins as i64 - 1) as u64
        })
    }
}

/// Per-agent decision makers of one policy.
#[derive(Debug, Clone)]
pub enum Controller {
    Static(PolicyKind),
    Ql(Vec<QlAgent>),
    Dql(Vec<DqlAgent>),
    Ddql(Vec<DdqlAgent>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Explore(f64),
    Greedy,
}

impl Controller {
    fn new(cfg: &ExperimentConfig, kind: PolicyKind, seed: u64, agents: usize, actions: usize) -> Result<Self> {
        Ok(match kind {
            PolicyKind::Ql => Controller::Ql(
                (0..agents)
                    .map(|_| QlAgent {
                        table: QTable::new(actions),
                        bins: cfg.ql.bins,
                    })
                    .collect(),
            ),
            PolicyKind::Dql => Controller::Dql(
                (0..agents)
                    .map(|i| {
                        let mut rng = substream_indexed(seed, Stream::Init, i as u64);
                        DqlAgent::new(i as u32, cfg.dql.clone(), STATE_DIM, actions, &mut rng)
                    })
                    .collect::<Result<_>>()?,
            ),
            PolicyKind::Ddql => Controller::Ddql(
                (0..agents)
                    .map(|i| {
                        let mut rng = substream_indexed(seed, Stream::Init, i as u64);
                        DdqlAgent::new(i as u32, cfg.ddql.clone(), STATE_DIM, actions, &mut rng)
                    })
                    .collect::<Result<_>>()?,
            ),
            k => Controller::Static(k),
        })
    }

    fn num_agents(&self) -> Option<usize> {
        match self {
            Controller::Static(_) => None,
            Controller::Ql(a) => Some(a.len()),
            Controller::Dql(a) => Some(a.len()),
            Controller::Ddql(a) => Some(a.len()),
        }
    }

    /// Joint action and the catalogue index of each entry (`usize::MAX`
    /// for static actions outside the catalogue).
    fn choose(
        &self,
        env: &MecEnv,
        states: &[StateVector],
        cat: &ActionCatalogue,
        cfg: &ExperimentConfig,
        mode: Mode,
        agent_rngs: &mut [ChaCha8Rng],
        shared_rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<ActionVector>, Vec<usize>)> {
        let n = env.num_agents();
        let mut acts = Vec::with_capacity(n);
        let mut idx = Vec::with_capacity(n);
        for i in 0..n {
            if !env.is_active(i) {
                acts.push(ActionVector::local(0));
                idx.push(0);
                continue;
            }
            let s = &states[i];
            let k = match self {
                Controller::Static(kind) => {
                    let view = env.view(i);
                    let a = match kind {
                        PolicyKind::Flc => flc_policy(&view),
                        PolicyKind::Foc => foc_policy(&view, &cfg.grid),
                        PolicyKind::Rodrs => rodrs_policy(&view, &cfg.grid, &cfg.baselines, shared_rng),
                        PolicyKind::Rosrs => rosrs_policy(&view, &cfg.grid, &cfg.baselines, shared_rng),
                        other => return Err(Error::Action(format!("{other} is not a static policy"))),
                    };
                    acts.push(a);
                    idx.push(cat.index_of(&a).unwrap_or(usize::MAX));
                    continue;
                }
                Controller::Ql(agents) => {
                    let row = agents[i].table.row(agents[i].bucket(s));
                    match mode {
                        Mode::Explore(eps) => epsilon_greedy(&row, eps, &mut agent_rngs[i])?,
                        Mode::Greedy => argmax(&row),
                    }
                }
                Controller::Dql(agents) => match mode {
                    Mode::Explore(eps) => agents[i].act(s.as_slice(), eps, &mut agent_rngs[i])?,
                    Mode::Greedy => agents[i].greedy(s.as_slice())?,
                },
                Controller::Ddql(agents) => match mode {
                    Mode::Explore(eps) => agents[i].act(s.as_slice(), eps, &mut agent_rngs[i])?,
                    Mode::Greedy => agents[i].greedy(s.as_slice())?,
                },
            };
            acts.push(cat.action(k)?);
            idx.push(k);
        }
        Ok((acts, idx))
    }
}

/// A policy ready for evaluation.
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub kind: PolicyKind,
    pub controller: Controller,
    pub c_const: f64,
    pub seed: u64,
}

impl TrainedPolicy {
    /// A static policy needs no training.
    pub fn fixed(kind: PolicyKind, c_const: f64, seed: u64) -> Result<Self> {
        if kind.is_learner() {
            return Err(Error::Action(format!("{kind} needs training")));
        }
        Ok(Self {
            kind,
            controller: Controller::Static(kind),
            c_const,
            seed,
        })
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub schema: u32,
    pub policy: String,
    pub seed: u64,
    pub episode: usize,
    pub steps: usize,
    pub sum_cost: f64,
    pub reward: f64,
    pub violations: usize,
    pub handovers: usize,
    pub offloads: usize,
    pub rate_floored: usize,
    pub hash_rejections: usize,
    pub train_steps: usize,
    pub epsilon: f64,
    /// Mean TD loss of the mean (or only) network across agents.
    pub loss: f64,
    pub loss_uncertainty: f64,
    /// Per-agent mean loss, `;`-separated.
    pub agent_losses: String,
    pub c_const: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub episode: usize,
    pub wall_ms: f64,
}

pub struct TrainOutput {
    pub policy: TrainedPolicy,
    pub metrics: Vec<EpisodeMetrics>,
    pub wall: Duration,
}

/// Linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (pct / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Reward offset: a percentile of the per-agent step cost of full local
/// computing over calibration episodes.
pub fn calibrate_c_const(env_cfg: &EnvConfig, seed: u64) -> Result<f64> {
    if let Some(c) = env_cfg.reward.c_const {
        return Ok(c);
    }
    let mut env = MecEnv::new(env_cfg.clone(), RewardParams::new(1.0, None, 0.5)?)?;
    let mut costs = Vec::new();
    for k in 0..env_cfg.reward.calibration_episodes {
        env.reset(derive_seed(seed, CALIBRATION_SEED_BASE + k as u64))?;
        while !env.done() {
            let acts = vec![ActionVector::local(0); env.num_agents()];
            let ev = env.evaluate_joint(&acts)?;
            costs.extend(ev.outcomes.iter().flatten().map(|o| o.costs.v));
            env.step(&acts)?;
        }
    }
    let c = percentile(&costs, env_cfg.reward.calibration_percentile);
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Numeric(format!("calibrated reward offset {c} is not positive")));
    }
    Ok(c)
}

fn reward_params(cfg: &ExperimentConfig, c_const: f64) -> Result<RewardParams> {
    RewardParams::new(c_const, cfg.reward.penalty, cfg.ddql.zeta)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Train `kind` for `cfg.run.episodes` episodes. Static policies run the
/// same episodes without learning. `on_episode` sees every record as it
/// is produced.
pub fn train_policy(
    cfg: &ExperimentConfig,
    kind: PolicyKind,
    seed: u64,
    mut on_episode: impl FnMut(&EpisodeMetrics, Duration) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let env_cfg = cfg.env_config();
    let c_const = calibrate_c_const(&env_cfg, seed)?;
    let mut env = MecEnv::new(env_cfg, reward_params(cfg, c_const)?)?;
    let cat = ActionCatalogue::new(&cfg.grid);
    let n = env.num_agents();
    let mut ctrl = Controller::new(cfg, kind, seed, n, cat.len())?;
    let mut agent_rngs: Vec<ChaCha8Rng> = (0..n).map(|i| substream_indexed(seed, Stream::Policy, i as u64)).collect();
    let mut replay_rngs: Vec<ChaCha8Rng> = (0..n).map(|i| substream_indexed(seed, Stream::Replay, i as u64)).collect();
    let mut shared_rng = substream(seed, Stream::Policy);
    let e = cfg.exploration;
    let episodes = cfg.run.episodes;
    let schedule = EpsilonSchedule {
        start: e.start,
        end: e.end,
        episodes,
        floor_at: e.floor_at,
    };
    let (train_every, share) = match kind {
        PolicyKind::Dql => (cfg.dql.train_every, false),
        PolicyKind::Ddql => (cfg.ddql.train_every, cfg.ddql.share_memory && n > 1),
        _ => (1, false),
    };
    let scale = 1.0 / c_const;
    let mut metrics = Vec::with_capacity(episodes);
    let mut env_steps = 0usize;

    for ep in 0..episodes {
        let t0 = Instant::now();
        let eps = if kind.is_learner() { schedule.value(ep) } else { 0.0 };
        env.set_progress(ep as f64 / episodes as f64, eps);
        if let Controller::Ddql(agents) = &mut ctrl {
            let anneal = if e.start > 0.0 { eps / e.start } else { 0.0 };
            for a in agents.iter_mut() {
                a.exploration_scale = cfg.ddql.uncertainty_scale * anneal;
            }
        }
        let mut states = env.reset(derive_seed(seed, ep as u64))?;
        let mut stats = EpisodeStats::default();
        let mut losses: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut unc_losses: Vec<f64> = Vec::new();
        let mut steps = 0;
        while !env.done() {
            let (acts, idx) = ctrl.choose(&env, &states, &cat, cfg, Mode::Explore(eps), &mut agent_rngs, &mut shared_rng)?;
            let (trs, st) = env.step(&acts)?;
            stats.accumulate(&st);
            steps += 1;
            env_steps += 1;
            for t in &trs {
                let done = t.comp == Completion::Done;
                let r = t.r * scale;
                let a = idx[t.agent];
                match &mut ctrl {
                    Controller::Static(_) => {}
                    Controller::Ql(agents) => {
                        let ag = &mut agents[t.agent];
                        let tr = TabularTransition {
                            s: ag.bucket(&t.s),
                            a,
                            r,
                            s_next: ag.bucket(&t.s_next),
                            terminal: done,
                        };
                        q_update_tabular(&mut ag.table, &tr, cfg.ql.psi, cfg.ql.zeta);
                    }
                    Controller::Dql(agents) => agents[t.agent].memory.push(t.s.as_slice(), a, r, t.s_next.as_slice(), done),
                    Controller::Ddql(agents) => agents[t.agent].memory.push(t.s.as_slice(), a, r, t.s_next.as_slice(), done),
                }
            }
            states = env.observe_all();
            if env_steps % train_every == 0 {
                match &mut ctrl {
                    Controller::Dql(agents) => {
                        for (i, ag) in agents.iter_mut().enumerate() {
                            if let Some(l) = ag.train_step(&mut replay_rngs[i])? {
                                losses[i].push(l);
                            }
                        }
                    }
                    Controller::Ddql(agents) => {
                        for (i, ag) in agents.iter_mut().enumerate() {
                            if let Some(l) = ag.train_step(&mut replay_rngs[i])? {
                                losses[i].push(l.mean);
                                unc_losses.push(l.uncertainty);
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        let mut rejections = 0;
        if share {
            if let Controller::Ddql(agents) = &mut ctrl {
                let mut mems: Vec<&mut ReplayMemory> = agents.iter_mut().map(|a| &mut a.memory).collect();
                rejections = aggregate_and_distribute(&mut mems, ep, None)?.rejected;
            }
        }
        let agent_means: Vec<f64> = losses.iter().map(|l| mean(l)).collect();
        let trained: Vec<f64> = losses.iter().filter(|l| !l.is_empty()).map(|l| mean(l)).collect();
        let rec = EpisodeMetrics {
            schema: METRICS_SCHEMA,
            policy: kind.name().into(),
            seed,
            episode: ep,
            steps,
            sum_cost: stats.sum_cost,
            reward: stats.reward,
            violations: stats.violations,
            handovers: stats.handovers,
            offloads: stats.offloads,
            rate_floored: stats.rate_floored,
            hash_rejections: rejections,
            train_steps: losses.iter().map(Vec::len).sum(),
            epsilon: eps,
            loss: mean(&trained),
            loss_uncertainty: mean(&unc_losses),
            agent_losses: if kind.is_learner() && kind != PolicyKind::Ql {
                agent_means.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";")
            } else {
                String::new()
            },
            c_const,
        };
        on_episode(&rec, t0.elapsed())?;
        metrics.push(rec);
    }
    Ok(TrainOutput {
        policy: TrainedPolicy {
            kind,
            controller: ctrl,
            c_const,
            seed,
        },
        metrics,
        wall: started.elapsed(),
    })
}

/// Greedy evaluation over fixed seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeStats>,
    pub mean_sum_cost: f64,
    pub std_sum_cost: f64,
    pub violation_rate: f64,
    pub offload_rate: f64,
}

pub fn eval_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, EVAL_SEED_BASE + k as u64)
}

/// Run `cfg.run.eval_episodes` greedy episodes of `policy` on the
/// environment described by `cfg`, which may differ from the training one
/// in anything but the number of nodes and the action grid.
pub fn evaluate(cfg: &ExperimentConfig, policy: &TrainedPolicy) -> Result<EvalSummary> {
    let env_cfg = cfg.env_config();
    env_cfg.validate()?;
    let mut env = MecEnv::new(env_cfg, reward_params(cfg, policy.c_const)?)?;
    if let Some(n) = policy.controller.num_agents() {
        if n != env.num_agents() {
            return Err(Error::InvalidNode(format!(
                "policy trained for {n} agents, environment has {}",
                env.num_agents()
            )));
        }
    }
    let cat = ActionCatalogue::new(&cfg.grid);
    let mut agent_rngs: Vec<ChaCha8Rng> = (0..env.num_agents())
        .map(|i| substream_indexed(policy.seed, Stream::Eval, i as u64))
        .collect();
    let mut shared_rng = substream(policy.seed, Stream::Eval);
    let mut episodes = Vec::new();
    for k in 0..cfg.run.eval_episodes {
        env.set_progress(1.0, cfg.exploration.end);
        let mut states = env.reset(eval_seed(policy.seed, k))?;
        let mut stats = EpisodeStats::default();
        while !env.done() {
            let (acts, _) = policy
                .controller
                .choose(&env, &states, &cat, cfg, Mode::Greedy, &mut agent_rngs, &mut shared_rng)?;
            let (_, st) = env.step(&acts)?;
            stats.accumulate(&st);
            states = env.observe_all();
        }
        episodes.push(stats);
    }
    let costs: Vec<f64> = episodes.iter().map(|s| s.sum_cost).collect();
    let active: usize = episodes.iter().map(|s| s.active).sum::<usize>().max(1);
    Ok(EvalSummary {
        mean_sum_cost: mean(&costs),
        std_sum_cost: std_dev(&costs),
        violation_rate: episodes.iter().map(|s| s.violations).sum::<usize>() as f64 / active as f64,
        offload_rate: episodes.iter().map(|s| s.offloads).sum::<usize>() as f64 / active as f64,
        episodes,
    })
}

/// Train (or instantiate) a policy without recording anything.
pub fn obtain_policy(cfg: &ExperimentConfig, kind: PolicyKind, seed: u64) -> Result<TrainOutput> {
    if kind.is_learner() {
        train_policy(cfg, kind, seed, |_, _| Ok(()))
    } else {
        let c = calibrate_c_const(&cfg.env_config(), seed)?;
        Ok(TrainOutput {
            policy: TrainedPolicy::fixed(kind, c, seed)?,
            metrics: Vec::new(),
            wall: Duration::ZERO,
        })
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub policy: String,
    pub seed: u64,
    pub episodes: usize,
    pub c_const: f64,
    pub train_final_sum_cost: f64,
    pub eval_episodes: usize,
    pub eval_sum_cost: f64,
    pub eval_sum_cost_std: f64,
    pub eval_violation_rate: f64,
    pub eval_offload_rate: f64,
}

/// Serialize `rows` to a CSV file with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Save each agent's networks (or table) and a metadata file.
pub fn save_checkpoint(dir: &Path, policy: &TrainedPolicy, episode: usize, epsilon: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
    let write_net = |name: String, net: &nn::Mlp, adam: &nn::AdamState| -> Result<()> {
        let path = dir.join(name);
        let f = File::create(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        nn::write_checkpoint(&mut w, net, Some(adam))?;
        w.flush().map_err(|e| Error::Checkpoint(e.to_string()))
    };
    let mut memory = Vec::new();
    match &policy.controller {
        Controller::Static(_) => {}
        Controller::Ql(agents) => {
            for (i, a) in agents.iter().enumerate() {
                let mut w = csv::Writer::from_path(dir.join(format!("agent_{i}_qtable.csv")))?;
                w.write_record(["bucket", "action", "q", "visits"])?;
                let mut keys: Vec<u64> = (0..a.bins.pow(QL_FEATURES.len() as u32) as u64).collect();
                keys.retain(|&k| a.table.row(k).iter().any(|&q| q != 0.0));
                for k in keys {
                    for (act, q) in a.table.row(k).iter().enumerate() {
                        let v = a.table.visits(k, act);
                        if v > 0 {
                            w.write_record([k.to_string(), act.to_string(), q.to_string(), v.to_string()])?;
                        }
                    }
                }
                w.flush()?;
            }
        }
        Controller::Dql(agents) => {
            for (i, a) in agents.iter().enumerate() {
                write_net(format!("agent_{i}_q.bin"), &a.net, &a.adam)?;
                memory.push(a.memory.len());
            }
        }
        Controller::Ddql(agents) => {
            for (i, a) in agents.iter().enumerate() {
                write_net(format!("agent_{i}_mean.bin"), &a.theta, &a.adam_theta)?;
                write_net(format!("agent_{i}_uncertainty.bin"), &a.phi, &a.adam_phi)?;
                memory.push(a.memory.len());
            }
        }
    }
    #[derive(Serialize)]
    struct Meta<'a> {
        policy: &'a str,
        seed: u64,
        episode: usize,
        epsilon: f64,
        c_const: f64,
        memory_records: Vec<usize>,
    }
    let meta = Meta {
        policy: policy.kind.name(),
        seed: policy.seed,
        episode,
        epsilon,
        c_const: policy.c_const,
        memory_records: memory,
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(dir.join("meta.toml"), text).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Train, evaluate and write `metrics.csv`, `timing.csv`, `summary.csv` and
/// (for learners) a checkpoint into `out`. Metrics are written as episodes
/// finish, so a failure leaves the rows produced so far.
pub fn run_experiment(cfg: &ExperimentConfig, kind: PolicyKind, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut metrics_w = csv::Writer::from_path(out.join("metrics.csv"))?;
    let mut timing_w = csv::Writer::from_path(out.join("timing.csv"))?;
    let trained = train_policy(cfg, kind, cfg.run.seed, |m, wall| {
        metrics_w.serialize(m)?;
        metrics_w.flush()?;
        timing_w.serialize(TimingRecord {
            episode: m.episode,
            wall_ms: wall.as_secs_f64() * 1e3,
        })?;
        timing_w.flush()?;
        Ok(())
    })?;
    if cfg.run.checkpoint && kind.is_learner() {
        let last_eps = trained.metrics.last().map_or(0.0, |m| m.epsilon);
        save_checkpoint(&out.join("checkpoint"), &trained.policy, cfg.run.episodes, last_eps)?;
    }
    let eval = evaluate(cfg, &trained.policy)?;
    let tail = (cfg.run.episodes / 10).max(1);
    let last: Vec<f64> = trained.metrics.iter().rev().take(tail).map(|m| m.sum_cost).collect();
    let summary = RunSummary {
        schema: METRICS_SCHEMA,
        policy: kind.name().into(),
        seed: cfg.run.seed,
        episodes: cfg.run.episodes,
        c_const: trained.policy.c_const,
        train_final_sum_cost: mean(&last),
        eval_episodes: cfg.run.eval_episodes,
        eval_sum_cost: eval.mean_sum_cost,
        eval_sum_cost_std: eval.std_sum_cost,
        eval_violation_rate: eval.violation_rate,
        eval_offload_rate: eval.offload_rate,
    };
    write_csv(&out.join("summary.csv"), std::slice::from_ref(&summary))?;
    Ok(summary)
}

/// One row of `compare.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub schema: u32,
    pub policy: String,
    pub seeds: usize,
    pub mean_sum_cost: f64,
    pub std_sum_cost: f64,
    /// `(cost_p - cost_ddql) / cost_p`; empty when dDDQL is not compared.
    pub ddql_reduction: Option<f64>,
}

/// `(cost_p - cost_ref) / cost_p`.
pub fn reduction(cost_p: f64, cost_ref: f64) -> f64 {
    (cost_p - cost_ref) / cost_p
}

/// Per-seed evaluation costs of each policy, seeds `run.seed + k`.
pub fn evaluate_policies(cfg: &ExperimentConfig, policies: &[PolicyKind]) -> Result<Vec<(PolicyKind, Vec<f64>)>> {
    let mut out: Vec<(PolicyKind, Vec<f64>)> = policies.iter().map(|&p| (p, Vec::new())).collect();
    for k in 0..cfg.run.seeds {
        let seed = cfg.run.seed + k as u64;
        for (p, costs) in out.iter_mut() {
            let t = obtain_policy(cfg, *p, seed)?;
            costs.push(evaluate(cfg, &t.policy)?.mean_sum_cost);
        }
    }
    Ok(out)
}

pub fn compare_rows(per_policy: &[(PolicyKind, Vec<f64>)]) -> Vec<CompareRow> {
    let ddql = per_policy.iter().find(|(p, _)| *p == PolicyKind::Ddql).map(|(_, c)| mean(c));
    per_policy
        .iter()
        .map(|(p, costs)| CompareRow {
            schema: METRICS_SCHEMA,
            policy: p.name().into(),
            seeds: costs.len(),
            mean_sum_cost: mean(costs),
            std_sum_cost: std_dev(costs),
            ddql_reduction: ddql.map(|d| reduction(mean(costs), d)),
        })
        .collect()
}

/// Evaluate every policy over the configured seeds and write `compare.csv`.
pub fn compare(cfg: &ExperimentConfig, policies: &[PolicyKind], out: &Path) -> Result<Vec<CompareRow>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let rows = compare_rows(&evaluate_policies(cfg, policies)?);
    write_csv(&out.join("compare.csv"), &rows)?;
    Ok(rows)
}

/// Long-form row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub schema: u32,
    pub policy: String,
    pub x: f64,
    pub seeds: usize,
    pub mean_sum_cost: f64,
    pub std_sum_cost: f64,
    /// Data sweep: the policy's costs never drop along the grid.
    /// MEC sweep: FOC costs more than FLC at this count.
    pub flag: bool,
}

/// True when every step of `ys` rises or falls by at most `tol_frac` of
/// the range of `ys`.
pub fn non_decreasing_within(ys: &[f64], tol_frac: f64) -> bool {
    let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = tol_frac * (hi - lo);
    ys.windows(2).all(|w| w[1] >= w[0] - tol)
}

/// Config with every task of size `mbits`.
pub fn with_fixed_data(cfg: &ExperimentConfig, mbits: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.tasks.fixed_data_mbits = Some(mbits);
    c
}

/// Learners train once per seed on the configured task distribution and
/// are evaluated at each fixed task size.
pub fn sweep_data_size(cfg: &ExperimentConfig, policies: &[PolicyKind], grid: &[f64]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut costs = vec![vec![Vec::new(); grid.len()]; policies.len()];
    for k in 0..cfg.run.seeds {
        let seed = cfg.run.seed + k as u64;
        for (pi, &p) in policies.iter().enumerate() {
            let t = obtain_policy(cfg, p, seed)?;
            for (gi, &d) in grid.iter().enumerate() {
                let c = with_fixed_data(cfg, d);
                c.validate()?;
                costs[pi][gi].push(evaluate(&c, &t.policy)?.mean_sum_cost);
            }
        }
    }
    let mut rows = Vec::new();
    for (pi, &p) in policies.iter().enumerate() {
        let means: Vec<f64> = costs[pi].iter().map(|c| mean(c)).collect();
        let mono = non_decreasing_within(&means, 0.02);
        for (gi, &d) in grid.iter().enumerate() {
            rows.push(SweepRow {
                schema: METRICS_SCHEMA,
                policy: p.name().into(),
                x: d,
                seeds: costs[pi][gi].len(),
                mean_sum_cost: means[gi],
                std_sum_cost: std_dev(&costs[pi][gi]),
                flag: mono,
            });
        }
    }
    Ok(rows)
}

/// Policies are trained and evaluated separately at each MEC count.
pub fn sweep_mec_count(cfg: &ExperimentConfig, policies: &[PolicyKind], counts: &[usize]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &m in counts {
        let mut c = cfg.clone();
        c.topology.num_mecs = m;
        c.validate()?;
        let per = evaluate_policies(&c, policies)?;
        let cost_of = |k: PolicyKind| per.iter().find(|(p, _)| *p == k).map(|(_, v)| mean(v));
        let crossover = matches!((cost_of(PolicyKind::Foc), cost_of(PolicyKind::Flc)), (Some(f), Some(l)) if f > l);
        for (p, v) in &per {
            rows.push(SweepRow {
                schema: METRICS_SCHEMA,
                policy: p.name().into(),
                x: m as f64,
                seeds: v.len(),
                mean_sum_cost: mean(v),
                std_sum_cost: std_dev(v),
                flag: crossover,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 100.0), 5.0);
        assert!((percentile(&v, 95.0) - 4.8).abs() < 1e-12);
        assert!(percentile(&[], 50.0).is_nan());
    }

    #[test]
    fn monotone_tolerance() {
        assert!(non_decreasing_within(&[1.0, 2.0, 3.0], 0.02));
        assert!(non_decreasing_within(&[1.0, 0.99, 2.0], 0.02));
        assert!(!non_decreasing_within(&[1.0, 0.9, 2.0], 0.02));
    }

    #[test]
    fn reduction_matches_definition() {
        assert!((reduction(100.0, 63.0) - 0.37).abs() < 1e-12);
    }
}
