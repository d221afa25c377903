//! Exhaustive one-step verifier for small instances: enumerates every
//! joint action, finds the true minimum of the summed cost, and reports
//! each policy's gap to it.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{flc_policy, foc_policy, rodrs_policy, rosrs_policy, PolicyKind};
use crate::config::ExperimentConfig;
use crate::env::{ActionCatalogue, ActionVector, MecEnv, RewardParams};
use crate::error::{Error, Result};
use crate::harness::{Controller, TrainedPolicy};
use crate::rng::{derive_seed, substream_indexed, Stream};

pub const MAX_AGENTS: usize = 3;
pub const MAX_MECS: usize = 2;
pub const MAX_JOINT_POINTS: usize = 200;

const VERIFY_SEED_BASE: u64 = 1 << 42;

/// Per-policy outcome on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGap {
    pub policy: String,
    pub cost: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub instance_seed: u64,
    pub agents: usize,
    pub mecs: usize,
    pub actions_per_agent: usize,
    pub joint_points: usize,
    /// Minimum summed cost over all joint actions.
    pub optimum: f64,
    pub optimum_actions: Vec<usize>,
    /// Minimum over joint actions meeting every constraint, if any does.
    pub feasible_optimum: Option<f64>,
    /// Joint cost when each agent picks its own best action with the
    /// others computing locally.
    pub greedy_per_task: f64,
    /// Expected gap of an agent-wise uniform random choice.
    pub random_gap: f64,
    pub policies: Vec<PolicyGap>,
}

/// Long-form CSV row of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub instance: usize,
    pub seed: u64,
    pub policy: String,
    pub cost: f64,
    pub gap: f64,
    pub optimum: f64,
    pub feasible_optimum: Option<f64>,
    pub random_gap: f64,
}

impl VerifyReport {
    pub fn rows(&self, instance: usize) -> Vec<VerifyRow> {
        self.policies
            .iter()
            .map(|p| VerifyRow {
                instance,
                seed: self.instance_seed,
                policy: p.policy.clone(),
                cost: p.cost,
                gap: p.gap,
                optimum: self.optimum,
                feasible_optimum: self.feasible_optimum,
                random_gap: self.random_gap,
            })
            .collect()
    }

    pub fn gap_of(&self, policy: &str) -> Option<f64> {
        self.policies.iter().find(|p| p.policy == policy).map(|p| p.gap)
    }
}

/// Refuse instances beyond the verifier's bounds.
pub fn check_size(cfg: &ExperimentConfig) -> Result<usize> {
    let agents = cfg.topology.num_nodes;
    let mecs = cfg.topology.num_mecs;
    let per = ActionCatalogue::new(&cfg.grid).len();
    let joint = per.checked_pow(agents as u32).unwrap_or(usize::MAX);
    if agents > MAX_AGENTS || mecs > MAX_MECS || joint > MAX_JOINT_POINTS {
        return Err(Error::InstanceTooLarge(format!(
            "{agents} agents (max {MAX_AGENTS}), {mecs} MECs (max {MAX_MECS}), \
             {per}^{agents} = {joint} joint actions (max {MAX_JOINT_POINTS})"
        )));
    }
    Ok(joint)
}

/// Decode joint index `j` into per-agent catalogue indices.
fn decode(mut j: usize, per: usize, agents: usize) -> Vec<usize> {
    let mut out = vec![0; agents];
    for slot in out.iter_mut() {
        *slot = j % per;
        j /= per;
    }
    out
}

pub fn instance_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, VERIFY_SEED_BASE + k as u64)
}

/// Verify instance `k` of `cfg` against the static baselines and any
/// trained `learners`.
pub fn verify_small_instance(cfg: &ExperimentConfig, k: usize, learners: &[&TrainedPolicy]) -> Result<VerifyReport> {
    cfg.validate()?;
    let joint = check_size(cfg)?;
    let c_const = learners.first().map_or(1.0, |p| p.c_const);
    let mut env = MecEnv::new(cfg.env_config(), RewardParams::new(c_const, cfg.reward.penalty, cfg.ddql.zeta)?)?;
    env.set_progress(1.0, cfg.exploration.end);
    let seed = instance_seed(cfg.run.seed, k);
    let states = env.reset(seed)?;
    let cat = ActionCatalogue::new(&cfg.grid);
    let (per, n) = (cat.len(), env.num_agents());

    let joint_cost = |acts: &[ActionVector]| -> Result<(f64, bool)> {
        let ev = env.evaluate_joint(acts)?;
        let feasible = ev.outcomes.iter().flatten().all(|o| o.report.satisfied());
        Ok((ev.stats.sum_cost, feasible))
    };

    let mut optimum = f64::INFINITY;
    let mut optimum_actions = Vec::new();
    let mut feasible_optimum: Option<f64> = None;
    let mut total = 0.0;
    for j in 0..joint {
        let idx = decode(j, per, n);
        let acts: Vec<ActionVector> = idx.iter().map(|&i| cat.action(i)).collect::<Result<_>>()?;
        let (c, feasible) = joint_cost(&acts)?;
        total += c;
        if c < optimum {
            optimum = c;
            optimum_actions = idx;
        }
        if feasible && feasible_optimum.is_none_or(|f| c < f) {
            feasible_optimum = Some(c);
        }
    }
    let random_gap = total / joint as f64 - optimum;

    let mut greedy = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = (f64::INFINITY, ActionVector::local(0));
        for a in cat.iter() {
            let mut acts = vec![ActionVector::local(0); n];
            acts[i] = *a;
            let ev = env.evaluate_joint(&acts)?;
            let v = ev.outcomes[i].as_ref().map_or(f64::INFINITY, |o| o.costs.v);
            if v < best.0 {
                best = (v, *a);
            }
        }
        greedy.push(best.1);
    }
    let greedy_per_task = joint_cost(&greedy)?.0;

    let mut policies = Vec::new();
    let mut rng: ChaCha8Rng = substream_indexed(seed, Stream::Eval, 0);
    for kind in PolicyKind::STATIC {
        let acts: Vec<ActionVector> = (0..n)
            .map(|i| {
                let v = env.view(i);
                match kind {
                    PolicyKind::Flc => flc_policy(&v),
                    PolicyKind::Foc => foc_policy(&v, &cfg.grid),
                    PolicyKind::Rodrs => rodrs_policy(&v, &cfg.grid, &cfg.baselines, &mut rng),
                    _ => rosrs_policy(&v, &cfg.grid, &cfg.baselines, &mut rng),
                }
            })
            .collect();
        let cost = joint_cost(&acts)?.0;
        policies.push(PolicyGap {
            policy: kind.name().into(),
            cost,
            gap: cost - optimum,
        });
    }
    for p in learners {
        let acts: Vec<ActionVector> = (0..n)
            .map(|i| {
                let s = states[i].as_slice();
                let a = match &p.controller {
                    Controller::Ddql(ag) => ag[i].greedy(s)?,
                    Controller::Dql(ag) => ag[i].greedy(s)?,
                    Controller::Ql(ag) => crate::agents::argmax(&ag[i].table.row(ag[i].bucket(&states[i]))),
                    Controller::Static(_) => return Err(Error::Action("static policies are verified directly".into())),
                };
                cat.action(a)
            })
            .collect::<Result<_>>()?;
        let cost = joint_cost(&acts)?.0;
        policies.push(PolicyGap {
            policy: p.kind.name().into(),
            cost,
            gap: cost - optimum,
        });
    }
    Ok(VerifyReport {
        instance_seed: seed,
        agents: n,
        mecs: env.num_mecs(),
        actions_per_agent: per,
        joint_points: joint,
        optimum,
        optimum_actions,
        feasible_optimum,
        greedy_per_task,
        random_gap,
        policies,
    })
}

/// A configuration inside the verifier's bounds: 3 agents, 2 MECs, and a
/// 5-action grid (one local level, two sub-bands times two grants).
pub fn small_instance_config(base: &ExperimentConfig) -> ExperimentConfig {
    let mut c = base.clone();
    c.topology.num_nodes = 3;
    c.topology.num_mecs = 2;
    c.grid.subbands = 2;
    c.grid.tr = vec![0.3];
    c.grid.rho = vec![0.5, 1.0];
    c.grid.p_tx = vec![1.0];
    c.grid.ue_tr = vec![1.0];
    c.baselines.dedicated_rho = 0.5;
    c
}
