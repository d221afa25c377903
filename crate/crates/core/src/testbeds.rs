//! Small single-agent problems with known solutions, used to check the
//! learners against exact oracles.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::agents::{argmax, q_update_tabular, DdqlAgent, DqlAgent, NetConfig, QTable, TabularTransition};
use crate::error::{Error, Result};
use crate::nn::{finite_diff_check, td_loss_mean, td_loss_uncertainty, FdReport, Mlp, MlpSpec, TdBatch};
use crate::rng::{substream, Stream};

/// Finite MDP with deterministic transitions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub next: Vec<Vec<usize>>,
    pub reward: Vec<Vec<f64>>,
}

impl TabularMdp {
    /// Three states, two actions: action 0 cycles forward, action 1 returns
    /// to state 0. The best reward sits behind a zero-reward state.
    pub fn three_state() -> Self {
        Self {
            next: vec![vec![1, 0], vec![2, 0], vec![0, 2]],
            reward: vec![vec![0.0, 0.5], vec![0.0, -1.0], vec![2.0, 1.0]],
        }
    }

    /// Two-state chain: action 1 moves to the other state, action 0 stays.
    /// Staying in state 1 pays 1, everything else pays 0.
    pub fn chain() -> Self {
        Self {
            next: vec![vec![0, 1], vec![1, 0]],
            reward: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        }
    }

    pub fn num_states(&self) -> usize {
        self.next.len()
    }

    pub fn num_actions(&self) -> usize {
        self.next[0].len()
    }

    pub fn step(&self, s: usize, a: usize) -> (f64, usize) {
        (self.reward[s][a], self.next[s][a])
    }

    /// Optimal action values by value iteration, iterated until the
    /// max-norm change drops below `tol`.
    pub fn value_iteration(&self, zeta: f64, tol: f64) -> Result<Vec<Vec<f64>>> {
        if !(0.0..1.0).contains(&zeta) {
            return Err(Error::config("zeta", "must lie in [0, 1)"));
        }
        let (ns, na) = (self.num_states(), self.num_actions());
        let mut q = vec![vec![0.0; na]; ns];
        for _ in 0..1_000_000 {
            let v: Vec<f64> = q.iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
            let mut delta: f64 = 0.0;
            for s in 0..ns {
                for a in 0..na {
                    let new = self.reward[s][a] + zeta * v[self.next[s][a]];
                    delta = delta.max((new - q[s][a]).abs());
                    q[s][a] = new;
                }
            }
            if delta < tol {
                return Ok(q);
            }
        }
        Err(Error::Numeric("value iteration did not converge".into()))
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_states()];
        v[s] = 1.0;
        v
    }
}

/// Largest absolute difference between a table and exact values.
pub fn max_norm_error(qt: &QTable, exact: &[Vec<f64>]) -> f64 {
    let mut err: f64 = 0.0;
    for (s, row) in exact.iter().enumerate() {
        for (a, &q) in row.iter().enumerate() {
            err = err.max((qt.get(s as u64, a) - q).abs());
        }
    }
    err
}

/// Q-learning under a uniform random behaviour policy.
pub fn run_tabular_q(mdp: &TabularMdp, psi: f64, zeta: f64, steps: usize, seed: u64) -> QTable {
    let mut rng = substream(seed, Stream::Policy);
    let mut qt = QTable::new(mdp.num_actions());
    let mut s = 0;
    for _ in 0..steps {
        let a = rng.random_range(0..mdp.num_actions());
        let (r, s_next) = mdp.step(s, a);
        let tr = TabularTransition {
            s: s as u64,
            a,
            r,
            s_next: s_next as u64,
            terminal: false,
        };
        q_update_tabular(&mut qt, &tr, psi, zeta);
        s = s_next;
    }
    qt
}

/// DQL on a tabular MDP with one-hot states, epsilon-greedy with a linear
/// decay to 0.1 over the run, one train step per environment step.
pub fn train_dql_on_mdp(mdp: &TabularMdp, cfg: NetConfig, steps: usize, seed: u64) -> Result<DqlAgent> {
    let mut init = substream(seed, Stream::Init);
    let mut act_rng = substream(seed, Stream::Policy);
    let mut replay = substream(seed, Stream::Replay);
    let mut agent = DqlAgent::new(0, cfg, mdp.num_states(), mdp.num_actions(), &mut init)?;
    let mut s = 0;
    for t in 0..steps {
        let eps = (1.0 - t as f64 / steps as f64).max(0.1);
        let x = mdp.one_hot(s);
        let a = agent.act(&x, eps, &mut act_rng)?;
        let (r, s_next) = mdp.step(s, a);
        agent.memory.push(&x, a, r, &mdp.one_hot(s_next), false);
        agent.train_step(&mut replay)?;
        s = s_next;
    }
    Ok(agent)
}

pub fn greedy_policy(q: &[Vec<f64>]) -> Vec<usize> {
    q.iter().map(|r| argmax(r)).collect()
}

/// Single-state continuing bandit; every arm pays `N(0, sigma^2)`, so every
/// true action value is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyBandit {
    pub arms: usize,
    pub sigma: f64,
}

impl NoisyBandit {
    pub const STATE: [f64; 1] = [1.0];

    pub fn reward<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.sigma * z
    }
}

/// Max-Q estimates `(dql, ddql)` after training both learners on the same
/// reward sequence under uniform random behaviour. The DDQL estimate is
/// the value its loss is fitted to: the mean network, summed with the
/// previous-step network when that option is on.
pub fn bandit_max_q(bandit: NoisyBandit, cfg: &NetConfig, steps: usize, seed: u64) -> Result<(f64, f64)> {
    let mut init = substream(seed, Stream::Init);
    let mut dql = DqlAgent::new(0, cfg.clone(), 1, bandit.arms, &mut init)?;
    let mut ddql = DdqlAgent::new(0, cfg.clone(), 1, bandit.arms, &mut init)?;
    let mut env_rng = substream(seed, Stream::Tasks);
    let mut act_rng = substream(seed, Stream::Policy);
    let s = NoisyBandit::STATE;
    for _ in 0..steps {
        let a = act_rng.random_range(0..bandit.arms);
        let r = bandit.reward(&mut env_rng);
        dql.memory.push(&s, a, r, &s, false);
        ddql.memory.push(&s, a, r, &s, false);
    }
    let mut replay_a = substream(seed, Stream::Replay);
    let mut replay_b = substream(seed, Stream::Replay);
    for _ in 0..steps {
        dql.train_step(&mut replay_a)?;
        ddql.train_step(&mut replay_b)?;
    }
    let max = |q: Vec<f64>| q.into_iter().fold(f64::NEG_INFINITY, f64::max);
    let q_dql = max(dql.q_values(&s)?);
    let mut v = ddql.mean_values(&s)?;
    if cfg.use_prev_net_sum {
        let p = ddql.theta_prev.forward(&s)?;
        v.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    Ok((q_dql, max(v)))
}

/// Worst finite-difference agreement of the mean-network and
/// uncertainty-network losses over `draws` random networks, previous-step
/// networks, batches and targets.
pub fn gradient_draws(draws: usize, seed: u64) -> Result<(FdReport, FdReport)> {
    let mut rng = substream(seed, Stream::Init);
    let merge = |acc: &mut FdReport, r: FdReport| {
        acc.max_rel_error = acc.max_rel_error.max(r.max_rel_error);
        acc.checked += r.checked;
        acc.skipped += r.skipped;
    };
    let empty = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let (mut mean, mut unc) = (empty, empty);
    for _ in 0..draws {
        let input = rng.random_range(2..20);
        let hidden = [rng.random_range(2..16), rng.random_range(2..12)];
        let actions = rng.random_range(2..20);
        let spec = MlpSpec::q_network(input, &hidden, actions);
        let batch = rng.random_range(1..6);
        let mut nets = Vec::with_capacity(4);
        for _ in 0..4 {
            nets.push(Mlp::init(spec.clone(), 1.0, &mut rng)?);
        }
        let td = TdBatch {
            states: (0..batch * input).map(|_| rng.random_range(-1.0..1.0)).collect(),
            actions: (0..batch).map(|_| rng.random_range(0..actions)).collect(),
            targets: (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let coords: Vec<usize> = (0..24).map(|_| rng.random_range(0..spec.num_params())).collect();
        let (theta, theta_prev, phi, phi_prev) = (&nets[0], &nets[1], &nets[2], &nets[3]);
        merge(
            &mut mean,
            finite_diff_check(theta, &td.states, batch, &coords, 1e-5, |n| {
                td_loss_mean(n, Some(theta_prev), &td)
            })?,
        );
        merge(
            &mut unc,
            finite_diff_check(phi, &td.states, batch, &coords, 1e-5, |n| {
                td_loss_uncertainty(n, Some(phi_prev), &td)
            })?,
        );
    }
    Ok((mean, unc))
}
