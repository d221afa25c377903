//! Decentralized multi-agent offloading environment: configuration, state
//! construction, the discretized action catalogue, rewards and per-step
//! dynamics.
//!
//! Every user node is an agent holding one indivisible task per step. The
//! environment is a serial state machine; `step` evaluates the joint action,
//! then advances mobility, fading and the task stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    self, Arena, ChannelParams, ChannelState, FadingState, Mover, ObstructionModel, Position3D,
};
use crate::cost::{
    self, Category, ConstraintInput, ConstraintReport, ConstraintSet, CostBreakdown, CostParams,
    HandoverContext, LinkParams, MecKind, MecNode, Task, UserNode,
};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Number of entries in a [`StateVector`].
pub const STATE_DIM: usize = 17;

/// Feature names in state order.
pub const STATE_FEATURES: [&str; STATE_DIM] = [
    "gain", "data", "fading", "mec_x", "mec_y", "mec_z", "node_x", "node_y", "node_z", "energy",
    "running_cost", "rate", "category", "th_max", "ck", "psi", "epsilon",
];

fn check(ok: bool, path: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(path, msg))
    }
}

fn check_range(r: [f64; 2], path: &str, positive: bool) -> Result<()> {
    check(r[0].is_finite() && r[1].is_finite(), path, "range bounds must be finite")?;
    check(r[0] <= r[1], path, "range must satisfy lo <= hi")?;
    if positive {
        check(r[0] > 0.0, path, "range must be positive")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub num_mecs: usize,
    pub num_nodes: usize,
    /// Fraction of MECs carried by UAVs; the rest are fixed base stations.
    pub aerial_fraction: f64,
    pub arena_width: f64,
    pub arena_depth: f64,
    pub uav_altitude: [f64; 2],
    pub bs_height: f64,
    pub node_height: f64,
    /// Maximum UAV speed, meters per step.
    pub uav_speed: f64,
    /// Maximum node speed, meters per step.
    pub node_speed: f64,
    /// UAV compute frequency range (GHz).
    pub aerial_cpu: [f64; 2],
    /// Base-station compute frequency (GHz).
    pub ground_cpu: f64,
    /// Multiplier on every MEC's compute capacity.
    pub compute_scale: f64,
    pub node_cpu: [f64; 2],
    /// Nominal node power range in dBm.
    pub node_power_dbm: [f64; 2],
    /// Nominal per-transmission energy coefficient range.
    pub node_ue_tr: [f64; 2],
    /// MEC operating power (W).
    pub mec_power: f64,
    pub mec_ue: f64,
    pub mec_ue_tr: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            num_mecs: 4,
            num_nodes: 10,
            aerial_fraction: 0.5,
            arena_width: 1000.0,
            arena_depth: 1000.0,
            uav_altitude: [100.0, 150.0],
            bs_height: 25.0,
            node_height: 1.5,
            uav_speed: 10.0,
            node_speed: 1.5,
            aerial_cpu: [0.5, 1.5],
            ground_cpu: 6.0,
            compute_scale: 1.0,
            node_cpu: [0.5, 1.5],
            node_power_dbm: [20.0, 30.0],
            node_ue_tr: [0.5, 1.0],
            mec_power: 1.0,
            mec_ue: 0.5,
            mec_ue_tr: 1.0,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.num_mecs >= 1, "topology.num_mecs", "must be >= 1")?;
        check(self.num_nodes >= 1, "topology.num_nodes", "must be >= 1")?;
        check(
            (0.0..=1.0).contains(&self.aerial_fraction),
            "topology.aerial_fraction",
            "must lie in [0, 1]",
        )?;
        check(self.arena_width > 0.0, "topology.arena_width", "must be > 0")?;
        check(self.arena_depth > 0.0, "topology.arena_depth", "must be > 0")?;
        check_range(self.uav_altitude, "topology.uav_altitude", true)?;
        check(self.bs_height >= 0.0, "topology.bs_height", "must be >= 0")?;
        check(self.node_height >= 0.0, "topology.node_height", "must be >= 0")?;
        check(self.uav_speed >= 0.0, "topology.uav_speed", "must be >= 0")?;
        check(self.node_speed >= 0.0, "topology.node_speed", "must be >= 0")?;
        check_range(self.aerial_cpu, "topology.aerial_cpu", true)?;
        check(self.ground_cpu > 0.0, "topology.ground_cpu", "must be > 0")?;
        check(self.compute_scale > 0.0, "topology.compute_scale", "must be > 0")?;
        check_range(self.node_cpu, "topology.node_cpu", true)?;
        check_range(self.node_power_dbm, "topology.node_power_dbm", false)?;
        check_range(self.node_ue_tr, "topology.node_ue_tr", false)?;
        check(self.node_ue_tr[0] >= 0.0, "topology.node_ue_tr", "must be >= 0")?;
        check(self.mec_power >= 0.0, "topology.mec_power", "must be >= 0")?;
        check(self.mec_ue >= 0.0, "topology.mec_ue", "must be >= 0")?;
        check(self.mec_ue_tr >= 0.0, "topology.mec_ue_tr", "must be >= 0")?;
        Ok(())
    }

    pub fn num_aerial(&self) -> usize {
        (self.aerial_fraction * self.num_mecs as f64).round() as usize
    }

    fn max_altitude(&self) -> f64 {
        self.uav_altitude[1].max(self.bs_height).max(self.node_height)
    }
}

/// Maps a latency threshold to an urgency class. Thresholds at or below
/// `edges[0]` are high priority, at or below `edges[1]` medium, else low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UrgencyMatrix {
    pub edges: [f64; 2],
}

impl UrgencyMatrix {
    pub fn classify(&self, th_max: f64) -> Category {
        if th_max <= self.edges[0] {
            Category::High
        } else if th_max <= self.edges[1] {
            Category::Medium
        } else {
            Category::Low
        }
    }
}

/// Category of a task from its latency threshold.
pub fn classify_task(task: &Task, urg: &UrgencyMatrix) -> Category {
    urg.classify(task.th_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub data_mbits: [f64; 2],
    pub ck_mcycles: [f64; 2],
    /// Mbits per normalized data unit.
    pub data_unit_mbits: f64,
    /// Mcycles per normalized complexity unit.
    pub ck_unit_mcycles: f64,
    /// Result size as a fraction of the input size.
    pub cdata_ratio: f64,
    /// Pins every task to this input size (used by data-size sweeps).
    pub fixed_data_mbits: Option<f64>,
    /// Probabilities of high, medium and low urgency.
    pub category_priors: [f64; 3],
    /// Overall latency-threshold range.
    pub th_max: [f64; 2],
    /// Urgency band edges inside `th_max`.
    pub band_edges: [f64; 2],
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            data_mbits: [10.0, 80.0],
            ck_mcycles: [1000.0, 5000.0],
            data_unit_mbits: 10.0,
            ck_unit_mcycles: 1000.0,
            cdata_ratio: 0.1,
            fixed_data_mbits: None,
            category_priors: [0.3, 0.4, 0.3],
            th_max: [6.0, 40.0],
            band_edges: [12.0, 24.0],
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        check_range(self.data_mbits, "tasks.data_mbits", true)?;
        check_range(self.ck_mcycles, "tasks.ck_mcycles", true)?;
        check(self.data_unit_mbits > 0.0, "tasks.data_unit_mbits", "must be > 0")?;
        check(self.ck_unit_mcycles > 0.0, "tasks.ck_unit_mcycles", "must be > 0")?;
        check(
            (0.0..=1.0).contains(&self.cdata_ratio),
            "tasks.cdata_ratio",
            "must lie in [0, 1]",
        )?;
        if let Some(d) = self.fixed_data_mbits {
            check(d > 0.0, "tasks.fixed_data_mbits", "must be > 0")?;
        }
        check(
            self.category_priors.iter().all(|p| *p >= 0.0)
                && (self.category_priors.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "tasks.category_priors",
            "must be non-negative and sum to 1",
        )?;
        check_range(self.th_max, "tasks.th_max", true)?;
        let [lo, hi] = self.th_max;
        let [e0, e1] = self.band_edges;
        check(
            lo <= e0 && e0 <= e1 && e1 <= hi,
            "tasks.band_edges",
            "edges must be ordered inside th_max",
        )?;
        Ok(())
    }

    pub fn urgency(&self) -> UrgencyMatrix {
        UrgencyMatrix {
            edges: self.band_edges,
        }
    }

    pub fn data_range_units(&self) -> [f64; 2] {
        match self.fixed_data_mbits {
            Some(d) => [d / self.data_unit_mbits; 2],
            None => [
                self.data_mbits[0] / self.data_unit_mbits,
                self.data_mbits[1] / self.data_unit_mbits,
            ],
        }
    }

    pub fn ck_range_units(&self) -> [f64; 2] {
        [
            self.ck_mcycles[0] / self.ck_unit_mcycles,
            self.ck_mcycles[1] / self.ck_unit_mcycles,
        ]
    }

    /// Draw a task: category from the priors, threshold inside its band,
    /// then size and complexity.
    pub fn sample<R: Rng + ?Sized>(&self, origin: Position3D, rng: &mut R) -> Task {
        let u: f64 = rng.random();
        let cat = if u < self.category_priors[0] {
            Category::High
        } else if u < self.category_priors[0] + self.category_priors[1] {
            Category::Medium
        } else {
            Category::Low
        };
        let (lo, hi) = match cat {
            Category::High => (self.th_max[0], self.band_edges[0]),
            Category::Medium => (self.band_edges[0], self.band_edges[1]),
            Category::Low => (self.band_edges[1], self.th_max[1]),
        };
        let th_max = uniform(rng, lo, hi);
        // keep the threshold strictly inside the open side of its band
        let th_max = match cat {
            Category::High => th_max,
            _ if th_max <= lo => next_up(lo),
            _ => th_max,
        };
        let [dlo, dhi] = self.data_range_units();
        let data = uniform(rng, dlo, dhi);
        let [clo, chi] = self.ck_range_units();
        let ck = uniform(rng, clo, chi);
        let category = self.urgency().classify(th_max);
        Task {
            category,
            data,
            ck,
            th_max,
            origin,
            cdata: self.cdata_ratio * data,
        }
    }
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    /// Total bandwidth per MEC (normalized).
    pub bandwidth: f64,
    /// Receiver noise power (W).
    pub noise: f64,
    pub rician_k: f64,
    /// Floor substituted for vanishing rates.
    pub rate_floor: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            bandwidth: 1.0,
            noise: 1e-15,
            rician_k: 3.0,
            rate_floor: 1e-6,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.bandwidth > 0.0, "radio.bandwidth", "must be > 0")?;
        check(self.noise > 0.0, "radio.noise", "must be > 0")?;
        check(self.rician_k >= 0.0, "radio.rician_k", "must be >= 0")?;
        check(self.rate_floor > 0.0, "radio.rate_floor", "must be > 0")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub delay_tr: f64,
    pub delay_process: f64,
    pub uplink_scale: f64,
    pub downlink_scale: f64,
    pub lambda_o_floor: f64,
    pub ho_energy_uses_power: bool,
    /// Meters per normalized length unit in the cost model.
    pub distance_unit: f64,
    /// Task-release rate at which `delay_tr` applies unchanged (Hz).
    pub tr_ref: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            delay_tr: 0.1,
            delay_process: 0.5,
            uplink_scale: 1.0,
            downlink_scale: 1.0,
            lambda_o_floor: 1.0,
            ho_energy_uses_power: false,
            distance_unit: 100.0,
            tr_ref: 0.2,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.delay_tr >= 0.0, "link.delay_tr", "must be >= 0")?;
        check(self.delay_process >= 0.0, "link.delay_process", "must be >= 0")?;
        check(self.uplink_scale >= 0.0, "link.uplink_scale", "must be >= 0")?;
        check(self.downlink_scale >= 0.0, "link.downlink_scale", "must be >= 0")?;
        check(self.lambda_o_floor > 0.0, "link.lambda_o_floor", "must be > 0")?;
        check(self.distance_unit > 0.0, "link.distance_unit", "must be > 0")?;
        check(self.tr_ref > 0.0, "link.tr_ref", "must be > 0")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub ue_threshold: f64,
    pub p_max_m: f64,
    pub p_max_n: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            ue_threshold: 10.0,
            p_max_m: 5.0,
            p_max_n: 1.0,
        }
    }
}

impl ConstraintConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.ue_threshold > 0.0, "constraints.ue_threshold", "must be > 0")?;
        check(self.p_max_m > 0.0, "constraints.p_max_m", "must be > 0")?;
        check(self.p_max_n > 0.0, "constraints.p_max_n", "must be > 0")?;
        Ok(())
    }

    pub fn for_task(&self, task: &Task) -> ConstraintSet {
        ConstraintSet {
            ue_threshold: self.ue_threshold,
            t_max_task: task.th_max,
            p_max_m: self.p_max_m,
            p_max_n: self.p_max_n,
        }
    }
}

/// Value grids of the six action features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSpec {
    pub subbands: usize,
    /// Task-release rates (Hz).
    pub tr: Vec<f64>,
    pub rho: Vec<f64>,
    /// Transmit powers (W).
    pub p_tx: Vec<f64>,
    pub ue_tr: Vec<f64>,
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        Self {
            subbands: 2,
            tr: vec![0.1, 0.2, 0.3],
            rho: vec![0.25, 0.5, 0.75, 1.0],
            p_tx: vec![0.01, 0.1, 1.0],
            ue_tr: vec![0.5, 1.0],
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    !v.is_empty() && v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

impl DiscretizationSpec {
    pub fn validate(&self, p_max_n: f64) -> Result<()> {
        check(self.subbands >= 1, "grid.subbands", "must be >= 1")?;
        for (name, g) in [("tr", &self.tr), ("rho", &self.rho), ("p_tx", &self.p_tx), ("ue_tr", &self.ue_tr)] {
            check(
                strictly_increasing(g),
                &format!("grid.{name}"),
                "grid must be non-empty and strictly increasing",
            )?;
        }
        check(self.tr[0] > 0.0, "grid.tr", "rates must be > 0")?;
        check(
            self.rho[0] > 0.0 && *self.rho.last().unwrap() <= 1.0,
            "grid.rho",
            "levels must lie in (0, 1]",
        )?;
        check(
            self.p_tx[0] >= 0.0 && *self.p_tx.last().unwrap() <= p_max_n,
            "grid.p_tx",
            "levels must lie in [0, constraints.p_max_n]",
        )?;
        check(self.ue_tr[0] >= 0.0, "grid.ue_tr", "levels must be >= 0")?;
        Ok(())
    }

    /// Index of the grid point nearest to `x`; ties go to the lower index.
    pub fn nearest(grid: &[f64], x: f64) -> usize {
        let mut best = 0;
        for (i, g) in grid.iter().enumerate() {
            if (g - x).abs() < (grid[best] - x).abs() {
                best = i;
            }
        }
        best
    }

    pub fn mid_tr(&self) -> usize {
        (self.tr.len() - 1) / 2
    }
}

/// Requested share of a MEC's compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RhoChoice {
    /// A level of the rho grid.
    Level(usize),
    /// `1/k` for `k` concurrent offloaders on the same MEC.
    FairShare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionVector {
    pub subband: usize,
    pub tr: usize,
    pub gamma: u8,
    pub rho: RhoChoice,
    pub p_tx: usize,
    pub ue_tr: usize,
    /// Target MEC; `None` offloads to the associated (max-gain) MEC.
    pub mec: Option<usize>,
}

impl ActionVector {
    pub fn local(p_tx: usize) -> Self {
        Self {
            subband: 0,
            tr: 0,
            gamma: 0,
            rho: RhoChoice::Level(0),
            p_tx,
            ue_tr: 0,
            mec: None,
        }
    }

    pub fn is_offload(&self) -> bool {
        self.gamma == 1
    }
}

/// Flat enumeration of the actions a learner can pick: one local action per
/// power level, then every combination of the offload features.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCatalogue {
    actions: Vec<ActionVector>,
}

impl ActionCatalogue {
    pub fn new(spec: &DiscretizationSpec) -> Self {
        let mut actions: Vec<ActionVector> = (0..spec.p_tx.len()).map(ActionVector::local).collect();
        for subband in 0..spec.subbands {
            for tr in 0..spec.tr.len() {
                for rho in 0..spec.rho.len() {
                    for p_tx in 0..spec.p_tx.len() {
                        for ue_tr in 0..spec.ue_tr.len() {
                            actions.push(ActionVector {
                                subband,
                                tr,
                                gamma: 1,
                                rho: RhoChoice::Level(rho),
                                p_tx,
                                ue_tr,
                                mec: None,
                            });
                        }
                    }
                }
            }
        }
        Self { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ActionVector> {
        self.actions.get(index)
    }

    pub fn action(&self, index: usize) -> Result<ActionVector> {
        self.actions
            .get(index)
            .copied()
            .ok_or_else(|| Error::Action(format!("action index {index} outside catalogue of {}", self.len())))
    }

    pub fn index_of(&self, a: &ActionVector) -> Option<usize> {
        self.actions.iter().position(|x| x == a)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActionVector> {
        self.actions.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Reward offset; calibrated from a full-local run when absent.
    pub c_const: Option<f64>,
    /// Reward for a constraint-violating step; `-c_const` when absent.
    pub penalty: Option<f64>,
    /// Percentile of per-agent step cost used by the calibration.
    pub calibration_percentile: f64,
    pub calibration_episodes: usize,
    /// Expose the global running cost in the state instead of the agent's own.
    pub global_cost_in_state: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            c_const: None,
            penalty: None,
            calibration_percentile: 95.0,
            calibration_episodes: 2,
            global_cost_in_state: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.c_const {
            check(c > 0.0 && c.is_finite(), "reward.c_const", "must be > 0")?;
        }
        if let Some(p) = self.penalty {
            check(p < 0.0 && p.is_finite(), "reward.penalty", "must be < 0")?;
        }
        check(
            self.calibration_percentile > 0.0 && self.calibration_percentile <= 100.0,
            "reward.calibration_percentile",
            "must lie in (0, 100]",
        )?;
        check(self.calibration_episodes >= 1, "reward.calibration_episodes", "must be >= 1")?;
        Ok(())
    }
}

/// Resolved reward constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub c_const: f64,
    pub penalty: f64,
    pub zeta: f64,
}

impl RewardParams {
    pub fn new(c_const: f64, penalty: Option<f64>, zeta: f64) -> Result<Self> {
        check(c_const > 0.0 && c_const.is_finite(), "reward.c_const", "must be > 0")?;
        let penalty = penalty.unwrap_or(-c_const);
        check(penalty < 0.0, "reward.penalty", "must be < 0")?;
        check(zeta > 0.0 && zeta < 1.0, "zeta", "must lie in (0, 1)")?;
        Ok(Self { c_const, penalty, zeta })
    }

    /// `c_const - v` when every constraint holds, the penalty otherwise.
    pub fn reward(&self, v: f64, report: &ConstraintReport) -> f64 {
        if report.satisfied() {
            self.c_const - v
        } else {
            self.penalty
        }
    }
}

/// `sum_t zeta^t r_t`.
pub fn cumulative_reward(rewards: &[f64], zeta: f64) -> f64 {
    let mut acc = 0.0;
    let mut w = 1.0;
    for r in rewards {
        acc += w * r;
        w *= zeta;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Step budget per episode.
    pub steps: usize,
    /// Fraction of the node budget consumed per unit of node-side energy.
    pub energy_drain: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            energy_drain: 1e-4,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.steps >= 1, "env.steps", "must be >= 1")?;
        check(self.energy_drain >= 0.0, "env.energy_drain", "must be >= 0")?;
        Ok(())
    }
}

/// Everything the environment needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvConfig {
    pub topology: TopologyConfig,
    pub tasks: TaskConfig,
    pub channel: ChannelParams,
    pub obstruction: ObstructionModel,
    pub radio: RadioConfig,
    pub link: LinkConfig,
    pub kappa: f64,
    pub constraints: ConstraintConfig,
    pub grid: DiscretizationSpec,
    pub reward: RewardConfig,
    pub episode: EpisodeConfig,
}

impl EnvConfig {
    pub fn desk() -> Self {
        Self {
            kappa: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.tasks.validate()?;
        self.channel.validate()?;
        self.obstruction.validate()?;
        self.radio.validate()?;
        self.link.validate()?;
        check((0.0..=1.0).contains(&self.kappa), "cost.kappa", "must lie in [0, 1]")?;
        self.constraints.validate()?;
        self.grid.validate(self.constraints.p_max_n)?;
        self.reward.validate()?;
        self.episode.validate()?;
        Ok(())
    }
}

/// Normalized observation of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub [f64; STATE_DIM]);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Affine map of raw features onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNorm {
    pub lo: [f64; STATE_DIM],
    pub hi: [f64; STATE_DIM],
}

impl StateNorm {
    pub fn from_config(cfg: &EnvConfig, c_const: f64) -> Self {
        let t = &cfg.topology;
        let [dlo, dhi] = cfg.tasks.data_range_units();
        let [clo, chi] = cfg.tasks.ck_range_units();
        let zmax = t.max_altitude();
        let run_cost_hi = c_const * cfg.episode.steps as f64 * if cfg.reward.global_cost_in_state {
            t.num_nodes as f64
        } else {
            1.0
        };
        let lo = [
            -9.0, dlo, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, cfg.tasks.th_max[0], clo,
            0.0, 0.0,
        ];
        let hi = [
            -4.0,
            dhi,
            3.0,
            t.arena_width,
            t.arena_depth,
            zmax,
            t.arena_width,
            t.arena_depth,
            zmax,
            1.0,
            run_cost_hi,
            15.0 * cfg.radio.bandwidth,
            2.0,
            cfg.tasks.th_max[1],
            chi,
            1.0,
            1.0,
        ];
        Self { lo, hi }
    }

    pub fn apply(&self, raw: &[f64; STATE_DIM]) -> StateVector {
        let mut out = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            let span = self.hi[i] - self.lo[i];
            out[i] = if span > 0.0 && raw[i].is_finite() {
                (2.0 * (raw[i] - self.lo[i]) / span - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
        StateVector(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Completion {
    Ongoing,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub agent: usize,
    pub s: StateVector,
    pub a: ActionVector,
    pub r: f64,
    pub s_next: StateVector,
    pub comp: Completion,
}

/// Per-agent outcome of a joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    pub costs: CostBreakdown,
    pub report: ConstraintReport,
    pub reward: f64,
    pub serving_mec: Option<usize>,
    pub rho_granted: f64,
}

/// Aggregates of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub sum_cost: f64,
    pub reward: f64,
    pub violations: usize,
    pub handovers: usize,
    pub offloads: usize,
    pub rate_floored: usize,
    pub active: usize,
}

impl EpisodeStats {
    pub fn accumulate(&mut self, o: &EpisodeStats) {
        self.sum_cost += o.sum_cost;
        self.reward += o.reward;
        self.violations += o.violations;
        self.handovers += o.handovers;
        self.offloads += o.offloads;
        self.rate_floored += o.rate_floored;
        self.active += o.active;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEval {
    pub outcomes: Vec<Option<AgentOutcome>>,
    pub stats: EpisodeStats,
    /// Granted rho summed per MEC.
    pub mec_load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct NodeState {
    node: UserNode,
    mover: Mover,
    p_nominal: f64,
    ue_tr_nominal: f64,
    active: bool,
    running_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct MecState {
    mec: MecNode,
    mover: Mover,
}

/// Observable per-agent context, exposed to heuristics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub task: Task,
    pub node: UserNode,
    pub p_nominal: f64,
    pub ue_tr_nominal: f64,
    pub associated: usize,
    pub gains: Vec<f64>,
    pub active: bool,
}

pub struct MecEnv {
    cfg: EnvConfig,
    reward: RewardParams,
    norm: StateNorm,
    arena: Arena,
    nodes: Vec<NodeState>,
    mecs: Vec<MecState>,
    tasks: Vec<Task>,
    fading: Vec<Vec<FadingState>>,
    channels: Vec<Vec<ChannelState>>,
    assoc: Vec<usize>,
    step_index: usize,
    psi: f64,
    epsilon: f64,
    task_rng: ChaCha8Rng,
    fading_rng: ChaCha8Rng,
    mobility_rng: ChaCha8Rng,
}

impl MecEnv {
    pub fn new(cfg: EnvConfig, reward: RewardParams) -> Result<Self> {
        cfg.validate()?;
        let norm = StateNorm::from_config(&cfg, reward.c_const);
        let arena = Arena {
            width: cfg.topology.arena_width,
            depth: cfg.topology.arena_depth,
        };
        Ok(Self {
            cfg,
            reward,
            norm,
            arena,
            nodes: Vec::new(),
            mecs: Vec::new(),
            tasks: Vec::new(),
            fading: Vec::new(),
            channels: Vec::new(),
            assoc: Vec::new(),
            step_index: 0,
            psi: 0.0,
            epsilon: 0.0,
            task_rng: substream(0, Stream::Tasks),
            fading_rng: substream(0, Stream::Fading),
            mobility_rng: substream(0, Stream::Mobility),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn reward_params(&self) -> &RewardParams {
        &self.reward
    }

    pub fn num_agents(&self) -> usize {
        self.cfg.topology.num_nodes
    }

    pub fn num_mecs(&self) -> usize {
        self.cfg.topology.num_mecs
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Training progress features exposed in the state.
    pub fn set_progress(&mut self, psi: f64, epsilon: f64) {
        self.psi = psi.clamp(0.0, 1.0);
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn mec_nodes(&self) -> Vec<MecNode> {
        self.mecs.iter().map(|m| m.mec.clone()).collect()
    }

    pub fn view(&self, agent: usize) -> AgentView {
        let n = &self.nodes[agent];
        AgentView {
            task: self.tasks[agent].clone(),
            node: n.node.clone(),
            p_nominal: n.p_nominal,
            ue_tr_nominal: n.ue_tr_nominal,
            associated: self.assoc[agent],
            gains: self.channels[agent].iter().map(|c| c.gain).collect(),
            active: n.active,
        }
    }

    pub fn is_active(&self, agent: usize) -> bool {
        self.nodes[agent].active
    }

    pub fn channel(&self, agent: usize, mec: usize) -> &ChannelState {
        &self.channels[agent][mec]
    }

    /// Place MECs and nodes, draw velocities and the first tasks.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<StateVector>> {
        let t = self.cfg.topology.clone();
        let mut place = substream(seed, Stream::Placement);
        self.task_rng = substream(seed, Stream::Tasks);
        self.fading_rng = substream(seed, Stream::Fading);
        self.mobility_rng = substream(seed, Stream::Mobility);

        let n_aerial = t.num_aerial();
        self.mecs = (0..t.num_mecs)
            .map(|id| {
                let aerial = id < n_aerial;
                let x = uniform(&mut place, 0.0, t.arena_width);
                let y = uniform(&mut place, 0.0, t.arena_depth);
                let (z, f_max) = if aerial {
                    (
                        uniform(&mut place, t.uav_altitude[0], t.uav_altitude[1]),
                        uniform(&mut place, t.aerial_cpu[0], t.aerial_cpu[1]),
                    )
                } else {
                    (t.bs_height, t.ground_cpu)
                };
                let pos = Position3D::new(x, y, z);
                let mover = if aerial {
                    Mover::with_random_velocity(pos, t.uav_speed, &mut self.mobility_rng)
                } else {
                    Mover::new(pos)
                };
                let f_max = f_max * t.compute_scale;
                MecState {
                    mec: MecNode {
                        id,
                        pos,
                        kind: if aerial { MecKind::Aerial } else { MecKind::Ground },
                        f_max,
                        cr_max: f_max,
                        p_m: t.mec_power,
                        ue_m: t.mec_ue,
                        ue_tr_m: t.mec_ue_tr,
                    },
                    mover,
                }
            })
            .collect();
        self.nodes = (0..t.num_nodes)
            .map(|id| {
                let pos = Position3D::new(
                    uniform(&mut place, 0.0, t.arena_width),
                    uniform(&mut place, 0.0, t.arena_depth),
                    t.node_height,
                );
                let dbm = uniform(&mut place, t.node_power_dbm[0], t.node_power_dbm[1]);
                let p_nominal = 10f64.powf((dbm - 30.0) / 10.0);
                let ue_tr_nominal = uniform(&mut place, t.node_ue_tr[0], t.node_ue_tr[1]);
                let cpu = uniform(&mut place, t.node_cpu[0], t.node_cpu[1]);
                NodeState {
                    node: UserNode {
                        id,
                        pos,
                        cpu_hz: cpu,
                        energy: 1.0,
                        p_tx: p_nominal,
                        ue_tr: ue_tr_nominal,
                    },
                    mover: Mover::with_random_velocity(pos, t.node_speed, &mut self.mobility_rng),
                    p_nominal,
                    ue_tr_nominal,
                    active: true,
                    running_cost: 0.0,
                }
            })
            .collect();
        self.step_index = 0;
        self.tasks = self
            .nodes
            .iter()
            .map(|n| self.cfg.tasks.sample(n.node.pos, &mut self.task_rng))
            .collect();
        self.resample_fading();
        self.refresh_channels()?;
        Ok(self.observe_all())
    }

    fn resample_fading(&mut self) {
        let k = self.cfg.radio.rician_k;
        let (n, m) = (self.nodes.len(), self.mecs.len());
        self.fading = (0..n)
            .map(|_| (0..m).map(|_| FadingState::sample(&mut self.fading_rng, k)).collect())
            .collect();
    }

    fn link_state(&self, mec: &MecNode, node: &UserNode, fading: &FadingState) -> Result<ChannelState> {
        let (m, n) = (&mec.pos, &node.pos);
        let mut d = channel::distance(m, n);
        if d <= 0.0 {
            d = 1e-3;
        }
        let n_adj = if channel::distance(m, n) <= 0.0 {
            Position3D::new(n.x + d, n.y, n.z)
        } else {
            *n
        };
        let p_los = match mec.kind {
            MecKind::Aerial => channel::p_los_aerial(m, &n_adj, &self.cfg.channel)?,
            MecKind::Ground => channel::p_los_ground(m, &n_adj, &self.cfg.obstruction),
        };
        let excess = channel::mean_excess_loss(p_los, &self.cfg.channel);
        let pl = channel::path_loss(m, &n_adj, &self.cfg.channel, excess)?;
        let gain = channel::channel_gain(m, &n_adj, fading, channel::db_to_linear(pl))?;
        let r = &self.cfg.radio;
        let rate = channel::data_rate(
            gain,
            node.p_tx,
            r.noise,
            r.bandwidth / self.cfg.grid.subbands as f64,
        );
        Ok(ChannelState {
            gain,
            path_loss: pl,
            p_los,
            rate,
            distance: d / self.cfg.link.distance_unit,
            obstruction_ccdf: self.cfg.obstruction.midpoint_ccdf(m, &n_adj),
        })
    }

    fn refresh_channels(&mut self) -> Result<()> {
        let mut channels = Vec::with_capacity(self.nodes.len());
        let mut assoc = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            let mut nominal = n.node.clone();
            nominal.p_tx = n.p_nominal;
            let row = self
                .mecs
                .iter()
                .enumerate()
                .map(|(j, m)| self.link_state(&m.mec, &nominal, &self.fading[i][j]))
                .collect::<Result<Vec<_>>>()?;
            let gains: Vec<f64> = row.iter().map(|c| c.gain).collect();
            assoc.push(channel::associate(&gains)?);
            channels.push(row);
        }
        self.channels = channels;
        self.assoc = assoc;
        Ok(())
    }

    fn observe(&self, agent: usize) -> StateVector {
        let n = &self.nodes[agent];
        let task = &self.tasks[agent];
        let m = self.assoc[agent];
        let ch = &self.channels[agent][m];
        let mpos = self.mecs[m].mec.pos;
        let running = if self.cfg.reward.global_cost_in_state {
            self.nodes.iter().map(|x| x.running_cost).sum()
        } else {
            n.running_cost
        };
        let raw = [
            ch.gain.max(1e-30).log10(),
            task.data,
            self.fading[agent][m].g,
            mpos.x,
            mpos.y,
            mpos.z,
            n.node.pos.x,
            n.node.pos.y,
            n.node.pos.z,
            n.node.energy,
            running,
            ch.rate,
            task.category.index() as f64,
            task.th_max,
            task.ck,
            self.psi,
            self.epsilon,
        ];
        self.norm.apply(&raw)
    }

    pub fn observe_all(&self) -> Vec<StateVector> {
        (0..self.nodes.len()).map(|i| self.observe(i)).collect()
    }

    fn validate_action(&self, a: &ActionVector) -> Result<()> {
        let g = &self.cfg.grid;
        let bad = |what: &str, v: usize, n: usize| {
            Err(Error::Action(format!("{what} index {v} outside grid of {n}")))
        };
        if a.gamma > 1 {
            return Err(Error::Action(format!("gamma must be 0 or 1, got {}", a.gamma)));
        }
        if a.p_tx >= g.p_tx.len() {
            return bad("p_tx", a.p_tx, g.p_tx.len());
        }
        if a.is_offload() {
            if a.subband >= g.subbands {
                return bad("subband", a.subband, g.subbands);
            }
            if a.tr >= g.tr.len() {
                return bad("tr", a.tr, g.tr.len());
            }
            if a.ue_tr >= g.ue_tr.len() {
                return bad("ue_tr", a.ue_tr, g.ue_tr.len());
            }
            if let RhoChoice::Level(l) = a.rho {
                if l >= g.rho.len() {
                    return bad("rho", l, g.rho.len());
                }
            }
            if let Some(m) = a.mec {
                if m >= self.mecs.len() {
                    return bad("mec", m, self.mecs.len());
                }
            }
        }
        Ok(())
    }

    /// Cost, constraints and reward of a joint action on the current state,
    /// without advancing time.
    pub fn evaluate_joint(&self, actions: &[ActionVector]) -> Result<JointEval> {
        if actions.len() != self.nodes.len() {
            return Err(Error::Action(format!(
                "expected {} actions, got {}",
                self.nodes.len(),
                actions.len()
            )));
        }
        for a in actions {
            self.validate_action(a)?;
        }
        let g = &self.cfg.grid;
        let n_mecs = self.mecs.len();
        let serving: Vec<Option<usize>> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| (self.nodes[i].active && a.is_offload()).then(|| a.mec.unwrap_or(self.assoc[i])))
            .collect();

        let mut offloaders = vec![0usize; n_mecs];
        let mut collisions = vec![vec![0usize; g.subbands]; n_mecs];
        for (i, s) in serving.iter().enumerate() {
            if let Some(m) = *s {
                offloaders[m] += 1;
                collisions[m][actions[i].subband] += 1;
            }
        }
        let requested: Vec<f64> = serving
            .iter()
            .zip(actions)
            .map(|(s, a)| match (s, a.rho) {
                (None, _) => 0.0,
                (Some(m), RhoChoice::FairShare) => 1.0 / offloaders[*m] as f64,
                (Some(_), RhoChoice::Level(l)) => g.rho[l],
            })
            .collect();
        let mut demand = vec![0.0; n_mecs];
        for (s, r) in serving.iter().zip(&requested) {
            if let Some(m) = *s {
                demand[m] += r;
            }
        }
        let scale: Vec<f64> = demand.iter().map(|&d| if d > 1.0 { 1.0 / d } else { 1.0 }).collect();

        let cost_params = CostParams { kappa: self.cfg.kappa };
        let mut outcomes = Vec::with_capacity(actions.len());
        let mut stats = EpisodeStats::default();
        let mut mec_load = vec![0.0; n_mecs];
        for (i, a) in actions.iter().enumerate() {
            let ns = &self.nodes[i];
            if !ns.active {
                outcomes.push(None);
                continue;
            }
            let task = &self.tasks[i];
            let mut node = ns.node.clone();
            node.p_tx = g.p_tx[a.p_tx];
            let (costs, rho, mec_power) = match serving[i] {
                None => {
                    let link = self.link_params(1.0);
                    (cost::local_cost(task, &node, &link, &cost_params)?, 0.0, 0.0)
                }
                Some(m) => {
                    node.ue_tr = g.ue_tr[a.ue_tr];
                    let rho = requested[i] * scale[m];
                    mec_load[m] += rho;
                    let mec = &self.mecs[m].mec;
                    let mut ch = self.channels[i][m];
                    let bw = self.cfg.radio.bandwidth / g.subbands as f64;
                    ch.rate = channel::data_rate(ch.gain, node.p_tx, self.cfg.radio.noise, bw)
                        / collisions[m][a.subband] as f64;
                    let assoc = self.assoc[i];
                    let ho = if m == assoc {
                        HandoverContext::NONE
                    } else {
                        HandoverContext {
                            serving_is_best: false,
                            mec_shift: channel::distance(&self.mecs[assoc].mec.pos, &mec.pos)
                                / self.cfg.link.distance_unit,
                        }
                    };
                    let link = self.link_params(g.tr[a.tr]);
                    let c = cost::offload_cost(task, &node, mec, &ch, &link, rho, &ho, &cost_params)?;
                    (c, rho, mec.p_m)
                }
            };
            let input = ConstraintInput {
                gamma: a.gamma,
                rho,
                node_power: node.p_tx,
                mec_power,
            };
            let report = cost::check_constraints(&input, &costs, &self.cfg.constraints.for_task(task));
            let reward = self.reward.reward(costs.v, &report);
            stats.sum_cost += costs.v;
            stats.reward += reward;
            stats.violations += usize::from(!report.satisfied());
            stats.handovers += usize::from(costs.handed_over());
            stats.offloads += usize::from(costs.offloaded);
            stats.rate_floored += usize::from(costs.rate_floored);
            stats.active += 1;
            outcomes.push(Some(AgentOutcome {
                costs,
                report,
                reward,
                serving_mec: serving[i],
                rho_granted: rho,
            }));
        }
        Ok(JointEval {
            outcomes,
            stats,
            mec_load,
        })
    }

    /// Link parameters for a release rate `tr`: a higher rate shortens the
    /// effective uplink delay and raises uplink energy in proportion.
    fn link_params(&self, tr: f64) -> LinkParams {
        let l = &self.cfg.link;
        let ratio = tr / l.tr_ref;
        LinkParams {
            delay_tr: l.delay_tr,
            delay_process: l.delay_process,
            uplink_scale: l.uplink_scale * ratio,
            downlink_scale: l.downlink_scale,
            lambda_o: self.cfg.obstruction.density * l.distance_unit,
            lambda_o_floor: l.lambda_o_floor,
            rate_floor: self.cfg.radio.rate_floor,
            ho_energy_uses_power: l.ho_energy_uses_power,
            uplink_delay_factor: 1.0 / ratio,
        }
    }

    /// Apply a joint action and advance one step.
    pub fn step(&mut self, actions: &[ActionVector]) -> Result<(Vec<Transition>, EpisodeStats)> {
        let eval = self.evaluate_joint(actions)?;
        let before = self.observe_all();
        let drain = self.cfg.episode.energy_drain;
        for (i, o) in eval.outcomes.iter().enumerate() {
            if let Some(o) = o {
                let n = &mut self.nodes[i];
                n.running_cost += o.costs.v;
                n.node.energy = (n.node.energy - drain * o.costs.node_energy()).max(0.0);
                if n.node.energy <= 0.0 {
                    n.active = false;
                }
            }
        }
        self.step_index += 1;
        let dt = 1.0;
        for m in &mut self.mecs {
            if m.mec.kind == MecKind::Aerial {
                m.mover.advance(dt, &self.arena);
                m.mec.pos = m.mover.position;
            }
        }
        for n in &mut self.nodes {
            n.mover.advance(dt, &self.arena);
            n.node.pos = n.mover.position;
        }
        self.resample_fading();
        for (i, n) in self.nodes.iter().enumerate() {
            self.tasks[i] = self.cfg.tasks.sample(n.node.pos, &mut self.task_rng);
        }
        self.refresh_channels()?;
        let horizon_reached = self.step_index >= self.cfg.episode.steps;
        let after = self.observe_all();
        let mut transitions = Vec::with_capacity(eval.stats.active);
        for (i, o) in eval.outcomes.into_iter().enumerate() {
            if let Some(o) = o {
                let done = horizon_reached || !self.nodes[i].active;
                transitions.push(Transition {
                    agent: i,
                    s: before[i],
                    a: actions[i],
                    r: o.reward,
                    s_next: after[i],
                    comp: if done { Completion::Done } else { Completion::Ongoing },
                });
            }
        }
        Ok((transitions, eval.stats))
    }

    /// True once the horizon is reached or every node is exhausted.
    pub fn done(&self) -> bool {
        self.step_index >= self.cfg.episode.steps || self.nodes.iter().all(|n| !n.active)
    }
}
