//! Task model and the execution-time / energy / weighted-cost model with
//! constraint checking.
//!
//! Everything operates on normalized scalars. The formulas are kept verbatim,
//! including the places where energy-like coefficients enter time expressions.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, Position3D};
use crate::error::{Error, Result};

/// Urgency class of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    High,
    Medium,
    Low,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::High, Category::Medium, Category::Low];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub category: Category,
    /// Input size.
    pub data: f64,
    /// Computational complexity per unit of data.
    pub ck: f64,
    /// Latency threshold.
    pub th_max: f64,
    pub origin: Position3D,
    /// Result size returned by the MEC.
    pub cdata: f64,
}

impl Task {
    pub fn new(
        category: Category,
        data: f64,
        ck: f64,
        th_max: f64,
        origin: Position3D,
        cdata: f64,
    ) -> Result<Self> {
        if !(data > 0.0) {
            return Err(Error::InvalidTask(format!("data must be > 0, got {data}")));
        }
        if !(ck > 0.0) {
            return Err(Error::InvalidTask(format!("ck must be > 0, got {ck}")));
        }
        if !(th_max > 0.0) {
            return Err(Error::InvalidTask(format!("th_max must be > 0, got {th_max}")));
        }
        if !(0.0..=data).contains(&cdata) {
            return Err(Error::InvalidTask(format!(
                "result size {cdata} must lie in [0, data = {data}]"
            )));
        }
        Ok(Self {
            category,
            data,
            ck,
            th_max,
            origin,
            cdata,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserNode {
    pub id: usize,
    pub pos: Position3D,
    /// Local CPU frequency `f_n`.
    pub cpu_hz: f64,
    /// Remaining energy budget, as a fraction of the initial budget.
    pub energy: f64,
    /// Transmit power.
    pub p_tx: f64,
    /// Per-transmission energy coefficient.
    pub ue_tr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MecKind {
    Aerial,
    Ground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MecNode {
    pub id: usize,
    pub pos: Position3D,
    pub kind: MecKind,
    /// Maximum compute frequency.
    pub f_max: f64,
    /// Total computational resources.
    pub cr_max: f64,
    /// Operating power.
    pub p_m: f64,
    /// Per-execution energy coefficient.
    pub ue_m: f64,
    /// Return-transmission energy coefficient.
    pub ue_tr_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Aggregate per-hop delay factor (uplink, propagation, queuing, processing).
    pub delay_tr: f64,
    /// Local processing delay factor.
    pub delay_process: f64,
    /// Scale on the uplink transmission energy.
    pub uplink_scale: f64,
    /// Scale on the downlink transmission energy.
    pub downlink_scale: f64,
    /// Obstruction density in normalized units, used in the uplink time.
    pub lambda_o: f64,
    /// Substituted for `lambda_o` when it is zero.
    pub lambda_o_floor: f64,
    /// Minimum usable rate `epsilon_R`.
    pub rate_floor: f64,
    /// Handover energy multiplies the shift by the node's transmit power
    /// instead of reusing the handover time expression.
    pub ho_energy_uses_power: bool,
    /// Multiplier on `delay_tr` in the uplink transmission time only.
    pub uplink_delay_factor: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            delay_tr: 1.0,
            delay_process: 1.0,
            uplink_scale: 1.0,
            downlink_scale: 1.0,
            lambda_o: 1.0,
            lambda_o_floor: 1.0,
            rate_floor: 1e-6,
            ho_energy_uses_power: false,
            uplink_delay_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Weight on time; `1 - kappa` goes to energy.
    pub kappa: f64,
}

impl CostParams {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::config("cost.kappa", "must lie in [0, 1]"));
        }
        Ok(Self { kappa })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub ue_threshold: f64,
    pub t_max_task: f64,
    pub p_max_m: f64,
    pub p_max_n: f64,
}

/// Whether the serving MEC still has the best gain, and how far the task
/// moves if it has to be handed over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandoverContext {
    pub serving_is_best: bool,
    /// `||m_new - m_old||` in normalized length units.
    pub mec_shift: f64,
}

impl HandoverContext {
    pub const NONE: HandoverContext = HandoverContext {
        serving_is_best: true,
        mec_shift: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub t_local: f64,
    pub t_tr_n: f64,
    pub t_m: f64,
    pub t_tr_m: f64,
    pub t_ho: f64,
    pub ue_local: f64,
    pub ue_tr_n: f64,
    pub ue_m: f64,
    pub ue_tr_m: f64,
    pub ue_ho: f64,
    /// Weighted cost of the selected branch.
    pub v: f64,
    pub offloaded: bool,
    /// The channel rate fell below the floor and was substituted.
    pub rate_floored: bool,
}

impl CostBreakdown {
    pub fn total_time(&self) -> f64 {
        if self.offloaded {
            self.t_tr_n + self.t_m + self.t_tr_m + self.t_ho
        } else {
            self.t_local
        }
    }

    pub fn total_energy(&self) -> f64 {
        if self.offloaded {
            self.ue_tr_m + self.ue_m + self.ue_tr_n + self.ue_ho
        } else {
            self.ue_local
        }
    }

    /// Energy drawn from the user node's own budget.
    pub fn node_energy(&self) -> f64 {
        if self.offloaded {
            self.ue_tr_n + self.ue_ho
        } else {
            self.ue_local
        }
    }

    pub fn handed_over(&self) -> bool {
        self.t_ho > 0.0 || self.ue_ho > 0.0
    }
}

/// Local execution: `T = data * ck * Ue_n / f_n`, `Ue = f_n * ck * delay_process * P_n`.
pub fn local_cost(task: &Task, node: &UserNode, link: &LinkParams, cost: &CostParams) -> Result<CostBreakdown> {
    if !(node.cpu_hz > 0.0) {
        return Err(Error::InvalidNode(format!(
            "node {} has non-positive CPU frequency {}",
            node.id, node.cpu_hz
        )));
    }
    let t_local = task.data * task.ck * node.energy / node.cpu_hz;
    let ue_local = node.cpu_hz * task.ck * link.delay_process * node.p_tx;
    Ok(CostBreakdown {
        t_local,
        ue_local,
        v: weighted_cost(t_local, ue_local, cost),
        ..CostBreakdown::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffloadTimes {
    pub t_tr_n: f64,
    pub t_m: f64,
    pub t_tr_m: f64,
    pub t_ho: f64,
    pub rate_floored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OffloadEnergies {
    pub ue_tr_n: f64,
    pub ue_m: f64,
    pub ue_tr_m: f64,
    pub ue_ho: f64,
}

fn effective_rate(ch: &ChannelState, link: &LinkParams) -> (f64, bool) {
    crate::channel::floored_rate(ch.rate, link.rate_floor)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) {
        return Err(Error::NoResources(rho));
    }
    Ok(())
}

pub fn offload_times(
    task: &Task,
    node: &UserNode,
    mec: &MecNode,
    ch: &ChannelState,
    link: &LinkParams,
    rho: f64,
    ho: &HandoverContext,
) -> Result<OffloadTimes> {
    check_rho(rho)?;
    let (rate, rate_floored) = effective_rate(ch, link);
    let lambda = if link.lambda_o > 0.0 {
        link.lambda_o
    } else {
        link.lambda_o_floor
    };
    let t_tr_n = task.data * ch.distance * link.delay_tr * link.uplink_delay_factor * node.ue_tr / (rate * lambda);
    let t_m = task.ck * task.data * mec.ue_m / (rho * mec.f_max);
    let t_tr_m = task.cdata * link.delay_tr * mec.ue_tr_m / rate;
    let t_ho = if ho.serving_is_best {
        0.0
    } else {
        ho.mec_shift * t_tr_m
    };
    Ok(OffloadTimes {
        t_tr_n,
        t_m,
        t_tr_m,
        t_ho,
        rate_floored,
    })
}

pub fn offload_energies(
    task: &Task,
    node: &UserNode,
    mec: &MecNode,
    ch: &ChannelState,
    link: &LinkParams,
    rho: f64,
    ho: &HandoverContext,
) -> Result<OffloadEnergies> {
    check_rho(rho)?;
    let ue_tr_n = ch.distance * link.delay_tr * ch.obstruction_ccdf * link.uplink_scale;
    let ue_m = mec.f_max * rho * mec.p_m;
    let ue_tr_m = link.delay_tr * ch.obstruction_ccdf * ch.distance * link.downlink_scale;
    let ue_ho = if ho.serving_is_best {
        0.0
    } else {
        let (rate, _) = effective_rate(ch, link);
        let t_tr_m = task.cdata * link.delay_tr * mec.ue_tr_m / rate;
        let factor = if link.ho_energy_uses_power { node.p_tx } else { t_tr_m };
        ho.mec_shift * factor
    };
    Ok(OffloadEnergies {
        ue_tr_n,
        ue_m,
        ue_tr_m,
        ue_ho,
    })
}

/// Full offload branch: times, energies and the weighted cost.
pub fn offload_cost(
    task: &Task,
    node: &UserNode,
    mec: &MecNode,
    ch: &ChannelState,
    link: &LinkParams,
    rho: f64,
    ho: &HandoverContext,
    cost: &CostParams,
) -> Result<CostBreakdown> {
    let t = offload_times(task, node, mec, ch, link, rho, ho)?;
    let e = offload_energies(task, node, mec, ch, link, rho, ho)?;
    let mut out = CostBreakdown {
        t_tr_n: t.t_tr_n,
        t_m: t.t_m,
        t_tr_m: t.t_tr_m,
        t_ho: t.t_ho,
        ue_tr_n: e.ue_tr_n,
        ue_m: e.ue_m,
        ue_tr_m: e.ue_tr_m,
        ue_ho: e.ue_ho,
        offloaded: true,
        rate_floored: t.rate_floored,
        ..CostBreakdown::default()
    };
    out.v = weighted_cost(out.total_time(), out.total_energy(), cost);
    Ok(out)
}

pub fn weighted_cost(t_total: f64, ue_total: f64, p: &CostParams) -> f64 {
    p.kappa * t_total + (1.0 - p.kappa) * ue_total
}

/// One task's offloading indicator with the cost of both branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub gamma: u8,
    pub local: f64,
    pub offload: f64,
}

impl Decision {
    pub fn chosen(&self) -> f64 {
        if self.gamma == 0 {
            self.local
        } else {
            self.offload
        }
    }
}

/// Sum over tasks of `(1 - gamma) * V_local + gamma * V_offload`.
pub fn total_cost(decisions: &[Decision]) -> f64 {
    decisions.iter().map(Decision::chosen).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// Offloading indicator is binary.
    C1,
    /// Resource fraction lies in `[0, 1]`.
    C2,
    /// Transmit and MEC powers within their caps.
    C3,
    /// Energy within the threshold.
    C4,
    /// Time within the task cap.
    C5,
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Decision variables checked alongside the cost breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintInput {
    pub gamma: u8,
    pub rho: f64,
    pub node_power: f64,
    pub mec_power: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintReport {
    pub violations: Vec<Constraint>,
}

impl ConstraintReport {
    pub fn satisfied(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_constraints(input: &ConstraintInput, costs: &CostBreakdown, c: &ConstraintSet) -> ConstraintReport {
    let mut violations = Vec::new();
    if input.gamma > 1 {
        violations.push(Constraint::C1);
    }
    if !(0.0..=1.0).contains(&input.rho) {
        violations.push(Constraint::C2);
    }
    if !(0.0..=c.p_max_n).contains(&input.node_power) || !(0.0..=c.p_max_m).contains(&input.mec_power) {
        violations.push(Constraint::C3);
    }
    if !(0.0..=c.ue_threshold).contains(&costs.total_energy()) {
        violations.push(Constraint::C4);
    }
    if !(costs.total_time() <= c.t_max_task) {
        violations.push(Constraint::C5);
    }
    ConstraintReport { violations }
}
