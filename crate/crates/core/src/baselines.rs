//! Non-learning comparison policies: full local (FLC), full offload (FOC),
//! and random offloading with dedicated (RODRS) or shared (ROSRS) resources.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionVector, AgentView, DiscretizationSpec, RhoChoice};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    Flc,
    Foc,
    Rodrs,
    Rosrs,
    Ql,
    Dql,
    Ddql,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::Flc,
        PolicyKind::Foc,
        PolicyKind::Rodrs,
        PolicyKind::Rosrs,
        PolicyKind::Ql,
        PolicyKind::Dql,
        PolicyKind::Ddql,
    ];

    pub const STATIC: [PolicyKind; 4] = [PolicyKind::Flc, PolicyKind::Foc, PolicyKind::Rodrs, PolicyKind::Rosrs];

    pub fn is_learner(self) -> bool {
        matches!(self, PolicyKind::Ql | PolicyKind::Dql | PolicyKind::Ddql)
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Flc => "flc",
            PolicyKind::Foc => "foc",
            PolicyKind::Rodrs => "rodrs",
            PolicyKind::Rosrs => "rosrs",
            PolicyKind::Ql => "ql",
            PolicyKind::Dql => "dql",
            PolicyKind::Ddql => "ddql",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("policy", format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Offload probability of the random policies.
    pub offload_prob: f64,
    /// Fixed grant of RODRS; must be a level of the rho grid.
    pub dedicated_rho: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            offload_prob: 0.5,
            dedicated_rho: 0.25,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, grid: &DiscretizationSpec) -> Result<()> {
        if !(0.0..=1.0).contains(&self.offload_prob) {
            return Err(Error::config("baselines.offload_prob", "must lie in [0, 1]"));
        }
        if !grid.rho.iter().any(|r| (r - self.dedicated_rho).abs() < 1e-12) {
            return Err(Error::config(
                "baselines.dedicated_rho",
                "must be one of the grid.rho levels",
            ));
        }
        Ok(())
    }

    fn dedicated_level(&self, grid: &DiscretizationSpec) -> usize {
        DiscretizationSpec::nearest(&grid.rho, self.dedicated_rho)
    }
}

/// Everything local, at the lowest transmit power.
pub fn flc_policy(_view: &AgentView) -> ActionVector {
    ActionVector::local(0)
}

/// Node-specific settings used by the offloading baselines: the grid levels
/// nearest to the node's nominal power and energy coefficient, and the
/// middle release rate.
fn nominal_offload(view: &AgentView, grid: &DiscretizationSpec, subband: usize, rho: RhoChoice, mec: usize) -> ActionVector {
    ActionVector {
        subband,
        tr: grid.mid_tr(),
        gamma: 1,
        rho,
        p_tx: DiscretizationSpec::nearest(&grid.p_tx, view.p_nominal),
        ue_tr: DiscretizationSpec::nearest(&grid.ue_tr, view.ue_tr_nominal),
        mec: Some(mec),
    }
}

/// Always offload to the max-gain MEC and request a fair share.
pub fn foc_policy(view: &AgentView, grid: &DiscretizationSpec) -> ActionVector {
    if view.gains.is_empty() {
        return ActionVector::local(0);
    }
    let mec = crate::channel::associate(&view.gains).unwrap_or(0);
    nominal_offload(view, grid, view.node.id % grid.subbands, RhoChoice::FairShare, mec)
}

/// Shared draw of the two random policies: the offload coin, then the MEC
/// and sub-band. The draws are made unconditionally so that both policies
/// consume the stream identically.
fn random_decision<R: Rng + ?Sized>(
    view: &AgentView,
    grid: &DiscretizationSpec,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> Option<(usize, usize)> {
    let coin: f64 = rng.random();
    let mec = rng.random_range(0..view.gains.len().max(1));
    let subband = rng.random_range(0..grid.subbands);
    (coin < cfg.offload_prob && !view.gains.is_empty()).then_some((mec, subband))
}

/// Random offloading with a fixed dedicated grant.
pub fn rodrs_policy<R: Rng + ?Sized>(
    view: &AgentView,
    grid: &DiscretizationSpec,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> ActionVector {
    match random_decision(view, grid, cfg, rng) {
        Some((mec, sb)) => nominal_offload(view, grid, sb, RhoChoice::Level(cfg.dedicated_level(grid)), mec),
        None => ActionVector::local(0),
    }
}

/// Random offloading sharing each MEC fairly among its offloaders.
pub fn rosrs_policy<R: Rng + ?Sized>(
    view: &AgentView,
    grid: &DiscretizationSpec,
    cfg: &BaselineConfig,
    rng: &mut R,
) -> ActionVector {
    match random_decision(view, grid, cfg, rng) {
        Some((mec, sb)) => nominal_offload(view, grid, sb, RhoChoice::FairShare, mec),
        None => ActionVector::local(0),
    }
}
