//! Experiment configuration: one TOML document whose sections mirror the
//! simulator components, e.g. `ddql.zeta = 0.9` or `topology.num_mecs = 4`.
//! Absent keys take desk-scale defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::NetConfig;
use crate::baselines::BaselineConfig;
use crate::channel::{ChannelParams, ObstructionModel};
use crate::env::{
    ConstraintConfig, DiscretizationSpec, EnvConfig, EpisodeConfig, LinkConfig, RadioConfig, RewardConfig,
    TaskConfig, TopologyConfig,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Training episodes (eta).
    pub episodes: usize,
    /// Greedy evaluation episodes on fixed seeds.
    pub eval_episodes: usize,
    /// Independent runs of multi-seed commands, seeded `seed + k`.
    pub seeds: usize,
    pub checkpoint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            episodes: 500,
            eval_episodes: 5,
            seeds: 5,
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    /// Weight of time against energy.
    pub kappa: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { kappa: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub start: f64,
    pub end: f64,
    /// Fraction of training after which epsilon stays at `end`.
    pub floor_at: f64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.001,
            floor_at: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QlConfig {
    pub psi: f64,
    pub zeta: f64,
    /// Buckets per discretized state feature.
    pub bins: usize,
}

impl Default for QlConfig {
    fn default() -> Self {
        Self {
            psi: 0.1,
            zeta: 0.9,
            bins: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Fixed task sizes in Mbits.
    pub data_mbits: Vec<f64>,
    pub mec_counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            data_mbits: vec![10.0, 25.0, 40.0, 60.0, 80.0],
            mec_counts: vec![1, 2, 4, 6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Seeded instances checked by the exhaustive verifier.
    pub instances: usize,
    /// Training episodes of the learner compared against the optimum.
    pub train_episodes: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            instances: 10,
            train_episodes: 150,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub topology: TopologyConfig,
    pub tasks: TaskConfig,
    pub channel: ChannelParams,
    pub obstruction: ObstructionModel,
    pub radio: RadioConfig,
    pub link: LinkConfig,
    pub cost: CostSection,
    pub constraints: ConstraintConfig,
    pub grid: DiscretizationSpec,
    pub reward: RewardConfig,
    pub env: EpisodeConfig,
    pub baselines: BaselineConfig,
    pub exploration: ExplorationConfig,
    pub ql: QlConfig,
    pub dql: NetConfig,
    pub ddql: NetConfig,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale profile: 4 MECs, 10 nodes, 500 episodes of 200 steps.
    pub fn desk() -> Self {
        Self {
            run: RunConfig::default(),
            topology: TopologyConfig::default(),
            tasks: TaskConfig::default(),
            channel: ChannelParams::default(),
            obstruction: ObstructionModel::default(),
            radio: RadioConfig::default(),
            link: LinkConfig::default(),
            cost: CostSection::default(),
            constraints: ConstraintConfig::default(),
            grid: DiscretizationSpec::default(),
            reward: RewardConfig::default(),
            env: EpisodeConfig::default(),
            baselines: BaselineConfig::default(),
            exploration: ExplorationConfig::default(),
            ql: QlConfig::default(),
            dql: NetConfig {
                use_prev_net_sum: false,
                uncertainty_scale: 0.0,
                share_memory: false,
                ..NetConfig::default()
            },
            ddql: NetConfig::default(),
            sweep: SweepConfig::default(),
            verify: VerifyConfig::default(),
        }
    }

    /// Full-scale profile with the published simulation parameters.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.run.episodes = 5000;
        c.topology.num_mecs = 14;
        c.topology.num_nodes = 55;
        c.topology.node_power_dbm = [-20.0, 50.0];
        c.env.steps = 1000;
        for net in [&mut c.dql, &mut c.ddql] {
            net.psi = 1e-4;
            net.zeta = 0.9;
            net.batch_size = 1500;
            net.memory_capacity = 100_000;
            net.hidden = vec![1000, 500, 250, 120];
        }
        c
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            topology: self.topology.clone(),
            tasks: self.tasks.clone(),
            channel: self.channel.clone(),
            obstruction: self.obstruction.clone(),
            radio: self.radio.clone(),
            link: self.link.clone(),
            kappa: self.cost.kappa,
            constraints: self.constraints.clone(),
            grid: self.grid.clone(),
            reward: self.reward.clone(),
            episode: self.env.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.episodes == 0 {
            return Err(Error::config("run.episodes", "must be >= 1"));
        }
        if r.eval_episodes == 0 {
            return Err(Error::config("run.eval_episodes", "must be >= 1"));
        }
        if r.seeds == 0 {
            return Err(Error::config("run.seeds", "must be >= 1"));
        }
        self.env_config().validate()?;
        self.baselines.validate(&self.grid)?;
        let e = &self.exploration;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.end > e.start {
            return Err(Error::config(
                "exploration",
                "need 0 <= exploration.end <= exploration.start <= 1",
            ));
        }
        if !(e.floor_at > 0.0 && e.floor_at <= 1.0) {
            return Err(Error::config("exploration.floor_at", "must lie in (0, 1]"));
        }
        if !(self.ql.psi > 0.0 && self.ql.psi <= 1.0) {
            return Err(Error::config("ql.psi", "must lie in (0, 1]"));
        }
        if !(self.ql.zeta > 0.0 && self.ql.zeta < 1.0) {
            return Err(Error::config("ql.zeta", "must lie in (0, 1)"));
        }
        if self.ql.bins < 1 {
            return Err(Error::config("ql.bins", "must be >= 1"));
        }
        self.dql.validate("dql")?;
        self.ddql.validate("ddql")?;
        let [lo, hi] = self.tasks.data_mbits;
        for &d in &self.sweep.data_mbits {
            if !(d >= lo && d <= hi) {
                return Err(Error::config(
                    "sweep.data_mbits",
                    format!("{d} outside tasks.data_mbits [{lo}, {hi}]"),
                ));
            }
        }
        if self.sweep.mec_counts.contains(&0) {
            return Err(Error::config("sweep.mec_counts", "counts must be >= 1"));
        }
        if self.verify.instances == 0 {
            return Err(Error::config("verify.instances", "must be >= 1"));
        }
        Ok(())
    }

    /// Parse and validate a configuration document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = unknown_key(&message).unwrap_or_else(|| "config".into());
            Error::config(path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_desk_profile() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::desk());
        assert_eq!(cfg.topology.num_mecs, 4);
        assert_eq!(cfg.topology.num_nodes, 10);
        assert_eq!(cfg.ddql.hidden, vec![64, 32]);
    }

    #[test]
    fn dotted_keys_and_errors() {
        let cfg = ExperimentConfig::from_toml_str("ddql.zeta = 0.8\ntopology.num_nodes = 3\n").unwrap();
        assert_eq!(cfg.ddql.zeta, 0.8);
        assert_eq!(cfg.topology.num_nodes, 3);
        let err = ExperimentConfig::from_toml_str("ddql.zeta = 1.5").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("zeta"), "{err}");
        let err = ExperimentConfig::from_toml_str("ddql.zetta = 0.5").unwrap_err();
        assert!(err.to_string().contains("zetta"), "{err}");
        assert!(ExperimentConfig::from_toml_str("nonsense = 1").is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = ExperimentConfig::paper();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
