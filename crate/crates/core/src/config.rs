//! One JSON document holding every tunable, split into sections
//! `physics`, `jammer`, `scenario`, `train` and `episode`. Omitted sections
//! and keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Formation, ScenarioRanges};
use crate::episode::{sample_mission, EpisodeConfig};
use crate::error::{Error, Result};
use crate::gcn::TrainConfig;
use crate::geom::Vec2;
use crate::jamfield::{DisruptionPolicy, JammerField};
use crate::swarm::SwarmConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub swarm: SwarmConfig<f64>,
    pub p_tau: f64,
    pub k: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig { swarm: SwarmConfig::default(), p_tau: DisruptionPolicy::<f64>::default().p_tau, k: 1.0 }
    }
}

/// Fixed ground-truth jammer for `simulate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JammerSpec {
    pub x: f64,
    pub y: f64,
    pub a: f64,
}

/// Episode settings that are not physics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSettings {
    pub start: Vec2<f64>,
    pub replan_interval: f64,
    pub snapshot_interval: f64,
    pub timeout: f64,
    pub start_jitter: f64,
    pub inflation: f64,
    pub margin: f64,
    pub smoothing: f64,
    pub a_clamp: [f64; 2],
    pub dispersal_cohesion: f64,
    /// Decay-constant range for the sampled jammer when `jammer` is absent.
    pub mission_a_range: [f64; 2],
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        EpisodeSettings {
            start: e.start,
            replan_interval: e.replan_interval,
            snapshot_interval: e.snapshot_interval,
            timeout: e.timeout,
            start_jitter: e.start_jitter,
            inflation: e.inflation,
            margin: e.margin,
            smoothing: e.smoothing,
            a_clamp: e.a_clamp,
            dispersal_cohesion: e.dispersal_cohesion,
            mission_a_range: [0.88, 0.95],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub physics: PhysicsConfig,
    pub jammer: Option<JammerSpec>,
    pub scenario: ScenarioRanges,
    pub train: TrainConfig,
    pub episode: EpisodeSettings,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::InvalidConfig(_) => e,
            other => Error::InvalidConfig(other.to_string()),
        };
        self.scenario.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        let [lo, hi] = self.episode.mission_a_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidConfig("mission_a_range must be an interval inside (0, 1)".into()));
        }
        self.episode_config(0).validate().map_err(wrap)
    }

    pub fn policy(&self) -> DisruptionPolicy<f64> {
        DisruptionPolicy { p_tau: self.physics.p_tau }
    }

    pub fn formation(&self) -> Formation {
        Formation::from_swarm(&self.physics.swarm, &self.policy(), self.physics.k)
    }

    /// Resolved episode for `seed`: the configured jammer if present,
    /// otherwise one sampled between start and target from the seed.
    pub fn episode_config(&self, seed: u64) -> EpisodeConfig {
        let e = &self.episode;
        let base = EpisodeConfig {
            swarm: self.physics.swarm,
            policy: self.policy(),
            field: JammerField { k: self.physics.k, ..EpisodeConfig::default().field },
            start: e.start,
            replan_interval: e.replan_interval,
            snapshot_interval: e.snapshot_interval,
            timeout: e.timeout,
            seed,
            start_jitter: e.start_jitter,
            inflation: e.inflation,
            margin: e.margin,
            smoothing: e.smoothing,
            a_clamp: e.a_clamp,
            dispersal_cohesion: e.dispersal_cohesion,
            model_path: None,
        };
        match self.jammer {
            Some(j) => EpisodeConfig { field: JammerField { pos: Vec2::new(j.x, j.y), k: self.physics.k, decay_a: j.a }, ..base },
            None => sample_mission(seed, &base, e.mission_a_range),
        }
    }
}
