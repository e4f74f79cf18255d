//! Closed-loop mission: periodically re-estimate the jammer from the swarm's
//! graph snapshot, inflate the estimated disruption disk, and steer with
//! flocking plus avoidance until arrival, disruption or timeout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::triangular_formation;
use crate::error::{Error, Result};
use crate::gcn::JammerEstimator;
use crate::geom::Vec2;
use crate::graph::{build_adjacency, GraphSnapshot, Label};
use crate::jamfield::{DisruptionPolicy, JammerField};
use crate::swarm::{
    avoidance_accel, blend_accel, flocking_accel_scaled, is_connected, step, DangerDisk, SwarmConfig, UavState,
};

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub swarm: SwarmConfig<f64>,
    pub policy: DisruptionPolicy<f64>,
    /// Ground truth; the controller only sees it through `P` and `dP/dt`.
    pub field: JammerField<f64>,
    /// Centroid of the initial formation.
    pub start: Vec2<f64>,
    pub replan_interval: f64,
    pub snapshot_interval: f64,
    pub timeout: f64,
    pub seed: u64,
    /// Uniform per-coordinate jitter of the initial lattice, meters.
    pub start_jitter: f64,
    pub inflation: f64,
    pub margin: f64,
    /// Weight of the newest estimate in the exponential moving average.
    pub smoothing: f64,
    /// Clamp for the estimated decay constant before computing the radius.
    pub a_clamp: [f64; 2],
    /// Cohesion multiplier while any UAV is inside the alert radius.
    pub dispersal_cohesion: f64,
    pub model_path: Option<String>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            swarm: SwarmConfig::default(),
            policy: DisruptionPolicy::default(),
            field: JammerField { pos: Vec2::new(100.0, 100.0), k: 1.0, decay_a: 0.9 },
            start: Vec2::new(30.0, 100.0),
            replan_interval: 1.0,
            snapshot_interval: 10.0,
            timeout: 300.0,
            seed: 0,
            start_jitter: 1.0,
            inflation: 1.5,
            margin: 10.0,
            smoothing: 0.5,
            a_clamp: [0.5, 0.999],
            dispersal_cohesion: 0.25,
            model_path: None,
        }
    }
}

fn ticks_for(interval: f64, dt: f64) -> Option<u64> {
    let n = (interval / dt).round();
    ((n * dt - interval).abs() <= 1e-9 * interval.max(1.0) && n >= 1.0).then_some(n as u64)
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.swarm.validate()?;
        self.field.validate()?;
        DisruptionPolicy::new(self.policy.p_tau)?;
        let dt = self.swarm.dt;
        if !(self.replan_interval >= dt) {
            return Err(Error::InvalidConfig("replan_interval must be at least dt".into()));
        }
        if ticks_for(self.snapshot_interval, dt).is_none() {
            return Err(Error::InvalidConfig("snapshot_interval must be a positive multiple of dt".into()));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(Error::InvalidConfig("timeout must be positive".into()));
        }
        if !(self.inflation >= 1.0 && self.margin >= 0.0 && self.start_jitter >= 0.0) {
            return Err(Error::InvalidConfig("inflation must be >= 1; margin and jitter >= 0".into()));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::InvalidConfig("smoothing weight must lie in (0, 1]".into()));
        }
        let [lo, hi] = self.a_clamp;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidConfig("a_clamp must be an interval inside (0, 1)".into()));
        }
        Ok(())
    }

    pub fn replan_ticks(&self) -> u64 {
        ((self.replan_interval / self.swarm.dt).round() as u64).max(1)
    }

    pub fn snapshot_ticks(&self) -> u64 {
        ticks_for(self.snapshot_interval, self.swarm.dt).unwrap_or(1)
    }

    /// Jittered triangular lattice at `start`, apex toward the target, at rest.
    pub fn initial_swarm(&self) -> Vec<UavState<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let dir = self.swarm.target - self.start;
        let heading = dir.y.atan2(dir.x);
        let j = self.start_jitter;
        triangular_formation(self.swarm.n, self.swarm.spacing_rs, self.start, heading)
            .into_iter()
            .enumerate()
            .map(|(id, p)| {
                let jitter = if j > 0.0 { Vec2::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j)) } else { Vec2::zero() };
                UavState::new(id, p + jitter, Vec2::zero())
            })
            .collect()
    }
}

/// Jammer placed between `start` and the target: along-track fraction in
/// [0.4, 0.6], cross-track offset within +-10 m, decay constant in `a_range`.
pub fn sample_mission(seed: u64, base: &EpisodeConfig, a_range: [f64; 2]) -> EpisodeConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d69_7373_696f_6e00);
    let track = base.swarm.target - base.start;
    let len = track.norm();
    let along = track * (1.0 / len);
    let frac = rng.gen_range(0.4..=0.6);
    let offset = rng.gen_range(-10.0..=10.0);
    let pos = base.start + along * (frac * len) + along.perp() * offset;
    let a = rng.gen_range(a_range[0]..=a_range[1]);
    EpisodeConfig { field: JammerField { pos, k: base.field.k, decay_a: a }, seed, ..base.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavRecord {
    pub pos: Vec2<f64>,
    pub vel: Vec2<f64>,
    pub p: f64,
    pub disrupted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JammerRecord {
    pub xj: f64,
    pub yj: f64,
    pub a: f64,
    pub r_tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub uavs: Vec<UavRecord>,
    pub predicted: JammerRecord,
    pub truth: JammerRecord,
    pub edges: Vec<[usize; 2]>,
    pub danger: bool,
}

impl TickRecord {
    pub fn max_probability(&self) -> f64 {
        self.uavs.iter().map(|u| u.p).fold(0.0, f64::max)
    }

    pub fn swarm(&self) -> Vec<UavState<f64>> {
        self.uavs
            .iter()
            .enumerate()
            .map(|(id, u)| UavState { id, pos: u.pos, vel: u.vel, disrupted: u.disrupted })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    DisruptionFailure,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub outcome: Outcome,
    pub t_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub config: EpisodeConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub terminal: Option<Terminal>,
}

/// True iff some operational UAV is within the alert radius (inclusive).
pub fn detect_danger(swarm: &[UavState<f64>], disk: &DangerDisk<f64>) -> bool {
    let alert = disk.alert_radius();
    swarm.iter().any(|u| !u.disrupted && u.pos.distance(disk.center) <= alert)
}

/// Radius where a `k = 1` field with decay `a` reaches `p_tau`.
fn radius_for(a: f64, p_tau: f64) -> f64 {
    p_tau.ln() / a.ln()
}

pub fn run_episode<E: JammerEstimator<f64> + ?Sized>(cfg: &EpisodeConfig, estimator: &E) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let sc = &cfg.swarm;
    let field = &cfg.field;
    let policy = &cfg.policy;
    let true_r_tau = field.critical_radius(policy)?;
    let truth = JammerRecord { xj: field.pos.x, yj: field.pos.y, a: field.decay_a, r_tau: true_r_tau };

    let mut swarm = cfg.initial_swarm();
    if swarm.iter().any(|u| field.is_disrupted(policy, u.pos).unwrap_or(true)) {
        return Err(Error::InvalidConfig("initial formation starts inside the disruption disk".into()));
    }
    let replan = cfg.replan_ticks();
    let max_tick = (cfg.timeout / sc.dt).round() as u64;
    let mut estimate: Option<Label<f64>> = None;
    let mut ticks = Vec::new();

    for tick in 0..=max_tick {
        let t = tick as f64 * sc.dt;
        if tick % replan == 0 {
            let snapshot = GraphSnapshot::capture(&swarm, field, sc.comm_range_d)?;
            let raw = estimator.estimate(&snapshot)?;
            let w = cfg.smoothing;
            estimate = Some(match estimate {
                None => raw,
                Some(prev) => Label::from_array(std::array::from_fn(|k| {
                    (1.0 - w) * prev.to_array()[k] + w * raw.to_array()[k]
                })),
            });
        }
        let est = estimate.expect("estimated on tick 0");
        let a_hat = est.a.clamp(cfg.a_clamp[0], cfg.a_clamp[1]);
        let r_hat = radius_for(a_hat, policy.p_tau);
        let disk = DangerDisk::new(est.position(), r_hat, cfg.inflation, cfg.margin)?;
        let danger = detect_danger(&swarm, &disk);

        let positions: Vec<_> = swarm.iter().map(|u| u.pos).collect();
        let disrupted: Vec<_> = swarm.iter().map(|u| u.disrupted).collect();
        let adjacency = build_adjacency(&positions, &disrupted, sc.comm_range_d);
        let mut edges = Vec::new();
        for i in 0..swarm.len() {
            for j in i + 1..swarm.len() {
                if adjacency[i][j] == 1 {
                    edges.push([i, j]);
                }
            }
        }
        ticks.push(TickRecord {
            t,
            uavs: swarm
                .iter()
                .map(|u| Ok(UavRecord { pos: u.pos, vel: u.vel, p: field.probability(u.pos)?, disrupted: u.disrupted }))
                .collect::<Result<_>>()?,
            predicted: JammerRecord { xj: est.xj, yj: est.yj, a: a_hat, r_tau: r_hat },
            truth,
            edges,
            danger,
        });

        let outcome = if swarm.iter().any(|u| u.disrupted) {
            Some(Outcome::DisruptionFailure)
        } else if swarm.iter().all(|u| u.pos.distance(sc.target) <= sc.arrive_radius)
            && is_connected(&swarm, sc.comm_range_d)
        {
            Some(Outcome::Success)
        } else if tick == max_tick {
            Some(Outcome::Timeout)
        } else {
            None
        };
        if let Some(outcome) = outcome {
            return Ok(TrajectoryLog {
                header: LogHeader { version: LOG_VERSION, config: cfg.clone() },
                ticks,
                terminal: Some(Terminal { outcome, t_final: t }),
            });
        }

        let cohesion = if danger { cfg.dispersal_cohesion } else { 1.0 };
        let mut accels = flocking_accel_scaled(&swarm, sc, cohesion)?;
        for (a, u) in accels.iter_mut().zip(&swarm) {
            if !u.disrupted {
                *a = blend_accel(avoidance_accel(u, &disk, sc)?, *a, sc.a_max);
            }
        }
        swarm = step(&swarm, &accels, field, policy, sc)?;
    }
    unreachable!("the final tick always terminates the episode")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub outcome: Outcome,
    pub t_final: f64,
    /// Smallest clearance of any UAV from the true disk over the episode.
    pub min_margin: f64,
    pub final_connected: bool,
}

pub fn episode_outcome(log: &TrajectoryLog) -> Result<EpisodeSummary> {
    let terminal = log.terminal.ok_or_else(|| Error::MalformedLog("log has no terminal record".into()))?;
    let last = log.ticks.last().ok_or_else(|| Error::MalformedLog("log has no tick records".into()))?;
    let mut min_margin = f64::INFINITY;
    for tick in &log.ticks {
        let center = Vec2::new(tick.truth.xj, tick.truth.yj);
        for u in &tick.uavs {
            min_margin = min_margin.min(u.pos.distance(center) - tick.truth.r_tau);
        }
    }
    Ok(EpisodeSummary {
        outcome: terminal.outcome,
        t_final: terminal.t_final,
        min_margin,
        final_connected: is_connected(&last.swarm(), log.header.config.swarm.comm_range_d),
    })
}

/// Mean predicted-position error over ticks with `max P > 0.1` and over ticks
/// with `max P < 0.01`; `None` when no tick falls in the band.
pub fn prediction_error_by_proximity(log: &TrajectoryLog) -> (Option<f64>, Option<f64>) {
    let mut near = (0.0, 0usize);
    let mut far = (0.0, 0usize);
    for tick in &log.ticks {
        let err = Vec2::new(tick.predicted.xj, tick.predicted.yj).distance(Vec2::new(tick.truth.xj, tick.truth.yj));
        let p = tick.max_probability();
        if p > 0.1 {
            near = (near.0 + err, near.1 + 1);
        } else if p < 0.01 {
            far = (far.0 + err, far.1 + 1);
        }
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    (mean(near), mean(far))
}

impl TrajectoryLog {
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for tick in &self.ticks {
            serde_json::to_writer(&mut w, tick)?;
            w.write_all(b"\n")?;
        }
        if let Some(terminal) = &self.terminal {
            serde_json::to_writer(&mut w, terminal)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    /// Parses a log; a missing terminal line yields `terminal: None`.
    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines.next().transpose()?.ok_or_else(|| Error::MalformedLog("empty log".into()))?;
        let header: LogHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::MalformedLog(format!("bad header: {e}")))?;
        if header.version != LOG_VERSION {
            return Err(Error::MalformedLog(format!("unsupported log version {}", header.version)));
        }
        let mut ticks = Vec::new();
        let mut terminal = None;
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if terminal.is_some() {
                return Err(Error::MalformedLog("records after the terminal line".into()));
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| Error::MalformedLog(format!("line {}: {e}", n + 2)))?;
            if value.get("outcome").is_some() {
                terminal = Some(serde_json::from_value(value)?);
            } else {
                let tick: TickRecord = serde_json::from_value(value)
                    .map_err(|e| Error::MalformedLog(format!("line {}: {e}", n + 2)))?;
                if ticks.last().is_some_and(|prev: &TickRecord| prev.t >= tick.t) {
                    return Err(Error::MalformedLog("tick times must increase".into()));
                }
                ticks.push(tick);
            }
        }
        Ok(TrajectoryLog { header, ticks, terminal })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}
