//! Seeded scenario sampling and the labeled JSONL dataset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::graph::{GraphSnapshot, Label};
use crate::jamfield::{DisruptionPolicy, JammerField};
use crate::num::Scalar;
use crate::swarm::{SwarmConfig, UavState};

pub const DATASET_VERSION: u32 = 1;
/// Per-coordinate jitter applied to lattice positions, meters.
pub const JITTER_M: f64 = 2.0;
pub const MAX_REJECTIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Vec2<f64>,
    pub max: Vec2<f64>,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { min: Vec2::new(x0, y0), max: Vec2::new(x1, y1) }
    }

    pub fn contains(&self, p: Vec2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min.x < self.max.x && self.min.y < self.max.y
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec2<f64> {
        Vec2::new(rng.gen_range(self.min.x..self.max.x), rng.gen_range(self.min.y..self.max.y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioRanges {
    pub arena: Rect,
    pub a_range: [f64; 2],
    pub jammer_region: Rect,
    pub speed_range: [f64; 2],
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        ScenarioRanges {
            arena: Rect::new(0.0, 0.0, 200.0, 200.0),
            a_range: [0.85, 0.98],
            jammer_region: Rect::new(50.0, 50.0, 150.0, 150.0),
            speed_range: [0.0, 5.0],
        }
    }
}

impl ScenarioRanges {
    pub fn validate(&self) -> Result<()> {
        let [a0, a1] = self.a_range;
        let [s0, s1] = self.speed_range;
        let jr = &self.jammer_region;
        if !(self.arena.is_valid() && jr.is_valid()) {
            return Err(Error::InvalidConfig("arena and jammer region must be nonempty rectangles".into()));
        }
        if !(self.arena.contains(jr.min) && self.arena.contains(jr.max)) {
            return Err(Error::InvalidConfig("jammer region must lie inside the arena".into()));
        }
        if !(0.0 < a0 && a0 < a1 && a1 < 1.0) {
            return Err(Error::InvalidConfig(format!("a_range must be a nonempty interval inside (0, 1), got [{a0}, {a1}]")));
        }
        if !(0.0 <= s0 && s0 <= s1 && s1.is_finite()) {
            return Err(Error::InvalidConfig("speed_range must be a nonnegative interval".into()));
        }
        Ok(())
    }
}

/// Triangular lattice (rows of 1, 2, 3, ... UAVs) with its apex pointing along
/// `heading` and its centroid at `centroid`.
pub fn triangular_formation(n: usize, spacing: f64, centroid: Vec2<f64>, heading: f64) -> Vec<Vec2<f64>> {
    let row_gap = spacing * 3f64.sqrt() / 2.0;
    let mut local = Vec::with_capacity(n);
    let mut row = 0usize;
    while local.len() < n {
        for j in 0..=row {
            if local.len() == n {
                break;
            }
            local.push(Vec2::new(-(row as f64) * row_gap, (j as f64 - row as f64 / 2.0) * spacing));
        }
        row += 1;
    }
    let mean = local.iter().fold(Vec2::zero(), |acc, &p| acc + p) * (1.0 / n.max(1) as f64);
    let (s, c) = heading.sin_cos();
    local
        .into_iter()
        .map(|p| {
            let q = p - mean;
            centroid + Vec2::new(c * q.x - s * q.y, s * q.x + c * q.y)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub field: JammerField<f64>,
    pub swarm: Vec<UavState<f64>>,
}

/// What the generator needs besides the ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Formation {
    pub n: usize,
    pub spacing_rs: f64,
    pub comm_range_d: f64,
    pub p_tau: f64,
    pub k: f64,
}

impl Formation {
    pub fn from_swarm(cfg: &SwarmConfig<f64>, policy: &DisruptionPolicy<f64>, k: f64) -> Self {
        Formation { n: cfg.n, spacing_rs: cfg.spacing_rs, comm_range_d: cfg.comm_range_d, p_tau: policy.p_tau, k }
    }
}

impl Default for Formation {
    fn default() -> Self {
        Formation::from_swarm(&SwarmConfig::default(), &DisruptionPolicy::default(), 1.0)
    }
}

/// Draws a jammer and a jittered triangular swarm with a common velocity,
/// retrying until every UAV is strictly outside the disruption disk.
pub fn sample_scenario(seed: u64, ranges: &ScenarioRanges, formation: &Formation) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = DisruptionPolicy::new(formation.p_tau)?;
    for _ in 0..MAX_REJECTIONS {
        let jammer = ranges.jammer_region.sample(&mut rng);
        let a = rng.gen_range(ranges.a_range[0]..=ranges.a_range[1]);
        let field = JammerField::new(jammer, formation.k, a)?;
        let r_tau = field.critical_radius(&policy)?;

        let centroid = ranges.arena.sample(&mut rng);
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let speed = rng.gen_range(ranges.speed_range[0]..=ranges.speed_range[1]);
        let vel = Vec2::new(heading.cos(), heading.sin()) * speed;
        let swarm: Vec<UavState<f64>> = triangular_formation(formation.n, formation.spacing_rs, centroid, heading)
            .into_iter()
            .enumerate()
            .map(|(id, p)| {
                let jitter = Vec2::new(rng.gen_range(-JITTER_M..=JITTER_M), rng.gen_range(-JITTER_M..=JITTER_M));
                UavState::new(id, p + jitter, vel)
            })
            .collect();
        if swarm.iter().all(|u| u.pos.distance(jammer) > r_tau) {
            return Ok(Scenario { field, swarm });
        }
    }
    Err(Error::RangesIncompatible(MAX_REJECTIONS))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub scenario_seed: u64,
}

/// One labeled instant: raw snapshot, true jammer parameters, provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    #[serde(flatten)]
    pub snapshot: GraphSnapshot<T>,
    pub label: Label<T>,
    pub meta: SampleMeta,
}

impl<T: Scalar> Sample<T> {
    pub fn max_probability(&self) -> T {
        self.snapshot.features.iter().map(|r| r[4]).fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            snapshot: self.snapshot.cast(),
            label: Label::from_array(self.label.to_array().map(|x| U::lit(x.to_f64_lossy()))),
            meta: self.meta,
        }
    }
}

pub fn make_sample(scenario_seed: u64, ranges: &ScenarioRanges, formation: &Formation) -> Result<Sample<f64>> {
    let sc = sample_scenario(scenario_seed, ranges, formation)?;
    Ok(Sample {
        snapshot: GraphSnapshot::capture(&sc.swarm, &sc.field, formation.comm_range_d)?,
        label: Label { xj: sc.field.pos.x, yj: sc.field.pos.y, a: sc.field.decay_a },
        meta: SampleMeta { scenario_seed },
    })
}

/// Samples `indices` of the dataset rooted at `base_seed`; sample `i` uses
/// scenario seed `base_seed + i`, so any sharding reproduces the full run.
pub fn generate_samples(
    base_seed: u64,
    indices: Range<u64>,
    ranges: &ScenarioRanges,
    formation: &Formation,
) -> Result<Vec<Sample<f64>>> {
    ranges.validate()?;
    indices.map(|i| make_sample(base_seed.wrapping_add(i), ranges, formation)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub n: usize,
    pub seed: u64,
    pub ranges: ScenarioRanges,
    pub formation: Formation,
}

pub fn write_dataset(
    mut w: impl Write,
    n: usize,
    seed: u64,
    ranges: &ScenarioRanges,
    formation: &Formation,
) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset needs at least one sample".into()));
    }
    ranges.validate()?;
    let header = DatasetHeader { version: DATASET_VERSION, n, seed, ranges: *ranges, formation: *formation };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for i in 0..n as u64 {
        let sample = make_sample(seed.wrapping_add(i), ranges, formation)?;
        serde_json::to_writer(&mut w, &sample)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn generate_dataset(
    n: usize,
    seed: u64,
    ranges: &ScenarioRanges,
    formation: &Formation,
    out_path: &Path,
) -> Result<()> {
    let file = File::create(out_path)?;
    write_dataset(BufWriter::new(file), n, seed, ranges, formation)
}

pub fn read_dataset_from(r: impl BufRead) -> Result<(DatasetHeader, Vec<Sample<f64>>)> {
    let mut lines = r.lines();
    let header_line = lines.next().transpose()?.ok_or_else(|| Error::MalformedLog("dataset is empty".into()))?;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    if header.version != DATASET_VERSION {
        return Err(Error::MalformedLog(format!("unsupported dataset version {}", header.version)));
    }
    let mut samples = Vec::with_capacity(header.n);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample<f64> = serde_json::from_str(&line)?;
        sample.snapshot.validate()?;
        samples.push(sample);
    }
    if samples.len() != header.n {
        return Err(Error::MalformedLog(format!("header says {} samples, found {}", header.n, samples.len())));
    }
    Ok((header, samples))
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Sample<f64>>)> {
    read_dataset_from(BufReader::new(File::open(path)?))
}
