//! SVG rendering of episode snapshots and loss curves. Output is plain text
//! with fixed float precision so identical logs give identical files.
//!
//! Scene elements carry a `class`: `contour`, `true-disk`, `predicted`,
//! `link`, `uav`, `target`.

use std::fmt::Write;

use crate::episode::{JammerRecord, TickRecord, TrajectoryLog, UavRecord};
use crate::error::{Error, Result};
use crate::gcn::EpochLoss;
use crate::geom::Vec2;

/// Probability levels drawn as contour circles of the true field.
pub const CONTOUR_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

const WIDTH: f64 = 640.0;
const PAD_M: f64 = 20.0;

/// World-to-pixel mapping shared by every frame of one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viewport {
    min: Vec2<f64>,
    max: Vec2<f64>,
    scale: f64,
}

impl Viewport {
    pub fn fit(points: impl IntoIterator<Item = Vec2<f64>>) -> Self {
        let (mut min, mut max) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points.into_iter().filter(|p| p.is_finite()) {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
        if !min.is_finite() {
            min = Vec2::zero();
            max = Vec2::zero();
        }
        let min = min - Vec2::new(PAD_M, PAD_M);
        let max = max + Vec2::new(PAD_M, PAD_M);
        Viewport { min, max, scale: WIDTH / (max.x - min.x).max(max.y - min.y) }
    }

    fn px(&self, p: Vec2<f64>) -> (f64, f64) {
        ((p.x - self.min.x) * self.scale, (self.max.y - p.y) * self.scale)
    }

    fn size(&self) -> (f64, f64) {
        ((self.max.x - self.min.x) * self.scale, (self.max.y - self.min.y) * self.scale)
    }
}

/// One frame's content; `predicted` is absent before any estimate exists.
#[derive(Clone, Debug)]
pub struct Frame<'a> {
    pub t: f64,
    pub uavs: &'a [UavRecord],
    pub edges: &'a [[usize; 2]],
    pub truth: JammerRecord,
    pub predicted: Option<JammerRecord>,
    pub target: Vec2<f64>,
    pub arrive_radius: f64,
    pub k: f64,
}

impl<'a> Frame<'a> {
    pub fn from_tick(tick: &'a TickRecord, log: &TrajectoryLog) -> Self {
        let cfg = &log.header.config;
        Frame {
            t: tick.t,
            uavs: &tick.uavs,
            edges: &tick.edges,
            truth: tick.truth,
            predicted: Some(tick.predicted),
            target: cfg.swarm.target,
            arrive_radius: cfg.swarm.arrive_radius,
            k: cfg.field.k,
        }
    }
}

fn circle(out: &mut String, vp: &Viewport, class: &str, c: Vec2<f64>, r_m: f64, style: &str) {
    let (x, y) = vp.px(c);
    let _ = writeln!(out, r#"  <circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="{:.2}" {style}/>"#, r_m * vp.scale);
}

/// Radius at which `k A^r` equals `p`, if the field ever reaches `p`.
fn contour_radius(k: f64, a: f64, p: f64) -> Option<f64> {
    (p < k).then(|| (p / k).ln() / a.ln())
}

pub fn render_frame(frame: &Frame, vp: &Viewport) -> String {
    let (w, h) = vp.size();
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#);
    let _ = writeln!(s, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    let jammer = Vec2::new(frame.truth.xj, frame.truth.yj);
    for p in CONTOUR_LEVELS {
        if let Some(r) = contour_radius(frame.k, frame.truth.a, p) {
            circle(&mut s, vp, "contour", jammer, r, r#"fill="none" stroke="black" stroke-width="0.6""#);
        }
    }
    circle(&mut s, vp, "true-disk", jammer, frame.truth.r_tau, r#"fill="black""#);
    if let Some(pred) = frame.predicted {
        circle(&mut s, vp, "predicted", Vec2::new(pred.xj, pred.yj), pred.r_tau, r#"fill="none" stroke="red" stroke-width="1.5""#);
    }
    circle(&mut s, vp, "target", frame.target, frame.arrive_radius, r#"fill="none" stroke="green" stroke-width="1.5""#);
    for &[i, j] in frame.edges {
        let (Some(a), Some(b)) = (frame.uavs.get(i), frame.uavs.get(j)) else { continue };
        let ((x1, y1), (x2, y2)) = (vp.px(a.pos), vp.px(b.pos));
        let _ = writeln!(s, r#"  <line class="link" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="blue" stroke-width="1"/>"#);
    }
    for u in frame.uavs {
        let fill = if u.disrupted { "gray" } else { "red" };
        let (x, y) = vp.px(u.pos);
        let _ = writeln!(s, r#"  <circle class="uav" cx="{x:.2}" cy="{y:.2}" r="3.00" fill="{fill}"/>"#);
    }
    let _ = writeln!(s, r#"  <text x="8" y="18" font-family="sans-serif" font-size="14">t = {:.1} s</text>"#, frame.t);
    s.push_str("</svg>\n");
    s
}

/// Index of the tick shown at time `t_want`: the last one not after it
/// (within half a step).
fn tick_at(ticks: &[TickRecord], t_want: f64, dt: f64) -> Option<usize> {
    let n = ticks.partition_point(|r| r.t <= t_want + 0.5 * dt);
    n.checked_sub(1)
}

/// One SVG per snapshot interval from `t = 0` through the final time:
/// `floor(t_final / every) + 1` frames, named `snapshot_000.svg`, ....
/// A log without ticks renders the configured initial state.
pub fn render_episode(log: &TrajectoryLog, every: f64) -> Result<Vec<(String, String)>> {
    if !(every > 0.0 && every.is_finite()) {
        return Err(Error::InvalidConfig("snapshot interval must be positive".into()));
    }
    let cfg = &log.header.config;
    let dt = cfg.swarm.dt;
    let name = |i: usize| format!("snapshot_{i:03}.svg");

    if log.ticks.is_empty() {
        let field = &cfg.field;
        let uavs: Vec<UavRecord> = cfg
            .initial_swarm()
            .iter()
            .map(|u| Ok(UavRecord { pos: u.pos, vel: u.vel, p: field.probability(u.pos)?, disrupted: false }))
            .collect::<Result<_>>()?;
        let r_tau = field.critical_radius(&cfg.policy)?;
        let frame = Frame {
            t: 0.0,
            uavs: &uavs,
            edges: &[],
            truth: JammerRecord { xj: field.pos.x, yj: field.pos.y, a: field.decay_a, r_tau },
            predicted: None,
            target: cfg.swarm.target,
            arrive_radius: cfg.swarm.arrive_radius,
            k: field.k,
        };
        let vp = Viewport::fit(uavs.iter().map(|u| u.pos).chain([cfg.swarm.target, field.pos]));
        return Ok(vec![(name(0), render_frame(&frame, &vp))]);
    }

    let t_final = log.terminal.map_or_else(|| log.ticks.last().map_or(0.0, |r| r.t), |t| t.t_final);
    let frames = (t_final / every + 1e-9).floor() as usize + 1;
    let vp = Viewport::fit(
        log.ticks
            .iter()
            .flat_map(|r| r.uavs.iter().map(|u| u.pos))
            .chain([cfg.swarm.target, cfg.field.pos]),
    );
    (0..frames)
        .map(|i| {
            let idx = tick_at(&log.ticks, i as f64 * every, dt)
                .ok_or_else(|| Error::MalformedLog(format!("no tick at or before t = {}", i as f64 * every)))?;
            Ok((name(i), render_frame(&Frame::from_tick(&log.ticks[idx], log), &vp)))
        })
        .collect()
}

/// Training and validation loss against epoch on a log10 axis.
pub fn render_loss_curve(curve: &[EpochLoss]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    let _ = writeln!(s, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"  <line class="axis" x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
    let _ = writeln!(s, r#"  <line class="axis" x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let logs = curve.iter().flat_map(|e| [e.train_loss, e.val_loss]).filter(|v| *v > 0.0 && v.is_finite()).map(f64::log10);
    let (lo, hi) = logs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        let span = (hi - lo).max(1e-9);
        let last = curve.last().map_or(1, |e| e.epoch).max(1) as f64;
        let x = |epoch: usize| pad + (epoch as f64 / last) * (w - 2.0 * pad);
        let y = |v: f64| (h - pad) - (v.max(1e-300).log10() - lo) / span * (h - 2.0 * pad);
        for (class, color, pick) in [("train", "blue", 0), ("val", "orange", 1)] {
            let pts: Vec<String> = curve
                .iter()
                .map(|e| {
                    let v = if pick == 0 { e.train_loss } else { e.val_loss };
                    format!("{:.2},{:.2}", x(e.epoch), y(v))
                })
                .collect();
            let _ = writeln!(s, r#"  <polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        let _ = writeln!(s, r#"  <text x="{pad}" y="{:.0}" font-family="sans-serif" font-size="12">10^{hi:.2}</text>"#, pad - 6.0);
        let _ = writeln!(s, r#"  <text x="{pad}" y="{:.0}" font-family="sans-serif" font-size="12">10^{lo:.2}</text>"#, h - pad + 16.0);
    }
    let _ = writeln!(s, r#"  <text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="12">epoch</text>"#, w / 2.0, h - 12.0);
    s.push_str("</svg>\n");
    s
}

/// Number of elements carrying `class="<class>"`.
pub fn count_class(svg: &str, class: &str) -> usize {
    svg.matches(&format!(r#"class="{class}""#)).count()
}
