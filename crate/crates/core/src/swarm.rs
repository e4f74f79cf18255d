//! Double-integrator swarm: flocking control, potential-field avoidance of a
//! predicted danger disk, and the semi-implicit Euler step that freezes any
//! UAV entering the true disruption disk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::jamfield::{DisruptionPolicy, JammerField};
use crate::num::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavState<T> {
    pub id: usize,
    pub pos: Vec2<T>,
    pub vel: Vec2<T>,
    pub disrupted: bool,
}

impl<T: Scalar> UavState<T> {
    pub fn new(id: usize, pos: Vec2<T>, vel: Vec2<T>) -> Self {
        UavState { id, pos, vel, disrupted: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Gains<T> {
    /// Cohesion (spacing spring).
    pub k_c: T,
    /// Velocity alignment.
    pub k_a: T,
    /// Goal seeking.
    pub k_g: T,
    /// Velocity damping.
    pub k_d: T,
    /// Radial avoidance.
    pub k_r: T,
    /// Tangential avoidance.
    pub k_r_t: T,
}

impl<T: Scalar> Default for Gains<T> {
    fn default() -> Self {
        Gains {
            k_c: T::lit(0.02),
            k_a: T::lit(0.5),
            k_g: T::lit(0.3),
            k_d: T::lit(0.6),
            k_r: T::lit(4000.0),
            k_r_t: T::lit(600.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SwarmConfig<T> {
    pub n: usize,
    pub comm_range_d: T,
    pub spacing_rs: T,
    pub v_max: T,
    pub a_max: T,
    pub dt: T,
    pub target: Vec2<T>,
    pub gains: Gains<T>,
    pub arrive_radius: T,
}

impl<T: Scalar> Default for SwarmConfig<T> {
    fn default() -> Self {
        SwarmConfig {
            n: 6,
            comm_range_d: T::lit(20.0),
            spacing_rs: T::lit(24.0),
            v_max: T::lit(5.0),
            a_max: T::lit(2.0),
            dt: T::lit(0.1),
            target: Vec2::new(T::lit(170.0), T::lit(100.0)),
            gains: Gains::default(),
            arrive_radius: T::lit(5.0),
        }
    }
}

impl<T: Scalar> SwarmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gains;
        let gains_ok = [g.k_c, g.k_a, g.k_g, g.k_d, g.k_r, g.k_r_t].iter().all(|&k| k >= T::zero());
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("swarm needs at least 2 UAVs, got {}", self.n)));
        }
        if !(self.spacing_rs > T::zero()
            && self.comm_range_d > T::zero()
            && self.dt > T::zero()
            && self.v_max > T::zero()
            && self.a_max > T::zero()
            && self.arrive_radius > T::zero())
        {
            return Err(Error::InvalidConfig(
                "spacing, range, dt, speed/accel limits and arrive radius must be positive".into(),
            ));
        }
        if !gains_ok {
            return Err(Error::InvalidConfig("control gains must be nonnegative".into()));
        }
        if !self.target.is_finite() {
            return Err(Error::InvalidConfig("target is not finite".into()));
        }
        Ok(())
    }
}

/// Predicted no-fly disk around an estimated jammer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DangerDisk<T> {
    pub center: Vec2<T>,
    pub radius: T,
    pub inflation: T,
    pub margin: T,
}

impl<T: Scalar> DangerDisk<T> {
    pub fn new(center: Vec2<T>, radius: T, inflation: T, margin: T) -> Result<Self> {
        if !(radius > T::zero() && inflation >= T::one() && margin >= T::zero() && center.is_finite()) {
            return Err(Error::Domain(format!(
                "invalid danger disk: radius {radius}, inflation {inflation}, margin {margin}"
            )));
        }
        Ok(DangerDisk { center, radius, inflation, margin })
    }

    pub fn avoid_radius(&self) -> T {
        self.radius * self.inflation
    }

    /// Influence radius of the avoidance field.
    pub fn alert_radius(&self) -> T {
        self.avoid_radius() + self.margin
    }
}

/// Flocking law with the default cohesion strength.
pub fn flocking_accel<T: Scalar>(swarm: &[UavState<T>], cfg: &SwarmConfig<T>) -> Result<Vec<Vec2<T>>> {
    flocking_accel_scaled(swarm, cfg, T::one())
}

/// Spring-spacing cohesion, velocity alignment, goal attraction and damping,
/// each UAV clamped to `a_max`. `cohesion_scale` multiplies `k_c` (dispersal
/// uses 0.25). Neighborhoods contain operational UAVs strictly within the
/// communication range.
pub fn flocking_accel_scaled<T: Scalar>(
    swarm: &[UavState<T>],
    cfg: &SwarmConfig<T>,
    cohesion_scale: T,
) -> Result<Vec<Vec2<T>>> {
    let g = &cfg.gains;
    let k_c = g.k_c * cohesion_scale;
    let mut out = Vec::with_capacity(swarm.len());
    for (i, me) in swarm.iter().enumerate() {
        if me.disrupted {
            out.push(Vec2::zero());
            continue;
        }
        let mut spring = Vec2::zero();
        let mut vel_sum = Vec2::zero();
        let mut count = 0usize;
        for (j, other) in swarm.iter().enumerate() {
            if i == j || other.disrupted {
                continue;
            }
            let offset = other.pos - me.pos;
            let dist = offset.norm();
            if dist == T::zero() {
                return Err(Error::CoincidentPositions(i.min(j), i.max(j)));
            }
            if dist < cfg.comm_range_d {
                spring += offset * (T::one() - cfg.spacing_rs / dist);
                vel_sum += other.vel;
                count += 1;
            }
        }
        let mut a = spring * k_c + (cfg.target - me.pos) * g.k_g - me.vel * g.k_d;
        if count > 0 {
            let mean_vel = vel_sum * (T::one() / T::lit(count as f64));
            a += (mean_vel - me.vel) * g.k_a;
        }
        out.push(a.clamp_norm(cfg.a_max));
    }
    Ok(out)
}

/// Inverse-distance repulsion from the danger disk plus a tangential slide
/// toward the side facing the target. Zero at and beyond the alert radius.
pub fn avoidance_accel<T: Scalar>(
    state: &UavState<T>,
    disk: &DangerDisk<T>,
    cfg: &SwarmConfig<T>,
) -> Result<Vec2<T>> {
    let offset = state.pos - disk.center;
    let rho = offset.norm();
    let rho0 = disk.alert_radius();
    if rho >= rho0 {
        return Ok(Vec2::zero());
    }
    if rho == T::zero() {
        return Err(Error::Singularity("UAV at the predicted jammer center"));
    }
    let radial = offset * (T::one() / rho);
    let ccw = radial.perp();
    let to_target = cfg.target - state.pos;
    // ties go counterclockwise
    let tangential = if (-ccw).dot(to_target) > ccw.dot(to_target) { -ccw } else { ccw };
    let excess = T::one() / rho - T::one() / rho0;
    let a = radial * (cfg.gains.k_r * excess / (rho * rho)) + tangential * (cfg.gains.k_r_t * excess);
    Ok(a.clamp_norm(cfg.a_max))
}

/// Combines avoidance and flocking within one `a_max` budget, avoidance first:
/// flocking only gets whatever magnitude the avoidance term leaves unused.
pub fn blend_accel<T: Scalar>(avoid: Vec2<T>, flock: Vec2<T>, a_max: T) -> Vec2<T> {
    let avoid = avoid.clamp_norm(a_max);
    let budget = (a_max - avoid.norm()).max(T::zero());
    avoid + flock.clamp_norm(budget)
}

/// Semi-implicit Euler step. Operational UAVs integrate `v += a dt` (clamped to
/// `v_max`) then `p += v dt`; any that end inside the true disk freeze for good.
pub fn step<T: Scalar>(
    swarm: &[UavState<T>],
    accels: &[Vec2<T>],
    field: &JammerField<T>,
    policy: &DisruptionPolicy<T>,
    cfg: &SwarmConfig<T>,
) -> Result<Vec<UavState<T>>> {
    if accels.len() != swarm.len() {
        return Err(Error::Shape(format!("{} accelerations for {} UAVs", accels.len(), swarm.len())));
    }
    swarm
        .iter()
        .zip(accels)
        .map(|(uav, &a)| {
            if uav.disrupted {
                return Ok(*uav);
            }
            if !a.is_finite() {
                return Err(Error::Domain(format!("non-finite acceleration for UAV {}", uav.id)));
            }
            let vel = (uav.vel + a * cfg.dt).clamp_norm(cfg.v_max);
            let pos = uav.pos + vel * cfg.dt;
            if field.is_disrupted(policy, pos)? {
                Ok(UavState { id: uav.id, pos, vel: Vec2::zero(), disrupted: true })
            } else {
                Ok(UavState { id: uav.id, pos, vel, disrupted: false })
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmMetrics<T> {
    pub connected: bool,
    pub min_pairwise_dist: T,
    pub max_dist_to_target: T,
    pub any_disrupted: bool,
}

/// Whether the operational UAVs form one component under the strict `< d`
/// link rule. An empty or single-UAV operational set counts as connected.
pub fn is_connected<T: Scalar>(swarm: &[UavState<T>], d: T) -> bool {
    let live: Vec<usize> = (0..swarm.len()).filter(|&i| !swarm[i].disrupted).collect();
    if live.len() <= 1 {
        return true;
    }
    let mut seen = vec![false; swarm.len()];
    let mut stack = vec![live[0]];
    seen[live[0]] = true;
    while let Some(i) = stack.pop() {
        for &j in &live {
            if !seen[j] && swarm[i].pos.distance(swarm[j].pos) < d {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    live.iter().all(|&i| seen[i])
}

pub fn swarm_metrics<T: Scalar>(swarm: &[UavState<T>], cfg: &SwarmConfig<T>) -> SwarmMetrics<T> {
    let mut min_pairwise = T::infinity();
    for i in 0..swarm.len() {
        for j in i + 1..swarm.len() {
            min_pairwise = min_pairwise.min(swarm[i].pos.distance(swarm[j].pos));
        }
    }
    let max_to_target = swarm.iter().map(|u| u.pos.distance(cfg.target)).fold(T::zero(), T::max);
    SwarmMetrics {
        connected: is_connected(swarm, cfg.comm_range_d),
        min_pairwise_dist: min_pairwise,
        max_dist_to_target: max_to_target,
        any_disrupted: swarm.iter().any(|u| u.disrupted),
    }
}
