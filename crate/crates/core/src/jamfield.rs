//! Closed-form jamming field: disruption probability `P = k A^r`, its rate of
//! change along a trajectory, and the critical radius where `P` reaches the
//! disruption threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::num::Scalar;

/// Ground-truth jammer: center, amplitude constant `k` and decay constant `A`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JammerField<T> {
    pub pos: Vec2<T>,
    pub k: T,
    pub decay_a: T,
}

/// Probability at or above which a UAV's link is considered lost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisruptionPolicy<T> {
    pub p_tau: T,
}

impl<T: Scalar> DisruptionPolicy<T> {
    pub fn new(p_tau: T) -> Result<Self> {
        if !(p_tau > T::zero() && p_tau < T::one()) {
            return Err(Error::Domain(format!("p_tau must lie in (0, 1), got {p_tau}")));
        }
        Ok(DisruptionPolicy { p_tau })
    }
}

impl<T: Scalar> Default for DisruptionPolicy<T> {
    fn default() -> Self {
        DisruptionPolicy { p_tau: T::lit(0.5) }
    }
}

impl<T: Scalar> JammerField<T> {
    pub fn new(pos: Vec2<T>, k: T, decay_a: T) -> Result<Self> {
        let field = JammerField { pos, k, decay_a };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pos.is_finite() {
            return Err(Error::Domain("jammer position is not finite".into()));
        }
        if !(self.k > T::zero() && self.k <= T::one()) {
            return Err(Error::Domain(format!("k must lie in (0, 1], got {}", self.k)));
        }
        if !(self.decay_a > T::zero() && self.decay_a < T::one()) {
            return Err(Error::Domain(format!("A must lie in (0, 1), got {}", self.decay_a)));
        }
        Ok(())
    }

    /// `k A^r` for a distance `r >= 0` from the jammer center.
    pub fn probability_at_distance(&self, r: T) -> T {
        self.k * self.decay_a.powf(r)
    }

    pub fn probability(&self, pos: Vec2<T>) -> Result<T> {
        if !pos.is_finite() {
            return Err(Error::Domain("position is not finite".into()));
        }
        Ok(self.probability_at_distance(pos.distance(self.pos)))
    }

    /// Time derivative of `P` for a UAV at `pos` moving with velocity `vel`:
    /// `P(r) ln(A) (dp . v) / r`.
    pub fn probability_rate(&self, pos: Vec2<T>, vel: Vec2<T>) -> Result<T> {
        if !pos.is_finite() || !vel.is_finite() {
            return Err(Error::Domain("position or velocity is not finite".into()));
        }
        let delta = pos - self.pos;
        let r = delta.norm();
        if r == T::zero() {
            return Err(Error::Singularity("probability rate at the jammer center"));
        }
        let p = self.probability_at_distance(r);
        Ok(p * self.decay_a.ln() * delta.dot(vel) / r)
    }

    /// Distance at which `P` equals `p_tau`: `ln(p_tau / k) / ln(A)`.
    pub fn critical_radius(&self, policy: &DisruptionPolicy<T>) -> Result<T> {
        if policy.p_tau >= self.k {
            return Err(Error::ThresholdUnreachable {
                p_tau: policy.p_tau.to_f64_lossy(),
                k: self.k.to_f64_lossy(),
            });
        }
        Ok((policy.p_tau / self.k).ln() / self.decay_a.ln())
    }

    /// A point on the disk boundary counts as disrupted.
    pub fn is_disrupted(&self, policy: &DisruptionPolicy<T>, pos: Vec2<T>) -> Result<bool> {
        let r = pos.distance(self.pos);
        if self.probability(pos)? >= policy.p_tau {
            return Ok(true);
        }
        // `P >= p_tau` and `r <= r_tau` can disagree by an ulp at the boundary.
        match self.critical_radius(policy) {
            Ok(r_tau) => Ok(r <= r_tau),
            Err(_) => Ok(false),
        }
    }
}
