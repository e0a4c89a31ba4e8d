//! Orbital states, force models and numerical propagation.

mod elements;
mod force;
mod frame;
mod integrator;
mod propagate;
mod variational;

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Sub};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use elements::{elements_to_state, state_to_elements, OrbitalElements};
pub use force::{acceleration, gravity_gradient, thrust_partials, ForceModel, Zonal};
pub use frame::vvlh_rotation;
pub(crate) use integrator::integrate_segment;
pub use integrator::IntegratorConfig;
pub use propagate::{apply_impulse, propagate, Propagator};
pub use variational::{propagate_variational, sensitivity_between, stm_between, VariationalState};

/// Earth gravitational parameter [m³/s²].
pub const MU_EARTH: f64 = 3.986_004_418e14;
/// Earth equatorial radius [m].
pub const EARTH_RADIUS: f64 = 6_378_137.0;
/// Unnormalized J2 zonal coefficient.
pub const J2_EARTH: f64 = 1.082_626_68e-3;

/// Seconds relative to a scenario reference instant.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Epoch(f64);

impl Epoch {
    pub const fn from_seconds(seconds: f64) -> Self {
        Epoch(seconds)
    }

    pub const fn seconds(self) -> f64 {
        self.0
    }
}

impl PartialEq for Epoch {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Epoch {}

impl PartialOrd for Epoch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Epoch {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for Epoch {
    type Output = Epoch;
    fn add(self, dt: f64) -> Epoch {
        Epoch(self.0 + dt)
    }
}

impl Sub<f64> for Epoch {
    type Output = Epoch;
    fn sub(self, dt: f64) -> Epoch {
        Epoch(self.0 - dt)
    }
}

impl Sub for Epoch {
    type Output = f64;
    fn sub(self, other: Epoch) -> f64 {
        self.0 - other.0
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} s", self.0)
    }
}

/// Epoch-stamped ECI position [m] and velocity [m/s].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertialState {
    pub epoch: Epoch,
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl InertialState {
    pub fn new(epoch: Epoch, r: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { epoch, r, v }
    }

    /// Specific two-body energy [m²/s²].
    pub fn energy(&self, mu: f64) -> f64 {
        0.5 * self.v.norm_squared() - mu / self.r.norm()
    }

    pub(crate) fn to_array(self) -> [f64; 6] {
        [self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z]
    }

    pub(crate) fn from_slice(epoch: Epoch, y: &[f64]) -> Self {
        Self {
            epoch,
            r: Vector3::new(y[0], y[1], y[2]),
            v: Vector3::new(y[3], y[4], y[5]),
        }
    }
}

/// Constant VVLH thrust acceleration applied on `(start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverPolicy {
    pub start: Epoch,
    pub end: Epoch,
    /// Thrust acceleration in VVLH [m/s²].
    pub thrust: Vector3<f64>,
}

impl ManeuverPolicy {
    pub fn new(start: Epoch, end: Epoch, thrust: Vector3<f64>) -> Result<Self> {
        if !(start < end) {
            return Err(Error::InvalidInput(format!(
                "burn start {start} must precede burn end {end}"
            )));
        }
        Ok(Self { start, end, thrust })
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> Epoch {
        self.start + 0.5 * self.duration()
    }

    /// Total velocity increment, `duration * |u|`.
    pub fn delta_v(&self) -> f64 {
        self.duration() * self.thrust.norm()
    }

    /// Whether thrust acts at `t` under the `t_b < t <= t_f` convention.
    pub fn is_active(&self, t: Epoch) -> bool {
        self.start < t && t <= self.end
    }
}

/// Instantaneous ECI velocity change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulsiveManeuver {
    pub epoch: Epoch,
    pub delta_v: Vector3<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_ordering_and_arithmetic() {
        let a = Epoch::from_seconds(10.0);
        let b = a + 2.5;
        assert!(a < b);
        assert_eq!(b - a, 2.5);
        assert_eq!(b - 2.5, a);
        let mut v = vec![b, a, Epoch::from_seconds(-1.0)];
        v.sort();
        assert_eq!(v[0].seconds(), -1.0);
    }

    #[test]
    fn policy_window_is_half_open_at_start() {
        let p = ManeuverPolicy::new(
            Epoch::from_seconds(100.0),
            Epoch::from_seconds(200.0),
            Vector3::new(1e-3, 0.0, 0.0),
        )
        .unwrap();
        assert!(!p.is_active(Epoch::from_seconds(100.0)));
        assert!(p.is_active(Epoch::from_seconds(100.5)));
        assert!(p.is_active(Epoch::from_seconds(200.0)));
        assert!(!p.is_active(Epoch::from_seconds(200.5)));
        assert!((p.delta_v() - 0.1).abs() < 1e-15);
        assert!(ManeuverPolicy::new(p.end, p.start, p.thrust).is_err());
    }
}
