//! Clohessy-Wiltshire relative motion about a circular chief.
//!
//! Axes follow the orbital frame used for thrust: `x` radial, `y` orbit
//! normal, `z` along-track. Only the normal channel has closed forms here;
//! the coupled in-plane channels are integrated numerically.

use std::io::Write;

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_segment, IntegratorConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeState {
    pub dr: Vector3<f64>,
    pub dv: Vector3<f64>,
    /// Chief mean motion [rad/s].
    pub n: f64,
}

impl RelativeState {
    pub fn new(dr: Vector3<f64>, dv: Vector3<f64>, n: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mean motion must be positive, got {n}"
            )));
        }
        Ok(Self { dr, dv, n })
    }

    pub fn rest(n: f64) -> Result<Self> {
        Self::new(Vector3::zeros(), Vector3::zeros(), n)
    }
}

fn cw_rhs(n: f64, u: &Vector3<f64>, y: &SVector<f64, 6>) -> SVector<f64, 6> {
    let n2 = n * n;
    SVector::<f64, 6>::from_column_slice(&[
        y[3],
        y[4],
        y[5],
        2.0 * n * y[5] + 3.0 * n2 * y[0] + u.x,
        -n2 * y[1] + u.y,
        -2.0 * n * y[3] + u.z,
    ])
}

/// Integrates the linear CW equations under constant thrust `u` for `dt`.
pub fn cw_propagate(rel: &RelativeState, u: &Vector3<f64>, dt: f64) -> Result<RelativeState> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative propagation interval {dt}"
        )));
    }
    let cfg = IntegratorConfig {
        rtol: 1e-13,
        atol_position: 1e-13,
        atol_velocity: 1e-16,
        initial_step: 10.0,
        max_step: 120.0,
        ..IntegratorConfig::default()
    };
    let y0 = SVector::<f64, 6>::from_column_slice(&[
        rel.dr.x, rel.dr.y, rel.dr.z, rel.dv.x, rel.dv.y, rel.dv.z,
    ]);
    let n = rel.n;
    let mut f = |_t: f64, y: &SVector<f64, 6>| Ok(cw_rhs(n, u, y));
    let (mut h, mut steps) = (0.0, 0);
    let y = integrate_segment(&mut f, 0.0, &y0, dt, 6, &cfg, &mut h, &mut steps)?;
    Ok(RelativeState {
        dr: Vector3::new(y[0], y[1], y[2]),
        dv: Vector3::new(y[3], y[4], y[5]),
        n,
    })
}

/// Free normal-channel motion after `dt`.
pub fn cw_normal_free(dr_y0: f64, dv_y0: f64, n: f64, dt: f64) -> (f64, f64) {
    let (s, c) = (n * dt).sin_cos();
    (dv_y0 / n * s + dr_y0 * c, dv_y0 * c - n * dr_y0 * s)
}

/// Normal-channel motion under constant normal thrust `u_y`.
pub fn cw_normal_thrust(dr_y0: f64, dv_y0: f64, u_y: f64, n: f64, dt: f64) -> (f64, f64) {
    let (s, c) = (n * dt).sin_cos();
    let center = u_y / (n * n);
    (
        dv_y0 / n * s + (dr_y0 - center) * c + center,
        dv_y0 * c - (n * dr_y0 - u_y / n) * s,
    )
}

/// Normal thrust `u` acting on `[start, end]`, starting from rest at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPolicy {
    pub start: f64,
    pub end: f64,
    pub u: f64,
}

impl NormalPolicy {
    pub fn new(start: f64, end: f64, u: f64) -> Result<Self> {
        if !(0.0 <= start && start < end) || !u.is_finite() {
            return Err(Error::InvalidInput(format!(
                "normal policy needs 0 <= start < end, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end, u })
    }

    pub fn delta_v(&self) -> f64 {
        (self.end - self.start) * self.u.abs()
    }

    /// Normal-channel state at `t`.
    pub fn state_at(&self, n: f64, t: f64) -> (f64, f64) {
        if t <= self.start {
            return (0.0, 0.0);
        }
        if t <= self.end {
            return cw_normal_thrust(0.0, 0.0, self.u, n, t - self.start);
        }
        let (r, v) = cw_normal_thrust(0.0, 0.0, self.u, n, self.end - self.start);
        cw_normal_free(r, v, n, t - self.end)
    }

    /// Same policy integrated numerically through the full CW system.
    pub fn propagate(&self, n: f64, t: f64) -> Result<RelativeState> {
        let thrust = Vector3::new(0.0, self.u, 0.0);
        let mut rel = RelativeState::rest(n)?;
        let t_on = self.start.min(t);
        let t_off = self.end.min(t);
        rel = cw_propagate(&rel, &Vector3::zeros(), t_on)?;
        rel = cw_propagate(&rel, &thrust, t_off - t_on)?;
        cw_propagate(&rel, &Vector3::zeros(), (t - t_off).max(0.0))
    }
}

/// A second policy that reaches the same normal-channel state as `first` at
/// epoch `at`, by thrusting from rest and cutting off exactly at `at`.
///
/// From rest the forced trajectory is `r = u/n² (1 − cos θ)`,
/// `v = u/n sin θ`, so `tan(θ/2) = n r / v` fixes the arc and then `u`.
pub fn matching_policy(first: &NormalPolicy, n: f64, at: f64) -> Result<NormalPolicy> {
    if at <= first.end {
        return Err(Error::InvalidInput(
            "matching epoch must follow the first burn".into(),
        ));
    }
    let (r, v) = first.state_at(n, at);
    let mut half = (n * r).atan2(v);
    if half <= 0.0 {
        half += std::f64::consts::PI;
    }
    let (s, c) = half.sin_cos();
    if s.abs() < 1e-12 {
        return Err(Error::InvalidInput(
            "target state is the origin of the forced ellipse".into(),
        ));
    }
    let amp = n * r * s + v * c;
    let u = amp * n / (2.0 * s);
    let duration = 2.0 * half / n;
    NormalPolicy::new(at - duration, at, u)
}

/// Samples of a policy's normal-channel trajectory on `[0, end]`.
pub fn phase_plane(policy: &NormalPolicy, n: f64, end: f64, step: f64) -> Vec<(f64, f64, f64)> {
    let count = (end / step).floor() as usize;
    (0..=count)
        .map(|k| {
            let t = k as f64 * step;
            let (r, v) = policy.state_at(n, t);
            (t, r, v)
        })
        .collect()
}

pub fn write_phase_plane<W: Write>(mut w: W, samples: &[(f64, f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "t_s,dr_y_m,dv_y_mps")?;
    for (t, r, v) in samples {
        writeln!(w, "{t:.3},{r:.9e},{v:.9e}")?;
    }
    Ok(())
}
