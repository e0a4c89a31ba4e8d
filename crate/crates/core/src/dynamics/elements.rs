use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Epoch, InertialState};
use crate::{Error, Result};

/// Classical Keplerian elements in the units used by scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitalElements {
    /// Semi-major axis [km].
    pub a_km: f64,
    pub e: f64,
    /// Inclination [deg].
    pub i_deg: f64,
    /// Right ascension of the ascending node [deg].
    pub raan_deg: f64,
    /// Argument of perigee [deg].
    pub argp_deg: f64,
    /// Mean anomaly [deg].
    pub mean_anomaly_deg: f64,
}

impl OrbitalElements {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_km > 0.0) {
            return Err(Error::InvalidElements(format!(
                "semi-major axis must be positive, got {} km",
                self.a_km
            )));
        }
        if !(0.0..1.0).contains(&self.e) {
            return Err(Error::InvalidElements(format!(
                "eccentricity must lie in [0, 1), got {}",
                self.e
            )));
        }
        Ok(())
    }
}

fn wrap_deg(x: f64) -> f64 {
    let w = x.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Solves Kepler's equation `M = E - e sin E` for the eccentric anomaly.
fn eccentric_anomaly(mean: f64, e: f64) -> f64 {
    let m = mean.rem_euclid(TAU);
    let mut ecc = if e < 0.8 { m } else { std::f64::consts::PI };
    for _ in 0..50 {
        let f = ecc - e * ecc.sin() - m;
        let step = f / (1.0 - e * ecc.cos());
        ecc -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    ecc
}

/// Perifocal-to-ECI rotation for the given angles [rad].
fn perifocal_to_eci(raan: f64, inc: f64, argp: f64) -> Matrix3<f64> {
    let (so, co) = raan.sin_cos();
    let (si, ci) = inc.sin_cos();
    let (sw, cw) = argp.sin_cos();
    Matrix3::new(
        co * cw - so * sw * ci,
        -co * sw - so * cw * ci,
        so * si,
        so * cw + co * sw * ci,
        -so * sw + co * cw * ci,
        -co * si,
        sw * si,
        cw * si,
        ci,
    )
}

/// Keplerian elements to an ECI state at `epoch`.
pub fn elements_to_state(el: &OrbitalElements, mu: f64, epoch: Epoch) -> Result<InertialState> {
    el.validate()?;
    let a = el.a_km * 1e3;
    let e = el.e;
    let ecc = eccentric_anomaly(el.mean_anomaly_deg.to_radians(), e);
    let (se, ce) = ecc.sin_cos();
    let root = (1.0 - e * e).sqrt();
    let r_pf = Vector3::new(a * (ce - e), a * root * se, 0.0);
    let rate = (mu / a).sqrt() / (1.0 - e * ce);
    let v_pf = Vector3::new(-rate * se, rate * root * ce, 0.0);
    let rot = perifocal_to_eci(
        el.raan_deg.to_radians(),
        el.i_deg.to_radians(),
        el.argp_deg.to_radians(),
    );
    Ok(InertialState::new(epoch, rot * r_pf, rot * v_pf))
}

/// ECI state to Keplerian elements.
///
/// Circular orbits take the argument of perigee as zero and equatorial orbits
/// take the node at the x-axis, so the round trip stays well defined.
pub fn state_to_elements(state: &InertialState, mu: f64) -> Result<OrbitalElements> {
    let r = state.r;
    let v = state.v;
    let rn = r.norm();
    let h = r.cross(&v);
    let hn = h.norm();
    if hn <= 1e-12 * rn * v.norm() {
        return Err(Error::DegenerateFrame);
    }
    let energy = state.energy(mu);
    if energy >= 0.0 {
        return Err(Error::InvalidElements("state is not bound (e >= 1)".into()));
    }
    let a = -mu / (2.0 * energy);
    let e_vec = v.cross(&h) / mu - r / rn;
    let e = e_vec.norm();
    let inc = (h.z / hn).clamp(-1.0, 1.0).acos();

    let node = Vector3::new(-h.y, h.x, 0.0);
    let nn = node.norm();
    let equatorial = nn < 1e-12 * hn;
    let raan = if equatorial {
        0.0
    } else {
        node.y.atan2(node.x)
    };
    let node_dir = if equatorial { Vector3::x() } else { node / nn };
    // In-plane axis 90 degrees ahead of the node.
    let across = h.cross(&node_dir) / hn;

    let circular = e < 1e-11;
    let argp = if circular {
        0.0
    } else {
        e_vec.dot(&across).atan2(e_vec.dot(&node_dir))
    };
    // Argument of latitude of the position, then true anomaly from perigee.
    let u = r.dot(&across).atan2(r.dot(&node_dir));
    let nu = u - argp;
    let ecc_anom = ((1.0 - e * e).sqrt() * nu.sin()).atan2(e + nu.cos());
    let mean = ecc_anom - e * ecc_anom.sin();

    Ok(OrbitalElements {
        a_km: a / 1e3,
        e,
        i_deg: wrap_deg(inc.to_degrees()),
        raan_deg: wrap_deg(raan.to_degrees()),
        argp_deg: wrap_deg(argp.to_degrees()),
        mean_anomaly_deg: wrap_deg(mean.to_degrees()),
    })
}
