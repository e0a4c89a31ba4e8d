use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::frame::{rotated_thrust_partials, rotation};
use super::{InertialState, ManeuverPolicy, EARTH_RADIUS, J2_EARTH, MU_EARTH};
use crate::{Error, Result};

/// Zonal harmonics included in the gravity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zonal {
    /// Central force only.
    TwoBody,
    /// Central force plus the J2 oblateness term.
    J2,
}

impl Zonal {
    pub fn degree(self) -> u8 {
        match self {
            Zonal::TwoBody => 0,
            Zonal::J2 => 2,
        }
    }

    pub fn from_degree(degree: u8) -> Result<Self> {
        match degree {
            0 => Ok(Zonal::TwoBody),
            2 => Ok(Zonal::J2),
            d => Err(Error::InvalidInput(format!(
                "zonal degree must be 0 or 2, got {d}"
            ))),
        }
    }
}

/// Gravity model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceModel {
    /// Gravitational parameter [m³/s²].
    pub mu: f64,
    pub zonal: Zonal,
    pub j2: f64,
    /// Equatorial radius [m].
    pub earth_radius: f64,
}

impl ForceModel {
    pub fn two_body() -> Self {
        Self {
            mu: MU_EARTH,
            zonal: Zonal::TwoBody,
            j2: J2_EARTH,
            earth_radius: EARTH_RADIUS,
        }
    }

    pub fn j2() -> Self {
        Self {
            zonal: Zonal::J2,
            ..Self::two_body()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gravitational parameter must be positive, got {}",
                self.mu
            )));
        }
        if !(self.earth_radius > 0.0) {
            return Err(Error::InvalidInput("earth radius must be positive".into()));
        }
        Ok(())
    }

    /// Gravitational acceleration at `r`.
    pub fn gravity(&self, r: &Vector3<f64>) -> Vector3<f64> {
        let r2 = r.norm_squared();
        let rn = r2.sqrt();
        let mut a = -self.mu / (r2 * rn) * r;
        if self.zonal == Zonal::J2 {
            let k = 1.5 * self.j2 * self.mu * self.earth_radius * self.earth_radius;
            let r5 = r2 * r2 * rn;
            let zz = 5.0 * r.z * r.z / r2;
            a += k / r5 * Vector3::new(r.x * (zz - 1.0), r.y * (zz - 1.0), r.z * (zz - 3.0));
        }
        a
    }
}

impl Default for ForceModel {
    fn default() -> Self {
        Self::two_body()
    }
}

/// Total acceleration: gravity plus the rotated VVLH thrust when the policy
/// window contains the state epoch.
pub fn acceleration(
    state: &InertialState,
    cfg: &ForceModel,
    policy: Option<&ManeuverPolicy>,
) -> Result<Vector3<f64>> {
    let mut a = cfg.gravity(&state.r);
    if let Some(p) = policy {
        if p.is_active(state.epoch) {
            a += rotation(&state.r, &state.v)? * p.thrust;
        }
    }
    Ok(a)
}

/// `∂g/∂r` for the configured gravity field.
pub fn gravity_gradient(r: &Vector3<f64>, cfg: &ForceModel) -> Matrix3<f64> {
    let r2 = r.norm_squared();
    let rn = r2.sqrt();
    let r3 = r2 * rn;
    let r_hat = r / rn;
    let mut g = cfg.mu / r3 * (3.0 * r_hat * r_hat.transpose() - Matrix3::identity());
    if cfg.zonal == Zonal::J2 {
        let k = 1.5 * cfg.j2 * cfg.mu * cfg.earth_radius * cfg.earth_radius;
        let r5 = r3 * r2;
        let r7 = r5 * r2;
        let r9 = r7 * r2;
        let z = r.z;
        let f = 5.0 * z * z / r7 - 1.0 / r5;
        let h = 5.0 * z * z / r7 - 3.0 / r5;
        let mut df = Vector3::zeros();
        let mut dh = Vector3::zeros();
        for i in 0..3 {
            let common = -35.0 * z * z * r[i] / r9;
            df[i] = common + 5.0 * r[i] / r7;
            dh[i] = common + 15.0 * r[i] / r7;
        }
        df.z += 10.0 * z / r7;
        dh.z += 10.0 * z / r7;
        let mut jac = Matrix3::zeros();
        for i in 0..3 {
            jac[(0, i)] = r.x * df[i];
            jac[(1, i)] = r.y * df[i];
            jac[(2, i)] = r.z * dh[i];
        }
        jac[(0, 0)] += f;
        jac[(1, 1)] += f;
        jac[(2, 2)] += h;
        g += k * jac;
    }
    g
}

/// Partials `(∂(C u)/∂r, ∂(C u)/∂v)` of the rotated thrust acceleration.
pub fn thrust_partials(
    state: &InertialState,
    thrust: &Vector3<f64>,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    rotated_thrust_partials(&state.r, &state.v, thrust)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Epoch;

    #[test]
    fn central_force_on_x_axis() {
        let cfg = ForceModel::two_body();
        let a = cfg.gravity(&Vector3::new(7e6, 0.0, 0.0));
        assert!((a.x + cfg.mu / 49e12).abs() < 1e-15);
        assert_eq!(a.y, 0.0);
        assert_eq!(a.z, 0.0);
    }

    #[test]
    fn thrust_only_inside_window() {
        let cfg = ForceModel::two_body();
        let p = ManeuverPolicy::new(
            Epoch::from_seconds(10.0),
            Epoch::from_seconds(20.0),
            Vector3::new(1e-3, 0.0, 0.0),
        )
        .unwrap();
        let mut s = InertialState::new(
            Epoch::from_seconds(10.0),
            Vector3::new(7e6, 0.0, 0.0),
            Vector3::new(0.0, 7.5e3, 0.0),
        );
        let bare = acceleration(&s, &cfg, None).unwrap();
        assert_eq!(acceleration(&s, &cfg, Some(&p)).unwrap(), bare);
        s.epoch = Epoch::from_seconds(25.0);
        assert_eq!(acceleration(&s, &cfg, Some(&p)).unwrap(), bare);
        s.epoch = Epoch::from_seconds(15.0);
        let on = acceleration(&s, &cfg, Some(&p)).unwrap();
        assert!((on - bare - Vector3::new(0.0, 1e-3, 0.0)).norm() < 1e-18);
    }

    /// Textbook J2 perturbation, `a = -3/2 J2 mu Re² / r⁴` along the radius
    /// at the equator and `+3 J2 mu Re² / r⁴` (outward) at the pole.
    #[test]
    fn j2_term_at_equator_and_pole() {
        let cfg = ForceModel::j2();
        let r: f64 = 7.0e6;
        let k = cfg.j2 * cfg.mu * cfg.earth_radius.powi(2) / r.powi(4);

        let eq = cfg.gravity(&Vector3::new(r, 0.0, 0.0));
        let kepler = -cfg.mu / (r * r);
        assert!((eq.x - (kepler - 1.5 * k)).abs() < 1e-14 * kepler.abs());
        assert_eq!(eq.z, 0.0);

        let pole = cfg.gravity(&Vector3::new(0.0, 0.0, r));
        assert!((pole.z - (kepler + 3.0 * k)).abs() < 1e-14 * kepler.abs());
        assert_eq!(pole.x, 0.0);
    }

    #[test]
    fn gravity_gradient_matches_finite_differences() {
        let r = Vector3::new(4.1e6, -2.7e6, 4.6e6);
        for cfg in [ForceModel::two_body(), ForceModel::j2()] {
            let g = gravity_gradient(&r, &cfg);
            for j in 0..3 {
                let mut e = Vector3::zeros();
                e[j] = 1.0;
                let fd = (cfg.gravity(&(r + e)) - cfg.gravity(&(r - e))) / 2.0;
                assert!((fd - g.column(j)).norm() < 1e-7 * g.norm(), "column {j}");
            }
            assert!((g - g.transpose()).norm() < 1e-12 * g.norm());
        }
    }

    #[test]
    fn zonal_degree_validation() {
        assert_eq!(Zonal::from_degree(0).unwrap(), Zonal::TwoBody);
        assert_eq!(Zonal::from_degree(2).unwrap().degree(), 2);
        assert!(Zonal::from_degree(3).is_err());
    }
}
