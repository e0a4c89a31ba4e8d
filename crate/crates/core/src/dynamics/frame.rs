use nalgebra::{Matrix3, Vector3};

use super::InertialState;
use crate::{Error, Result};

/// Rotation from VVLH to ECI for the given state.
///
/// Columns are the VVLH axes expressed in ECI: `Z = -r/|r|`,
/// `Y = -(r x v)/|r x v|` and `X = Y x Z`, which points along the velocity
/// for a circular orbit.
pub fn vvlh_rotation(state: &InertialState) -> Result<Matrix3<f64>> {
    rotation(&state.r, &state.v)
}

pub(crate) fn rotation(r: &Vector3<f64>, v: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let rn = r.norm();
    let h = r.cross(v);
    let hn = h.norm();
    if !(hn > 1e-10 * rn * v.norm()) || rn == 0.0 {
        return Err(Error::DegenerateFrame);
    }
    let z = -r / rn;
    let y = -h / hn;
    let x = y.cross(&z);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Partials of the ECI thrust acceleration `C(r, v) u` with respect to
/// position and velocity.
pub(crate) fn rotated_thrust_partials(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    u: &Vector3<f64>,
) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let rn = r.norm();
    let h = r.cross(v);
    let hn = h.norm();
    if !(hn > 1e-10 * rn * v.norm()) {
        return Err(Error::DegenerateFrame);
    }
    let r_hat = r / rn;
    let h_hat = h / hn;
    let proj_r = (Matrix3::identity() - r_hat * r_hat.transpose()) / rn;
    let proj_h = (Matrix3::identity() - h_hat * h_hat.transpose()) / hn;
    let vx = v.cross_matrix();
    let rx = r.cross_matrix();
    let r_hat_x = r_hat.cross_matrix();
    let h_hat_x = h_hat.cross_matrix();

    // X = h_hat x r_hat, Y = -h_hat, Z = -r_hat; dh = -[v]x dr + [r]x dv.
    let dx_dr = r_hat_x * proj_h * vx + h_hat_x * proj_r;
    let dx_dv = -(r_hat_x * proj_h * rx);
    let dy_dr = proj_h * vx;
    let dy_dv = -(proj_h * rx);
    let dz_dr = -proj_r;

    let d_dr = dx_dr * u.x + dy_dr * u.y + dz_dr * u.z;
    let d_dv = dx_dv * u.x + dy_dv * u.y;
    Ok((d_dr, d_dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Epoch;
    use proptest::prelude::*;

    #[test]
    fn axis_aligned_case() {
        let s = InertialState::new(
            Epoch::default(),
            Vector3::new(7e6, 0.0, 0.0),
            Vector3::new(0.0, 7.5e3, 0.0),
        );
        let c = vvlh_rotation(&s).unwrap();
        assert!((c.column(2) - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((c.column(1) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((c.column(0) - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn circular_orbit_x_axis_is_velocity() {
        let r = Vector3::new(4e6, -5e6, 2e6);
        let n = Vector3::new(0.3, 0.4, 0.2).normalize();
        let v = n.cross(&r).normalize() * 7.3e3;
        let c = rotation(&r, &v).unwrap();
        let x = c.column(0);
        assert!((x.dot(&v) / v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_position_velocity_is_degenerate() {
        let r = Vector3::new(7e6, 0.0, 0.0);
        assert!(matches!(
            rotation(&r, &(r * 1e-3)),
            Err(Error::DegenerateFrame)
        ));
    }

    #[test]
    fn thrust_partials_match_finite_differences() {
        let r = Vector3::new(5.1e6, -3.2e6, 3.9e6);
        let v = Vector3::new(2.1e3, 5.5e3, 1.7e3);
        let u = Vector3::new(3e-3, -2e-3, 1e-3);
        let f = |r: &Vector3<f64>, v: &Vector3<f64>| rotation(r, v).unwrap() * u;
        let (ar, av) = rotated_thrust_partials(&r, &v, &u).unwrap();
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = 10.0;
            let fd = (f(&(r + e), &v) - f(&(r - e), &v)) / 20.0;
            assert!(
                (fd - ar.column(j)).norm() < 1e-6 * ar.norm() + 1e-20,
                "dr {j}"
            );
            let mut e = Vector3::zeros();
            e[j] = 0.01;
            let fd = (f(&r, &(v + e)) - f(&r, &(v - e))) / 0.02;
            assert!(
                (fd - av.column(j)).norm() < 1e-6 * av.norm() + 1e-20,
                "dv {j}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn rotation_is_proper_orthonormal(
            rx in -1.0f64..1.0, ry in -1.0f64..1.0, rz in -1.0f64..1.0,
            vx in -1.0f64..1.0, vy in -1.0f64..1.0, vz in -1.0f64..1.0,
        ) {
            let r = Vector3::new(rx, ry, rz);
            let v = Vector3::new(vx, vy, vz);
            prop_assume!(r.norm() > 0.1 && v.norm() > 0.1);
            prop_assume!(r.normalize().cross(&v.normalize()).norm() > 1e-3);
            let r = r.normalize() * 7.0e6;
            let v = v.normalize() * 7.5e3;
            let c = rotation(&r, &v).unwrap();
            let err = (c.transpose() * c - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-12);
            prop_assert!((c.determinant() - 1.0).abs() < 1e-12);
        }
    }
}
