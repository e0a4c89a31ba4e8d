use nalgebra::{Matrix3, Matrix6, Matrix6x3, SVector, Vector3};

use super::force::gravity_gradient;
use super::frame::{rotated_thrust_partials, rotation};
use super::propagate::Propagator;
use super::{Epoch, ForceModel, InertialState, ManeuverPolicy};
use crate::{Error, Result};

const DIM: usize = 60;
type Packed = SVector<f64, DIM>;

/// State with its transition matrix and constant-thrust sensitivity, both
/// relative to the epoch the variational propagation started from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalState {
    pub state: InertialState,
    /// `∂x(t)/∂x(t0)`.
    pub stm: Matrix6<f64>,
    /// `∂x(t)/∂u` for the VVLH thrust of the propagation window.
    pub sensitivity: Matrix6x3<f64>,
}

impl VariationalState {
    pub fn initial(state: InertialState) -> Self {
        Self {
            state,
            stm: Matrix6::identity(),
            sensitivity: Matrix6x3::zeros(),
        }
    }

    fn pack(&self) -> Packed {
        let mut y = Packed::zeros();
        y.fixed_rows_mut::<6>(0)
            .copy_from_slice(&self.state.to_array());
        y.fixed_rows_mut::<36>(6)
            .copy_from_slice(self.stm.as_slice());
        y.fixed_rows_mut::<18>(42)
            .copy_from_slice(self.sensitivity.as_slice());
        y
    }

    fn unpack(epoch: Epoch, y: &Packed) -> Self {
        Self {
            state: InertialState::from_slice(epoch, &y.as_slice()[..6]),
            stm: Matrix6::from_column_slice(&y.as_slice()[6..42]),
            sensitivity: Matrix6x3::from_column_slice(&y.as_slice()[42..60]),
        }
    }
}

impl Propagator {
    /// Propagates state, transition matrix and thrust sensitivity.
    ///
    /// `window` sets both the thrust flown along the trajectory and the
    /// interval where the sensitivity forcing `[0; C(r, v)]` is active; a
    /// zero-thrust window still accumulates sensitivity. Inside the window
    /// the linearization includes the dependence of `C(r, v) u` on the state.
    pub fn variational_to(
        &self,
        state: &InertialState,
        window: Option<&ManeuverPolicy>,
        epochs: &[Epoch],
    ) -> Result<Vec<VariationalState>> {
        let force = self.force;
        let thrust = window.map(|w| w.thrust).unwrap_or_else(Vector3::zeros);
        let rhs = move |on: bool, _t: f64, y: &Packed| -> Result<Packed> {
            variational_rhs(&force, on, &thrust, y)
        };
        let y0 = VariationalState::initial(*state).pack();
        let ys = self.drive(state.epoch, y0, window, epochs, rhs)?;
        Ok(ys
            .iter()
            .zip(epochs)
            .map(|(y, t)| VariationalState::unpack(*t, y))
            .collect())
    }

    pub fn variational(
        &self,
        state: &InertialState,
        window: Option<&ManeuverPolicy>,
        target: Epoch,
    ) -> Result<VariationalState> {
        Ok(self.variational_to(state, window, &[target])?.remove(0))
    }
}

impl Propagator {
    /// Like [`Propagator::variational_to`] but integrates only the state and
    /// the three sensitivity columns.
    pub fn sensitivity_to(
        &self,
        state: &InertialState,
        window: &ManeuverPolicy,
        epochs: &[Epoch],
    ) -> Result<Vec<(InertialState, Matrix6x3<f64>)>> {
        let force = self.force;
        let thrust = window.thrust;
        let rhs = move |on: bool, _t: f64, y: &SVector<f64, 24>| -> Result<SVector<f64, 24>> {
            sensitivity_rhs(&force, on, &thrust, y)
        };
        let mut y0 = SVector::<f64, 24>::zeros();
        y0.fixed_rows_mut::<6>(0).copy_from_slice(&state.to_array());
        let ys = self.drive(state.epoch, y0, Some(window), epochs, rhs)?;
        Ok(ys
            .iter()
            .zip(epochs)
            .map(|(y, t)| {
                (
                    InertialState::from_slice(*t, &y.as_slice()[..6]),
                    Matrix6x3::from_column_slice(&y.as_slice()[6..24]),
                )
            })
            .collect())
    }
}

fn sensitivity_rhs(
    force: &ForceModel,
    on: bool,
    thrust: &Vector3<f64>,
    y: &SVector<f64, 24>,
) -> Result<SVector<f64, 24>> {
    let r = Vector3::new(y[0], y[1], y[2]);
    let v = Vector3::new(y[3], y[4], y[5]);
    let mut acc = force.gravity(&r);
    let mut d_dr = gravity_gradient(&r, force);
    let mut d_dv = Matrix3::zeros();
    let mut frame = None;
    if on {
        let c = rotation(&r, &v)?;
        acc += c * thrust;
        if thrust.norm_squared() > 0.0 {
            let (tr, tv) = rotated_thrust_partials(&r, &v, thrust)?;
            d_dr += tr;
            d_dv = tv;
        }
        frame = Some(c);
    }
    let mut dy = SVector::<f64, 24>::zeros();
    dy[0] = v.x;
    dy[1] = v.y;
    dy[2] = v.z;
    dy[3] = acc.x;
    dy[4] = acc.y;
    dy[5] = acc.z;
    for col in 0..3 {
        let base = 6 + 6 * col;
        let p = Vector3::new(y[base], y[base + 1], y[base + 2]);
        let q = Vector3::new(y[base + 3], y[base + 4], y[base + 5]);
        let mut qd = d_dr * p + d_dv * q;
        if let Some(c) = &frame {
            qd += c.column(col);
        }
        dy[base] = q.x;
        dy[base + 1] = q.y;
        dy[base + 2] = q.z;
        dy[base + 3] = qd.x;
        dy[base + 4] = qd.y;
        dy[base + 5] = qd.z;
    }
    Ok(dy)
}

fn variational_rhs(
    force: &ForceModel,
    on: bool,
    thrust: &Vector3<f64>,
    y: &Packed,
) -> Result<Packed> {
    let r = Vector3::new(y[0], y[1], y[2]);
    let v = Vector3::new(y[3], y[4], y[5]);
    let mut acc = force.gravity(&r);
    let mut d_dr = gravity_gradient(&r, force);
    let mut d_dv = Matrix3::zeros();
    let mut frame = None;
    if on {
        let c = rotation(&r, &v)?;
        acc += c * thrust;
        if thrust.norm_squared() > 0.0 {
            let (tr, tv) = rotated_thrust_partials(&r, &v, thrust)?;
            d_dr += tr;
            d_dv = tv;
        }
        frame = Some(c);
    }
    let mut dy = Packed::zeros();
    dy[0] = v.x;
    dy[1] = v.y;
    dy[2] = v.z;
    dy[3] = acc.x;
    dy[4] = acc.y;
    dy[5] = acc.z;
    for col in 0..9 {
        let base = 6 + 6 * col;
        let p = Vector3::new(y[base], y[base + 1], y[base + 2]);
        let q = Vector3::new(y[base + 3], y[base + 4], y[base + 5]);
        let mut qd = d_dr * p + d_dv * q;
        if col >= 6 {
            if let Some(c) = &frame {
                qd += c.column(col - 6);
            }
        }
        dy[base] = q.x;
        dy[base + 1] = q.y;
        dy[base + 2] = q.z;
        dy[base + 3] = qd.x;
        dy[base + 4] = qd.y;
        dy[base + 5] = qd.z;
    }
    Ok(dy)
}

/// Variational propagation with default integrator settings; the reference
/// epoch is `state.epoch`.
pub fn propagate_variational(
    state: &InertialState,
    cfg: &ForceModel,
    window: Option<&ManeuverPolicy>,
    target: Epoch,
) -> Result<VariationalState> {
    Propagator::new(*cfg).variational(state, window, target)
}

/// `Φ(t_k, t_f) = Φ(t_k, t_0) Φ(t_f, t_0)⁻¹`.
pub fn stm_between(phi_k: &Matrix6<f64>, phi_f: &Matrix6<f64>) -> Result<Matrix6<f64>> {
    let inv = phi_f
        .lu()
        .try_inverse()
        .ok_or(Error::SingularMatrix("state transition matrix"))?;
    Ok(phi_k * inv)
}

/// `S(t_f, t_b) = S(t_f, t_0) - Φ(t_f, t_b) S(t_b, t_0)`.
pub fn sensitivity_between(
    s_f: &Matrix6x3<f64>,
    phi_fb: &Matrix6<f64>,
    s_b: &Matrix6x3<f64>,
) -> Matrix6x3<f64> {
    s_f - phi_fb * s_b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{vvlh_rotation, MU_EARTH};
    use nalgebra::Vector6;

    fn leo() -> InertialState {
        let el = crate::dynamics::OrbitalElements {
            a_km: 6878.137,
            e: 0.01,
            i_deg: 51.6,
            raan_deg: 30.0,
            argp_deg: 40.0,
            mean_anomaly_deg: 10.0,
        };
        crate::dynamics::elements_to_state(&el, MU_EARTH, Epoch::default()).unwrap()
    }

    #[test]
    fn initial_conditions() {
        let s = leo();
        let vs = propagate_variational(&s, &ForceModel::j2(), None, s.epoch).unwrap();
        assert_eq!(vs.stm, Matrix6::identity());
        assert_eq!(vs.sensitivity, Matrix6x3::zeros());
    }

    #[test]
    fn stm_between_identity_and_group_property() {
        let s = leo();
        let prop = Propagator::new(ForceModel::j2());
        let ts = [
            Epoch::from_seconds(900.0),
            Epoch::from_seconds(2500.0),
            Epoch::from_seconds(4100.0),
        ];
        let v = prop.variational_to(&s, None, &ts).unwrap();
        let id = stm_between(&v[1].stm, &v[1].stm).unwrap();
        assert!((id - Matrix6::identity()).abs().max() < 1e-9);
        let a = stm_between(&v[2].stm, &v[1].stm).unwrap();
        let b = stm_between(&v[1].stm, &v[0].stm).unwrap();
        let c = stm_between(&v[2].stm, &v[0].stm).unwrap();
        assert!((a * b - c).abs().max() < 1e-9 * c.abs().max());

        // Direct propagation from the intermediate epoch.
        let direct = prop.variational(&v[0].state, None, ts[2]).unwrap();
        let rel = (direct.stm - c).abs().max() / c.abs().max();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn stm_between_rejects_singular() {
        assert!(stm_between(&Matrix6::identity(), &Matrix6::zeros()).is_err());
    }

    #[test]
    fn sensitivity_between_with_zero_reference_is_identity_map() {
        let s_f = Matrix6x3::from_fn(|i, j| (i * 3 + j) as f64);
        let phi = Matrix6::from_fn(|i, j| (i + 2 * j) as f64);
        assert_eq!(sensitivity_between(&s_f, &phi, &Matrix6x3::zeros()), s_f);
    }

    #[test]
    fn determinant_of_stm_is_unity() {
        let s = leo();
        let vs = propagate_variational(&s, &ForceModel::j2(), None, s.epoch + 6000.0).unwrap();
        assert!((vs.stm.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn short_window_sensitivity_limit() {
        let s = leo();
        let prop = Propagator::new(ForceModel::two_body());
        let c = vvlh_rotation(&s).unwrap();
        let mut errs = vec![];
        for dt in [1.0, 0.1, 0.01] {
            let w = ManeuverPolicy::new(s.epoch, s.epoch + dt, Vector3::zeros()).unwrap();
            let v = prop.variational(&s, Some(&w), w.end).unwrap();
            let s_fb = sensitivity_between(&v.sensitivity, &v.stm, &Matrix6x3::zeros());
            let mut lim = Matrix6x3::zeros();
            lim.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c * dt));
            errs.push((s_fb - lim).norm() / lim.norm());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        // The residual is the ½ C Δt² position term.
        assert!(errs[2] < 1e-2);
    }

    #[test]
    fn reduced_sensitivity_agrees_with_full_system() {
        let s = leo();
        let prop = Propagator::new(ForceModel::j2());
        let w = ManeuverPolicy::new(
            s.epoch + 600.0,
            s.epoch + 1500.0,
            Vector3::new(1e-3, -2e-3, 5e-4),
        )
        .unwrap();
        let mut tb = prop.propagate(&s, None, w.start).unwrap();
        tb.epoch = w.start;
        let ts = [w.start + 2000.0, w.start + 9000.0];
        let full = prop.variational_to(&tb, Some(&w), &ts).unwrap();
        let reduced = prop.sensitivity_to(&tb, &w, &ts).unwrap();
        for (f, (st, sens)) in full.iter().zip(&reduced) {
            assert!((f.state.r - st.r).norm() < 1e-6);
            assert!((f.sensitivity - sens).norm() < 1e-8 * sens.norm());
        }
    }

    #[test]
    fn stm_columns_match_central_differences() {
        let s = leo();
        let t = s.epoch + 5700.0;
        for force in [ForceModel::two_body(), ForceModel::j2()] {
            let prop = Propagator::new(force);
            let vs = prop.variational(&s, None, t).unwrap();
            for j in 0..6 {
                let eps = if j < 3 { 10.0 } else { 0.01 };
                let mut d = Vector6::zeros();
                d[j] = eps;
                let shift = |sign: f64| {
                    let mut p = s;
                    p.r += sign * d.fixed_rows::<3>(0);
                    p.v += sign * d.fixed_rows::<3>(3);
                    let e = prop.propagate(&p, None, t).unwrap();
                    Vector6::from(e.to_array())
                };
                let fd = (shift(1.0) - shift(-1.0)) / (2.0 * eps);
                let col = vs.stm.column(j);
                let rel = (fd - col).norm() / col.norm();
                assert!(rel < 1e-4, "{force:?} column {j}: {rel}");
            }
        }
    }
}
