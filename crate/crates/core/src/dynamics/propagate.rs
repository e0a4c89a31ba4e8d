use nalgebra::{SVector, Vector6};

use super::frame::rotation;
use super::integrator::{integrate_segment, IntegratorConfig};
use super::{Epoch, ForceModel, ImpulsiveManeuver, InertialState, ManeuverPolicy};
use crate::{Error, Result};

/// Numerical propagator bound to a force model and step-size settings.
///
/// Integration nodes are forced onto every requested output epoch and onto
/// the burn boundaries, so the thrust discontinuity never falls inside a step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Propagator {
    pub force: ForceModel,
    pub integrator: IntegratorConfig,
}

impl Propagator {
    pub fn new(force: ForceModel) -> Self {
        Self {
            force,
            integrator: IntegratorConfig::default(),
        }
    }

    pub fn with_integrator(mut self, integrator: IntegratorConfig) -> Self {
        self.integrator = integrator;
        self
    }

    /// Propagates to a single epoch.
    pub fn propagate(
        &self,
        state: &InertialState,
        policy: Option<&ManeuverPolicy>,
        target: Epoch,
    ) -> Result<InertialState> {
        Ok(self.propagate_to(state, policy, &[target])?.remove(0))
    }

    /// Propagates to every epoch in `epochs`, returned in the given order.
    /// Epochs before the initial state are reached by backward integration.
    pub fn propagate_to(
        &self,
        state: &InertialState,
        policy: Option<&ManeuverPolicy>,
        epochs: &[Epoch],
    ) -> Result<Vec<InertialState>> {
        let force = self.force;
        let y0 = Vector6::from(state.to_array());
        let rhs = |on: bool, _t: f64, y: &Vector6<f64>| -> Result<Vector6<f64>> {
            let r = y.fixed_rows::<3>(0).into_owned();
            let v = y.fixed_rows::<3>(3).into_owned();
            let mut a = force.gravity(&r);
            if on {
                if let Some(p) = policy {
                    a += rotation(&r, &v)? * p.thrust;
                }
            }
            Ok(Vector6::new(v.x, v.y, v.z, a.x, a.y, a.z))
        };
        let ys = self.drive(state.epoch, y0, policy, epochs, rhs)?;
        Ok(ys
            .iter()
            .zip(epochs)
            .map(|(y, t)| InertialState::from_slice(*t, y.as_slice()))
            .collect())
    }

    /// Shared node-to-node driver. `rhs` receives whether thrust is active on
    /// the current segment.
    pub(crate) fn drive<const N: usize, F>(
        &self,
        t0: Epoch,
        y0: SVector<f64, N>,
        policy: Option<&ManeuverPolicy>,
        epochs: &[Epoch],
        rhs: F,
    ) -> Result<Vec<SVector<f64, N>>>
    where
        F: Fn(bool, f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
    {
        let mut out = vec![y0; epochs.len()];
        let mut order: Vec<usize> = (0..epochs.len()).collect();
        order.sort_by(|&a, &b| epochs[a].cmp(&epochs[b]));
        let forward: Vec<usize> = order.iter().copied().filter(|&i| epochs[i] > t0).collect();
        let backward: Vec<usize> = order
            .iter()
            .rev()
            .copied()
            .filter(|&i| epochs[i] < t0)
            .collect();

        for (indices, sign) in [(forward, 1.0), (backward, -1.0)] {
            let Some(&last) = indices.last() else {
                continue;
            };
            let end = epochs[last];
            let mut nodes: Vec<(Epoch, Option<usize>)> =
                indices.iter().map(|&i| (epochs[i], Some(i))).collect();
            if let Some(p) = policy {
                for b in [p.start, p.end] {
                    let inside = if sign > 0.0 {
                        b > t0 && b < end
                    } else {
                        b < t0 && b > end
                    };
                    if inside {
                        nodes.push((b, None));
                    }
                }
            }
            if sign > 0.0 {
                nodes.sort_by(|a, b| a.0.cmp(&b.0));
            } else {
                nodes.sort_by(|a, b| b.0.cmp(&a.0));
            }

            let mut t = t0;
            let mut y = y0;
            let mut h = self.integrator.initial_step;
            let mut steps = 0usize;
            for (node, slot) in nodes {
                if node != t {
                    let on = policy.is_some_and(|p| p.is_active(t + 0.5 * (node - t)));
                    let mut f = |tt: f64, yy: &SVector<f64, N>| rhs(on, tt, yy);
                    y = integrate_segment(
                        &mut f,
                        t.seconds(),
                        &y,
                        node.seconds(),
                        6,
                        &self.integrator,
                        &mut h,
                        &mut steps,
                    )?;
                    t = node;
                }
                if let Some(i) = slot {
                    out[i] = y;
                }
            }
        }
        Ok(out)
    }
}

/// Propagates with the default integrator settings.
pub fn propagate(
    state: &InertialState,
    cfg: &ForceModel,
    policy: Option<&ManeuverPolicy>,
    target: Epoch,
) -> Result<InertialState> {
    Propagator::new(*cfg).propagate(state, policy, target)
}

/// Instantaneous velocity change at the state epoch.
pub fn apply_impulse(state: &InertialState, imp: &ImpulsiveManeuver) -> Result<InertialState> {
    if (state.epoch - imp.epoch).abs() > 1e-9 {
        return Err(Error::EpochMismatch {
            expected: imp.epoch,
            found: state.epoch,
        });
    }
    if !imp.delta_v.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("impulse must be finite".into()));
    }
    Ok(InertialState::new(
        state.epoch,
        state.r,
        state.v + imp.delta_v,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{vvlh_rotation, MU_EARTH};
    use nalgebra::Vector3;

    fn circular(alt: f64) -> InertialState {
        let a = crate::dynamics::EARTH_RADIUS + alt;
        InertialState::new(
            Epoch::default(),
            Vector3::new(a, 0.0, 0.0),
            Vector3::new(0.0, (MU_EARTH / a).sqrt(), 0.0),
        )
    }

    #[test]
    fn circular_orbit_is_periodic() {
        let s = circular(500e3);
        let a = s.r.norm();
        let period = std::f64::consts::TAU * (a.powi(3) / MU_EARTH).sqrt();
        let end = propagate(&s, &ForceModel::two_body(), None, s.epoch + period).unwrap();
        assert!((end.r - s.r).norm() < 1e-4, "{}", (end.r - s.r).norm());
        assert!((end.v - s.v).norm() < 1e-7);
    }

    #[test]
    fn two_day_energy_drift() {
        let s = circular(500e3);
        let mut s = s;
        s.v *= 1.01;
        let end = propagate(&s, &ForceModel::two_body(), None, s.epoch + 2.0 * 86400.0).unwrap();
        let e0 = s.energy(MU_EARTH);
        let e1 = end.energy(MU_EARTH);
        assert!(((e1 - e0) / e0).abs() < 1e-9, "{}", (e1 - e0) / e0);
    }

    #[test]
    fn backward_propagation_retraces() {
        let s = circular(800e3);
        let prop = Propagator::new(ForceModel::j2());
        let p = ManeuverPolicy::new(
            Epoch::from_seconds(-3000.0),
            Epoch::from_seconds(-2000.0),
            Vector3::new(2e-3, 1e-3, -1e-3),
        )
        .unwrap();
        let back = prop
            .propagate(&s, Some(&p), Epoch::from_seconds(-5000.0))
            .unwrap();
        let fwd = prop.propagate(&back, Some(&p), s.epoch).unwrap();
        assert!((fwd.r - s.r).norm() < 1e-4);
        assert!((fwd.v - s.v).norm() < 1e-7);
    }

    #[test]
    fn burn_start_node_is_bit_identical_to_coast() {
        let s = circular(500e3);
        let prop = Propagator::new(ForceModel::j2());
        let p = ManeuverPolicy::new(
            Epoch::from_seconds(1234.5),
            Epoch::from_seconds(2000.0),
            Vector3::new(1e-3, 0.0, 0.0),
        )
        .unwrap();
        let with = prop.propagate(&s, Some(&p), p.start).unwrap();
        let without = prop.propagate(&s, None, p.start).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn multi_epoch_output_matches_single_calls() {
        let s = circular(600e3);
        let prop = Propagator::new(ForceModel::j2());
        let epochs = [
            Epoch::from_seconds(3000.0),
            Epoch::from_seconds(-700.0),
            Epoch::from_seconds(0.0),
            Epoch::from_seconds(1500.0),
        ];
        let many = prop.propagate_to(&s, None, &epochs).unwrap();
        for (st, t) in many.iter().zip(epochs) {
            assert_eq!(st.epoch, t);
            let one = prop.propagate(&s, None, t).unwrap();
            assert!((one.r - st.r).norm() < 1e-5);
        }
        assert_eq!(many[2].r, s.r);
    }

    #[test]
    fn impulse_changes_velocity_only() {
        let s = circular(500e3);
        let same = apply_impulse(
            &s,
            &ImpulsiveManeuver {
                epoch: s.epoch,
                delta_v: Vector3::zeros(),
            },
        )
        .unwrap();
        assert_eq!(same, s);
        let kicked = apply_impulse(
            &s,
            &ImpulsiveManeuver {
                epoch: s.epoch,
                delta_v: Vector3::new(0.0, 0.0, 1.0),
            },
        )
        .unwrap();
        assert_eq!(kicked.r, s.r);
        assert_eq!(kicked.v.z - s.v.z, 1.0);
        let late = ImpulsiveManeuver {
            epoch: s.epoch + 1.0,
            delta_v: Vector3::zeros(),
        };
        assert!(matches!(
            apply_impulse(&s, &late),
            Err(Error::EpochMismatch { .. })
        ));
    }

    #[test]
    fn in_track_thrust_raises_orbit() {
        let s = circular(500e3);
        let p = ManeuverPolicy::new(
            Epoch::from_seconds(0.0),
            Epoch::from_seconds(600.0),
            Vector3::new(1e-3, 0.0, 0.0),
        )
        .unwrap();
        let end = propagate(&s, &ForceModel::two_body(), Some(&p), p.end).unwrap();
        let de = end.energy(MU_EARTH) - s.energy(MU_EARTH);
        // dE ≈ v·ΔV for a tangential burn.
        let expect = s.v.norm() * p.delta_v();
        assert!((de - expect).abs() / expect < 1e-2);
        let c = vvlh_rotation(&end).unwrap();
        assert!(c.column(0).dot(&end.v.normalize()) > 0.999);
    }
}
