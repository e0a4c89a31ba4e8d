//! Angles-only measurement models and synthetic tracklet generation.

use nalgebra::{Matrix2x3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    apply_impulse, Epoch, ImpulsiveManeuver, InertialState, ManeuverPolicy, Propagator,
};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// One right ascension / declination pair with its 1σ noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularMeasurement {
    pub epoch: Epoch,
    pub alpha: f64,
    pub delta: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: u32,
    pub observer_id: u32,
    pub measurements: Vec<AngularMeasurement>,
}

impl Tracklet {
    pub fn new(id: u32, observer_id: u32, measurements: Vec<AngularMeasurement>) -> Result<Self> {
        if measurements.is_empty() {
            return Err(Error::EmptyWindow(format!(
                "tracklet {id} has no measurements"
            )));
        }
        if measurements.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return Err(Error::InvalidInput(format!(
                "tracklet {id}: epochs must be strictly increasing"
            )));
        }
        if measurements.iter().any(|m| !(m.sigma >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "tracklet {id}: negative sigma"
            )));
        }
        Ok(Self {
            id,
            observer_id,
            measurements,
        })
    }

    pub fn start(&self) -> Epoch {
        self.measurements[0].epoch
    }

    pub fn end(&self) -> Epoch {
        self.measurements[self.measurements.len() - 1].epoch
    }
}

/// Trajectory lookup backed by stored samples and re-propagation between them.
///
/// Serves both as the observer ephemeris and as a target truth trajectory,
/// which may carry a finite burn or an impulse. At the impulse epoch the
/// post-impulse state is returned.
#[derive(Debug, Clone)]
pub struct Ephemeris {
    propagator: Propagator,
    policy: Option<ManeuverPolicy>,
    arcs: Vec<Vec<InertialState>>,
}

pub type ObserverEphemeris = Ephemeris;

fn sample_epochs(start: Epoch, end: Epoch, step: f64) -> Vec<Epoch> {
    let n = ((end - start) / step).ceil() as usize;
    let mut epochs: Vec<Epoch> = (0..n).map(|k| start + k as f64 * step).collect();
    epochs.push(end);
    epochs
}

impl Ephemeris {
    /// Samples the trajectory through `initial` every `step` seconds over
    /// `[start, end]`.
    pub fn generate(
        propagator: Propagator,
        initial: &InertialState,
        policy: Option<ManeuverPolicy>,
        start: Epoch,
        end: Epoch,
        step: f64,
    ) -> Result<Self> {
        if !(end > start) || !(step > 0.0) {
            return Err(Error::InvalidInput(
                "ephemeris span or step is empty".into(),
            ));
        }
        let samples =
            propagator.propagate_to(initial, policy.as_ref(), &sample_epochs(start, end, step))?;
        Ok(Self {
            propagator,
            policy,
            arcs: vec![samples],
        })
    }

    /// Coasting trajectory with an instantaneous velocity change inside
    /// `(start, end)`.
    pub fn generate_impulsive(
        propagator: Propagator,
        initial: &InertialState,
        impulse: &ImpulsiveManeuver,
        start: Epoch,
        end: Epoch,
        step: f64,
    ) -> Result<Self> {
        if !(start < impulse.epoch && impulse.epoch < end) || !(step > 0.0) {
            return Err(Error::InvalidInput(
                "impulse outside the ephemeris span".into(),
            ));
        }
        let before =
            propagator.propagate_to(initial, None, &sample_epochs(start, impulse.epoch, step))?;
        let kicked = apply_impulse(&before[before.len() - 1], impulse)?;
        let after =
            propagator.propagate_to(&kicked, None, &sample_epochs(impulse.epoch, end, step))?;
        Ok(Self {
            propagator,
            policy: None,
            arcs: vec![before, after],
        })
    }

    pub fn start(&self) -> Epoch {
        self.arcs[0][0].epoch
    }

    pub fn end(&self) -> Epoch {
        let last = &self.arcs[self.arcs.len() - 1];
        last[last.len() - 1].epoch
    }

    pub fn policy(&self) -> Option<&ManeuverPolicy> {
        self.policy.as_ref()
    }

    /// Stored samples in time order (the impulse epoch appears twice).
    pub fn samples(&self) -> impl Iterator<Item = &InertialState> {
        self.arcs.iter().flatten()
    }

    fn nearest(&self, t: Epoch) -> Result<(usize, usize)> {
        if t < self.start() || t > self.end() {
            return Err(Error::OutOfSpan(t));
        }
        let a = self
            .arcs
            .iter()
            .rposition(|arc| arc[0].epoch <= t)
            .unwrap_or(0);
        let samples = &self.arcs[a];
        let i = samples.partition_point(|s| s.epoch <= t).saturating_sub(1);
        if i + 1 < samples.len() && (samples[i + 1].epoch - t).abs() < (t - samples[i].epoch).abs()
        {
            Ok((a, i + 1))
        } else {
            Ok((a, i))
        }
    }

    pub fn state_at(&self, t: Epoch) -> Result<InertialState> {
        Ok(self.states_at(&[t])?.remove(0))
    }

    /// States at arbitrary epochs; each is propagated from its nearest sample.
    pub fn states_at(&self, epochs: &[Epoch]) -> Result<Vec<InertialState>> {
        let mut groups: Vec<((usize, usize), Vec<usize>)> = Vec::new();
        for (k, &t) in epochs.iter().enumerate() {
            let key = self.nearest(t)?;
            match groups.iter_mut().find(|g| g.0 == key) {
                Some(g) => g.1.push(k),
                None => groups.push((key, vec![k])),
            }
        }
        let mut out = vec![self.arcs[0][0]; epochs.len()];
        for ((a, i), ks) in groups {
            let ts: Vec<Epoch> = ks.iter().map(|&k| epochs[k]).collect();
            let states =
                self.propagator
                    .propagate_to(&self.arcs[a][i], self.policy.as_ref(), &ts)?;
            for (k, s) in ks.into_iter().zip(states) {
                out[k] = s;
            }
        }
        Ok(out)
    }
}

fn angles(d: &Vector3<f64>) -> Result<(f64, f64)> {
    let rho = d.norm();
    if !(rho > 0.0) {
        return Err(Error::ZeroRange);
    }
    let mut alpha = d.y.atan2(d.x);
    if alpha >= std::f64::consts::PI {
        alpha -= std::f64::consts::TAU;
    }
    let delta = (d.z / rho).clamp(-1.0, 1.0).asin();
    Ok((alpha, delta))
}

/// Geometric angles of `r_t` seen from `r_s`. At the poles α is `atan2(0, 0) = 0`.
pub fn measure_simple(r_t: &Vector3<f64>, r_s: &Vector3<f64>) -> Result<(f64, f64)> {
    angles(&(r_t - r_s))
}

/// Angles with first-order light-time and aberration corrections.
pub fn measure_corrected(target: &InertialState, observer: &InertialState) -> Result<(f64, f64)> {
    measure_corrected_with(target, observer, SPEED_OF_LIGHT)
}

pub(crate) fn measure_corrected_with(
    target: &InertialState,
    observer: &InertialState,
    c: f64,
) -> Result<(f64, f64)> {
    angles(&corrected_los(target, observer, c)?)
}

/// `r_t − r_s + (ρ/c)(v_s − v_t)`, the apparent separation vector.
fn corrected_los(target: &InertialState, observer: &InertialState, c: f64) -> Result<Vector3<f64>> {
    let d = target.r - observer.r;
    let rho = d.norm();
    if !(rho > 0.0) {
        return Err(Error::ZeroRange);
    }
    Ok(d + (rho / c) * (observer.v - target.v))
}

/// Angle partials with respect to target position and velocity, rows (α, δ).
///
/// The velocity block is `−(ρ/c) H_r`: the apparent separation vector loses
/// `(ρ/c) v_t`, so increasing the target velocity moves the line of sight the
/// opposite way from increasing its position.
pub fn measurement_partials(
    target: &InertialState,
    observer: &InertialState,
) -> Result<(Matrix2x3<f64>, Matrix2x3<f64>)> {
    let d = target.r - observer.r;
    let rho2 = d.norm_squared();
    let rxy2 = d.x * d.x + d.y * d.y;
    if !(rho2 > 0.0) {
        return Err(Error::ZeroRange);
    }
    if rxy2 <= 1e-24 * rho2 {
        return Err(Error::DegeneratePartials);
    }
    let rxy = rxy2.sqrt();
    let h_r = Matrix2x3::new(
        -d.y / rxy2,
        d.x / rxy2,
        0.0,
        -d.x * d.z / (rho2 * rxy),
        -d.y * d.z / (rho2 * rxy),
        rxy / rho2,
    );
    let h_v = -(rho2.sqrt() / SPEED_OF_LIGHT) * h_r;
    Ok((h_r, h_v))
}

/// One observation pass: measurements every `cadence` seconds over
/// `[start, start + duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackletWindow {
    pub start: Epoch,
    pub duration: f64,
}

impl TrackletWindow {
    pub fn epochs(&self, cadence: f64) -> Vec<Epoch> {
        if !(cadence > 0.0) || !(self.duration >= 0.0) {
            return Vec::new();
        }
        let n = (self.duration / cadence + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * cadence).collect()
    }
}

/// Noisy corrected measurements for every window. Window `k` draws its noise
/// from stream `k` of a ChaCha generator seeded with `seed`.
pub fn simulate_tracklets(
    windows: &[TrackletWindow],
    target: &Ephemeris,
    observer: &Ephemeris,
    observer_id: u32,
    sigma: f64,
    cadence: f64,
    seed: u64,
) -> Result<Vec<Tracklet>> {
    let noise = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidInput(format!("noise sigma {sigma}: {e}")))?;
    windows
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let epochs = w.epochs(cadence);
            if epochs.len() < 2 {
                return Err(Error::EmptyWindow(format!("window {k} at {}", w.start)));
            }
            let targets = target.states_at(&epochs)?;
            let observers = observer.states_at(&epochs)?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let measurements = targets
                .iter()
                .zip(&observers)
                .map(|(t, o)| {
                    let (alpha, delta) = measure_corrected(t, o)?;
                    Ok(AngularMeasurement {
                        epoch: t.epoch,
                        alpha: alpha + noise.sample(&mut rng),
                        delta: delta + noise.sample(&mut rng),
                        sigma,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Tracklet::new(k as u32, observer_id, measurements)
        })
        .collect()
}
