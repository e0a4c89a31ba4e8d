//! Least-squares machinery: orbit determination from tracklets and the
//! constant-thrust estimator.

mod bls;
mod thrust;

pub use bls::{bls_orbit_determination, scan_initial_guess, BlsOptions, OrbitEstimate};
pub use thrust::{
    estimate_thrust, impulsive_estimate, ImpulsiveEstimate, ThrustEstimate, ThrustOptions,
    ThrustProblem, IMPULSE_WINDOW,
};

use nalgebra::{RowVector6, Vector3};

use crate::dynamics::{Epoch, InertialState};
use crate::observation::{measure_corrected, measurement_partials, Ephemeris, Tracklet};
use crate::{Error, Result};

/// Weighted residual rows contributed by one measurement epoch.
pub trait MeasurementModel: Sync {
    /// Measurement epochs, strictly increasing.
    fn epochs(&self) -> &[Epoch];

    /// Calls `sink(weighted residual, weighted partial row)` for every scalar
    /// component at epoch index `k`, given the predicted state there.
    fn rows(
        &self,
        k: usize,
        state: &InertialState,
        sink: &mut dyn FnMut(f64, RowVector6<f64>),
    ) -> Result<()>;

    /// Divisor inside the square root of the performance index.
    fn normalization(&self) -> f64;
}

/// `√(Σ (r_i/σ_i)² / norm)`.
pub fn performance_index(weighted_square_sum: f64, normalization: f64) -> f64 {
    (weighted_square_sum / normalization).sqrt()
}

/// WRMS of angular residuals with a diagonal noise model, `√(rᵀR⁻¹r / 2n)`
/// for `2n` residual components.
pub fn angular_performance_index(residuals: &[f64], sigmas: &[f64]) -> f64 {
    assert_eq!(residuals.len(), sigmas.len());
    let s: f64 = residuals
        .iter()
        .zip(sigmas)
        .map(|(r, s)| (r / s).powi(2))
        .sum();
    performance_index(s, residuals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackedEntry {
    pub epoch: Epoch,
    pub alpha: f64,
    pub delta: f64,
    pub sigma: f64,
    pub observer: InertialState,
}

/// Angle measurements of several tracklets in time order, each paired with
/// the observer state.
#[derive(Debug, Clone)]
pub struct StackedMeasurements {
    entries: Vec<StackedEntry>,
    epochs: Vec<Epoch>,
}

impl StackedMeasurements {
    /// `sigma` overrides the per-measurement noise (needed for noiseless
    /// data, which carries σ = 0).
    pub fn new(tracklets: &[Tracklet], observer: &Ephemeris, sigma: Option<f64>) -> Result<Self> {
        let mut ms: Vec<_> = tracklets
            .iter()
            .flat_map(|t| t.measurements.iter())
            .collect();
        ms.sort_by(|a, b| a.epoch.cmp(&b.epoch));
        if ms.is_empty() {
            return Err(Error::EmptyWindow("no measurements to stack".into()));
        }
        if ms.windows(2).any(|w| w[0].epoch == w[1].epoch) {
            return Err(Error::InvalidInput("duplicate measurement epochs".into()));
        }
        let epochs: Vec<Epoch> = ms.iter().map(|m| m.epoch).collect();
        let observers = observer.states_at(&epochs)?;
        let entries = ms
            .iter()
            .zip(observers)
            .map(|(m, o)| {
                let sigma = sigma.unwrap_or(m.sigma);
                if !(sigma > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "measurement at {} has non-positive sigma",
                        m.epoch
                    )));
                }
                Ok(StackedEntry {
                    epoch: m.epoch,
                    alpha: m.alpha,
                    delta: m.delta,
                    sigma,
                    observer: o,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, epochs })
    }

    pub fn entries(&self) -> &[StackedEntry] {
        &self.entries
    }

    /// Number of angle pairs `n`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_epoch(&self) -> Epoch {
        self.epochs[0]
    }
}

/// Wraps an angle difference into `(-π, π]`.
pub(crate) fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

impl MeasurementModel for StackedMeasurements {
    fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    fn rows(
        &self,
        k: usize,
        state: &InertialState,
        sink: &mut dyn FnMut(f64, RowVector6<f64>),
    ) -> Result<()> {
        let e = &self.entries[k];
        let (alpha, delta) = measure_corrected(state, &e.observer)?;
        let (h_r, h_v) = measurement_partials(state, &e.observer)?;
        let w = 1.0 / e.sigma;
        for (i, res) in [wrap_angle(e.alpha - alpha), e.delta - delta]
            .into_iter()
            .enumerate()
        {
            let row = RowVector6::new(
                h_r[(i, 0)],
                h_r[(i, 1)],
                h_r[(i, 2)],
                h_v[(i, 0)],
                h_v[(i, 1)],
                h_v[(i, 2)],
            );
            sink(w * res, w * row);
        }
        Ok(())
    }

    fn normalization(&self) -> f64 {
        2.0 * self.entries.len() as f64
    }
}

/// Direct position measurements with equal weights; the index is the 3-D RMS
/// in metres.
#[derive(Debug, Clone)]
pub struct PositionMeasurements {
    epochs: Vec<Epoch>,
    positions: Vec<Vector3<f64>>,
}

impl PositionMeasurements {
    pub fn new(states: &[InertialState]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyWindow("no position measurements".into()));
        }
        if states.windows(2).any(|w| w[1].epoch <= w[0].epoch) {
            return Err(Error::InvalidInput("position epochs must increase".into()));
        }
        Ok(Self {
            epochs: states.iter().map(|s| s.epoch).collect(),
            positions: states.iter().map(|s| s.r).collect(),
        })
    }
}

impl MeasurementModel for PositionMeasurements {
    fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    fn rows(
        &self,
        k: usize,
        state: &InertialState,
        sink: &mut dyn FnMut(f64, RowVector6<f64>),
    ) -> Result<()> {
        let res = self.positions[k] - state.r;
        for i in 0..3 {
            let mut row = RowVector6::zeros();
            row[i] = 1.0;
            sink(res[i], row);
        }
        Ok(())
    }

    fn normalization(&self) -> f64 {
        self.epochs.len() as f64
    }
}
