//! Numerical studies: impulsive-versus-finite-burn divergence and
//! observability maps built from virtual position measurements.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    apply_impulse, vvlh_rotation, Epoch, ForceModel, ImpulsiveManeuver, InertialState,
    ManeuverPolicy, Propagator, EARTH_RADIUS, MU_EARTH,
};
use crate::estimation::{PositionMeasurements, ThrustProblem};
use crate::{Error, Result};

/// Equatorial circular orbit at the given altitude, at epoch zero.
pub fn circular_orbit(altitude: f64) -> InertialState {
    let a = EARTH_RADIUS + altitude;
    InertialState::new(
        Epoch::default(),
        Vector3::new(a, 0.0, 0.0),
        Vector3::new(0.0, (MU_EARTH / a).sqrt(), 0.0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSettings {
    pub altitude: f64,
    /// VVLH unit direction of the thrust.
    pub direction: Vector3<f64>,
    /// Thrust magnitude [m/s²].
    pub magnitude: f64,
    /// Averaging span after burn end [s].
    pub horizon: f64,
    pub cadence: f64,
}

impl DivergenceSettings {
    pub fn new(direction: Vector3<f64>, magnitude: f64) -> Self {
        Self {
            altitude: 500e3,
            direction,
            magnitude,
            horizon: 86400.0,
            cadence: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub duration: f64,
    /// Time-averaged 3-D position difference [m].
    pub mean: f64,
    pub max: f64,
    /// Difference at the end of the horizon [m].
    pub last: f64,
}

/// Compares a finite burn starting at epoch zero with its impulsive twin
/// applied at the burn midpoint along the coasting VVLH direction.
///
/// The average runs over `[t_f, t_f + horizon]`, two-body dynamics.
pub fn divergence_study(
    settings: &DivergenceSettings,
    durations: &[f64],
) -> Result<Vec<DivergenceRow>> {
    let s = settings;
    let norm = s.direction.norm();
    if !(norm > 0.0) || !(s.magnitude > 0.0) || !(s.cadence > 0.0) || !(s.horizon >= 0.0) {
        return Err(Error::InvalidInput(
            "divergence study needs a direction, magnitude and cadence".into(),
        ));
    }
    let dir = s.direction / norm;
    let prop = Propagator::new(ForceModel::two_body());
    let initial = circular_orbit(s.altitude);
    durations
        .par_iter()
        .map(|&dt| {
            let start = initial.epoch;
            let end = start + dt;
            let policy = ManeuverPolicy::new(start, end, dir * s.magnitude)?;
            let count = (s.horizon / s.cadence).floor() as usize;
            let epochs: Vec<Epoch> = (0..=count).map(|k| end + k as f64 * s.cadence).collect();
            let long = prop.propagate_to(&initial, Some(&policy), &epochs)?;

            let mid = policy.midpoint();
            let coast = prop.propagate(&initial, None, mid)?;
            let dv = vvlh_rotation(&coast)? * (dir * (s.magnitude * dt));
            let kicked = apply_impulse(
                &coast,
                &ImpulsiveManeuver {
                    epoch: mid,
                    delta_v: dv,
                },
            )?;
            let short = prop.propagate_to(&kicked, None, &epochs)?;

            let diffs: Vec<f64> = long
                .iter()
                .zip(&short)
                .map(|(a, b)| (a.r - b.r).norm())
                .collect();
            Ok(DivergenceRow {
                duration: dt,
                mean: diffs.iter().sum::<f64>() / diffs.len() as f64,
                max: diffs.iter().copied().fold(0.0, f64::max),
                last: *diffs.last().unwrap_or(&0.0),
            })
        })
        .collect()
}

pub fn write_divergence_csv<W: Write>(mut w: W, rows: &[DivergenceRow]) -> std::io::Result<()> {
    writeln!(w, "duration_s,mean_m,max_m,last_m")?;
    for r in rows {
        writeln!(
            w,
            "{:.3},{:.6},{:.6},{:.6}",
            r.duration, r.mean, r.max, r.last
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservabilitySettings {
    pub altitude: f64,
    pub direction: Vector3<f64>,
    pub magnitude: f64,
    /// True burn start after epoch [s].
    pub burn_start: f64,
    pub duration: f64,
    /// Virtual position measurements span `[first, last]` after epoch [s].
    pub first_measurement: f64,
    pub last_measurement: f64,
    pub cadence: f64,
    /// Grid half width around the true start and end [s].
    pub half_width: f64,
    pub grid_step: f64,
}

impl ObservabilitySettings {
    pub fn new(direction: Vector3<f64>) -> Self {
        Self {
            altitude: 500e3,
            direction,
            magnitude: 5e-3,
            burn_start: 12.0 * 3600.0,
            duration: 1200.0,
            first_measurement: 24.0 * 3600.0,
            last_measurement: 48.0 * 3600.0,
            cadence: 60.0,
            half_width: 3600.0,
            grid_step: 120.0,
        }
    }
}

/// Residual RMS over candidate `(t̃_b, t̃_f)` cells; masked cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityGrid {
    /// Start offsets from the true start [s]; rows.
    pub tb_offsets: Vec<f64>,
    /// End offsets from the true end [s]; columns.
    pub tf_offsets: Vec<f64>,
    pub rms: DMatrix<f64>,
    pub truth: (Epoch, Epoch),
}

impl ObservabilityGrid {
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.tb_offsets.len()).flat_map(move |i| {
            (0..self.tf_offsets.len())
                .map(move |j| (i, j, self.rms[(i, j)]))
                .filter(|c| !c.2.is_nan())
        })
    }

    pub fn global_minimum(&self) -> Option<(usize, usize, f64)> {
        self.cells().min_by(|a, b| a.2.total_cmp(&b.2))
    }

    /// Index of the zero-offset cell.
    pub fn truth_cell(&self) -> Option<(usize, usize)> {
        let i = self.tb_offsets.iter().position(|o| o.abs() < 1e-9)?;
        let j = self.tf_offsets.iter().position(|o| o.abs() < 1e-9)?;
        Some((i, j))
    }

    /// Cells not larger than any of their unmasked 8-neighbours.
    pub fn local_minima(&self) -> Vec<(usize, usize, f64)> {
        let (rows, cols) = self.rms.shape();
        self.cells()
            .filter(|&(i, j, v)| {
                (-1i64..=1).all(|di| {
                    (-1i64..=1).all(|dj| {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if (di, dj) == (0, 0)
                            || a < 0
                            || b < 0
                            || a >= rows as i64
                            || b >= cols as i64
                        {
                            return true;
                        }
                        let n = self.rms[(a as usize, b as usize)];
                        n.is_nan() || v <= n
                    })
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_b_offset_s,t_f_offset_s,rms_m")?;
        for (i, j, v) in self.cells() {
            writeln!(
                w,
                "{:.1},{:.1},{:.6e}",
                self.tb_offsets[i], self.tf_offsets[j], v
            )?;
        }
        Ok(())
    }
}

/// Least-squares slope of `y` on `x`.
pub fn regression_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Fits a constant thrust for every `(t̃_b, t̃_f)` cell against exact
/// post-burn positions of a central-force circular orbit.
pub fn observability_map(settings: &ObservabilitySettings) -> Result<ObservabilityGrid> {
    let s = settings;
    let norm = s.direction.norm();
    if !(norm > 0.0) || !(s.grid_step > 0.0) || !(s.cadence > 0.0) || !(s.duration > 0.0) {
        return Err(Error::InvalidInput(
            "observability map needs positive grid settings".into(),
        ));
    }
    let prop = Propagator::new(ForceModel::two_body());
    let initial = circular_orbit(s.altitude);
    let t_b = initial.epoch + s.burn_start;
    let t_f = t_b + s.duration;
    let truth = ManeuverPolicy::new(t_b, t_f, s.direction / norm * s.magnitude)?;
    let count = ((s.last_measurement - s.first_measurement) / s.cadence).floor() as usize;
    let epochs: Vec<Epoch> = (0..=count)
        .map(|k| initial.epoch + s.first_measurement + k as f64 * s.cadence)
        .collect();
    let states = prop.propagate_to(&initial, Some(&truth), &epochs)?;
    let model = PositionMeasurements::new(&states)?;

    let steps = (s.half_width / s.grid_step + 1e-9).floor() as i64;
    let offsets: Vec<f64> = (-steps..=steps).map(|k| k as f64 * s.grid_step).collect();
    let starts: Vec<Epoch> = offsets.iter().map(|o| t_b + *o).collect();
    let coasted = prop.propagate_to(&initial, None, &starts)?;
    let cache: HashMap<usize, InertialState> = coasted.into_iter().enumerate().collect();

    let problem = ThrustProblem::new(prop, initial, &model);
    let cells: Vec<(usize, usize)> = (0..offsets.len())
        .flat_map(|i| (0..offsets.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (b, f) = (starts[i], t_f + offsets[j]);
            if b >= f || f > epochs[0] {
                return f64::NAN;
            }
            problem
                .estimate_from(&cache[&i], f, Vector3::zeros())
                .map(|e| e.j)
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let n = offsets.len();
    Ok(ObservabilityGrid {
        tb_offsets: offsets.clone(),
        tf_offsets: offsets,
        rms: DMatrix::from_fn(n, n, |i, j| values[i * n + j]),
        truth: (t_b, t_f),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_burns_stay_below_a_metre() {
        for dir in [Vector3::x(), Vector3::y(), Vector3::z()] {
            let rows = divergence_study(&DivergenceSettings::new(dir, 1e-3), &[60.0]).unwrap();
            assert!(rows[0].last < 1.0, "{dir:?}: {}", rows[0].last);
        }
    }

    #[test]
    fn divergence_grows_with_duration_and_magnitude() {
        let weak = divergence_study(
            &DivergenceSettings::new(Vector3::x(), 1e-3),
            &[300.0, 600.0],
        )
        .unwrap();
        assert!(weak[1].mean > weak[0].mean);
        let strong =
            divergence_study(&DivergenceSettings::new(Vector3::x(), 1e-2), &[600.0]).unwrap();
        let ratio = strong[0].mean / weak[1].mean;
        assert!((9.0..=11.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 3.0 - 2.0 * k as f64)).collect();
        assert!((regression_slope(&pts).unwrap() + 2.0).abs() < 1e-12);
        assert!(regression_slope(&pts[..1]).is_none());
    }

    #[test]
    fn small_map_has_minimum_at_truth() {
        let s = ObservabilitySettings {
            half_width: 240.0,
            last_measurement: 30.0 * 3600.0,
            ..ObservabilitySettings::new(Vector3::x())
        };
        let g = observability_map(&s).unwrap();
        assert_eq!(g.rms.shape(), (5, 5));
        let (i, j, v) = g.global_minimum().unwrap();
        assert_eq!(Some((i, j)), g.truth_cell());
        assert!(v < 1e-3);
        let mut out = Vec::new();
        g.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 26);
    }
}
