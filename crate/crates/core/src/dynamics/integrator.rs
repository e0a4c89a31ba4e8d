//! Embedded Runge-Kutta-Fehlberg 7(8) stepping with local extrapolation.

use nalgebra::SVector;

use crate::{Error, Result};

const STAGES: usize = 13;

const C: [f64; STAGES] = [
    0.0,
    2.0 / 27.0,
    1.0 / 9.0,
    1.0 / 6.0,
    5.0 / 12.0,
    1.0 / 2.0,
    5.0 / 6.0,
    1.0 / 6.0,
    2.0 / 3.0,
    1.0 / 3.0,
    1.0,
    0.0,
    1.0,
];

#[rustfmt::skip]
const A: [[f64; 12]; STAGES] = [
    [0.0; 12],
    [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0, 0.0, 0.0, 0.0, 0.0],
    [-91.0 / 108.0, 0.0, 0.0, 23.0 / 108.0, -976.0 / 135.0, 311.0 / 54.0, -19.0 / 60.0, 17.0 / 6.0, -1.0 / 12.0, 0.0, 0.0, 0.0],
    [2383.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0, -301.0 / 82.0, 2133.0 / 4100.0, 45.0 / 82.0, 45.0 / 164.0, 18.0 / 41.0, 0.0, 0.0],
    [3.0 / 205.0, 0.0, 0.0, 0.0, 0.0, -6.0 / 41.0, -3.0 / 205.0, -3.0 / 41.0, 3.0 / 41.0, 6.0 / 41.0, 0.0, 0.0],
    [-1777.0 / 4100.0, 0.0, 0.0, -341.0 / 164.0, 4496.0 / 1025.0, -289.0 / 82.0, 2193.0 / 4100.0, 51.0 / 82.0, 33.0 / 164.0, 12.0 / 41.0, 0.0, 1.0],
];

/// Eighth-order weights; stages 0 and 10 drop out.
const B8: [f64; STAGES] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

/// Difference between the seventh and eighth order solutions is
/// `41/840 (k0 + k10 - k11 - k12) h`.
const ERR: f64 = 41.0 / 840.0;

/// Step-size control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    /// Absolute tolerance on position components [m].
    pub atol_position: f64,
    /// Absolute tolerance on velocity components [m/s].
    pub atol_velocity: f64,
    /// First trial step [s].
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol_position: 1e-9,
            atol_velocity: 1e-12,
            initial_step: 30.0,
            min_step: 1e-7,
            max_step: 3600.0,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0` to exactly `t1` (either direction).
///
/// Only the first `controlled` components enter the error norm; they are
/// laid out as position/velocity triples. `h` carries the step-size proposal
/// between calls so that segment boundaries do not reset the controller.
pub(crate) fn integrate_segment<const N: usize, F>(
    f: &mut F,
    t0: f64,
    y0: &SVector<f64, N>,
    t1: f64,
    controlled: usize,
    cfg: &IntegratorConfig,
    h: &mut f64,
    steps: &mut usize,
) -> Result<SVector<f64, N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let mut t = t0;
    let mut y = *y0;
    if t1 == t0 {
        return Ok(y);
    }
    let dir = (t1 - t0).signum();
    if !(*h > 0.0) {
        *h = cfg.initial_step;
    }
    let mut k = [SVector::<f64, N>::zeros(); STAGES];

    while (t1 - t) * dir > 0.0 {
        let remaining = (t1 - t).abs();
        let truncated = *h >= remaining;
        let step = if truncated { remaining } else { *h };
        let hs = dir * step;

        k[0] = f(t, &y)?;
        for i in 1..STAGES {
            let mut acc = y;
            for (j, kj) in k.iter().enumerate().take(i) {
                let a = A[i][j];
                if a != 0.0 {
                    acc.axpy(hs * a, kj, 1.0);
                }
            }
            k[i] = f(t + C[i] * hs, &acc)?;
        }

        let mut err = 0.0f64;
        let mut y_new = y;
        for (i, bi) in B8.iter().enumerate() {
            if *bi != 0.0 {
                y_new.axpy(hs * bi, &k[i], 1.0);
            }
        }
        for n in 0..controlled.min(N) {
            let e = hs * ERR * (k[0][n] + k[10][n] - k[11][n] - k[12][n]);
            let atol = if n % 6 < 3 {
                cfg.atol_position
            } else {
                cfg.atol_velocity
            };
            let scale = atol + cfg.rtol * y[n].abs().max(y_new[n].abs());
            err = err.max(e.abs() / scale);
        }
        if !err.is_finite() || !y_new.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration {
                t,
                reason: "non-finite state".into(),
            });
        }

        let factor = if err == 0.0 {
            4.0
        } else {
            (0.9 * err.powf(-1.0 / 8.0)).clamp(0.2, 4.0)
        };
        if err <= 1.0 {
            t = if truncated { t1 } else { t + hs };
            y = y_new;
            if !truncated {
                *h = (step * factor).min(cfg.max_step);
            }
        } else {
            *h = step * factor;
            if *h < cfg.min_step {
                return Err(Error::Integration {
                    t,
                    reason: format!("step size {:.3e} s below minimum", *h),
                });
            }
        }
        *steps += 1;
        if *steps > cfg.max_steps {
            return Err(Error::Integration {
                t,
                reason: "maximum number of steps exceeded".into(),
            });
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    #[test]
    fn tableau_rows_sum_to_nodes() {
        for i in 0..STAGES {
            let s: f64 = A[i].iter().sum();
            assert!((s - C[i]).abs() < 1e-14, "row {i}: {s} vs {}", C[i]);
        }
        let b: f64 = B8.iter().sum();
        assert!((b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_oscillator_to_high_accuracy() {
        let mut f = |_t: f64, y: &Vector2<f64>| Ok(Vector2::new(y[1], -y[0]));
        let cfg = IntegratorConfig {
            atol_position: 1e-14,
            ..IntegratorConfig::default()
        };
        let mut h = 0.1;
        let mut steps = 0;
        let y0 = Vector2::new(1.0, 0.0);
        let t1 = 10.0 * std::f64::consts::PI;
        let y = integrate_segment(&mut f, 0.0, &y0, t1, 2, &cfg, &mut h, &mut steps).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10, "{}", y[0]);
        assert!(y[1].abs() < 1e-10);
        let back = integrate_segment(&mut f, t1, &y, 0.0, 2, &cfg, &mut h, &mut steps).unwrap();
        assert!((back - y0).norm() < 1e-10);
    }

    #[test]
    fn eighth_order_convergence_on_fixed_steps() {
        // y' = y cos t, y = exp(sin t)
        let mut f = |t: f64, y: &nalgebra::Vector1<f64>| Ok(y * t.cos());
        let exact = (2.0f64).sin().exp();
        let mut errs = vec![];
        for n in [8, 16] {
            let cfg = IntegratorConfig {
                rtol: 1e3,
                atol_position: 1e3,
                atol_velocity: 1e3,
                max_step: 2.0 / n as f64,
                ..Default::default()
            };
            let mut h = 2.0 / n as f64;
            let mut steps = 0;
            let y = integrate_segment(
                &mut f,
                0.0,
                &nalgebra::Vector1::new(1.0),
                2.0,
                1,
                &cfg,
                &mut h,
                &mut steps,
            )
            .unwrap();
            errs.push((y[0] - exact).abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 7.0, "observed order {order}");
    }
}
