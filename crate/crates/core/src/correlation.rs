//! Orbit-to-orbit correlation by Mahalanobis distance, with the ball-relaxed
//! variant for long-duration maneuvers.

use std::io::Write;

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Epoch, InertialState, Propagator};
use crate::roots::brent;
use crate::{Error, Result};

/// Default gate, 99% containment in three dimensions.
pub const CHI_MAX: f64 = 3.38;
/// Default relaxation radius [m].
pub const DEFAULT_RELAXATION: f64 = 10_000.0;
/// Default per-axis variance floor for an orbit treated as error-free [m²].
pub const DEFAULT_FLOOR: f64 = 50.0 * 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionWithCovariance {
    pub epoch: Epoch,
    pub r: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

fn difference(
    a: &PositionWithCovariance,
    b: &PositionWithCovariance,
) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    if a.epoch != b.epoch {
        return Err(Error::EpochMismatch {
            expected: a.epoch,
            found: b.epoch,
        });
    }
    let p = a.cov + b.cov;
    let p = 0.5 * (p + p.transpose());
    Ok((b.r - a.r, p))
}

/// `√(Δᵀ (P₁ + P₂)⁻¹ Δ)`.
pub fn mahalanobis(a: &PositionWithCovariance, b: &PositionWithCovariance) -> Result<f64> {
    let (delta, p) = difference(a, b)?;
    let chol = p.cholesky().ok_or(Error::NonSpdCovariance)?;
    let w = chol
        .l()
        .solve_lower_triangular(&delta)
        .ok_or(Error::NonSpdCovariance)?;
    Ok(w.norm())
}

/// Smallest Mahalanobis distance after allowing the two positions to differ
/// by up to `d` metres.
///
/// Works in the eigenbasis of `P₁ + P₂`: with `a = Vᵀ Δ` the minimizer on the
/// ball boundary is `b_i = a_i / (1 + ξ λ_i)` where the multiplier `ξ > 0`
/// solves `Σ a_i² / (1 + ξ λ_i)² = d²`.
pub fn mahalanobis_relaxed(
    a: &PositionWithCovariance,
    b: &PositionWithCovariance,
    d: f64,
) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "relaxation radius {d} must be non-negative"
        )));
    }
    if d == 0.0 {
        return mahalanobis(a, b);
    }
    let (delta, p) = difference(a, b)?;
    if delta.norm() <= d {
        return Ok(0.0);
    }
    let eig = p.symmetric_eigen();
    let lam = eig.eigenvalues;
    if lam.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NonSpdCovariance);
    }
    let proj = eig.eigenvectors.transpose() * delta;
    let a2 = proj.map(|x| x * x);
    let d2 = d * d;
    let f = |xi: f64| -> f64 {
        (0..3)
            .map(|i| a2[i] / (1.0 + xi * lam[i]).powi(2))
            .sum::<f64>()
            - d2
    };
    let mut hi = 1.0 / lam.max();
    let mut guard = 0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::RootFinding {
                lo: 0.0,
                hi,
                f_lo: f(0.0),
                f_hi: f(hi),
            });
        }
    }
    let xi = brent(f, 0.0, hi, 1e-15 * hi, 200)?;
    let chi2: f64 = (0..3)
        .map(|i| {
            let s = 1.0 + xi * lam[i];
            a2[i] * xi * xi * lam[i] / (s * s)
        })
        .sum();
    Ok(chi2.sqrt())
}

/// Anything that can supply positions with covariance on an epoch grid.
pub trait CovarianceSource: Sync {
    fn positions(&self, epochs: &[Epoch]) -> Result<Vec<PositionWithCovariance>>;
}

/// An orbit estimate with its 6×6 covariance, mapped through the state
/// transition matrix. `floor` is added to every diagonal position entry.
#[derive(Debug, Clone)]
pub struct CovariantOrbit {
    pub propagator: Propagator,
    pub state: InertialState,
    pub covariance: Matrix6<f64>,
    pub floor: f64,
}

impl CovariantOrbit {
    /// An orbit treated as known, carrying only the floor.
    pub fn error_free(propagator: Propagator, state: InertialState, floor: f64) -> Self {
        Self {
            propagator,
            state,
            covariance: Matrix6::zeros(),
            floor,
        }
    }
}

impl CovarianceSource for CovariantOrbit {
    fn positions(&self, epochs: &[Epoch]) -> Result<Vec<PositionWithCovariance>> {
        let vs = self.propagator.variational_to(&self.state, None, epochs)?;
        Ok(vs
            .iter()
            .map(|v| {
                let p = v.stm * self.covariance * v.stm.transpose();
                let mut cov: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
                cov = 0.5 * (cov + cov.transpose());
                cov += Matrix3::identity() * self.floor;
                PositionWithCovariance {
                    epoch: v.state.epoch,
                    r: v.state.r,
                    cov,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub epochs: Vec<Epoch>,
    pub chi_strict: Vec<f64>,
    pub chi_relaxed: Option<Vec<f64>>,
    pub chi_max: f64,
    pub d: Option<f64>,
    pub correlated_strict: bool,
    pub correlated_relaxed: Option<bool>,
}

impl CorrelationReport {
    pub fn correlated(&self) -> bool {
        self.correlated_strict || self.correlated_relaxed.unwrap_or(false)
    }

    /// Epochs under the gate: strict ones if any exist, otherwise relaxed.
    pub fn sub_threshold_epochs(&self) -> Vec<Epoch> {
        let pick = |chi: &[f64]| -> Vec<Epoch> {
            self.epochs
                .iter()
                .zip(chi)
                .filter(|(_, c)| **c <= self.chi_max)
                .map(|(t, _)| *t)
                .collect()
        };
        let strict = pick(&self.chi_strict);
        if !strict.is_empty() {
            return strict;
        }
        self.chi_relaxed.as_deref().map(pick).unwrap_or_default()
    }

    pub fn min_strict(&self) -> f64 {
        self.chi_strict
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_relaxed(&self) -> Option<f64> {
        self.chi_relaxed
            .as_ref()
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch_s,chi_strict,chi_relaxed")?;
        for (k, t) in self.epochs.iter().enumerate() {
            match &self.chi_relaxed {
                Some(r) => writeln!(
                    w,
                    "{:.3},{:.9e},{:.9e}",
                    t.seconds(),
                    self.chi_strict[k],
                    r[k]
                )?,
                None => writeln!(w, "{:.3},{:.9e},", t.seconds(), self.chi_strict[k])?,
            }
        }
        Ok(())
    }
}

/// Evaluates both gates on every epoch of the grid.
pub fn correlate_orbits(
    first: &dyn CovarianceSource,
    second: &dyn CovarianceSource,
    epochs: &[Epoch],
    chi_max: f64,
    d: Option<f64>,
) -> Result<CorrelationReport> {
    if epochs.is_empty() {
        return Err(Error::EmptyWindow("correlation epoch grid".into()));
    }
    let (p1, p2) = rayon::join(|| first.positions(epochs), || second.positions(epochs));
    let (p1, p2) = (p1?, p2?);
    let chi_strict = p1
        .iter()
        .zip(&p2)
        .map(|(a, b)| mahalanobis(a, b))
        .collect::<Result<Vec<_>>>()?;
    let chi_relaxed = match d {
        Some(d) => Some(
            p1.iter()
                .zip(&p2)
                .map(|(a, b)| mahalanobis_relaxed(a, b, d))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let under = |c: &[f64]| c.iter().any(|&x| x <= chi_max);
    Ok(CorrelationReport {
        epochs: epochs.to_vec(),
        correlated_strict: under(&chi_strict),
        correlated_relaxed: chi_relaxed.as_deref().map(under),
        chi_strict,
        chi_relaxed,
        chi_max,
        d,
    })
}

/// Regular grid from `start` to `end` inclusive.
pub fn epoch_grid(start: Epoch, end: Epoch, step: f64) -> Vec<Epoch> {
    if !(end >= start) || !(step > 0.0) {
        return Vec::new();
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let mut v: Vec<Epoch> = (0..=n).map(|k| start + k as f64 * step).collect();
    if *v.last().unwrap() < end {
        v.push(end);
    }
    v
}
