use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::MeasurementModel;
use crate::dynamics::{vvlh_rotation, Epoch, InertialState, ManeuverPolicy, Propagator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrustOptions {
    pub max_iterations: usize,
    /// Stop when `‖Δu‖ / max(‖u‖, 1e-9)` falls below this.
    pub step_tolerance: f64,
    /// Stop when the relative change of J falls below this.
    pub index_tolerance: f64,
    /// Step halvings tried when a full step increases J.
    pub max_halvings: usize,
}

impl Default for ThrustOptions {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            step_tolerance: 1e-6,
            index_tolerance: 1e-4,
            max_halvings: 10,
        }
    }
}

/// Fitted constant VVLH thrust for one burn window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrustEstimate {
    pub start: Epoch,
    pub end: Epoch,
    pub u_hat: Vector3<f64>,
    pub j: f64,
    pub iterations: usize,
    pub converged: bool,
    pub covariance: Matrix3<f64>,
}

impl ThrustEstimate {
    pub fn delta_v(&self) -> f64 {
        (self.end - self.start) * self.u_hat.norm()
    }
}

/// A pre-maneuver orbit, post-maneuver measurements and the solver settings.
/// The pre-maneuver state is treated as exact.
pub struct ThrustProblem<'a> {
    pub propagator: Propagator,
    pub pre: InertialState,
    pub model: &'a dyn MeasurementModel,
    pub options: ThrustOptions,
}

struct Linearization {
    ss: f64,
    normal: Matrix3<f64>,
    rhs: Vector3<f64>,
}

impl<'a> ThrustProblem<'a> {
    pub fn new(
        propagator: Propagator,
        pre: InertialState,
        model: &'a dyn MeasurementModel,
    ) -> Self {
        Self {
            propagator,
            pre,
            model,
            options: ThrustOptions::default(),
        }
    }

    fn check_window(&self, start: Epoch, end: Epoch) -> Result<()> {
        let first = *self
            .model
            .epochs()
            .first()
            .ok_or_else(|| Error::EmptyWindow("no measurements".into()))?;
        if !(self.pre.epoch <= start && start < end && end <= first) {
            return Err(Error::InvalidInput(format!(
                "burn window [{start}, {end}] must lie in [{}, {first}]",
                self.pre.epoch
            )));
        }
        Ok(())
    }

    pub fn coast_to(&self, t: Epoch) -> Result<InertialState> {
        self.propagator.propagate(&self.pre, None, t)
    }

    pub fn estimate(&self, start: Epoch, end: Epoch, u0: Vector3<f64>) -> Result<ThrustEstimate> {
        self.check_window(start, end)?;
        let at_start = self.coast_to(start)?;
        self.estimate_from(&at_start, end, u0)
    }

    /// As [`ThrustProblem::estimate`], starting from the coasted state at the
    /// burn start.
    pub fn estimate_from(
        &self,
        at_start: &InertialState,
        end: Epoch,
        u0: Vector3<f64>,
    ) -> Result<ThrustEstimate> {
        let start = at_start.epoch;
        self.check_window(start, end)?;
        let norm = self.model.normalization();
        let index = |ss: f64| (ss / norm).sqrt();

        let mut u = u0;
        let mut lin = self.linearize(at_start, end, &u)?;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.options.max_iterations {
            iterations += 1;
            let du = lin
                .normal
                .cholesky()
                .ok_or(Error::SingularMatrix("thrust normal equations"))?
                .solve(&lin.rhs);
            let mut scale = 1.0;
            let mut trial = self.linearize(at_start, end, &(u + du))?;
            let mut halvings = 0;
            while !(trial.ss <= lin.ss) && halvings < self.options.max_halvings {
                scale *= 0.5;
                halvings += 1;
                trial = self.linearize(at_start, end, &(u + scale * du))?;
            }
            if !(trial.ss <= lin.ss) {
                // No descent along the Gauss-Newton direction: stationary.
                converged = true;
                break;
            }
            let step = scale * du;
            let rel_step = step.norm() / u.norm().max(1e-9);
            let (j_old, j_new) = (index(lin.ss), index(trial.ss));
            u += step;
            lin = trial;
            if rel_step < self.options.step_tolerance
                || (j_old - j_new).abs() <= self.options.index_tolerance * j_old
            {
                converged = true;
                break;
            }
        }
        let covariance = lin
            .normal
            .try_inverse()
            .ok_or(Error::SingularMatrix("thrust normal matrix"))?;
        Ok(ThrustEstimate {
            start,
            end,
            u_hat: u,
            j: index(lin.ss),
            iterations,
            converged,
            covariance,
        })
    }

    fn linearize(
        &self,
        at_start: &InertialState,
        end: Epoch,
        u: &Vector3<f64>,
    ) -> Result<Linearization> {
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence {
                iterations: 0,
                wrms: f64::NAN,
            });
        }
        let window = ManeuverPolicy::new(at_start.epoch, end, *u)?;
        let states = self
            .propagator
            .sensitivity_to(at_start, &window, self.model.epochs())?;
        let mut lin = Linearization {
            ss: 0.0,
            normal: Matrix3::zeros(),
            rhs: Vector3::zeros(),
        };
        for (k, (state, sens)) in states.iter().enumerate() {
            self.model.rows(k, state, &mut |res, row| {
                let g = (row * sens).transpose();
                lin.ss += res * res;
                lin.normal += g * g.transpose();
                lin.rhs += g * res;
            })?;
        }
        if !lin.ss.is_finite() {
            return Err(Error::Divergence {
                iterations: 0,
                wrms: f64::INFINITY,
            });
        }
        Ok(lin)
    }
}

/// Gauss-Newton constant-thrust fit for the window `[start, end]`.
pub fn estimate_thrust(
    propagator: &Propagator,
    pre: &InertialState,
    start: Epoch,
    end: Epoch,
    model: &dyn MeasurementModel,
    u0: Vector3<f64>,
) -> Result<ThrustEstimate> {
    ThrustProblem::new(*propagator, *pre, model).estimate(start, end, u0)
}

/// Equivalent impulse fitted through a short window centred on `epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulsiveEstimate {
    pub epoch: Epoch,
    /// Inertial velocity change [m/s].
    pub delta_v: Vector3<f64>,
    pub j: f64,
    pub thrust: ThrustEstimate,
}

/// Window length used to emulate an impulse [s].
pub const IMPULSE_WINDOW: f64 = 1.0;

impl ThrustProblem<'_> {
    pub fn impulsive(&self, epoch: Epoch, width: f64) -> Result<ImpulsiveEstimate> {
        let start = epoch - 0.5 * width;
        let end = epoch + 0.5 * width;
        self.check_window(start, end)?;
        let at_start = self.coast_to(start)?;
        let at_mid = self.propagator.propagate(&at_start, None, epoch)?;
        let thrust = self.estimate_from(&at_start, end, Vector3::zeros())?;
        let c = vvlh_rotation(&at_mid)?;
        Ok(ImpulsiveEstimate {
            epoch,
            delta_v: width * (c * thrust.u_hat),
            j: thrust.j,
            thrust,
        })
    }
}

pub fn impulsive_estimate(
    propagator: &Propagator,
    pre: &InertialState,
    epoch: Epoch,
    model: &dyn MeasurementModel,
) -> Result<ImpulsiveEstimate> {
    ThrustProblem::new(*propagator, *pre, model).impulsive(epoch, IMPULSE_WINDOW)
}
