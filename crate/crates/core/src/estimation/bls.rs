use nalgebra::{Matrix6, RowVector6, Vector6};
use serde::{Deserialize, Serialize};

use super::MeasurementModel;
use crate::dynamics::{InertialState, Propagator};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlsOptions {
    pub max_iterations: usize,
    /// Converged when WRMS changes by less than this fraction.
    pub tolerance: f64,
    /// WRMS below which the fit is considered exact.
    pub exact_wrms: f64,
    /// Consecutive WRMS increases tolerated before giving up.
    pub max_increases: usize,
}

impl Default for BlsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tolerance: 1e-3,
            exact_wrms: 1e-6,
            max_increases: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitEstimate {
    pub state: InertialState,
    pub covariance: Matrix6<f64>,
    pub wrms: f64,
    pub iterations: usize,
}

struct Normal {
    ss: f64,
    n: Matrix6<f64>,
    b: Vector6<f64>,
}

fn accumulate(
    propagator: &Propagator,
    model: &dyn MeasurementModel,
    state: &InertialState,
    with_partials: bool,
) -> Result<Normal> {
    let mut out = Normal {
        ss: 0.0,
        n: Matrix6::zeros(),
        b: Vector6::zeros(),
    };
    if with_partials {
        let vs = propagator.variational_to(state, None, model.epochs())?;
        for (k, v) in vs.iter().enumerate() {
            model.rows(k, &v.state, &mut |res, row: RowVector6<f64>| {
                let g = (row * v.stm).transpose();
                out.ss += res * res;
                out.n += g * g.transpose();
                out.b += g * res;
            })?;
        }
    } else {
        let states = propagator.propagate_to(state, None, model.epochs())?;
        for (k, s) in states.iter().enumerate() {
            model.rows(k, s, &mut |res, _| out.ss += res * res)?;
        }
    }
    Ok(out)
}

/// Weighted-residual index of a trial orbit, without partials.
pub(crate) fn orbit_wrms(
    propagator: &Propagator,
    model: &dyn MeasurementModel,
    state: &InertialState,
) -> Result<f64> {
    let n = accumulate(propagator, model, state, false)?;
    Ok((n.ss / model.normalization()).sqrt())
}

/// Differential correction of the six-state at the first measurement epoch.
///
/// Plain Gauss-Newton steps are tried first; a step that raises the WRMS is
/// retried with Levenberg-Marquardt damping.
pub fn bls_orbit_determination(
    propagator: &Propagator,
    model: &dyn MeasurementModel,
    guess: &InertialState,
    options: &BlsOptions,
) -> Result<OrbitEstimate> {
    let epoch = *model
        .epochs()
        .first()
        .ok_or_else(|| Error::EmptyWindow("no measurements".into()))?;
    if model.normalization() < 6.0 {
        return Err(Error::RankDeficient(model.normalization() as usize));
    }
    let mut x = if guess.epoch == epoch {
        *guess
    } else {
        propagator.propagate(guess, None, epoch)?
    };
    let norm = model.normalization();
    let wrms = |ss: f64| (ss / norm).sqrt();
    let mut cur = accumulate(propagator, model, &x, true)?;
    let mut lambda = 0.0;
    let mut increases = 0;
    let mut iterations = 0;
    loop {
        if wrms(cur.ss) < options.exact_wrms {
            break;
        }
        if iterations >= options.max_iterations {
            return Err(Error::Divergence {
                iterations,
                wrms: wrms(cur.ss),
            });
        }
        iterations += 1;
        let d = cur.n.diagonal().map(|v| v.sqrt());
        if d.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::RankDeficient(d.iter().filter(|v| **v > 0.0).count()));
        }
        let mut scaled = Matrix6::from_fn(|i, j| cur.n[(i, j)] / (d[i] * d[j]));
        for i in 0..6 {
            scaled[(i, i)] += lambda;
        }
        let step = scaled
            .cholesky()
            .ok_or(Error::RankDeficient(6))?
            .solve(&cur.b.component_div(&d))
            .component_div(&d);
        let mut trial_state = x;
        trial_state.r += step.fixed_rows::<3>(0);
        trial_state.v += step.fixed_rows::<3>(3);
        let trial = accumulate(propagator, model, &trial_state, true);
        let accepted = match &trial {
            Ok(t) => t.ss <= cur.ss,
            Err(_) => false,
        };
        if !accepted {
            increases += 1;
            if increases >= options.max_increases {
                return Err(Error::Divergence {
                    iterations,
                    wrms: wrms(cur.ss),
                });
            }
            lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
            continue;
        }
        let trial = trial?;
        increases = 0;
        let (old, new) = (wrms(cur.ss), wrms(trial.ss));
        x = trial_state;
        cur = trial;
        lambda = if lambda < 1e-6 { 0.0 } else { lambda / 10.0 };
        if (old - new).abs() <= options.tolerance * old {
            break;
        }
    }
    let covariance = cur
        .n
        .try_inverse()
        .ok_or(Error::SingularMatrix("orbit normal matrix"))?;
    Ok(OrbitEstimate {
        state: x,
        covariance: 0.5 * (covariance + covariance.transpose()),
        wrms: wrms(cur.ss),
        iterations,
    })
}

/// Picks a starting orbit for [`bls_orbit_determination`] by sliding
/// `reference` along its own trajectory by `shifts` seconds and relabelling
/// the result to the first measurement epoch.
pub fn scan_initial_guess(
    propagator: &Propagator,
    model: &dyn MeasurementModel,
    reference: &InertialState,
    shifts: &[f64],
) -> Result<InertialState> {
    let epoch = *model
        .epochs()
        .first()
        .ok_or_else(|| Error::EmptyWindow("no measurements".into()))?;
    let targets: Vec<_> = shifts.iter().map(|s| epoch + *s).collect();
    let shifted = propagator.propagate_to(reference, None, &targets)?;
    let mut best: Option<(f64, InertialState)> = None;
    for s in shifted {
        let trial = InertialState::new(epoch, s.r, s.v);
        let Ok(w) = orbit_wrms(propagator, model, &trial) else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| w < *b) {
            best = Some((w, trial));
        }
    }
    best.map(|(_, s)| s)
        .ok_or_else(|| Error::InvalidInput("no usable initial guess".into()))
}
