//! Detection and characterization of long-duration constant-thrust maneuvers
//! from space-based angles-only optical tracklets.
//!
//! The crate is organized bottom-up:
//!
//! - [`dynamics`]: states, elements, the VVLH frame, two-body/J2 forces,
//!   an adaptive RKF7(8) propagator with forced nodes at burn boundaries, and
//!   variational (STM + thrust sensitivity) propagation.
//! - [`observation`]: right ascension / declination models with light-time and
//!   aberration corrections, their partials, and tracklet simulation.
//! - [`correlation`]: orbit-to-orbit Mahalanobis gating, strict and
//!   ball-relaxed.
//! - [`estimation`]: batch orbit determination and the Gauss-Newton thrust
//!   estimator for a fixed burn window.
//! - [`detection`]: the candidate grid search with minimum-ΔV selection.
//! - [`cw`]: Clohessy-Wiltshire relative-motion analytics.
//! - [`experiments`]: impulse-vs-long-burn divergence and observability maps.
//! - [`scenario`]: scenario files, tracklet persistence and simulation.

pub mod correlation;
pub mod cw;
pub mod detection;
pub mod dynamics;
mod error;
pub mod estimation;
pub mod experiments;
pub mod observation;
mod roots;
pub mod scenario;

pub use error::{Error, Result};

/// Speed of light used by the measurement corrections [m/s].
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// One arcsecond in radians.
pub const ARCSEC: f64 = std::f64::consts::PI / (180.0 * 3600.0);
