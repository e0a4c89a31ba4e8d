//! Maneuver detection: correlation-gated search window, candidate grid,
//! per-candidate thrust fits and minimum-ΔV selection.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{
    correlate_orbits, epoch_grid, CorrelationReport, CovariantOrbit, CHI_MAX, DEFAULT_FLOOR,
    DEFAULT_RELAXATION,
};
use crate::dynamics::{vvlh_rotation, Epoch, InertialState, Propagator};
use crate::estimation::{
    bls_orbit_determination, scan_initial_guess, BlsOptions, MeasurementModel, OrbitEstimate,
    StackedMeasurements, ThrustEstimate, ThrustOptions, ThrustProblem, IMPULSE_WINDOW,
};
use crate::{Error, Result};

/// Time span that may contain the maneuver, with the midpoint hint region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    /// Last pre-maneuver observation.
    pub t0: Epoch,
    /// First post-maneuver observation.
    pub t1: Epoch,
    /// Disjoint, sorted closed intervals of admissible burn midpoints.
    pub hints: Vec<(Epoch, Epoch)>,
    pub max_duration: f64,
}

impl SearchWindow {
    pub fn full(t0: Epoch, t1: Epoch, max_duration: f64) -> Result<Self> {
        if !(t0 < t1) || !(max_duration > 0.0) {
            return Err(Error::InvalidInput(
                "search window needs t0 < t1 and a positive duration".into(),
            ));
        }
        Ok(Self {
            t0,
            t1,
            hints: vec![(t0, t1)],
            max_duration,
        })
    }

    pub fn contains_midpoint(&self, t: Epoch) -> bool {
        self.hints.iter().any(|(a, b)| *a <= t && t <= *b)
    }

    /// Total length of the hint region [s].
    pub fn hint_length(&self) -> f64 {
        self.hints.iter().map(|(a, b)| *b - *a).sum()
    }
}

/// Pads every sub-threshold epoch by `±max_duration/2`, clips to
/// `[t0, t1]` and merges overlaps.
pub fn build_search_window(
    t0: Epoch,
    t1: Epoch,
    sub_threshold: &[Epoch],
    max_duration: f64,
) -> Result<SearchWindow> {
    let mut w = SearchWindow::full(t0, t1, max_duration)?;
    let half = 0.5 * max_duration;
    let mut spans: Vec<(Epoch, Epoch)> = sub_threshold
        .iter()
        .map(|t| ((*t - half).max(t0), (*t + half).min(t1)))
        .filter(|(a, b)| a <= b)
        .collect();
    spans.sort();
    let mut merged: Vec<(Epoch, Epoch)> = Vec::new();
    for (a, b) in spans {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    if merged.is_empty() {
        return Err(Error::EmptyWindow(
            "no correlation hint inside [t0, t1]".into(),
        ));
    }
    w.hints = merged;
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Midpoint spacing [s].
    pub step: f64,
    /// Duration spacing [s]; durations run from one step to the window's
    /// maximum.
    pub duration_step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            step: 60.0,
            duration_step: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverCandidate {
    pub start: Epoch,
    pub end: Epoch,
    /// `None` when the estimator failed; such candidates carry `j = ∞`.
    pub estimate: Option<ThrustEstimate>,
    pub j: f64,
    pub delta_v: f64,
    pub accepted: bool,
}

impl ManeuverCandidate {
    pub fn midpoint(&self) -> Epoch {
        self.start + 0.5 * (self.end - self.start)
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn u_hat(&self) -> Vector3<f64> {
        self.estimate
            .map(|e| e.u_hat)
            .unwrap_or_else(Vector3::zeros)
    }

    fn from_result(start: Epoch, end: Epoch, r: Result<ThrustEstimate>, threshold: f64) -> Self {
        match r {
            Ok(est) => Self {
                start,
                end,
                j: est.j,
                delta_v: est.delta_v(),
                accepted: est.j.is_finite() && est.j <= threshold,
                estimate: Some(est),
            },
            Err(_) => Self {
                start,
                end,
                estimate: None,
                j: f64::INFINITY,
                delta_v: f64::INFINITY,
                accepted: false,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    LongDuration,
    Impulsive,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// Every evaluated candidate, sorted by (start, end).
    pub candidates: Vec<ManeuverCandidate>,
    /// Minimum-ΔV accepted candidate.
    pub selected: Option<ManeuverCandidate>,
    pub mode: DetectionMode,
    /// For impulsive results from the long-duration grid: the shortest
    /// accepted candidate sharing the selected midpoint.
    pub ridge: Option<ManeuverCandidate>,
}

impl DetectionResult {
    pub fn accepted(&self) -> impl Iterator<Item = &ManeuverCandidate> {
        self.candidates.iter().filter(|c| c.accepted)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tb_s,tf_s,J,dV_mps,accepted")?;
        for c in &self.candidates {
            writeln!(
                w,
                "{:.3},{:.3},{:.6e},{:.6e},{}",
                c.start.seconds(),
                c.end.seconds(),
                c.j,
                c.delta_v,
                u8::from(c.accepted)
            )?;
        }
        Ok(())
    }

    /// Number of 4-connected components of accepted cells on the
    /// (start, end) lattice of the given spacing.
    pub fn accepted_regions(&self, spacing: f64) -> usize {
        let key = |c: &ManeuverCandidate| {
            (
                (c.start.seconds() / spacing).round() as i64,
                (c.end.seconds() / spacing).round() as i64,
            )
        };
        let cells: HashMap<(i64, i64), usize> = self
            .accepted()
            .enumerate()
            .map(|(i, c)| (key(c), i))
            .collect();
        let mut seen = vec![false; cells.len()];
        let mut regions = 0;
        for (&start, &i) in &cells {
            if seen[i] {
                continue;
            }
            regions += 1;
            let mut stack = vec![start];
            seen[i] = true;
            while let Some((a, b)) = stack.pop() {
                for n in [(a + 1, b), (a - 1, b), (a, b + 1), (a, b - 1)] {
                    if let Some(&j) = cells.get(&n) {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        regions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub grid: GridSpec,
    /// Acceptance threshold on J.
    pub threshold: f64,
    pub options: ThrustOptions,
    /// Relative ΔV spread below which the accepted durations at the selected
    /// midpoint count as one impulsive ridge.
    pub ridge_spread: f64,
    /// Minimum number of accepted durations forming a ridge.
    pub ridge_members: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            threshold: 1.2,
            options: ThrustOptions::default(),
            ridge_spread: 0.02,
            ridge_members: 3,
        }
    }
}

fn lattice_key(t: Epoch) -> i64 {
    (t.seconds() * 1e3).round() as i64
}

/// Coasted pre-maneuver states at every distinct epoch in `epochs`.
fn coast_cache(
    propagator: &Propagator,
    pre: &InertialState,
    epochs: impl Iterator<Item = Epoch>,
) -> Result<HashMap<i64, InertialState>> {
    let mut unique: Vec<Epoch> = epochs.collect();
    unique.sort();
    unique.dedup();
    let states = propagator.propagate_to(pre, None, &unique)?;
    Ok(states
        .into_iter()
        .map(|s| (lattice_key(s.epoch), s))
        .collect())
}

fn midpoints(window: &SearchWindow, step: f64) -> Vec<Epoch> {
    let n = ((window.t1 - window.t0) / step).floor() as usize;
    (0..=n)
        .map(|k| window.t0 + k as f64 * step)
        .filter(|m| window.contains_midpoint(*m))
        .collect()
}

/// Burn windows enumerated by the long-duration grid.
pub fn candidate_windows(window: &SearchWindow, grid: &GridSpec) -> Vec<(Epoch, Epoch)> {
    let max_j = (window.max_duration / grid.duration_step + 1e-9).floor() as usize;
    let mut out = Vec::new();
    for m in midpoints(window, grid.step) {
        for j in 1..=max_j {
            let half = 0.5 * j as f64 * grid.duration_step;
            let (b, f) = (m - half, m + half);
            if b >= window.t0 && f <= window.t1 {
                out.push((b, f));
            }
        }
    }
    out.sort();
    out
}

fn finish(
    mut candidates: Vec<ManeuverCandidate>,
) -> (Vec<ManeuverCandidate>, Option<ManeuverCandidate>) {
    candidates.sort_by(|a, b| (a.start, a.end).cmp(&(b.start, b.end)));
    let selected = candidates
        .iter()
        .filter(|c| c.accepted)
        .min_by(|a, b| {
            a.delta_v
                .total_cmp(&b.delta_v)
                .then(a.j.total_cmp(&b.j))
                .then((a.start, a.end).cmp(&(b.start, b.end)))
        })
        .copied();
    (candidates, selected)
}

/// Long-duration grid search.
pub fn detect(
    propagator: &Propagator,
    pre: &InertialState,
    model: &dyn MeasurementModel,
    window: &SearchWindow,
    config: &DetectionConfig,
) -> Result<DetectionResult> {
    let windows = candidate_windows(window, &config.grid);
    let cache = coast_cache(propagator, pre, windows.iter().map(|w| w.0))?;
    let mut problem = ThrustProblem::new(*propagator, *pre, model);
    problem.options = config.options;
    let candidates: Vec<ManeuverCandidate> = windows
        .par_iter()
        .map(|&(b, f)| {
            let r = problem.estimate_from(&cache[&lattice_key(b)], f, Vector3::zeros());
            ManeuverCandidate::from_result(b, f, r, config.threshold)
        })
        .collect();
    let (candidates, selected) = finish(candidates);

    let mut mode = DetectionMode::None;
    let mut ridge = None;
    if let Some(sel) = selected {
        mode = DetectionMode::LongDuration;
        let mid = lattice_key(sel.midpoint());
        let members: Vec<&ManeuverCandidate> = candidates
            .iter()
            .filter(|c| c.accepted && lattice_key(c.midpoint()) == mid)
            .collect();
        let lo = members
            .iter()
            .map(|c| c.delta_v)
            .fold(f64::INFINITY, f64::min);
        let hi = members.iter().map(|c| c.delta_v).fold(0.0, f64::max);
        if members.len() >= config.ridge_members && (hi - lo) < config.ridge_spread * lo {
            mode = DetectionMode::Impulsive;
            ridge = members
                .into_iter()
                .min_by(|a, b| a.duration().total_cmp(&b.duration()))
                .copied();
        }
    }
    Ok(DetectionResult {
        candidates,
        selected,
        mode,
        ridge,
    })
}

/// One-dimensional scan over impulse epochs, each fitted through a 1-s window.
pub fn detect_impulsive(
    propagator: &Propagator,
    pre: &InertialState,
    model: &dyn MeasurementModel,
    window: &SearchWindow,
    step: f64,
    config: &DetectionConfig,
) -> Result<DetectionResult> {
    let half = 0.5 * IMPULSE_WINDOW;
    let epochs: Vec<Epoch> = midpoints(window, step)
        .into_iter()
        .filter(|m| *m - half >= window.t0 && *m + half <= window.t1)
        .collect();
    let cache = coast_cache(propagator, pre, epochs.iter().map(|m| *m - half))?;
    let mut problem = ThrustProblem::new(*propagator, *pre, model);
    problem.options = config.options;
    let candidates: Vec<ManeuverCandidate> = epochs
        .par_iter()
        .map(|&m| {
            let (b, f) = (m - half, m + half);
            let r = problem.estimate_from(&cache[&lattice_key(b)], f, Vector3::zeros());
            ManeuverCandidate::from_result(b, f, r, config.threshold)
        })
        .collect();
    let (candidates, selected) = finish(candidates);
    Ok(DetectionResult {
        mode: if selected.is_some() {
            DetectionMode::Impulsive
        } else {
            DetectionMode::None
        },
        candidates,
        selected,
        ridge: None,
    })
}

/// Inertial ΔV vector of an impulsive candidate, `w C û`.
pub fn impulse_vector(
    propagator: &Propagator,
    pre: &InertialState,
    candidate: &ManeuverCandidate,
) -> Result<Vector3<f64>> {
    let coast = propagator.propagate(pre, None, candidate.midpoint())?;
    Ok(candidate.duration() * (vvlh_rotation(&coast)? * candidate.u_hat()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Auto,
    Impulsive,
    Long,
}

/// Settings for the end-to-end pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Post-maneuver tracklets used for orbit determination and detection.
    pub post_tracklets: usize,
    pub max_duration_s: f64,
    pub grid_step_s: f64,
    pub threshold: f64,
    pub chi_max: f64,
    /// Relaxation radius of the relaxed gate [m].
    pub relaxation_m: f64,
    /// Per-axis 1σ floor on the pre-maneuver orbit [m].
    pub floor_m: f64,
    pub correlation_step_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            post_tracklets: 3,
            max_duration_s: 3600.0,
            grid_step_s: 60.0,
            threshold: 1.2,
            chi_max: CHI_MAX,
            relaxation_m: DEFAULT_RELAXATION,
            floor_m: DEFAULT_FLOOR.sqrt(),
            correlation_step_s: 60.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.max_duration_s,
            self.grid_step_s,
            self.threshold,
            self.chi_max,
            self.correlation_step_s,
        ];
        if positive.iter().any(|v| !(*v > 0.0))
            || !(self.relaxation_m >= 0.0)
            || !(self.floor_m >= 0.0)
            || self.post_tracklets == 0
        {
            return Err(Error::InvalidInput(
                "detection settings must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn detection(&self) -> DetectionConfig {
        DetectionConfig {
            grid: GridSpec {
                step: self.grid_step_s,
                duration_step: self.grid_step_s,
            },
            threshold: self.threshold,
            ..DetectionConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub orbit: OrbitEstimate,
    pub report: CorrelationReport,
    pub window: Option<SearchWindow>,
    /// Impulsive scan result, when it ran.
    pub impulsive: Option<DetectionResult>,
    /// Long-duration grid result, when it ran.
    pub long: Option<DetectionResult>,
}

impl PipelineOutcome {
    pub fn correlated(&self) -> bool {
        self.window.is_some()
    }

    /// The result that answers the query: long-duration if it ran, else the
    /// impulsive scan.
    pub fn result(&self) -> Option<&DetectionResult> {
        self.long.as_ref().or(self.impulsive.as_ref())
    }
}

/// Post-maneuver orbit determination, seeded by the coasted pre-maneuver
/// orbit, with a phase scan as fallback.
pub fn determine_post_orbit(
    propagator: &Propagator,
    pre: &InertialState,
    model: &StackedMeasurements,
) -> Result<OrbitEstimate> {
    let opts = BlsOptions::default();
    let coast = propagator.propagate(pre, None, model.first_epoch())?;
    match bls_orbit_determination(propagator, model, &coast, &opts) {
        Ok(o) => Ok(o),
        Err(_) => {
            let shifts: Vec<f64> = (-180..=180).map(|k| 5.0 * k as f64).collect();
            let guess = scan_initial_guess(propagator, model, &coast, &shifts)?;
            bls_orbit_determination(propagator, model, &guess, &opts)
        }
    }
}

/// Fits the post-maneuver orbit and correlates it with the error-free
/// pre-maneuver orbit over `[pre.epoch, first post measurement]`.
pub fn correlate_pre_post(
    propagator: &Propagator,
    pre: &InertialState,
    model: &StackedMeasurements,
    config: &PipelineConfig,
) -> Result<(OrbitEstimate, CorrelationReport)> {
    config.validate()?;
    let orbit = determine_post_orbit(propagator, pre, model)?;
    let first = CovariantOrbit::error_free(*propagator, *pre, config.floor_m * config.floor_m);
    let second = CovariantOrbit {
        propagator: *propagator,
        state: orbit.state,
        covariance: orbit.covariance,
        floor: 0.0,
    };
    let grid = epoch_grid(pre.epoch, model.first_epoch(), config.correlation_step_s);
    let report = correlate_orbits(
        &first,
        &second,
        &grid,
        config.chi_max,
        Some(config.relaxation_m),
    )?;
    Ok((orbit, report))
}

/// Orbit determination, correlation, search window and detection.
pub fn run_pipeline(
    propagator: &Propagator,
    pre: &InertialState,
    model: &StackedMeasurements,
    config: &PipelineConfig,
    mode: SearchMode,
) -> Result<PipelineOutcome> {
    let (orbit, report) = correlate_pre_post(propagator, pre, model, config)?;
    let t0 = pre.epoch;
    let t1 = model.first_epoch();
    let hints = report.sub_threshold_epochs();
    let mut outcome = PipelineOutcome {
        orbit,
        report,
        window: None,
        impulsive: None,
        long: None,
    };
    if hints.is_empty() {
        return Ok(outcome);
    }
    let window = build_search_window(t0, t1, &hints, config.max_duration_s)?;
    let det = config.detection();
    if matches!(mode, SearchMode::Auto | SearchMode::Impulsive) {
        let r = detect_impulsive(propagator, pre, model, &window, config.grid_step_s, &det)?;
        let found = r.selected.is_some();
        outcome.impulsive = Some(r);
        if mode == SearchMode::Impulsive || found {
            outcome.window = Some(window);
            return Ok(outcome);
        }
    }
    outcome.long = Some(detect(propagator, pre, model, &window, &det)?);
    outcome.window = Some(window);
    Ok(outcome)
}

/// Compact record of a detection for JSON output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mode: DetectionMode,
    pub tb_s: Option<f64>,
    pub tf_s: Option<f64>,
    pub tb_utc: Option<String>,
    pub tf_utc: Option<String>,
    pub u_vvlh_mps2: Option<[f64; 3]>,
    #[serde(rename = "dV_mps")]
    pub dv_mps: Option<f64>,
    #[serde(rename = "J")]
    pub j: Option<f64>,
    pub iterations: Option<usize>,
    /// Shortest accepted duration on the impulsive ridge [s].
    pub ridge_duration_s: Option<f64>,
    pub candidates: usize,
    pub accepted: usize,
    pub failed: usize,
}

impl Summary {
    pub fn new(result: &DetectionResult, utc: impl Fn(Epoch) -> String) -> Self {
        let pick = result.selected.as_ref();
        Self {
            mode: result.mode,
            tb_s: pick.map(|c| c.start.seconds()),
            tf_s: pick.map(|c| c.end.seconds()),
            tb_utc: pick.map(|c| utc(c.start)),
            tf_utc: pick.map(|c| utc(c.end)),
            u_vvlh_mps2: pick.map(|c| {
                let u = c.u_hat();
                [u.x, u.y, u.z]
            }),
            dv_mps: pick.map(|c| c.delta_v),
            j: pick.map(|c| c.j),
            iterations: pick.and_then(|c| c.estimate.map(|e| e.iterations)),
            ridge_duration_s: result.ridge.map(|c| c.duration()),
            candidates: result.candidates.len(),
            accepted: result.accepted().count(),
            failed: result
                .candidates
                .iter()
                .filter(|c| c.estimate.is_none())
                .count(),
        }
    }
}
