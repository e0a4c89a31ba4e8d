//! Scenario files, UTC mapping, tracklet and ephemeris persistence.
//!
//! Scenarios are TOML. The grammar is documented in `scenarios/FORMAT.md`.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::detection::PipelineConfig;
use crate::dynamics::{
    elements_to_state, Epoch, ForceModel, ImpulsiveManeuver, InertialState, ManeuverPolicy,
    OrbitalElements, Propagator, Zonal,
};
use crate::estimation::StackedMeasurements;
use crate::observation::{
    simulate_tracklets, AngularMeasurement, Ephemeris, Tracklet, TrackletWindow,
};
use crate::{Error, Result, ARCSEC};

const UTC_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S%.fZ",
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d, %H:%M:%S%.f",
];

/// Parses a UTC timestamp; no leap-second handling.
pub fn parse_utc(s: &str) -> Option<NaiveDateTime> {
    UTC_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Fixed mapping between UTC and scenario seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeScale {
    pub reference: NaiveDateTime,
}

impl TimeScale {
    pub fn epoch(&self, utc: &NaiveDateTime) -> Epoch {
        let d = *utc - self.reference;
        let ns = d.num_nanoseconds().unwrap_or(i64::MAX);
        Epoch::from_seconds(ns as f64 * 1e-9)
    }

    pub fn utc(&self, epoch: Epoch) -> NaiveDateTime {
        let ns = (epoch.seconds() * 1e9).round() as i64;
        self.reference + TimeDelta::nanoseconds(ns)
    }

    pub fn format(&self, epoch: Epoch) -> String {
        self.utc(epoch).format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowRole {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    /// Offset known to the second.
    Published,
    /// Offset estimated from a timeline plot.
    Approximate,
    /// Filler window with no external reference.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioWindow {
    pub window: TrackletWindow,
    pub role: WindowRole,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthManeuver {
    None,
    Finite(ManeuverPolicy),
    Impulsive(ImpulsiveManeuver),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub time: TimeScale,
    /// Simulated span after the reference epoch [s].
    pub span: f64,
    pub force: ForceModel,
    pub observer_id: u32,
    pub observer: OrbitalElements,
    pub target: OrbitalElements,
    pub maneuver: TruthManeuver,
    pub windows: Vec<ScenarioWindow>,
    /// Angle noise 1σ [rad].
    pub sigma: f64,
    pub cadence: f64,
    pub seed: u64,
    /// Truth ephemeris output step [s].
    pub truth_step: f64,
    pub detection: PipelineConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    reference_epoch: String,
    span_hours: f64,
    #[serde(default = "default_truth_step")]
    truth_step_s: f64,
    force: RawForce,
    observer: RawBody,
    target: RawBody,
    maneuver: RawManeuver,
    measurements: RawMeasurements,
    #[serde(default)]
    detection: PipelineConfig,
    windows: Vec<RawWindow>,
}

fn default_truth_step() -> f64 {
    60.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawForce {
    zonal_degree: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBody {
    #[serde(default)]
    id: u32,
    a_km: f64,
    e: f64,
    i_deg: f64,
    raan_deg: f64,
    argp_deg: f64,
    mean_anomaly_deg: f64,
}

impl RawBody {
    fn elements(&self) -> OrbitalElements {
        OrbitalElements {
            a_km: self.a_km,
            e: self.e,
            i_deg: self.i_deg,
            raan_deg: self.raan_deg,
            argp_deg: self.argp_deg,
            mean_anomaly_deg: self.mean_anomaly_deg,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase", tag = "kind")]
enum RawManeuver {
    None,
    Finite {
        start: String,
        end: String,
        thrust_mps2: [f64; 3],
    },
    Impulsive {
        epoch: String,
        delta_v_mps: [f64; 3],
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurements {
    sigma_arcsec: f64,
    cadence_s: f64,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    offset_s: f64,
    duration_s: f64,
    role: WindowRole,
    timing: Timing,
}

fn line_at(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside the `nth` occurrence of `header`, best effort.
fn locate(text: &str, header: &str, nth: usize, key: &str) -> usize {
    let mut from = 0;
    if !header.is_empty() {
        let mut found = None;
        for (k, (pos, _)) in text.match_indices(header).enumerate() {
            if k == nth {
                found = Some(pos);
                break;
            }
        }
        match found {
            Some(p) => from = p,
            None => return 1,
        }
    }
    let tail = &text[from..];
    let pos = tail
        .lines()
        .scan(0usize, |off, l| {
            let here = *off;
            *off += l.len() + 1;
            Some((here, l))
        })
        .find(|(_, l)| {
            let t = l.trim_start();
            t.starts_with(key) && t[key.len()..].trim_start().starts_with('=')
        })
        .map(|(p, _)| p)
        .unwrap_or(0);
    line_at(text, from + pos)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_at(text, s.start)).unwrap_or(1);
            err(line, e.message().to_string())
        })?;

        let reference = parse_utc(&raw.reference_epoch).ok_or_else(|| {
            err(
                locate(text, "", 0, "reference_epoch"),
                format!("unreadable UTC timestamp '{}'", raw.reference_epoch),
            )
        })?;
        let time = TimeScale { reference };
        let epoch_of = |s: &str, key: &str| -> Result<Epoch> {
            parse_utc(s).map(|t| time.epoch(&t)).ok_or_else(|| {
                err(
                    locate(text, "[maneuver]", 0, key),
                    format!("unreadable UTC timestamp '{s}'"),
                )
            })
        };
        if !(raw.span_hours > 0.0) {
            return Err(err(
                locate(text, "", 0, "span_hours"),
                "span must be positive".into(),
            ));
        }
        let span = raw.span_hours * 3600.0;

        let force = ForceModel {
            zonal: Zonal::from_degree(raw.force.zonal_degree)
                .map_err(|e| err(locate(text, "[force]", 0, "zonal_degree"), e.to_string()))?,
            ..ForceModel::two_body()
        };
        for (header, body) in [("[observer]", &raw.observer), ("[target]", &raw.target)] {
            body.elements()
                .validate()
                .map_err(|e| err(locate(text, header, 0, "e"), e.to_string()))?;
        }

        let maneuver = match &raw.maneuver {
            RawManeuver::None => TruthManeuver::None,
            RawManeuver::Finite {
                start,
                end,
                thrust_mps2,
            } => {
                let p = ManeuverPolicy::new(
                    epoch_of(start, "start")?,
                    epoch_of(end, "end")?,
                    Vector3::from(*thrust_mps2),
                )
                .map_err(|e| err(locate(text, "[maneuver]", 0, "end"), e.to_string()))?;
                TruthManeuver::Finite(p)
            }
            RawManeuver::Impulsive { epoch, delta_v_mps } => {
                TruthManeuver::Impulsive(ImpulsiveManeuver {
                    epoch: epoch_of(epoch, "epoch")?,
                    delta_v: Vector3::from(*delta_v_mps),
                })
            }
        };

        let m = &raw.measurements;
        if !(m.sigma_arcsec >= 0.0) {
            return Err(err(
                locate(text, "[measurements]", 0, "sigma_arcsec"),
                "sigma must be non-negative".into(),
            ));
        }
        if !(m.cadence_s > 0.0) {
            return Err(err(
                locate(text, "[measurements]", 0, "cadence_s"),
                "cadence must be positive".into(),
            ));
        }

        let mut windows = Vec::with_capacity(raw.windows.len());
        for (k, w) in raw.windows.iter().enumerate() {
            let line = locate(text, "[[windows]]", k, "offset_s");
            if !(w.duration_s >= m.cadence_s) {
                return Err(err(
                    line,
                    format!("window {k} is shorter than one cadence step"),
                ));
            }
            if w.offset_s < 0.0 || w.offset_s + w.duration_s > span {
                return Err(err(
                    line,
                    format!("window {k} lies outside the simulated span"),
                ));
            }
            if let Some(prev) = windows.last() {
                let prev: &ScenarioWindow = prev;
                if w.offset_s <= prev.window.start.seconds() + prev.window.duration {
                    return Err(err(
                        line,
                        format!("window {k} overlaps or precedes window {}", k - 1),
                    ));
                }
            }
            windows.push(ScenarioWindow {
                window: TrackletWindow {
                    start: Epoch::from_seconds(w.offset_s),
                    duration: w.duration_s,
                },
                role: w.role,
                timing: w.timing,
            });
        }
        if windows.is_empty() {
            return Err(err(1, "at least one [[windows]] entry is required".into()));
        }
        let first_post = windows.iter().position(|w| w.role == WindowRole::Post);
        if let Some(p) = first_post {
            if windows[p..].iter().any(|w| w.role == WindowRole::Pre) {
                return Err(err(
                    locate(text, "[[windows]]", p, "role"),
                    "pre-maneuver windows must precede post-maneuver windows".into(),
                ));
            }
        }
        let d = raw.detection;
        d.validate().map_err(|e| {
            err(
                locate(text, "[detection]", 0, "max_duration_s"),
                e.to_string(),
            )
        })?;

        Ok(Self {
            name: raw.name,
            time,
            span,
            force,
            observer_id: raw.observer.id,
            observer: raw.observer.elements(),
            target: raw.target.elements(),
            maneuver,
            windows,
            sigma: m.sigma_arcsec * ARCSEC,
            cadence: m.cadence_s,
            seed: m.seed,
            truth_step: raw.truth_step_s,
            detection: d,
        })
    }

    pub fn propagator(&self) -> Propagator {
        Propagator::new(self.force)
    }

    pub fn end(&self) -> Epoch {
        Epoch::from_seconds(self.span)
    }

    pub fn observer_ephemeris(&self) -> Result<Ephemeris> {
        let s0 = elements_to_state(&self.observer, self.force.mu, Epoch::default())?;
        Ephemeris::generate(
            self.propagator(),
            &s0,
            None,
            Epoch::default(),
            self.end(),
            600.0,
        )
    }

    pub fn truth_ephemeris(&self) -> Result<Ephemeris> {
        let s0 = elements_to_state(&self.target, self.force.mu, Epoch::default())?;
        let prop = self.propagator();
        match self.maneuver {
            TruthManeuver::None => {
                Ephemeris::generate(prop, &s0, None, Epoch::default(), self.end(), 600.0)
            }
            TruthManeuver::Finite(p) => {
                Ephemeris::generate(prop, &s0, Some(p), Epoch::default(), self.end(), 600.0)
            }
            TruthManeuver::Impulsive(imp) => {
                Ephemeris::generate_impulsive(prop, &s0, &imp, Epoch::default(), self.end(), 600.0)
            }
        }
    }

    pub fn tracklet_windows(&self) -> Vec<TrackletWindow> {
        self.windows.iter().map(|w| w.window).collect()
    }

    /// Last pre-maneuver measurement epoch.
    pub fn t0(&self) -> Option<Epoch> {
        self.windows
            .iter()
            .filter(|w| w.role == WindowRole::Pre)
            .filter_map(|w| w.window.epochs(self.cadence).last().copied())
            .max()
    }

    pub fn role_of(&self, tracklet_id: u32) -> Option<WindowRole> {
        self.windows.get(tracklet_id as usize).map(|w| w.role)
    }

    pub fn simulate(&self) -> Result<Simulation> {
        let truth = self.truth_ephemeris()?;
        let observer = self.observer_ephemeris()?;
        let tracklets = simulate_tracklets(
            &self.tracklet_windows(),
            &truth,
            &observer,
            self.observer_id,
            self.sigma,
            self.cadence,
            self.seed,
        )?;
        Ok(Simulation {
            tracklets,
            truth,
            observer,
        })
    }

    /// Splits tracklets into pre- and post-maneuver sets by window role.
    pub fn split<'a>(&self, tracklets: &'a [Tracklet]) -> (Vec<&'a Tracklet>, Vec<&'a Tracklet>) {
        tracklets
            .iter()
            .partition(|t| self.role_of(t.id) != Some(WindowRole::Post))
    }

    /// Error-free pre-maneuver state at `t0` and the first
    /// `post_tracklets` post-maneuver tracklets stacked for estimation.
    /// `sigma` overrides the recorded weights, e.g. for noiseless data.
    pub fn detection_inputs(
        &self,
        tracklets: &[Tracklet],
        truth: &Ephemeris,
        observer: &Ephemeris,
        sigma: Option<f64>,
    ) -> Result<(InertialState, StackedMeasurements)> {
        let t0 = self
            .t0()
            .ok_or_else(|| Error::InvalidInput("scenario has no pre-maneuver window".into()))?;
        let (_, post) = self.split(tracklets);
        let n = self.detection.post_tracklets;
        if post.len() < n {
            return Err(Error::InvalidInput(format!(
                "{} post-maneuver tracklets available, {n} requested",
                post.len()
            )));
        }
        let used: Vec<Tracklet> = post[..n].iter().map(|t| (*t).clone()).collect();
        let model = StackedMeasurements::new(&used, observer, sigma)?;
        Ok((truth.state_at(t0)?, model))
    }
}

pub struct Simulation {
    pub tracklets: Vec<Tracklet>,
    pub truth: Ephemeris,
    pub observer: Ephemeris,
}

#[derive(Serialize, Deserialize)]
struct TrackletRecord {
    epoch_s: f64,
    alpha_rad: f64,
    delta_rad: f64,
    sigma_rad: f64,
    tracklet_id: u32,
    observer_id: u32,
}

pub fn write_tracklets<W: Write>(w: W, tracklets: &[Tracklet]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for t in tracklets {
        for m in &t.measurements {
            out.serialize(TrackletRecord {
                epoch_s: m.epoch.seconds(),
                alpha_rad: m.alpha,
                delta_rad: m.delta,
                sigma_rad: m.sigma,
                tracklet_id: t.id,
                observer_id: t.observer_id,
            })
            .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("{other:?}")),
    }
}

/// Reads a tracklet CSV; rows are grouped by tracklet id in order of first
/// appearance.
pub fn read_tracklets<R: Read>(r: R, origin: &str) -> Result<Vec<Tracklet>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut groups: Vec<(u32, u32, Vec<AngularMeasurement>)> = Vec::new();
    for rec in rdr.deserialize::<TrackletRecord>() {
        let rec = rec.map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let m = AngularMeasurement {
            epoch: Epoch::from_seconds(rec.epoch_s),
            alpha: rec.alpha_rad,
            delta: rec.delta_rad,
            sigma: rec.sigma_rad,
        };
        match groups.iter_mut().find(|g| g.0 == rec.tracklet_id) {
            Some(g) => g.2.push(m),
            None => groups.push((rec.tracklet_id, rec.observer_id, vec![m])),
        }
    }
    groups
        .into_iter()
        .map(|(id, obs, ms)| {
            Tracklet::new(id, obs, ms).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: 0,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_states<W: Write>(mut w: W, states: &[InertialState]) -> Result<()> {
    writeln!(w, "epoch_s,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps")?;
    for s in states {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.epoch.seconds(),
            s.r.x,
            s.r.y,
            s.r.z,
            s.v.x,
            s.v.y,
            s.v.z
        )?;
    }
    Ok(())
}

/// Truth states on a regular grid over the whole scenario.
pub fn truth_table(scenario: &Scenario, truth: &Ephemeris) -> Result<Vec<InertialState>> {
    let n = (scenario.span / scenario.truth_step).floor() as usize;
    let epochs: Vec<Epoch> = (0..=n)
        .map(|k| Epoch::from_seconds(k as f64 * scenario.truth_step))
        .collect();
    truth.states_at(&epochs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
reference_epoch = "2020-12-13T00:00:00Z"
span_hours = 10.0

[force]
zonal_degree = 2

[observer]
id = 7
a_km = 6888.58
e = 1e-4
i_deg = 97.0
raan_deg = 148.0
argp_deg = 19.0
mean_anomaly_deg = 275.0

[target]
a_km = 7706.232
e = 1.841e-3
i_deg = 66.037
raan_deg = 354.233
argp_deg = 86.872
mean_anomaly_deg = 296.094

[maneuver]
kind = "finite"
start = "2020-12-13T03:00:00Z"
end = "2020-12-13 03:10:00"
thrust_mps2 = [1e-3, 0.0, 0.0]

[measurements]
sigma_arcsec = 5.0
cadence_s = 1.0
seed = 11

[[windows]]
offset_s = 1000.0
duration_s = 30.0
role = "pre"
timing = "synthetic"

[[windows]]
offset_s = 20000.0
duration_s = 30.0
role = "post"
timing = "published"
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::parse(MINIMAL, "mini.toml").unwrap();
        assert_eq!(s.observer_id, 7);
        assert_eq!(s.force.zonal, Zonal::J2);
        match s.maneuver {
            TruthManeuver::Finite(p) => {
                assert_eq!(p.start.seconds(), 10800.0);
                assert_eq!(p.duration(), 600.0);
            }
            _ => panic!("expected a finite burn"),
        }
        assert_eq!(s.t0().unwrap().seconds(), 1030.0);
        assert!((s.sigma - 5.0 * ARCSEC).abs() < 1e-20);
        assert_eq!(s.detection, PipelineConfig::default());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = MINIMAL.replace("e = 1.841e-3", "e = 1.5");
        match Scenario::parse(&bad, "x.toml") {
            Err(Error::Parse { line, .. }) => {
                assert_eq!(bad.lines().nth(line - 1).unwrap().trim(), "e = 1.5");
            }
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("cadence_s = 1.0", "cadence_s = \"fast\"");
        match Scenario::parse(&bad, "x.toml") {
            Err(Error::Parse { line, .. }) => {
                assert!(bad.lines().nth(line - 1).unwrap().contains("cadence_s"));
            }
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("offset_s = 20000.0", "offset_s = 1010.0");
        match Scenario::parse(&bad, "x.toml") {
            Err(Error::Parse { line, msg, .. }) => {
                assert!(msg.contains("overlaps"), "{msg}");
                assert!(bad.lines().nth(line - 1).unwrap().contains("1010"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn utc_round_trip() {
        let ts = TimeScale {
            reference: parse_utc("2020-12-13T00:00:00Z").unwrap(),
        };
        let e = ts.epoch(&parse_utc("2020-12-14, 05:15:42").unwrap());
        assert_eq!(e.seconds(), 105342.0);
        assert_eq!(ts.format(e), "2020-12-14T05:15:42.000Z");
        let frac = ts.epoch(&parse_utc("2020-12-16T11:46:51.92Z").unwrap());
        assert!((frac.seconds() - 301611.92).abs() < 1e-9);
    }

    #[test]
    fn tracklet_csv_round_trip() {
        let s = Scenario::parse(MINIMAL, "mini.toml").unwrap();
        let sim = s.simulate().unwrap();
        assert_eq!(sim.tracklets.len(), 2);
        let mut buf = Vec::new();
        write_tracklets(&mut buf, &sim.tracklets).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch_s,alpha_rad,delta_rad,sigma_rad,tracklet_id,observer_id"));
        let back = read_tracklets(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, sim.tracklets);
        let (pre, post) = s.split(&back);
        assert_eq!((pre.len(), post.len()), (1, 1));
    }

    #[test]
    fn malformed_tracklet_row_reports_line() {
        let text = "epoch_s,alpha_rad,delta_rad,sigma_rad,tracklet_id,observer_id\n1,0.1,0.2,1e-5,0,0\n2,x,0.2,1e-5,0,0\n";
        match read_tracklets(text.as_bytes(), "t.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
