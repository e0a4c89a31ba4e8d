//! `burnscan` command-line interface.
//!
//! Exit codes: 0 success, 2 no correlation between pre- and post-maneuver
//! orbits, 3 detection failed, 4 input error.

mod output;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use burnscan::correlation::CorrelationReport;
use burnscan::detection::{correlate_pre_post, run_pipeline, SearchMode, Summary};
use burnscan::dynamics::{Epoch, InertialState};
use burnscan::estimation::StackedMeasurements;
use burnscan::experiments::{
    divergence_study, observability_map, write_divergence_csv, DivergenceSettings,
    ObservabilitySettings,
};
use burnscan::scenario::{read_tracklets, truth_table, write_states, write_tracklets, Scenario};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::Serialize;

use output::Run;

const NO_CORRELATION: u8 = 2;
const DETECTION_FAILED: u8 = 3;
const INPUT_ERROR: u8 = 4;

#[derive(Parser)]
#[command(
    name = "burnscan",
    version,
    about = "Long-duration maneuver detection from angles-only tracklets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate tracklets and the truth ephemeris of a scenario.
    Simulate(SimulateArgs),
    /// Fit the post-maneuver orbit and gate it against the pre-maneuver orbit.
    Correlate(CorrelateArgs),
    /// Run the full detection pipeline.
    Detect(DetectArgs),
    /// Finite burn versus impulsive twin: mean 3-D position difference.
    Divergence(DivergenceArgs),
    /// Residual RMS over a grid of candidate burn windows.
    Observability(ObservabilityArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Noise seed overriding the scenario value.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InputArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Tracklet CSV; simulated from the scenario when omitted.
    #[arg(long)]
    tracklets: Option<PathBuf>,
    /// Noise seed overriding the scenario value (simulation only).
    #[arg(long)]
    seed: Option<u64>,
    /// Post-maneuver tracklets used for orbit determination [count].
    #[arg(long)]
    post_tracklets: Option<usize>,
    /// Mahalanobis gate [dimensionless].
    #[arg(long)]
    chi_max: Option<f64>,
    /// Radius of the relaxed gate [m]; 0 reproduces the strict gate.
    #[arg(long)]
    relaxation_m: Option<f64>,
    /// Per-axis 1-sigma floor on the pre-maneuver orbit [m].
    #[arg(long)]
    floor_m: Option<f64>,
    /// Spacing of the correlation epoch grid [s].
    #[arg(long)]
    correlation_step_s: Option<f64>,
}

#[derive(Args)]
struct CorrelateArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Auto,
    Impulsive,
    Long,
}

impl From<ModeArg> for SearchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Auto => SearchMode::Auto,
            ModeArg::Impulsive => SearchMode::Impulsive,
            ModeArg::Long => SearchMode::Long,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Search mode; auto falls back to long-duration when the impulsive scan accepts nothing.
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    /// Midpoint and duration grid spacing [s].
    #[arg(long)]
    grid_step_s: Option<f64>,
    /// Acceptance threshold on the performance index J [dimensionless].
    #[arg(long)]
    threshold: Option<f64>,
    /// Longest candidate burn [s].
    #[arg(long)]
    max_duration_s: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    InTrack,
    Radial,
    Normal,
}

impl Direction {
    /// Unit vector in VVLH (x along velocity, y against the orbit normal,
    /// z toward Earth).
    fn vvlh(self) -> Vector3<f64> {
        match self {
            Direction::InTrack => Vector3::x(),
            Direction::Radial => -Vector3::z(),
            Direction::Normal => -Vector3::y(),
        }
    }
}

#[derive(Args)]
struct DivergenceArgs {
    /// Thrust direction.
    #[arg(long, value_enum, default_value = "in-track")]
    direction: Direction,
    /// Thrust acceleration magnitude [m/s^2].
    #[arg(long, default_value_t = 1e-3)]
    accel_mps2: f64,
    /// Burn durations, comma separated [s].
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "60,300,600,1200,1800,2400"
    )]
    durations_s: Vec<f64>,
    /// Averaging span after burn end [s].
    #[arg(long, default_value_t = 86400.0)]
    horizon_s: f64,
    /// Sampling step of the averaging [s].
    #[arg(long, default_value_t = 60.0)]
    cadence_s: f64,
    /// Circular orbit altitude [m].
    #[arg(long, default_value_t = 500e3)]
    altitude_m: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ObservabilityArgs {
    /// Thrust direction.
    #[arg(long, value_enum, default_value = "in-track")]
    direction: Direction,
    /// Thrust acceleration magnitude [m/s^2].
    #[arg(long, default_value_t = 5e-3)]
    accel_mps2: f64,
    /// True burn start after epoch [s].
    #[arg(long, default_value_t = 43200.0)]
    burn_start_s: f64,
    /// True burn duration [s].
    #[arg(long, default_value_t = 1200.0)]
    duration_s: f64,
    /// First virtual position measurement after epoch [s].
    #[arg(long, default_value_t = 86400.0)]
    first_measurement_s: f64,
    /// Last virtual position measurement after epoch [s].
    #[arg(long, default_value_t = 172800.0)]
    last_measurement_s: f64,
    /// Measurement cadence [s].
    #[arg(long, default_value_t = 60.0)]
    cadence_s: f64,
    /// Grid half width around the true start and end [s].
    #[arg(long, default_value_t = 3600.0)]
    half_width_s: f64,
    /// Grid spacing [s].
    #[arg(long, default_value_t = 120.0)]
    grid_step_s: f64,
    /// Circular orbit altitude [m].
    #[arg(long, default_value_t = 500e3)]
    altitude_m: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<(Scenario, String)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut sc = Scenario::parse(&text, &path.display().to_string())?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    Ok((sc, text))
}

fn simulate(args: &SimulateArgs) -> Result<u8> {
    let (sc, text) = load_scenario(&args.scenario, args.seed)?;
    let mut run = Run::new(&args.out_dir)?;
    run.scenario(&args.scenario, &text, sc.seed);
    let sim = sc.simulate()?;
    let truth = truth_table(&sc, &sim.truth)?;
    run.write("tracklets.csv", |w| Ok(write_tracklets(w, &sim.tracklets)?))?;
    run.write("truth.csv", |w| Ok(write_states(w, &truth)?))?;
    let (pre, post) = sc.split(&sim.tracklets);
    println!(
        "{}: {} tracklets ({} pre, {} post), {} measurements",
        sc.name,
        sim.tracklets.len(),
        pre.len(),
        post.len(),
        sim.tracklets
            .iter()
            .map(|t| t.measurements.len())
            .sum::<usize>()
    );
    run.finish(0)
}

struct Prepared {
    scenario: Scenario,
    pre: InertialState,
    model: StackedMeasurements,
    run: Run,
}

fn prepare(input: &InputArgs) -> Result<Prepared> {
    let (mut sc, text) = load_scenario(&input.scenario, input.seed)?;
    let d = &mut sc.detection;
    if let Some(v) = input.post_tracklets {
        d.post_tracklets = v;
    }
    if let Some(v) = input.chi_max {
        d.chi_max = v;
    }
    if let Some(v) = input.relaxation_m {
        d.relaxation_m = v;
    }
    if let Some(v) = input.floor_m {
        d.floor_m = v;
    }
    if let Some(v) = input.correlation_step_s {
        d.correlation_step_s = v;
    }
    d.validate()?;
    let mut run = Run::new(&input.out_dir)?;
    run.scenario(&input.scenario, &text, sc.seed);
    let (tracklets, truth, observer) = match &input.tracklets {
        Some(path) => {
            let file =
                fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let tracklets = read_tracklets(file, &path.display().to_string())?;
            (tracklets, sc.truth_ephemeris()?, sc.observer_ephemeris()?)
        }
        None => {
            let sim = sc.simulate()?;
            (sim.tracklets, sim.truth, sim.observer)
        }
    };
    let (pre, model) = sc.detection_inputs(&tracklets, &truth, &observer, None)?;
    Ok(Prepared {
        scenario: sc,
        pre,
        model,
        run,
    })
}

fn report_correlation(sc: &Scenario, report: &CorrelationReport) {
    let relaxed = report
        .min_relaxed()
        .map(|v| format!("{v:.3}"))
        .unwrap_or_else(|| "-".into());
    println!(
        "{}: min chi strict {:.3}, relaxed {relaxed} (gate {:.2}); correlated strict {}, relaxed {}",
        sc.name,
        report.min_strict(),
        report.chi_max,
        report.correlated_strict,
        report.correlated_relaxed.unwrap_or(false)
    );
}

fn correlate(args: &CorrelateArgs) -> Result<u8> {
    let mut p = prepare(&args.input)?;
    let prop = p.scenario.propagator();
    let (orbit, report) = match correlate_pre_post(&prop, &p.pre, &p.model, &p.scenario.detection) {
        Ok(r) => r,
        Err(e) => {
            println!("verdict: none ({e})");
            return p.run.finish(DETECTION_FAILED);
        }
    };
    p.run
        .write("correlation.csv", |w| Ok(report.write_csv(w)?))?;
    println!(
        "post-maneuver orbit: wrms {:.3} after {} iterations",
        orbit.wrms, orbit.iterations
    );
    report_correlation(&p.scenario, &report);
    let code = if report.correlated() {
        println!("verdict: correlated");
        0
    } else {
        println!("verdict: uncorrelated");
        NO_CORRELATION
    };
    p.run.finish(code)
}

#[derive(Serialize)]
struct DetectSummary {
    scenario: String,
    search_mode: &'static str,
    correlated_strict: bool,
    correlated_relaxed: bool,
    orbit_wrms: f64,
    #[serde(flatten)]
    result: Option<Summary>,
    impulsive_scan: Option<Summary>,
}

fn detect(args: &DetectArgs) -> Result<u8> {
    let mut p = prepare(&args.input)?;
    let cfg = &mut p.scenario.detection;
    if let Some(v) = args.grid_step_s {
        cfg.grid_step_s = v;
    }
    if let Some(v) = args.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = args.max_duration_s {
        cfg.max_duration_s = v;
    }
    cfg.validate()?;
    let sc = &p.scenario;
    let prop = sc.propagator();
    let outcome = match run_pipeline(&prop, &p.pre, &p.model, &sc.detection, args.mode.into()) {
        Ok(o) => o,
        Err(e) => {
            println!("detection failed: {e}");
            return p.run.finish(DETECTION_FAILED);
        }
    };
    report_correlation(sc, &outcome.report);
    p.run
        .write("correlation.csv", |w| Ok(outcome.report.write_csv(w)?))?;
    let utc = |t: Epoch| sc.time.format(t);
    let result = outcome.result();
    if let Some(r) = result {
        p.run.write("candidates.csv", |w| Ok(r.write_csv(w)?))?;
    }
    if let (Some(imp), Some(_)) = (&outcome.impulsive, &outcome.long) {
        p.run
            .write("impulsive_candidates.csv", |w| Ok(imp.write_csv(w)?))?;
    }
    let summary = DetectSummary {
        scenario: sc.name.clone(),
        search_mode: match args.mode {
            ModeArg::Auto => "auto",
            ModeArg::Impulsive => "impulsive",
            ModeArg::Long => "long",
        },
        correlated_strict: outcome.report.correlated_strict,
        correlated_relaxed: outcome.report.correlated_relaxed.unwrap_or(false),
        orbit_wrms: outcome.orbit.wrms,
        result: result.map(|r| Summary::new(r, utc)),
        impulsive_scan: match (&outcome.impulsive, &outcome.long) {
            (Some(imp), Some(_)) => Some(Summary::new(imp, utc)),
            _ => None,
        },
    };
    p.run.write("summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)?;
        Ok(())
    })?;
    if !outcome.correlated() {
        println!("verdict: uncorrelated, no search window");
        return p.run.finish(NO_CORRELATION);
    }
    match result.and_then(|r| r.selected.map(|c| (r, c))) {
        Some((r, c)) => {
            println!(
                "{:?}: {} .. {}, dV {:.4} m/s, J {:.3}, {} of {} candidates accepted",
                r.mode,
                utc(c.start),
                utc(c.end),
                c.delta_v,
                c.j,
                r.accepted().count(),
                r.candidates.len()
            );
            p.run.finish(0)
        }
        None => {
            println!(
                "detection failed: no candidate with J <= {}",
                sc.detection.threshold
            );
            p.run.finish(DETECTION_FAILED)
        }
    }
}

fn divergence(args: &DivergenceArgs) -> Result<u8> {
    let settings = DivergenceSettings {
        altitude: args.altitude_m,
        direction: args.direction.vvlh(),
        magnitude: args.accel_mps2,
        horizon: args.horizon_s,
        cadence: args.cadence_s,
    };
    let rows = divergence_study(&settings, &args.durations_s)?;
    let mut run = Run::new(&args.out_dir)?;
    run.write("divergence.csv", |w| Ok(write_divergence_csv(w, &rows)?))?;
    for r in &rows {
        println!("{:>7.0} s  mean {:>10.1} m", r.duration, r.mean);
    }
    run.finish(0)
}

fn observability(args: &ObservabilityArgs) -> Result<u8> {
    let settings = ObservabilitySettings {
        altitude: args.altitude_m,
        direction: args.direction.vvlh(),
        magnitude: args.accel_mps2,
        burn_start: args.burn_start_s,
        duration: args.duration_s,
        first_measurement: args.first_measurement_s,
        last_measurement: args.last_measurement_s,
        cadence: args.cadence_s,
        half_width: args.half_width_s,
        grid_step: args.grid_step_s,
    };
    let grid = observability_map(&settings)?;
    let mut run = Run::new(&args.out_dir)?;
    run.write("observability.csv", |w| Ok(grid.write_csv(w)?))?;
    if let Some((i, j, v)) = grid.global_minimum() {
        println!(
            "global minimum {v:.3e} m at start offset {:.0} s, end offset {:.0} s",
            grid.tb_offsets[i], grid.tf_offsets[j]
        );
    }
    run.finish(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { INPUT_ERROR } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Correlate(a) => correlate(a),
        Command::Detect(a) => detect(a),
        Command::Divergence(a) => divergence(a),
        Command::Observability(a) => observability(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(INPUT_ERROR)
        }
    }
}
