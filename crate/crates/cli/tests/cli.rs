use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_burnscan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Header plus rows of a numeric CSV.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|v| v.parse().unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (header, rows) = table(path);
    let k = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[k]).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_flags_with_units() {
    let top = run(&["--help"]);
    assert_eq!(code(&top), 0);
    for sub in [
        "simulate",
        "correlate",
        "detect",
        "divergence",
        "observability",
    ] {
        assert!(stdout(&top).contains(sub));
    }
    let detect = stdout(&run(&["detect", "--help"]));
    for flag in [
        "--grid-step-s",
        "--threshold",
        "--max-duration-s",
        "--relaxation-m",
        "--mode",
    ] {
        assert!(detect.contains(flag), "{flag}");
    }
    assert!(detect.contains("[s]") && detect.contains("[m]"));
    let div = stdout(&run(&["divergence", "--help"]));
    assert!(div.contains("--accel-mps2") && div.contains("[m/s^2]"));
    let obs = stdout(&run(&["observability", "--help"]));
    assert!(obs.contains("--half-width-s") && obs.contains("[s]"));
}

#[test]
fn usage_errors_are_input_errors() {
    assert_eq!(code(&run(&["bogus"])), 4);
    assert_eq!(code(&run(&["simulate", "/nonexistent.toml"])), 4);
}

#[test]
fn schema_violation_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("sentinel6a")).unwrap();
    let broken = text.replace("cadence_s = 1.0", "cadence_s = 1.0\nbogus_key = 3");
    let line = broken
        .lines()
        .position(|l| l.starts_with("bogus_key"))
        .unwrap()
        + 1;
    let path = dir.path().join("broken.toml");
    fs::write(&path, broken).unwrap();
    let out = run(&["simulate", p(&path), "--out-dir", p(dir.path())]);
    assert_eq!(code(&out), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("broken.toml:{line}:")), "{err}");
}

#[test]
fn simulated_tracklet_counts() {
    for (name, total, pre, post) in [("sentinel3a", 15, 8, 7), ("sentinel6a", 21, 7, 14)] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&["simulate", p(&scenario(name)), "--out-dir", p(dir.path())]);
        assert_eq!(code(&out), 0);
        assert!(
            stdout(&out).contains(&format!("{total} tracklets ({pre} pre, {post} post)")),
            "{}",
            stdout(&out)
        );
        let mut ids = column(&dir.path().join("tracklets.csv"), "tracklet_id");
        ids.dedup();
        assert_eq!(ids.len(), total);
        let (header, rows) = table(&dir.path().join("truth.csv"));
        assert_eq!(header[0], "epoch_s");
        assert_eq!(rows.len(), 144 * 60 + 1);
        let record = json(&dir.path().join("run.json"));
        assert_eq!(record["scenario_sha256"].as_str().unwrap().len(), 64);
        assert_eq!(record["outputs"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn simulation_is_deterministic_per_seed() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let sc = scenario("sentinel6a");
    assert_eq!(
        code(&run(&["simulate", p(&sc), "--out-dir", p(dirs[0].path())])),
        0
    );
    assert_eq!(
        code(&run(&["simulate", p(&sc), "--out-dir", p(dirs[1].path())])),
        0
    );
    let seeded = [
        "simulate",
        p(&sc),
        "--out-dir",
        p(dirs[2].path()),
        "--seed",
        "7",
    ];
    assert_eq!(code(&run(&seeded)), 0);
    let file = |k: usize| dirs[k].path().join("tracklets.csv");
    assert_eq!(fs::read(file(0)).unwrap(), fs::read(file(1)).unwrap());
    assert_eq!(column(&file(0), "epoch_s"), column(&file(2), "epoch_s"));
    assert_ne!(column(&file(0), "alpha_rad"), column(&file(2), "alpha_rad"));
}

#[test]
fn coasting_target_correlates() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("sentinel6a")).unwrap();
    let start = text.find("[maneuver]").unwrap();
    let end = text.find("[measurements]").unwrap();
    let coast = format!(
        "{}[maneuver]\nkind = \"none\"\n\n{}",
        &text[..start],
        &text[end..]
    );
    let path = dir.path().join("coast.toml");
    fs::write(&path, coast).unwrap();
    let out = run(&["correlate", p(&path), "--out-dir", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("verdict: correlated"));
    let chi = column(&dir.path().join("correlation.csv"), "chi_strict");
    assert!(
        chi.iter().all(|c| *c < 3.38),
        "{:?}",
        chi.iter().cloned().fold(0.0, f64::max)
    );
}

#[test]
fn long_burn_needs_the_relaxed_gate() {
    let sc = scenario("sentinel6a_1800");
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["correlate", p(&sc), "--out-dir", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let csv = dir.path().join("correlation.csv");
    let strict = column(&csv, "chi_strict");
    let relaxed = column(&csv, "chi_relaxed");
    assert!(strict.iter().all(|c| *c > 3.38));
    assert!(relaxed.iter().any(|c| *c <= 3.38));

    let strict_only = tempfile::tempdir().unwrap();
    let args = [
        "correlate",
        p(&sc),
        "--out-dir",
        p(strict_only.path()),
        "--relaxation-m",
        "0",
    ];
    let out = run(&args);
    assert_eq!(code(&out), 2);
    let csv = strict_only.path().join("correlation.csv");
    assert_eq!(column(&csv, "chi_strict"), column(&csv, "chi_relaxed"));

    let det = [
        "detect",
        p(&sc),
        "--out-dir",
        p(strict_only.path()),
        "--relaxation-m",
        "0",
    ];
    assert_eq!(code(&run(&det)), 2);
}

#[test]
fn impulsive_search_fails_and_auto_falls_back() {
    let sc = scenario("sentinel6a_1800");
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "detect",
        p(&sc),
        "--out-dir",
        p(dir.path()),
        "--mode",
        "impulsive",
    ]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["mode"], "none");
    assert_eq!(summary["accepted"], 0);

    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "detect",
        p(&sc),
        "--out-dir",
        p(dir.path()),
        "--mode",
        "auto",
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["mode"], "long-duration");
    let dv = summary["dV_mps"].as_f64().unwrap();
    assert!((dv - 17.716).abs() < 0.01 * 17.716, "{dv}");
    assert_eq!(summary["impulsive_scan"]["accepted"], 0);
    assert!(dir.path().join("impulsive_candidates.csv").exists());
    let (header, rows) = table(&dir.path().join("candidates.csv"));
    assert_eq!(header, ["tb_s", "tf_s", "J", "dV_mps", "accepted"]);
    assert_eq!(rows.len() as u64, summary["candidates"].as_u64().unwrap());
}

#[test]
fn sentinel6a_long_duration_detection() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario("sentinel6a");
    let args = [
        "detect",
        p(&sc),
        "--out-dir",
        p(dir.path()),
        "--mode",
        "long",
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let s = json(&dir.path().join("summary.json"));
    let dv = s["dV_mps"].as_f64().unwrap();
    assert!((dv - 5.168).abs() < 0.01 * 5.168, "{dv}");
    // 05:15:42 and 05:24:27 on the second day.
    assert!((s["tb_s"].as_f64().unwrap() - 105_342.0).abs() <= 60.0);
    assert!((s["tf_s"].as_f64().unwrap() - 105_867.0).abs() <= 60.0);
    assert!(s["tb_utc"].as_str().unwrap().starts_with("2020-12-14T05:"));
    assert_eq!(s["u_vvlh_mps2"].as_array().unwrap().len(), 3);
}

#[test]
fn detection_on_own_tracklet_file_is_reproducible() {
    let sc = scenario("sentinel6a");
    let sim = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(&["simulate", p(&sc), "--out-dir", p(sim.path())])),
        0
    );
    let tracklets = sim.path().join("tracklets.csv");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let from_file = [
        "detect",
        p(&sc),
        "--out-dir",
        p(a.path()),
        "--mode",
        "impulsive",
        "--tracklets",
        p(&tracklets),
    ];
    let in_memory = [
        "detect",
        p(&sc),
        "--out-dir",
        p(b.path()),
        "--mode",
        "impulsive",
    ];
    assert_eq!(code(&run(&from_file)), 0);
    assert_eq!(code(&run(&in_memory)), 0);
    for f in ["candidates.csv", "summary.json", "correlation.csv"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn divergence_defaults_give_the_in_track_row() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["divergence", "--out-dir", p(dir.path())])), 0);
    let csv = dir.path().join("divergence.csv");
    let durations = column(&csv, "duration_s");
    assert_eq!(durations, [60.0, 300.0, 600.0, 1200.0, 1800.0, 2400.0]);
    let mean = column(&csv, "mean_m");
    assert!(mean[0] < 1.0);
    for (got, want) in mean[1..5].iter().zip([3.9, 30.6, 241.2, 791.8]) {
        assert!((got - want).abs() <= 0.05 * want, "{got} vs {want}");
    }
}

#[test]
fn normal_observability_map_has_a_slope_minus_one_valley() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "observability",
        "--direction",
        "normal",
        "--out-dir",
        p(dir.path()),
    ];
    assert_eq!(code(&run(&args)), 0);
    let (_, rows) = table(&dir.path().join("observability.csv"));
    let low: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r[2] < 10.0)
        .map(|r| (r[0], r[1]))
        .collect();
    assert!(low.len() >= 10);
    let n = low.len() as f64;
    let (mx, my) = (
        low.iter().map(|v| v.0).sum::<f64>() / n,
        low.iter().map(|v| v.1).sum::<f64>() / n,
    );
    let sxy: f64 = low.iter().map(|v| (v.0 - mx) * (v.1 - my)).sum();
    let sxx: f64 = low.iter().map(|v| (v.0 - mx).powi(2)).sum();
    assert!((sxy / sxx + 1.0).abs() < 0.1);
}
