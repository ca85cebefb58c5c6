use std::path::Path;
use std::process::{Command, Output};

fn quad(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_failsafe-quad")).args(args).current_dir(dir).output().expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
}

#[test]
fn equilibrium_prints_pair_thrust() {
    let dir = tempfile::tempdir().unwrap();
    let o = quad(&["equilibrium", "--params", "low_inertia", "--failed", "2,4"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let f: f64 = value(&text, "fbar1").parse().unwrap();
    assert!((f - 7.0559).abs() < 1e-3);
    // Trailing CSV header and row agree in width.
    let lines: Vec<&str> = text.lines().rev().take(2).collect();
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
}

#[test]
fn missing_files_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = quad(&["simulate", "--scenario", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.toml"));
    let o = quad(&["equilibrium", "--failed", "2,4", "--params", "nope.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "base = \"two_rotor\"\nduraton = 5.0\n").unwrap();
    let o = quad(&["simulate", "--scenario", "s.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duraton"), "{}", stderr(&o));
    let o = quad(&["simulate", "--scenario", "two_rotor", "--set", "controller.bogus=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
    std::fs::write(dir.path().join("p.txt"), "preset = low_inertia\nmass = 0.5\n").unwrap();
    let o = quad(&["equilibrium", "--failed", "4", "--params", "p.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mass"));
}

#[test]
fn crash_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--scenario", "two_rotor_hover", "--set", "controller.kind=\"null\"", "--set", "duration=20"];
    let o = quad(&args, dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_ne!(value(&stdout(&o), "crash_time"), "none");
}

#[test]
fn logged_flight_replays_through_detect() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--scenario",
        "two_rotor_hover",
        "--set",
        "failure.at=1.0",
        "--set",
        "failure.detect=true",
        "--set",
        "initial.spin=false",
        "--set",
        "duration=3",
        "--out",
        "log.csv",
    ];
    let o = quad(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "detection"), "failed 2,4");
    let o = quad(&["detect", "--log", "log.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(value(&stdout(&o), "verdict"), "failed 2,4");
}

#[test]
fn sysid_output_feeds_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let (kf, kt, r) = (1.2e-5, 2.0e-7, 0.12);
    let mut csv = String::from("omega,thrust,voltage,current\n");
    for w in [300.0, 450.0, 600.0, 750.0, 900.0] {
        let i = 3.0;
        let v = kt * w * w * w / i + i * r;
        csv.push_str(&format!("{w},{},{v},{i}\n", kf * w * w));
    }
    std::fs::write(dir.path().join("bench.csv"), csv).unwrap();
    let o = quad(&["sysid", "fit-thrust", "--data", "bench.csv", "--out", "fit.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    std::fs::write(dir.path().join("spin.csv"), "total_torque,omega_ss\n0.01,10\n0.04,20\n0.09,30\n").unwrap();
    let o = quad(&["sysid", "fit-drag", "--data", "spin.csv", "--params", "fit.txt", "--out", "fit2.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("fit2.txt")).unwrap();
    let get = |k: &str| -> f64 { value(&text, k).parse().unwrap() };
    assert!((get("kf") - kf).abs() < 1e-12);
    assert!((get("kt") - kt).abs() < 1e-14);
    assert!((get("gamma") - 1e-4).abs() < 1e-15);

    for args in [
        vec!["equilibrium", "--failed", "2,4", "--params", "fit2.txt"],
        vec!["lqr-gains", "--failed", "4", "--params", "fit2.txt"],
        vec!["simulate", "--scenario", "two_rotor_hover", "--params", "fit2.txt", "--set", "duration=2"],
    ] {
        let o = quad(&args, dir.path());
        assert!(o.status.code() != Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn moi_fit_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("swing.csv"), "axis,pivot_distance,period\nx,0.2,1.0\ny,0.2,1.0\nz,0.2,1.0477\n").unwrap();
    let o = quad(&["sysid", "moi", "--data", "swing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    std::fs::write(dir.path().join("p.txt"), stdout(&o)).unwrap();
    let o = quad(&["equilibrium", "--failed", "3", "--params", "p.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    std::fs::write(dir.path().join("bad.csv"), "axis,pivot_distance,period\nw,0.2,1.0\n").unwrap();
    let o = quad(&["sysid", "moi", "--data", "bad.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&quad(&["--help"], dir.path()));
    for sub in ["equilibrium", "lqr-gains", "simulate", "sweep", "detect", "sysid"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn frequency_sweep_matches_library() {
    use failsafe_sim::sweep::{sweep_frequency, Limit, LoopKind};
    let dir = tempfile::tempdir().unwrap();
    let o = quad(&["sweep", "--kind", "frequency", "--loop", "outer", "--scenario", "three_rotor"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let hz: f64 = value(&stdout(&o), "limit").parse().unwrap();
    let oracle = sweep_frequency(&failsafe_sim::scenario::three_rotor_step(), LoopKind::Outer).unwrap();
    assert_eq!(oracle.limit, Limit::Finite(hz));
}

#[test]
fn weights_file_changes_gains() {
    let dir = tempfile::tempdir().unwrap();
    let base = stdout(&quad(&["lqr-gains", "--failed", "2,4"], dir.path()));
    std::fs::write(dir.path().join("w.txt"), "Q_p = 5\nR_f1 = 2\n").unwrap();
    let o = quad(&["lqr-gains", "--failed", "2,4", "--weights", "w.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_ne!(stdout(&o), base);
    std::fs::write(dir.path().join("bad.txt"), "R_f2 = 2\n").unwrap();
    let o = quad(&["lqr-gains", "--failed", "2,4", "--weights", "bad.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
