use failsafe_core::detect::Verdict;
use failsafe_core::MotorMask;
use failsafe_sim::config::{load_scenario, scenario_from_str};
use failsafe_sim::log::{read_replay, HEADER};
use failsafe_sim::scenario::{self, ControllerKind, InitialSpec, SensorSpec};
use failsafe_sim::{run, SimError};

fn tick(t: f64, hz: f64) -> bool {
    let k = t * hz;
    (k - k.round()).abs() < 1e-6
}

#[test]
fn noisy_runs_repeat_bit_for_bit() {
    let mut s = scenario::two_rotor_step();
    s.sensors = SensorSpec::noisy();
    s.duration = 12.0;
    let a = run(&s).unwrap().log.to_csv_string().unwrap();
    let b = run(&s).unwrap().log.to_csv_string().unwrap();
    assert_eq!(a, b);
    s.seed += 1;
    let c = run(&s).unwrap().log.to_csv_string().unwrap();
    assert_ne!(a, c);
}

#[test]
fn outer_and_gps_update_only_on_their_ticks() {
    let mut s = scenario::two_rotor_step();
    s.duration = 12.0;
    let o = run(&s).unwrap();
    let rows = &o.log.rows;
    assert!(rows.len() > 1000);
    let (mut outer_changes, mut gps_changes) = (0, 0);
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert!(tick(b.t, s.controller.f_inner), "row off the inner grid at {}", b.t);
        if a.diag.accel_des != b.diag.accel_des {
            assert!(tick(b.t, s.controller.f_outer), "outer output changed at {}", b.t);
            outer_changes += 1;
        }
        if a.gps_t != b.gps_t {
            assert!(tick(b.t, s.sensors.gps_rate), "position fix changed at {}", b.t);
            assert!(tick(b.gps_t, s.sensors.gps_rate));
            gps_changes += 1;
        }
    }
    assert!(outer_changes > 100 && gps_changes > 100);
}

#[test]
fn rows_have_no_gaps() {
    let mut s = scenario::three_rotor_hover();
    s.duration = 3.0;
    let o = run(&s).unwrap();
    let dt = 1.0 / s.controller.f_inner;
    for w in o.log.rows.windows(2) {
        assert!((w[1].t - w[0].t - dt).abs() < 1e-9);
    }
}

#[test]
fn null_controller_free_falls_and_crashes() {
    let mut s = scenario::two_rotor_hover();
    s.controller.kind = ControllerKind::Null;
    s.initial = InitialSpec::hover(0.0, 0.0, 2.0);
    s.duration = 30.0;
    let o = run(&s).unwrap();
    let t = o.crash_time.expect("free fall must end in a crash");
    // 1 km drop under gravity alone.
    let expected = (2.0 * 1e3 / s.plant.g).sqrt();
    assert!((t - expected).abs() < 0.2, "{t} vs {expected}");
    assert!(!o.stable());
}

#[test]
fn healthy_flight_never_reports_a_failure() {
    let mut s = scenario::detection(MotorMask::EMPTY);
    s.duration = 3.0;
    let o = run(&s).unwrap();
    assert!(!o.crashed());
    assert!(o.swap_time.is_none());
    assert!(o.detection.as_ref().is_none_or(|v| v.verdict == Verdict::NoFailure));
    assert!(o.log.rows.iter().all(|r| r.controller == "nominal"));
}

#[test]
fn detection_swaps_controllers() {
    let o = run(&scenario::detection(MotorMask::from_motors(&[2, 4]).unwrap())).unwrap();
    let swap = o.swap_time.expect("swap");
    assert!(swap > 1.0 && swap < 1.5);
    let first_failsafe = o.log.rows.iter().find(|r| r.controller == "failsafe").unwrap();
    assert!(first_failsafe.t >= swap - 1e-9);
}

#[test]
fn csv_log_replays() {
    let mut s = scenario::detection(MotorMask::from_motors(&[3]).unwrap());
    s.duration = 1.5;
    let csv = run(&s).unwrap().log.to_csv_string().unwrap();
    assert!(csv.starts_with(&HEADER.join(",")));
    let samples = read_replay(csv.as_bytes()).unwrap();
    assert_eq!(samples.len(), csv.lines().count() - 1);
}

#[test]
fn scenario_file_matches_builtin() {
    let from_file = scenario_from_str("base = \"three_rotor\"\n", &[], std::path::Path::new(".")).unwrap();
    assert_eq!(from_file, scenario::three_rotor_step());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, "base = \"two_rotor\"\n[plant]\nfile = \"p.txt\"\n").unwrap();
    std::fs::write(dir.path().join("p.txt"), "preset = low_inertia\ngamma = 2e-4\n").unwrap();
    let s = load_scenario(path.to_str().unwrap(), &[]).unwrap();
    assert_eq!(s.plant.gamma, 2e-4);
    assert_eq!(s.model.gamma, 2e-4);
}

#[test]
fn invalid_scenarios_are_rejected() {
    let err = scenario_from_str("duration = 5.0\n[references]\npoints = [[0,0,0,2],[10,0,0,3]]\n", &[], std::path::Path::new("."));
    assert!(matches!(err, Err(SimError::Config { ref key, .. }) if key == "duration"), "{err:?}");
    let err = scenario_from_str("[controller]\nf_inner = 10\nf_outer = 45\n", &[], std::path::Path::new("."));
    assert!(matches!(err, Err(SimError::Config { .. })));
}

#[test]
fn replayed_log_gives_the_live_verdict() {
    use failsafe_sim::log::replay_detector;
    let mask = MotorMask::from_motors(&[1, 3, 4]).unwrap();
    let s = scenario::detection(mask);
    let o = run(&s).unwrap();
    let live = o.detection.clone().unwrap();
    let csv = o.log.to_csv_string().unwrap();
    let replayed = replay_detector(&read_replay(csv.as_bytes()).unwrap(), s.detector).unwrap().unwrap();
    assert_eq!(replayed.verdict, Verdict::Failed(mask));
    assert_eq!(replayed.verdict, live.verdict);
}

#[test]
fn single_failure_in_flight_recovers_for_every_motor() {
    for m in 1..=4 {
        let mut s = scenario::three_rotor_hover();
        s.failure.motors = MotorMask::from_motors(&[m]).unwrap();
        s.failure.at = 1.0;
        s.failure.detect = true;
        s.initial = InitialSpec::hover(0.0, 0.0, 2.0);
        s.duration = 200.0;
        let o = run(&s).unwrap();
        assert!(o.stable(), "motor {m}: crash {:?}", o.crash_time);
    }
}
