//! Multi-rate closed-loop scheduler.
//!
//! Every stream (inner loop, outer loop, GPS, ultrasonic) ticks at integer
//! multiples of its own period, so coinciding ticks land on bit-identical
//! times. The plant is integrated between consecutive events in RK4
//! sub-steps no longer than `MAX_PLANT_STEP`, with thrusts held.

use failsafe_core::detect::{ChannelSample, Detector, FailureVerdict, Verdict};
use failsafe_core::dynamics::step;
use failsafe_core::equilibrium::{solve_equilibrium, FailureConfig};
use failsafe_core::estimation::{SensorRates, SensorSuite, StateEstimator};
use failsafe_core::{Architecture, Equilibrium, MotorMask, MotorSet, RigidState};
use nalgebra::Vector3;

use crate::controller::{Active, FailsafeController, NominalController};
use crate::error::SimResult;
use crate::log::{LogRow, SimLog};
use crate::scenario::{ControllerKind, EquilibriumSource, GainSet, ScenarioSpec};

/// Longest plant integration step (s).
pub const MAX_PLANT_STEP: f64 = 1.0 / 450.0;
/// Any state component beyond this magnitude counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;
/// Distance from the active reference beyond which the vehicle is lost (m).
pub const FLYAWAY_BOUND: f64 = 1e3;
/// Fraction of the run, at the end, over which the stability verdict is taken.
pub const TAIL_FRACTION: f64 = 0.2;
pub const AXIS_TOLERANCE: f64 = 0.1;
pub const ALTITUDE_TOLERANCE: f64 = 0.5;

const TIME_EPS: f64 = 1e-9;

/// Statistics over the final part of the run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TailStats {
    pub samples: usize,
    pub max_axis_err: f64,
    pub max_alt_err: f64,
    pub max_xy_err: f64,
    pub mean_r: f64,
    pub mean_thrust: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub log: SimLog,
    pub crash_time: Option<f64>,
    pub final_state: RigidState<f64>,
    pub final_time: f64,
    pub detection: Option<FailureVerdict<f64>>,
    /// Time the fail-safe controller took over.
    pub swap_time: Option<f64>,
    pub equilibrium: Option<Equilibrium<f64>>,
    pub tail: TailStats,
}

impl SimOutcome {
    pub fn crashed(&self) -> bool {
        self.crash_time.is_some()
    }

    /// No crash, and over the tail the primary axis stays within 0.1 of its
    /// equilibrium direction and altitude within 0.5 m of the reference.
    pub fn stable(&self) -> bool {
        self.crash_time.is_none()
            && self.tail.samples > 0
            && self.tail.max_axis_err < AXIS_TOLERANCE
            && self.tail.max_alt_err < ALTITUDE_TOLERANCE
    }
}

fn gains_for(spec: &ScenarioSpec, arch: Architecture) -> GainSet {
    let survivors = match arch {
        Architecture::TwoRotor => 2,
        Architecture::ThreeRotor => 3,
    };
    if spec.controller.gains.r.len() == survivors {
        spec.controller.gains.clone()
    } else {
        match arch {
            Architecture::TwoRotor => GainSet::two_rotor(),
            Architecture::ThreeRotor => GainSet::three_rotor(),
        }
    }
}

/// Fail-safe controller for `failed`, with its equilibrium solved from the
/// source the scenario names.
pub fn build_failsafe(spec: &ScenarioSpec, failed: MotorMask) -> SimResult<FailsafeController> {
    let rho = if failed.len() == 1 { spec.failure.rho } else { 0.0 };
    let fc = FailureConfig::new(failed, rho)?;
    let source = match spec.controller.equilibrium {
        EquilibriumSource::Model => &spec.model,
        EquilibriumSource::Plant => &spec.plant,
    };
    let eq = solve_equilibrium(source, &fc)?;
    let c = &spec.controller;
    let gains = gains_for(spec, fc.architecture());
    Ok(FailsafeController::new(&spec.model, eq, &gains, c.f_inner, c.f_outer, c.f_max)?)
}

/// Attitude whose body frame sees the inertial vertical along `axis`.
fn spin_attitude(axis: &Vector3<f64>) -> (f64, f64) {
    let theta = (-axis.x).clamp(-1.0, 1.0).asin();
    let phi = axis.y.atan2(axis.z);
    (phi, theta)
}

fn initial_state(spec: &ScenarioSpec, eq: Option<&Equilibrium<f64>>) -> RigidState<f64> {
    let mut s = spec.initial.state;
    if let (true, Some(eq)) = (spec.initial.spin, eq) {
        let (phi, theta) = spin_attitude(&eq.axis);
        s.phi += phi;
        s.theta += theta;
        s.p += eq.p();
        s.q += eq.q();
        s.r += eq.r();
    }
    s
}

fn diverged(s: &RigidState<f64>, reference: &Vector3<f64>) -> bool {
    !s.is_finite()
        || s.as_array().iter().any(|v| v.abs() > DIVERGENCE_BOUND)
        || (s.position() - reference).norm() > FLYAWAY_BOUND
}

fn verdict_label(v: Option<&FailureVerdict<f64>>) -> String {
    match v.map(|v| &v.verdict) {
        None => String::new(),
        Some(Verdict::NoFailure) => "none".into(),
        Some(Verdict::Failed(m)) => m.motors().iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
        Some(Verdict::Unknown { .. }) => "unknown".into(),
    }
}

/// Fail-safe flight is possible after losing one motor or an opposing pair.
fn recoverable(m: MotorMask) -> bool {
    FailureConfig::new(m, 0.5).is_ok() || FailureConfig::new(m, 0.0).is_ok()
}

/// Simulate `spec`. Divergence is an outcome (`crash_time`), not an error.
pub fn run(spec: &ScenarioSpec) -> SimResult<SimOutcome> {
    spec.validate()?;
    let c = &spec.controller;
    let immediate = spec.failure.at <= 0.0 && !spec.failure.detect && !spec.failure.motors.is_empty();

    let mut active = match c.kind {
        ControllerKind::Null => Active::Null,
        ControllerKind::Failsafe if immediate => Active::Failsafe(Box::new(build_failsafe(spec, spec.failure.motors)?)),
        ControllerKind::Failsafe => Active::Nominal(NominalController::new(&spec.model, c.f_max)),
    };
    let start_eq = match &active {
        Active::Failsafe(f) => Some(f.eq),
        _ => None,
    };
    let mut state = initial_state(spec, start_eq.as_ref());
    let mut plant_failed = if immediate { spec.failure.motors } else { MotorMask::EMPTY };
    let mut pending_failure = !immediate && !spec.failure.motors.is_empty();

    let rates = SensorRates { imu: c.f_inner, gps: spec.sensors.gps_rate, ultrasonic: spec.sensors.ultrasonic_rate };
    let mut suite = SensorSuite::new(spec.sensors.noise, rates, spec.seed)?;
    let mut estimator = StateEstimator::new(spec.sensors.filter)?;
    let mut detector = if spec.failure.detect { Some(Detector::new(spec.detector)?) } else { None };

    // Streams: inner, outer, GPS, ultrasonic.
    let stream_rate = [c.f_inner, c.f_outer, spec.sensors.gps_rate, spec.sensors.ultrasonic_rate];
    let mut tick = [0u64; 4];
    let next_time = |k: u64, i: usize| k as f64 / stream_rate[i];

    let mut log = SimLog::default();
    let mut cmd = MotorSet::healthy([0.0; 4]);
    let mut diag;
    let mut detection: Option<FailureVerdict<f64>> = None;
    let mut swap_time = None;
    let mut crash_time = None;
    let mut tail = TailStats::default();
    let mut r_sum = 0.0;
    let mut f_sum = [0.0; 4];
    let tail_start = spec.duration * (1.0 - TAIL_FRACTION);
    let (dt_inner, dt_outer) = (1.0 / c.f_inner, 1.0 / c.f_outer);

    let mut t = 0.0;
    loop {
        let reference = spec.reference_at(t);
        if pending_failure && t + TIME_EPS >= spec.failure.at {
            pending_failure = false;
            plant_failed = spec.failure.motors;
            if !spec.failure.detect && c.kind == ControllerKind::Failsafe {
                active = Active::Failsafe(Box::new(build_failsafe(spec, spec.failure.motors)?));
                swap_time = Some(t);
            }
        }
        let due: Vec<bool> = (0..4).map(|i| next_time(tick[i], i) <= t + TIME_EPS).collect();
        let frame = suite.sample(&state, t);
        let est = estimator.update(&frame);

        if due[1] {
            active.outer(&est, &reference, dt_outer);
        }
        if due[0] {
            if let Some(det) = detector.as_mut() {
                let sample = ChannelSample {
                    t,
                    p: est.rates.x,
                    q: est.rates.y,
                    r: est.rates.z,
                    phi: est.attitude.x,
                    theta: est.attitude.y,
                };
                if let Some(v) = det.push(sample) {
                    match v.failed() {
                        Some(m) if !m.is_empty() => {
                            if detection.as_ref().and_then(|d| d.failed()).is_none() {
                                detection = Some(v.clone());
                            }
                            if recoverable(m) && c.kind == ControllerKind::Failsafe {
                                active = Active::Failsafe(Box::new(build_failsafe(spec, m)?));
                                swap_time = Some(t);
                                active.outer(&est, &reference, dt_outer);
                            }
                        }
                        _ => {
                            if detection.is_none() {
                                detection = Some(v.clone());
                            }
                            // Unknown: re-arm and keep listening.
                            if matches!(v.verdict, Verdict::Unknown { .. }) {
                                det.reset();
                            }
                        }
                    }
                }
            }
            (cmd, diag) = active.inner(&est, &reference, dt_inner);

            if t + TIME_EPS >= tail_start {
                let axis = state.attitude().inverse() * Vector3::z();
                let target = active.target_axis();
                let axis_err = ((axis.x - target.x).powi(2) + (axis.y - target.y).powi(2)).sqrt();
                let applied = MotorSet::new(cmd.thrusts(), plant_failed).thrusts();
                tail.samples += 1;
                tail.max_axis_err = tail.max_axis_err.max(axis_err);
                tail.max_alt_err = tail.max_alt_err.max((state.z - reference.z).abs());
                tail.max_xy_err = tail.max_xy_err.max((state.position().xy() - reference.xy()).norm());
                r_sum += state.r;
                for i in 0..4 {
                    f_sum[i] += applied[i];
                }
            }
            if spec.record {
                log.rows.push(LogRow {
                    t,
                    state,
                    est,
                    thrust: MotorSet::new(cmd.thrusts(), plant_failed).thrusts(),
                    diag,
                    reference,
                    gps_t: frame.gps_t,
                    verdict: verdict_label(detection.as_ref()),
                    confidence: detection.as_ref().map_or(0, |v| v.confidence),
                    detect_t: detection.as_ref().and_then(|v| v.detection_time),
                    controller: active.label(),
                });
            }
        }
        for i in 0..4 {
            if due[i] {
                tick[i] += 1;
            }
        }
        if t + TIME_EPS >= spec.duration {
            break;
        }

        let mut t_next = spec.duration;
        for (i, &k) in tick.iter().enumerate() {
            t_next = t_next.min(next_time(k, i));
        }
        if pending_failure {
            t_next = t_next.min(spec.failure.at.max(t));
        }
        if t_next <= t {
            continue;
        }
        let applied = MotorSet::new(cmd.thrusts(), plant_failed);
        let n = (((t_next - t) / MAX_PLANT_STEP) - TIME_EPS).ceil().max(1.0) as usize;
        let h = (t_next - t) / n as f64;
        for k in 0..n {
            state = step(&state, &applied, h, &spec.plant)?;
            if diverged(&state, &reference) {
                crash_time = Some(t + (k + 1) as f64 * h);
                break;
            }
        }
        if crash_time.is_some() {
            break;
        }
        t = t_next;
    }

    if tail.samples > 0 {
        let n = tail.samples as f64;
        tail.mean_r = r_sum / n;
        tail.mean_thrust = f_sum.map(|f| f / n);
    }
    let equilibrium = match &active {
        Active::Failsafe(f) => Some(f.eq),
        _ => None,
    };
    Ok(SimOutcome {
        log,
        final_time: crash_time.unwrap_or(t),
        crash_time,
        final_state: state,
        detection,
        swap_time,
        equilibrium,
        tail,
    })
}
