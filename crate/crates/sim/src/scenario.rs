//! Scenario description and the built-in experiment set.

use failsafe_core::control::{PidGains, DEFAULT_F_MAX};
use failsafe_core::detect::DetectorConfig;
use failsafe_core::estimation::{FilterConfig, NoiseConfig};
use failsafe_core::{MotorMask, QuadParams, RigidState};
use nalgebra::Vector3;

use crate::error::{SimError, SimResult};

/// Piecewise-constant position reference: active from `t` until the next point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub t: f64,
    pub pos: Vector3<f64>,
}

impl RefPoint {
    pub fn new(t: f64, x: f64, y: f64, z: f64) -> Self {
        Self { t, pos: Vector3::new(x, y, z) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    /// Fail-safe spin controller for the failed set (known from `t = 0`, or
    /// swapped in once the detector names the set).
    Failsafe,
    /// Commands zero thrust on every motor.
    Null,
}

/// Where the fail-safe controller takes its equilibrium from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumSource {
    /// The controller's own model.
    Model,
    /// The true plant (accurate drag and propulsion constants).
    Plant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureSpec {
    pub motors: MotorMask,
    /// Injection time. With `detect` off and `at == 0` the fail-safe
    /// controller runs from the start.
    pub at: f64,
    /// Run the nominal controller and the detector until a verdict arrives.
    pub detect: bool,
    /// Three-rotor tuning factor used when a single motor is lost.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub q: [f64; 4],
    /// One weight per surviving motor, in motor order.
    pub r: Vec<f64>,
    /// Two-rotor altitude loop, run at the outer rate.
    pub altitude: PidGains<f64>,
    /// Integral trim per surviving motor (three-rotor only; ignored otherwise).
    pub force_ki: Vec<f64>,
    pub zeta: Vector3<f64>,
    pub omega_n: Vector3<f64>,
    pub accel_cap: Vector3<f64>,
    /// Smallest vertical specific force the outer loop may ask for, as a
    /// fraction of g (keeps the desired axis pointing up).
    pub min_lift: f64,
}

impl GainSet {
    /// Two-rotor simulation gains.
    pub fn two_rotor() -> Self {
        Self {
            q: [0.0, 0.0, 5362.0, 5362.0],
            r: vec![1.0, 1.0],
            altitude: PidGains::new(4.3, 8.9, 0.0, -1.1, 1.1).expect("valid gains"),
            force_ki: vec![0.0, 0.0],
            zeta: Vector3::new(0.7, 0.7, 0.0),
            omega_n: Vector3::new(1.0, 1.0, 0.0),
            accel_cap: Vector3::new(5.4, 5.4, 0.0),
            min_lift: 0.2,
        }
    }

    /// Three-rotor gains (rho = 0.5 spin).
    pub fn three_rotor() -> Self {
        Self {
            q: [1.0, 1.0, 100.0, 100.0],
            r: vec![1.11, 10.0, 1.0],
            altitude: PidGains::unbounded(0.0, 0.0, 0.0),
            force_ki: vec![0.129, 0.05, 0.114],
            zeta: Vector3::new(0.7, 0.7, 4.5),
            omega_n: Vector3::new(1.0, 1.0, 2.1),
            accel_cap: Vector3::new(2.1, 2.1, 16.5),
            min_lift: 0.2,
        }
    }

    /// Gains tuned on the low-inertia model and flown on the high-inertia plant.
    pub fn mismatch() -> Self {
        Self {
            q: [0.0, 0.0, 420.0, 420.0],
            r: vec![1.0, 1.0],
            altitude: PidGains::new(2.8, 3.2, 0.0, -2.0, 2.0).expect("valid gains"),
            ..Self::two_rotor()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub gains: GainSet,
    pub f_inner: f64,
    pub f_outer: f64,
    pub f_max: f64,
    pub equilibrium: EquilibriumSource,
}

impl ControllerSpec {
    pub fn new(gains: GainSet) -> Self {
        Self {
            kind: ControllerKind::Failsafe,
            gains,
            f_inner: 450.0,
            f_outer: 45.0,
            f_max: DEFAULT_F_MAX,
            equilibrium: EquilibriumSource::Model,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub noise: NoiseConfig<f64>,
    pub filter: FilterConfig<f64>,
    pub gps_rate: f64,
    pub ultrasonic_rate: f64,
}

impl SensorSpec {
    pub fn ideal() -> Self {
        Self { noise: NoiseConfig::ideal(), filter: FilterConfig::ideal(), gps_rate: 10.0, ultrasonic_rate: 45.0 }
    }

    pub fn noisy() -> Self {
        Self { noise: NoiseConfig::default(), filter: FilterConfig::default(), ..Self::ideal() }
    }
}

/// Initial state. With `spin` set, attitude and body rates are offsets from
/// the equilibrium spin (axis vertical, rates at their equilibrium values).
#[derive(Debug, Clone, PartialEq)]
pub struct InitialSpec {
    pub state: RigidState<f64>,
    pub spin: bool,
}

impl InitialSpec {
    pub fn spinning(x: f64, y: f64, z: f64) -> Self {
        Self { state: RigidState::at_rest(x, y, z), spin: true }
    }

    pub fn hover(x: f64, y: f64, z: f64) -> Self {
        Self { state: RigidState::at_rest(x, y, z), spin: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: String,
    pub plant: QuadParams<f64>,
    pub model: QuadParams<f64>,
    pub failure: FailureSpec,
    pub initial: InitialSpec,
    pub references: Vec<RefPoint>,
    pub controller: ControllerSpec,
    pub sensors: SensorSpec,
    pub detector: DetectorConfig<f64>,
    pub duration: f64,
    pub seed: u64,
    /// Keep per-row logs; sweeps switch this off.
    pub record: bool,
}

impl ScenarioSpec {
    pub fn validate(&self) -> SimResult<()> {
        self.plant.validate().map_err(|e| SimError::config("plant", e))?;
        self.model.validate().map_err(|e| SimError::config("model", e))?;
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(SimError::Config { key: "duration".into(), msg: "must be positive and finite".into() });
        }
        if self.references.is_empty() {
            return Err(SimError::Config { key: "references".into(), msg: "at least one point is required".into() });
        }
        let mut last = f64::NEG_INFINITY;
        for r in &self.references {
            if !(r.t >= last) || !r.t.is_finite() || !r.pos.iter().all(|v| v.is_finite()) {
                return Err(SimError::Config {
                    key: "references".into(),
                    msg: "times must be finite and non-decreasing".into(),
                });
            }
            last = r.t;
        }
        if !(self.duration > last) || !(self.duration > self.failure.at) {
            return Err(SimError::Config {
                key: "duration".into(),
                msg: "must exceed the last reference change and the failure time".into(),
            });
        }
        if !(self.failure.at >= 0.0) {
            return Err(SimError::Config { key: "failure.at".into(), msg: "must be non-negative".into() });
        }
        let c = &self.controller;
        if !(c.f_inner > 0.0 && c.f_outer > 0.0 && c.f_inner >= c.f_outer) {
            return Err(SimError::Config {
                key: "controller.f_inner".into(),
                msg: "loop rates must satisfy f_inner >= f_outer > 0".into(),
            });
        }
        if !(c.f_max > 0.0) {
            return Err(SimError::Config { key: "controller.f_max".into(), msg: "must be positive".into() });
        }
        if !(self.sensors.gps_rate > 0.0 && self.sensors.ultrasonic_rate > 0.0) {
            return Err(SimError::Config { key: "sensors".into(), msg: "sensor rates must be positive".into() });
        }
        self.sensors.noise.validate().map_err(|e| SimError::config("sensors", e))?;
        self.sensors.filter.validate().map_err(|e| SimError::config("sensors", e))?;
        Ok(())
    }

    /// Reference active at time `t`.
    pub fn reference_at(&self, t: f64) -> Vector3<f64> {
        let mut pos = self.references[0].pos;
        for r in &self.references {
            if r.t <= t + 1e-12 {
                pos = r.pos;
            }
        }
        pos
    }
}

fn base(name: &str, plant: QuadParams<f64>, failure: FailureSpec, gains: GainSet) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        model: plant,
        plant,
        failure,
        initial: InitialSpec::spinning(0.0, 0.0, 2.0),
        references: vec![RefPoint::new(0.0, 0.0, 0.0, 2.0)],
        controller: ControllerSpec::new(gains),
        sensors: SensorSpec::ideal(),
        detector: DetectorConfig::default(),
        duration: 40.0,
        seed: 1,
        record: true,
    }
}

fn pair() -> MotorMask {
    MotorMask::from_motors(&[2, 4]).expect("valid pair")
}

/// Two-rotor flight: start off-reference, step the reference at 10 s.
pub fn two_rotor_step() -> ScenarioSpec {
    let mut s = base(
        "two-rotor-step",
        QuadParams::low_inertia(),
        FailureSpec { motors: pair(), at: 0.0, detect: false, rho: 0.0 },
        GainSet::two_rotor(),
    );
    s.initial = InitialSpec::spinning(-0.1, -0.1, 2.0);
    s.references = vec![RefPoint::new(0.0, 0.0, 0.0, 2.0), RefPoint::new(10.0, -0.3, 0.3, 4.0)];
    s
}

/// Three-rotor flight (motor 4 lost, rho = 0.5) with the same reference step.
pub fn three_rotor_step() -> ScenarioSpec {
    let mut s = base(
        "three-rotor-step",
        QuadParams::low_inertia_three_rotor(),
        FailureSpec { motors: MotorMask::from_motors(&[4]).expect("valid motor"), at: 0.0, detect: false, rho: 0.5 },
        GainSet::three_rotor(),
    );
    s.references = vec![RefPoint::new(0.0, 0.0, 0.0, 2.0), RefPoint::new(10.0, -0.3, 0.3, 4.0)];
    s
}

/// Three-rotor hover used for the orbit measurement.
pub fn three_rotor_hover() -> ScenarioSpec {
    let mut s = three_rotor_step();
    s.name = "three-rotor-hover".into();
    s.references = vec![RefPoint::new(0.0, 0.0, 0.0, 2.0)];
    s.duration = 30.0;
    s
}

/// Two-rotor hover at the reference, used as the sweep baseline.
pub fn two_rotor_hover() -> ScenarioSpec {
    let mut s = two_rotor_step();
    s.name = "two-rotor-hover".into();
    s.initial = InitialSpec::spinning(0.0, 0.0, 2.0);
    s.references = vec![RefPoint::new(0.0, 0.0, 0.0, 2.0)];
    s.duration = 30.0;
    s
}

/// Healthy hover under the nominal controller, failure of `motors` at 1 s,
/// detector armed.
pub fn detection(motors: MotorMask) -> ScenarioSpec {
    let mut s = base(
        "detection",
        QuadParams::low_inertia(),
        FailureSpec { motors, at: 1.0, detect: true, rho: 0.5 },
        GainSet::two_rotor(),
    );
    if motors.len() == 1 {
        s.controller.gains = GainSet::three_rotor();
    }
    s.initial = InitialSpec::hover(0.0, 0.0, 2.0);
    s.duration = 2.0;
    s
}

/// High-inertia plant flown with gains designed on the low-inertia model.
pub fn mismatch(equilibrium: EquilibriumSource) -> ScenarioSpec {
    let mut s = base(
        "mismatch",
        QuadParams::high_inertia(),
        FailureSpec { motors: pair(), at: 0.0, detect: false, rho: 0.0 },
        GainSet::mismatch(),
    );
    s.model = QuadParams::low_inertia();
    s.controller.equilibrium = equilibrium;
    s.controller.f_max = 13.0;
    s.initial = InitialSpec::spinning(-0.1, -0.1, 2.0);
    s.initial.state.phi = 0.1;
    s.references = vec![RefPoint::new(0.0, 0.0, 0.0, 2.0), RefPoint::new(10.0, -0.3, 0.3, 4.0)];
    s
}

/// Look up a built-in scenario by name.
pub fn builtin(name: &str) -> Option<ScenarioSpec> {
    Some(match name {
        "two_rotor" | "two-rotor-step" => two_rotor_step(),
        "three_rotor" | "three-rotor-step" => three_rotor_step(),
        "two_rotor_hover" | "two-rotor-hover" => two_rotor_hover(),
        "three_rotor_hover" | "three-rotor-hover" => three_rotor_hover(),
        "mismatch" => mismatch(EquilibriumSource::Plant),
        "mismatch_model_equilibrium" => mismatch(EquilibriumSource::Model),
        _ => return None,
    })
}

pub const BUILTIN_NAMES: [&str; 6] =
    ["two_rotor", "three_rotor", "two_rotor_hover", "three_rotor_hover", "mismatch", "mismatch_model_equilibrium"];
