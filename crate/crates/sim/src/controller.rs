//! Runtime controllers driven by the scheduler.

use failsafe_core::control::{
    desired_axis, inner_thrusts, outer_accel, ControllerConfig, OuterConfig, Pid, PidGains, ThrustCorrection,
};
use failsafe_core::estimation::Estimate;
use failsafe_core::lqr::{lqr_gain, LqrWeights, ReducedState};
use failsafe_core::{Architecture, Equilibrium, Error, MotorMask, MotorSet, QuadParams};
use nalgebra::{UnitQuaternion, Vector3};

use crate::scenario::GainSet;

/// Quantities logged alongside the thrusts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    /// Altitude PID output (two rotors) or collective trim (three rotors).
    pub pid_z: f64,
    /// Per-motor force corrections (zero for motors without one).
    pub pid_f: [f64; 4],
    pub accel_des: Vector3<f64>,
    pub n_des: Vector3<f64>,
}

fn attitude(est: &Estimate<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(est.attitude.x, est.attitude.y, est.attitude.z)
}

/// Cascaded fail-safe controller: outer position loop, inner LQR on the
/// reduced attitude state.
#[derive(Debug, Clone)]
pub struct FailsafeController {
    pub eq: Equilibrium<f64>,
    pub cfg: ControllerConfig<f64>,
    model: QuadParams<f64>,
    altitude: Pid<f64>,
    force: Vec<Pid<f64>>,
    min_lift: f64,
    accel: Vector3<f64>,
    u_z: f64,
    n_des: Vector3<f64>,
}

impl FailsafeController {
    pub fn new(
        model: &QuadParams<f64>,
        eq: Equilibrium<f64>,
        gains: &GainSet,
        f_inner: f64,
        f_outer: f64,
        f_max: f64,
    ) -> Result<Self, Error> {
        let weights = LqrWeights::new(gains.q, gains.r.clone())?;
        let (_, care) = lqr_gain(model, &eq, &weights)?;
        let mode = eq.architecture();
        let force_pids: Vec<PidGains<f64>> = match mode {
            Architecture::ThreeRotor => {
                if gains.force_ki.len() != 3 {
                    return Err(Error::Domain("three-rotor flight needs three force gains".into()));
                }
                gains.force_ki.iter().map(|&ki| PidGains::unbounded(0.0, 0.0, ki)).collect()
            }
            Architecture::TwoRotor => vec![],
        };
        let cfg = ControllerConfig {
            mode,
            k: care.k,
            altitude_pid: gains.altitude,
            force_pids,
            outer: OuterConfig::new(gains.zeta, gains.omega_n, gains.accel_cap)?,
            f_inner,
            f_outer,
            f_max,
        };
        cfg.validate()?;
        Ok(Self {
            force: cfg.force_pids.iter().map(|g| Pid::new(*g)).collect(),
            altitude: Pid::new(cfg.altitude_pid),
            n_des: eq.axis,
            eq,
            cfg,
            model: *model,
            min_lift: gains.min_lift,
            accel: Vector3::zeros(),
            u_z: 0.0,
        })
    }

    /// Position loop, run at the outer rate.
    pub fn outer(&mut self, est: &Estimate<f64>, reference: &Vector3<f64>, dt: f64) {
        let err = est.position - reference;
        let mut a = outer_accel(&err, &est.velocity, &self.cfg.outer);
        let g = self.model.g;
        a.z = a.z.max(-g * (1.0 - self.min_lift));
        self.accel = a;
        if self.cfg.mode == Architecture::TwoRotor {
            self.u_z = self.altitude.step(reference.z - est.position.z, -est.velocity.z, dt);
        }
    }

    /// Attitude loop, run at the inner rate.
    pub fn inner(&mut self, est: &Estimate<f64>, dt: f64) -> (MotorSet<f64>, Diagnostics) {
        let to_body = attitude(est).inverse();
        if let Ok(n) = desired_axis(&self.accel, self.eq.total_thrust, self.eq.nz(), &to_body, &self.model) {
            self.n_des = n.into_inner();
        }
        let s = ReducedState::new(est.rates.x, est.rates.y, self.n_des.x, self.n_des.y);
        let s_err = s.error_from(&ReducedState::at_equilibrium(&self.eq));
        let survivors = self.eq.survivors();
        let mut diag = Diagnostics { accel_des: self.accel, n_des: self.n_des, ..Default::default() };
        let (phi, theta) = (est.attitude.x, est.attitude.y);
        let correction = match self.cfg.mode {
            Architecture::TwoRotor => {
                diag.pid_z = self.u_z;
                ThrustCorrection::Collective(self.u_z)
            }
            Architecture::ThreeRotor => {
                let u = -(&self.cfg.k * s_err.to_vector());
                let sigma = (self.accel + Vector3::z() * self.model.g).norm() / self.model.g;
                diag.pid_z = sigma - 1.0;
                let uf = survivors
                    .iter()
                    .enumerate()
                    .map(|(k, &m)| {
                        let trim = self.force[k].step(u[k], 0.0, dt);
                        let v = (sigma - 1.0) * self.eq.thrust[m - 1] + trim;
                        diag.pid_f[m - 1] = v;
                        v
                    })
                    .collect();
                ThrustCorrection::PerMotor(uf)
            }
        };
        let motors = match inner_thrusts(&s_err, &self.cfg, &self.eq, phi, theta, &correction) {
            Ok(m) => m,
            // Inverted: drop the altitude term until the axis is back up.
            Err(Error::TiltDomain { .. }) => {
                diag.pid_z = 0.0;
                inner_thrusts(&s_err, &self.cfg, &self.eq, 0.0, 0.0, &ThrustCorrection::Collective(0.0))
                    .expect("level tilt is always in domain")
            }
            Err(e) => unreachable!("controller configuration was validated: {e}"),
        };
        (motors, diag)
    }
}

/// Four-motor attitude and altitude hold used before a failure is known.
#[derive(Debug, Clone)]
pub struct NominalController {
    roll: Pid<f64>,
    pitch: Pid<f64>,
    altitude: Pid<f64>,
    hover: f64,
    l: f64,
    f_max: f64,
}

impl NominalController {
    pub fn new(params: &QuadParams<f64>, f_max: f64) -> Self {
        let att = |j: f64| PidGains::new(j * 36.0, j * 9.6, 0.0, -0.4, 0.4).expect("valid gains");
        let m = params.m;
        Self {
            roll: Pid::new(att(params.jxx)),
            pitch: Pid::new(att(params.jyy)),
            altitude: Pid::new(PidGains::new(4.0 * m, 3.2 * m, 0.0, -5.0, 5.0).expect("valid gains")),
            hover: params.weight() / 4.0,
            l: params.l,
            f_max,
        }
    }

    pub fn update(&mut self, est: &Estimate<f64>, reference: &Vector3<f64>, dt: f64) -> (MotorSet<f64>, Diagnostics) {
        let (phi, theta) = (est.attitude.x, est.attitude.y);
        let tau_phi = self.roll.step(-phi, -est.rates.x, dt);
        let tau_theta = self.pitch.step(-theta, -est.rates.y, dt);
        let u_z = self.altitude.step(reference.z - est.position.z, -est.velocity.z, dt);
        let tilt = (phi.cos() * theta.cos()).max(0.5);
        let c = (self.hover + u_z / 4.0) / tilt;
        let (dr, dp) = (tau_phi / (2.0 * self.l), tau_theta / (2.0 * self.l));
        let f = [c - dp, c + dr, c + dp, c - dr];
        let diag = Diagnostics { pid_z: u_z, n_des: Vector3::z(), ..Default::default() };
        (MotorSet::healthy(f).clamped(self.f_max), diag)
    }
}

/// Controller currently flying the vehicle.
#[derive(Debug, Clone)]
pub enum Active {
    Null,
    Nominal(NominalController),
    Failsafe(Box<FailsafeController>),
}

impl Active {
    pub fn label(&self) -> &'static str {
        match self {
            Active::Null => "null",
            Active::Nominal(_) => "nominal",
            Active::Failsafe(_) => "failsafe",
        }
    }

    pub fn outer(&mut self, est: &Estimate<f64>, reference: &Vector3<f64>, dt: f64) {
        if let Active::Failsafe(c) = self {
            c.outer(est, reference, dt);
        }
    }

    pub fn inner(&mut self, est: &Estimate<f64>, reference: &Vector3<f64>, dt: f64) -> (MotorSet<f64>, Diagnostics) {
        match self {
            Active::Null => (MotorSet::healthy([0.0; 4]), Diagnostics::default()),
            Active::Nominal(c) => c.update(est, reference, dt),
            Active::Failsafe(c) => c.inner(est, dt),
        }
    }

    /// Primary axis the vehicle should hold.
    pub fn target_axis(&self) -> Vector3<f64> {
        match self {
            Active::Failsafe(c) => c.eq.axis,
            _ => Vector3::z(),
        }
    }

    pub fn failed(&self) -> MotorMask {
        match self {
            Active::Failsafe(c) => c.eq.failed,
            _ => MotorMask::EMPTY,
        }
    }
}
