//! Runtime control laws: PID with anti-windup, the outer translational
//! controller and the inner thrust allocation.

use nalgebra::{DMatrix, Unit, UnitQuaternion, Vector3};

use crate::dynamics::{MotorSet, QuadParams};
use crate::equilibrium::{Architecture, Equilibrium};
use crate::error::{Error, Result};
use crate::lqr::ReducedState;
use crate::real::Real;

/// Default per-motor thrust ceiling (N).
pub const DEFAULT_F_MAX: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains<T> {
    pub kp: T,
    pub kd: T,
    pub ki: T,
    pub out_min: T,
    pub out_max: T,
}

impl<T: Real> PidGains<T> {
    pub fn new(kp: T, kd: T, ki: T, out_min: T, out_max: T) -> Result<Self> {
        let g = Self { kp, kd, ki, out_min, out_max };
        g.validate()?;
        Ok(g)
    }

    /// Uncapped gains.
    pub fn unbounded(kp: T, kd: T, ki: T) -> Self {
        let big = T::max_value().unwrap_or(T::one() / T::default_epsilon());
        Self { kp, kd, ki, out_min: -big, out_max: big }
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if !(self.kp >= z && self.kd >= z && self.ki >= z) {
            return Err(Error::Domain("PID gains must be non-negative".into()));
        }
        if !(self.out_min < self.out_max) {
            return Err(Error::Domain(format!(
                "PID output caps must satisfy min < max (got {} and {})",
                self.out_min, self.out_max
            )));
        }
        Ok(())
    }
}

/// PID controller with conditional integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pid<T> {
    pub gains: PidGains<T>,
    pub integral: T,
}

impl<T: Real> Pid<T> {
    pub fn new(gains: PidGains<T>) -> Self {
        Self { gains, integral: T::zero() }
    }

    pub fn reset(&mut self) {
        self.integral = T::zero();
    }

    /// `kp e + kd de + ki int(e)`, clamped to the output caps. The integral
    /// is only advanced when the result stays inside the caps or the step
    /// pulls the output back toward them.
    pub fn step(&mut self, err: T, err_rate: T, dt: T) -> T {
        let g = &self.gains;
        let base = g.kp * err + g.kd * err_rate;
        let trial = self.integral + err * dt;
        let raw = base + g.ki * trial;
        let unwinding = (raw > g.out_max && err < T::zero()) || (raw < g.out_min && err > T::zero());
        if (raw >= g.out_min && raw <= g.out_max) || unwinding {
            self.integral = trial;
        }
        let u = base + g.ki * self.integral;
        u.max(g.out_min).min(g.out_max)
    }
}

/// Free-function form of [`Pid::step`].
pub fn pid_step<T: Real>(pid: &mut Pid<T>, err: T, err_rate: T, dt: T) -> T {
    pid.step(err, err_rate, dt)
}

/// Outer damped second-order position loop, one channel per inertial axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterConfig<T> {
    pub zeta: Vector3<T>,
    pub omega_n: Vector3<T>,
    /// Acceleration caps per axis (m/s^2); infinite means uncapped.
    pub accel_cap: Vector3<T>,
}

impl<T: Real> OuterConfig<T> {
    pub fn new(zeta: Vector3<T>, omega_n: Vector3<T>, accel_cap: Vector3<T>) -> Result<Self> {
        let c = Self { zeta, omega_n, accel_cap };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let z = T::zero();
        if self.zeta.iter().chain(self.omega_n.iter()).any(|v| !(*v >= z) || !v.is_finite()) {
            return Err(Error::Domain("outer-loop zeta and omega_n must be finite and non-negative".into()));
        }
        if self.accel_cap.iter().any(|v| !(*v >= z)) {
            return Err(Error::Domain("acceleration caps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Desired acceleration driving the position error to zero, capped per axis.
pub fn outer_accel<T: Real>(d_err: &Vector3<T>, d_err_rate: &Vector3<T>, cfg: &OuterConfig<T>) -> Vector3<T> {
    let two = T::lit(2.0);
    Vector3::from_fn(|i, _| {
        let (z, w) = (cfg.zeta[i], cfg.omega_n[i]);
        let a = -two * z * w * d_err_rate[i] - w * w * d_err[i];
        let cap = cfg.accel_cap[i];
        a.max(-cap).min(cap)
    })
}

/// Desired primary axis in body coordinates. `r_v_to_b` maps vehicle-frame
/// vectors into the body frame.
pub fn desired_axis<T: Real>(
    accel_des: &Vector3<T>,
    fbar: T,
    nz_bar: T,
    r_v_to_b: &UnitQuaternion<T>,
    params: &QuadParams<T>,
) -> Result<Unit<Vector3<T>>> {
    if !(fbar > T::zero()) || !(nz_bar > T::zero()) {
        return Err(Error::Domain("desired_axis needs positive equilibrium thrust and axis z".into()));
    }
    let demand = (accel_des + Vector3::z() * params.g) * params.m / (nz_bar * fbar);
    let body = r_v_to_b * demand;
    let norm = body.norm();
    if !(norm > T::default_epsilon()) || !norm.is_finite() {
        return Err(Error::DegenerateDemand);
    }
    Ok(Unit::new_unchecked(body / norm))
}

/// PID contribution passed to [`inner_thrusts`].
#[derive(Debug, Clone, PartialEq)]
pub enum ThrustCorrection<T> {
    /// Altitude PID output shared by both survivors of a two-rotor vehicle.
    Collective(T),
    /// One force correction per surviving motor of a three-rotor vehicle.
    PerMotor(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig<T: Real> {
    pub mode: Architecture,
    /// LQR gain, one row per surviving motor.
    pub k: DMatrix<T>,
    pub altitude_pid: PidGains<T>,
    /// Three-rotor only, in survivor order.
    pub force_pids: Vec<PidGains<T>>,
    pub outer: OuterConfig<T>,
    pub f_inner: T,
    pub f_outer: T,
    pub f_max: T,
}

impl<T: Real> ControllerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let m = match self.mode {
            Architecture::ThreeRotor => 3,
            Architecture::TwoRotor => 2,
        };
        if self.k.shape() != (m, 4) {
            return Err(Error::Domain(format!("gain matrix must be {m}x4, got {:?}", self.k.shape())));
        }
        if self.mode == Architecture::ThreeRotor && self.force_pids.len() != 3 {
            return Err(Error::Domain("three-rotor mode needs one force PID per surviving motor".into()));
        }
        if !(self.f_outer > T::zero() && self.f_inner >= self.f_outer) {
            return Err(Error::Domain("loop rates must satisfy f_inner >= f_outer > 0".into()));
        }
        if !(self.f_max > T::zero()) {
            return Err(Error::Domain("f_max must be positive".into()));
        }
        self.altitude_pid.validate()?;
        for g in &self.force_pids {
            g.validate()?;
        }
        self.outer.validate()
    }
}

/// Motor thrusts from the LQR state error plus the PID correction, clamped
/// into `[0, f_max]`. Three-rotor force corrections are scaled back before
/// they can saturate a motor the LQR term alone keeps in range.
pub fn inner_thrusts<T: Real>(
    s_err: &ReducedState<T>,
    cfg: &ControllerConfig<T>,
    eq: &Equilibrium<T>,
    phi: T,
    theta: T,
    correction: &ThrustCorrection<T>,
) -> Result<MotorSet<T>> {
    if eq.architecture() != cfg.mode {
        return Err(Error::Domain("controller mode does not match the failure set".into()));
    }
    let survivors = eq.survivors();
    if cfg.k.nrows() != survivors.len() {
        return Err(Error::Domain("gain rows do not match surviving motors".into()));
    }
    let u = -(&cfg.k * s_err.to_vector());
    let mut f = eq.thrust;
    match (cfg.mode, correction) {
        (Architecture::TwoRotor, ThrustCorrection::Collective(u_z)) => {
            let tilt = phi.cos() * theta.cos();
            let half_pi = T::frac_pi_2();
            if phi.abs() >= half_pi || theta.abs() >= half_pi || !(tilt > T::zero()) {
                return Err(Error::TiltDomain { phi: phi.to_f64_lossy(), theta: theta.to_f64_lossy() });
            }
            let extra = *u_z / tilt;
            for (k, &m) in survivors.iter().enumerate() {
                f[m - 1] += u[k] + extra;
            }
        }
        (Architecture::ThreeRotor, ThrustCorrection::PerMotor(uf)) if uf.len() == survivors.len() => {
            // Attitude first: shrink the force correction so that it never
            // pushes a motor past a limit the LQR part alone respects.
            let mut scale = T::one();
            for (k, &m) in survivors.iter().enumerate() {
                let base = f[m - 1] + u[k];
                let room = if uf[k] > T::zero() { cfg.f_max - base } else { -base };
                if base >= T::zero() && base <= cfg.f_max && uf[k] != T::zero() {
                    scale = scale.min((room / uf[k]).max(T::zero()));
                }
            }
            for (k, &m) in survivors.iter().enumerate() {
                f[m - 1] += u[k] + scale * uf[k];
            }
        }
        _ => return Err(Error::Domain("thrust correction does not match controller mode".into())),
    }
    Ok(MotorSet::new(f, eq.failed).clamped(cfg.f_max))
}
