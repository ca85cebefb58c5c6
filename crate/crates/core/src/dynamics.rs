//! Rigid-body quadcopter plant.
//!
//! Propellers sit on the body axes in a "+" layout: motor 1 on `+x`, motor 2
//! on `+y`, motor 3 on `-x`, motor 4 on `-y`. Body `z` points along thrust and
//! inertial `z` points up. Propellers 1 and 3 spin about `-z` (their reaction
//! torque yaws the body positively); 2 and 4 spin about `+z`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Physical model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams<T> {
    /// Total mass (kg).
    pub m: T,
    /// Arm length, centre of mass to rotor axis (m).
    pub l: T,
    /// Gravitational acceleration (m/s^2).
    pub g: T,
    pub jxx: T,
    pub jyy: T,
    pub jzz: T,
    /// Product of inertia. Kept for completeness; the rotational model
    /// assumes a diagonal inertia tensor and never reads it.
    pub jxz: T,
    /// Spin inertia of one rotor plus propeller about its shaft (kg m^2).
    pub jp: T,
    /// Yaw drag coefficient, drag torque = gamma * r * |r| (N m / (rad/s)^2).
    pub gamma: T,
    /// Thrust coefficient, f = kf * w^2 (N / (rad/s)^2).
    pub kf: T,
    /// Reaction torque coefficient, tau = kt * w^2 (N m / (rad/s)^2).
    pub kt: T,
}

/// Rotor spin inertia used by both built-in presets. Not measured on the
/// reference airframes.
pub const DEFAULT_ROTOR_INERTIA: f64 = 1.5e-5;

/// Thrust coefficient giving 803.9458 rad/s per rotor at the two-rotor hover
/// of the low-inertia airframe.
pub const PRESET_KF: f64 = 1.091_686_481_615_495_6e-5;

/// Reaction torque coefficient that puts the two-rotor spin of the
/// low-inertia airframe at 32.021 rad/s.
pub const PRESET_KT: f64 = 1.461_078_372_730_158_6e-7;

/// Thrust coefficient of the three-rotor study (f1 = 5.6128 N at 710.67 rad/s).
pub const THREE_ROTOR_KF: f64 = 1.111_305_515_928_199_8e-5;

/// Reaction torque coefficient putting the three-rotor spin (rho = 0.5) at
/// 43.393 rad/s with [`THREE_ROTOR_KF`].
pub const THREE_ROTOR_KT: f64 = 4.546_593_348_577_764e-7;

impl<T: Real> QuadParams<T> {
    /// Light airframe used for the nominal fail-safe studies.
    pub fn low_inertia() -> Self {
        Self {
            m: T::lit(1.439),
            l: T::lit(0.2475),
            g: T::lit(9.80665),
            jxx: T::lit(0.018517242),
            jyy: T::lit(0.020562251),
            jzz: T::lit(0.028316170),
            jxz: T::lit(9.76065e-05),
            jp: T::lit(DEFAULT_ROTOR_INERTIA),
            gamma: T::lit(0.000184199),
            kf: T::lit(PRESET_KF),
            kt: T::lit(PRESET_KT),
        }
    }

    /// Heavier airframe with larger inertia and drag, same propulsion set.
    pub fn high_inertia() -> Self {
        Self {
            m: T::lit(1.988),
            l: T::lit(0.2475),
            g: T::lit(9.80665),
            jxx: T::lit(0.125203794),
            jyy: T::lit(0.120414017),
            jzz: T::lit(0.163195234),
            jxz: T::lit(2.66838e-04),
            jp: T::lit(DEFAULT_ROTOR_INERTIA),
            gamma: T::lit(0.00258396780706647),
            kf: T::lit(PRESET_KF),
            kt: T::lit(PRESET_KT),
        }
    }

    /// Low-inertia airframe with the propulsion constants of the
    /// three-rotor study.
    pub fn low_inertia_three_rotor() -> Self {
        Self { kf: T::lit(THREE_ROTOR_KF), kt: T::lit(THREE_ROTOR_KT), ..Self::low_inertia() }
    }

    /// Look up a preset by name (`low_inertia`, `low_inertia_three_rotor` or
    /// `high_inertia`).
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "low_inertia" => Some(Self::low_inertia()),
            "low_inertia_three_rotor" => Some(Self::low_inertia_three_rotor()),
            "high_inertia" => Some(Self::high_inertia()),
            _ => None,
        }
    }

    /// Propeller torque-to-thrust ratio kt/kf.
    #[inline]
    pub fn torque_ratio(&self) -> T {
        self.kt / self.kf
    }

    #[inline]
    pub fn weight(&self) -> T {
        self.m * self.g
    }

    pub fn inertia_diag(&self) -> Vector3<T> {
        Vector3::new(self.jxx, self.jyy, self.jzz)
    }

    /// Check the physical invariants of the constants.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("M", self.m),
            ("l", self.l),
            ("g", self.g),
            ("Jxx", self.jxx),
            ("Jyy", self.jyy),
            ("Jzz", self.jzz),
            ("Jp", self.jp),
            ("gamma", self.gamma),
            ("kf", self.kf),
            ("kt", self.kt),
        ];
        for (name, v) in positive {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.jxz.is_finite() {
            return Err(Error::Domain("Jxz must be finite".into()));
        }
        if !(self.torque_ratio() < T::one()) {
            return Err(Error::Domain(format!(
                "kt/kf must be below 1, got {}",
                self.torque_ratio()
            )));
        }
        let (a, b, c) = (self.jxx, self.jyy, self.jzz);
        if a + b < c || b + c < a || a + c < b {
            return Err(Error::Domain("principal inertias violate the triangle inequality".into()));
        }
        Ok(())
    }
}

/// Twelve-variable vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidState<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub xd: T,
    pub yd: T,
    pub zd: T,
    pub phi: T,
    pub theta: T,
    pub psi: T,
    pub p: T,
    pub q: T,
    pub r: T,
}

impl<T: Real> RigidState<T> {
    pub fn at_rest(x: T, y: T, z: T) -> Self {
        Self {
            x,
            y,
            z,
            xd: T::zero(),
            yd: T::zero(),
            zd: T::zero(),
            phi: T::zero(),
            theta: T::zero(),
            psi: T::zero(),
            p: T::zero(),
            q: T::zero(),
            r: T::zero(),
        }
    }

    pub fn position(&self) -> Vector3<T> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn velocity(&self) -> Vector3<T> {
        Vector3::new(self.xd, self.yd, self.zd)
    }

    pub fn rates(&self) -> Vector3<T> {
        Vector3::new(self.p, self.q, self.r)
    }

    /// Body-to-inertial attitude (yaw, then pitch, then roll).
    pub fn attitude(&self) -> UnitQuaternion<T> {
        UnitQuaternion::from_euler_angles(self.phi, self.theta, self.psi)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [T; 12] {
        [
            self.x, self.y, self.z, self.xd, self.yd, self.zd, self.phi, self.theta, self.psi,
            self.p, self.q, self.r,
        ]
    }

    pub fn from_array(a: [T; 12]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            z: a[2],
            xd: a[3],
            yd: a[4],
            zd: a[5],
            phi: a[6],
            theta: a[7],
            psi: a[8],
            p: a[9],
            q: a[10],
            r: a[11],
        }
    }

    fn from_parts(
        pos: Vector3<T>,
        vel: Vector3<T>,
        att: &UnitQuaternion<T>,
        rates: Vector3<T>,
    ) -> Self {
        let (phi, theta, psi) = att.euler_angles();
        Self {
            x: pos.x,
            y: pos.y,
            z: pos.z,
            xd: vel.x,
            yd: vel.y,
            zd: vel.z,
            phi,
            theta,
            psi,
            p: rates.x,
            q: rates.y,
            r: rates.z,
        }
    }
}

/// Subset of the motors {1, 2, 3, 4}, stored as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct MotorMask(u8);

impl MotorMask {
    pub const EMPTY: MotorMask = MotorMask(0);

    /// Build from 1-based motor numbers. Numbers outside 1..=4 are rejected.
    pub fn from_motors(motors: &[usize]) -> Result<Self> {
        let mut bits = 0u8;
        for &m in motors {
            if !(1..=4).contains(&m) {
                return Err(Error::Domain(format!("motor index {m} outside 1..=4")));
            }
            bits |= 1 << (m - 1);
        }
        Ok(MotorMask(bits))
    }

    pub const fn from_bits(bits: u8) -> Self {
        MotorMask(bits & 0x0f)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    /// `motor` is 1-based.
    pub const fn contains(self, motor: usize) -> bool {
        motor >= 1 && motor <= 4 && self.0 & (1 << (motor - 1)) != 0
    }

    pub const fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// 1-based motor numbers in ascending order.
    pub fn motors(self) -> Vec<usize> {
        (1..=4).filter(|&m| self.contains(m)).collect()
    }

    pub const fn complement(self) -> Self {
        MotorMask(!self.0 & 0x0f)
    }
}

impl fmt::Display for MotorMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.motors().iter().map(|m| m.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for MotorMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(MotorMask::EMPTY);
        }
        let motors = s
            .split([',', ' ', ';'])
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Domain(format!("bad motor index '{t}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        MotorMask::from_motors(&motors)
    }
}

/// Commanded propeller thrusts together with the failed-motor set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorSet<T> {
    thrust: [T; 4],
    failed: MotorMask,
}

impl<T: Real> MotorSet<T> {
    /// Thrusts on failed motors are forced to zero.
    pub fn new(thrust: [T; 4], failed: MotorMask) -> Self {
        let mut thrust = thrust;
        for (i, f) in thrust.iter_mut().enumerate() {
            if failed.contains(i + 1) {
                *f = T::zero();
            }
        }
        Self { thrust, failed }
    }

    pub fn healthy(thrust: [T; 4]) -> Self {
        Self::new(thrust, MotorMask::EMPTY)
    }

    /// Clamp every thrust into `[0, f_max]`, keeping failed motors at zero.
    pub fn clamped(self, f_max: T) -> Self {
        let thrust = self.thrust.map(|f| f.max(T::zero()).min(f_max));
        Self::new(thrust, self.failed)
    }

    pub fn thrusts(&self) -> [T; 4] {
        self.thrust
    }

    /// 1-based accessor.
    pub fn thrust(&self, motor: usize) -> T {
        self.thrust[motor - 1]
    }

    pub fn failed(&self) -> MotorMask {
        self.failed
    }

    pub fn with_failed(self, failed: MotorMask) -> Self {
        Self::new(self.thrust, failed)
    }
}

/// Net force and torques acting on the body, plus the signed rotor speed sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyWrench<T> {
    /// Total thrust along body z (N).
    pub force: T,
    pub tau_phi: T,
    pub tau_theta: T,
    pub tau_psi: T,
    /// Signed rotor speed sum, -w1 + w2 - w3 + w4 (rad/s).
    pub omega_sum: T,
}

impl<T: Real> BodyWrench<T> {
    pub fn zero() -> Self {
        Self {
            force: T::zero(),
            tau_phi: T::zero(),
            tau_theta: T::zero(),
            tau_psi: T::zero(),
            omega_sum: T::zero(),
        }
    }

    pub fn torque(&self) -> Vector3<T> {
        Vector3::new(self.tau_phi, self.tau_theta, self.tau_psi)
    }
}

/// Rotor speed that produces `thrust`.
#[inline]
pub fn rotor_speed<T: Real>(thrust: T, kf: T) -> T {
    (thrust / kf).sqrt()
}

/// Signed sum of rotor speeds, -w1 + w2 - w3 + w4.
pub fn signed_speed_sum<T: Real>(speeds: &[T; 4]) -> T {
    -speeds[0] + speeds[1] - speeds[2] + speeds[3]
}

/// Map propeller thrusts to the body wrench.
pub fn mix_forces<T: Real>(m: &MotorSet<T>, params: &QuadParams<T>) -> Result<BodyWrench<T>> {
    let f = m.thrusts();
    if let Some(i) = f.iter().position(|v| *v < T::zero() || !v.is_finite()) {
        return Err(Error::Domain(format!("thrust on motor {} is {}", i + 1, f[i])));
    }
    let speeds = f.map(|fi| rotor_speed(fi, params.kf));
    Ok(BodyWrench {
        force: f[0] + f[1] + f[2] + f[3],
        tau_phi: params.l * (f[1] - f[3]),
        tau_theta: params.l * (f[2] - f[0]),
        tau_psi: params.torque_ratio() * (f[0] - f[1] + f[2] - f[3]),
        omega_sum: signed_speed_sum(&speeds),
    })
}

/// Inertial acceleration under thrust `force` and gravity.
pub fn translational_accel<T: Real>(s: &RigidState<T>, force: T, params: &QuadParams<T>) -> Vector3<T> {
    let (sphi, cphi) = s.phi.sin_cos();
    let (sth, cth) = s.theta.sin_cos();
    let (spsi, cpsi) = s.psi.sin_cos();
    let thrust_axis = Vector3::new(
        cphi * sth * cpsi + sphi * spsi,
        cphi * sth * spsi - sphi * cpsi,
        cphi * cth,
    );
    thrust_axis * (force / params.m) - Vector3::z() * params.g
}

/// Body angular acceleration for body rates `rates` under wrench `w`.
pub fn body_rate_derivative<T: Real>(
    rates: &Vector3<T>,
    w: &BodyWrench<T>,
    params: &QuadParams<T>,
) -> Vector3<T> {
    let (p, q, r) = (rates.x, rates.y, rates.z);
    let (jxx, jyy, jzz, jp) = (params.jxx, params.jyy, params.jzz, params.jp);
    let drag = params.gamma * r * r.abs();
    Vector3::new(
        w.tau_phi / jxx - (jzz - jyy) / jxx * q * r - jp / jxx * q * w.omega_sum,
        w.tau_theta / jyy - (jxx - jzz) / jyy * p * r + jp / jyy * p * w.omega_sum,
        w.tau_psi / jzz - (jyy - jxx) / jzz * p * q - drag / jzz,
    )
}

pub fn rotational_accel<T: Real>(s: &RigidState<T>, w: &BodyWrench<T>, params: &QuadParams<T>) -> Vector3<T> {
    body_rate_derivative(&s.rates(), w, params)
}

/// Mechanical energy of the vehicle (translational, potential and rotational).
pub fn mechanical_energy<T: Real>(s: &RigidState<T>, params: &QuadParams<T>) -> T {
    let half = T::lit(0.5);
    let v = s.velocity();
    let w = s.rates();
    half * params.m * v.norm_squared()
        + params.m * params.g * s.z
        + half * (params.jxx * w.x * w.x + params.jyy * w.y * w.y + params.jzz * w.z * w.z)
}

#[derive(Clone, Copy)]
struct Flow<T: Real> {
    pos: Vector3<T>,
    vel: Vector3<T>,
    att: Quaternion<T>,
    rates: Vector3<T>,
}

impl<T: Real> Flow<T> {
    fn axpy(&self, h: T, d: &Flow<T>) -> Flow<T> {
        Flow {
            pos: self.pos + d.pos * h,
            vel: self.vel + d.vel * h,
            att: self.att + d.att * h,
            rates: self.rates + d.rates * h,
        }
    }

    fn derivative(&self, w: &BodyWrench<T>, params: &QuadParams<T>) -> Flow<T> {
        let norm = self.att.norm();
        let att = UnitQuaternion::new_unchecked(self.att / norm);
        let accel = att * Vector3::z() * (w.force / params.m) - Vector3::z() * params.g;
        let omega = Quaternion::from_parts(T::zero(), self.rates);
        Flow {
            pos: self.vel,
            vel: accel,
            att: self.att * omega * T::lit(0.5),
            rates: body_rate_derivative(&self.rates, w, params),
        }
    }
}

/// Advance the state by `dt` seconds with motor thrusts held constant.
///
/// Classical fourth-order Runge-Kutta. The attitude is carried as a unit
/// quaternion during the step and converted back to roll/pitch/yaw at the
/// end, so the step stays well defined through pitch = +/-90 degrees.
pub fn step<T: Real>(
    s: &RigidState<T>,
    m: &MotorSet<T>,
    dt: T,
    params: &QuadParams<T>,
) -> Result<RigidState<T>> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    if !s.is_finite() {
        return Err(Error::Domain("state contains non-finite values".into()));
    }
    let w = mix_forces(m, params)?;
    let x0 = Flow {
        pos: s.position(),
        vel: s.velocity(),
        att: s.attitude().into_inner(),
        rates: s.rates(),
    };
    let half = T::lit(0.5);
    let k1 = x0.derivative(&w, params);
    let k2 = x0.axpy(dt * half, &k1).derivative(&w, params);
    let k3 = x0.axpy(dt * half, &k2).derivative(&w, params);
    let k4 = x0.axpy(dt, &k3).derivative(&w, params);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let x1 = Flow {
        pos: x0.pos + (k1.pos + k2.pos * two + k3.pos * two + k4.pos) * sixth,
        vel: x0.vel + (k1.vel + k2.vel * two + k3.vel * two + k4.vel) * sixth,
        att: x0.att + (k1.att + k2.att * two + k3.att * two + k4.att) * sixth,
        rates: x0.rates + (k1.rates + k2.rates * two + k3.rates * two + k4.rates) * sixth,
    };
    let att = UnitQuaternion::from_quaternion(x1.att);
    Ok(RigidState::from_parts(x1.pos, x1.vel, &att, x1.rates))
}
