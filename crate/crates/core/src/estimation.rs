//! Sensor models and the attitude/position estimator.

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::RigidState;
use crate::error::{Error, Result};
use crate::real::Real;

/// Exponential moving average.
#[inline]
pub fn ema<T: Real>(prev: T, sample: T, alpha: T) -> T {
    alpha * sample + (T::one() - alpha) * prev
}

/// One step of a first-order complementary filter.
#[inline]
pub fn complementary<T: Real>(att_prev: T, gyro_rate: T, att_absolute: T, dt: T, tau: T) -> T {
    let a = tau / (tau + dt);
    a * (att_prev + gyro_rate * dt) + (T::one() - a) * att_absolute
}

/// Pitch angles closer than this to +/-pi/2 are rejected by the Euler-rate maps.
pub const EULER_MARGIN: f64 = 1e-9;

fn check_pitch<T: Real>(theta: T) -> Result<()> {
    let margin = T::frac_pi_2() - theta.abs();
    if !(margin > T::lit(EULER_MARGIN)) {
        return Err(Error::Singularity { theta: theta.to_f64_lossy(), margin: margin.to_f64_lossy() });
    }
    Ok(())
}

/// Body rates (p, q, r) to ZYX Euler angle rates.
pub fn body_to_euler_rates<T: Real>(rates: &Vector3<T>, phi: T, theta: T) -> Result<Vector3<T>> {
    check_pitch(theta)?;
    let (sp, cp) = phi.sin_cos();
    let (ct, tt) = (theta.cos(), theta.tan());
    let (p, q, r) = (rates.x, rates.y, rates.z);
    Ok(Vector3::new(p + q * sp * tt + r * cp * tt, q * cp - r * sp, (q * sp + r * cp) / ct))
}

/// Inverse of [`body_to_euler_rates`].
pub fn euler_to_body_rates<T: Real>(euler_rates: &Vector3<T>, phi: T, theta: T) -> Result<Vector3<T>> {
    check_pitch(theta)?;
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (dphi, dtheta, dpsi) = (euler_rates.x, euler_rates.y, euler_rates.z);
    Ok(Vector3::new(
        dphi - dpsi * st,
        dtheta * cp + dpsi * sp * ct,
        -dtheta * sp + dpsi * cp * ct,
    ))
}

/// Standard deviations of the additive Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig<T> {
    pub gyro: T,
    pub attitude: T,
    pub gps_pos: T,
    pub gps_vel: T,
    pub ultrasonic: T,
}

impl<T: Real> Default for NoiseConfig<T> {
    fn default() -> Self {
        Self {
            gyro: T::lit(0.02),
            attitude: T::lit(0.01),
            gps_pos: T::lit(0.5),
            gps_vel: T::lit(0.1),
            ultrasonic: T::lit(0.01),
        }
    }
}

impl<T: Real> NoiseConfig<T> {
    pub fn ideal() -> Self {
        let z = T::zero();
        Self { gyro: z, attitude: z, gps_pos: z, gps_vel: z, ultrasonic: z }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gyro, self.attitude, self.gps_pos, self.gps_vel, self.ultrasonic];
        if all.iter().any(|s| !(*s >= T::zero()) || !s.is_finite()) {
            return Err(Error::Domain("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Update rates of the sensor streams (Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRates<T> {
    pub imu: T,
    pub gps: T,
    pub ultrasonic: T,
}

impl<T: Real> Default for SensorRates<T> {
    fn default() -> Self {
        Self { imu: T::lit(450.0), gps: T::lit(10.0), ultrasonic: T::lit(45.0) }
    }
}

impl<T: Real> SensorRates<T> {
    pub fn validate(&self) -> Result<()> {
        if [self.imu, self.gps, self.ultrasonic].iter().any(|f| !(*f > T::zero()) || !f.is_finite()) {
            return Err(Error::Domain("sensor rates must be positive".into()));
        }
        Ok(())
    }
}

/// Estimator filter constants. `tau = 0` and `alpha = 1` pass measurements
/// straight through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig<T> {
    /// Complementary filter time constant (s).
    pub tau_complementary: T,
    /// EMA smoothing factor applied to raw samples.
    pub alpha_ema: T,
}

impl<T: Real> Default for FilterConfig<T> {
    fn default() -> Self {
        Self { tau_complementary: T::lit(32.0 / 450.0), alpha_ema: T::lit(0.5) }
    }
}

impl<T: Real> FilterConfig<T> {
    pub fn ideal() -> Self {
        Self { tau_complementary: T::zero(), alpha_ema: T::one() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_complementary >= T::zero()) || !self.tau_complementary.is_finite() {
            return Err(Error::Domain("complementary time constant must be non-negative".into()));
        }
        if !(self.alpha_ema > T::zero() && self.alpha_ema <= T::one()) {
            return Err(Error::Domain("EMA factor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Latest value of every sensor stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorFrame<T> {
    pub t: T,
    pub gyro: Vector3<T>,
    /// Absolute (phi, theta, psi) estimate.
    pub attitude: Vector3<T>,
    pub imu_t: T,
    pub gps_pos: Vector2<T>,
    pub gps_vel: Vector2<T>,
    pub gps_t: T,
    pub ultrasonic_z: T,
    pub ultrasonic_t: T,
}

const STREAM_IMU: u64 = 1;
const STREAM_GPS: u64 = 2;
const STREAM_ULTRA: u64 = 3;

/// Rate-limited noisy sensors. Each stream samples on its first call and
/// then every `1/rate` seconds after that. Noise for sample `k` of a stream
/// depends only on `(seed, stream, k)`, so runs are bit-reproducible.
#[derive(Debug, Clone)]
pub struct SensorSuite<T: Real> {
    pub noise: NoiseConfig<T>,
    pub rates: SensorRates<T>,
    seed: u64,
    start: Option<T>,
    ticks: [Option<u64>; 3],
    frame: Option<SensorFrame<T>>,
}

impl<T: Real> SensorSuite<T> {
    pub fn new(noise: NoiseConfig<T>, rates: SensorRates<T>, seed: u64) -> Result<Self> {
        noise.validate()?;
        rates.validate()?;
        Ok(Self { noise, rates, seed, start: None, ticks: [None; 3], frame: None })
    }

    fn rng(&self, stream: u64, tick: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&stream.to_le_bytes());
        key[16..24].copy_from_slice(&tick.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    fn tick(elapsed: T, rate: T) -> u64 {
        let k = (elapsed * rate + T::lit(1e-9)).floor().to_f64_lossy();
        if k > 0.0 { k as u64 } else { 0 }
    }

    /// Refresh every stream whose next sample time has been reached and
    /// return the current frame. `t` must not decrease between calls.
    pub fn sample(&mut self, s: &RigidState<T>, t: T) -> SensorFrame<T> {
        let rates = [self.rates.imu, self.rates.gps, self.rates.ultrasonic];
        let streams = [STREAM_IMU, STREAM_GPS, STREAM_ULTRA];
        let mut frame = self.frame.unwrap_or(SensorFrame {
            t,
            gyro: Vector3::zeros(),
            attitude: Vector3::zeros(),
            imu_t: t,
            gps_pos: Vector2::zeros(),
            gps_vel: Vector2::zeros(),
            gps_t: t,
            ultrasonic_z: T::zero(),
            ultrasonic_t: t,
        });
        frame.t = t;
        let t0 = *self.start.get_or_insert(t);
        for i in 0..3 {
            let k = Self::tick(t - t0, rates[i]);
            if self.ticks[i].is_some_and(|last| last >= k) {
                continue;
            }
            self.ticks[i] = Some(k);
            let mut rng = self.rng(streams[i], k);
            let mut n = |sigma: T| -> T {
                if sigma == T::zero() {
                    T::zero()
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * T::lit(z)
                }
            };
            match i {
                0 => {
                    let g = self.noise.gyro;
                    frame.gyro = Vector3::new(s.p + n(g), s.q + n(g), s.r + n(g));
                    let a = self.noise.attitude;
                    frame.attitude = Vector3::new(s.phi + n(a), s.theta + n(a), s.psi + n(a));
                    frame.imu_t = t;
                }
                1 => {
                    let (p, v) = (self.noise.gps_pos, self.noise.gps_vel);
                    frame.gps_pos = Vector2::new(s.x + n(p), s.y + n(p));
                    frame.gps_vel = Vector2::new(s.xd + n(v), s.yd + n(v));
                    frame.gps_t = t;
                }
                _ => {
                    frame.ultrasonic_z = s.z + n(self.noise.ultrasonic);
                    frame.ultrasonic_t = t;
                }
            }
        }
        self.frame = Some(frame);
        frame
    }
}

/// Vehicle state as seen by the controllers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub rates: Vector3<T>,
    /// (phi, theta, psi).
    pub attitude: Vector3<T>,
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
}

/// Complementary attitude filter over EMA-smoothed samples, GPS for the
/// horizontal channels and a differenced ultrasonic altitude.
#[derive(Debug, Clone)]
pub struct StateEstimator<T: Real> {
    pub filter: FilterConfig<T>,
    est: Option<Estimate<T>>,
    last_imu_t: Option<T>,
    last_gps_t: Option<T>,
    last_ultra: Option<(T, T)>,
}

impl<T: Real> StateEstimator<T> {
    pub fn new(filter: FilterConfig<T>) -> Result<Self> {
        filter.validate()?;
        Ok(Self { filter, est: None, last_imu_t: None, last_gps_t: None, last_ultra: None })
    }

    pub fn estimate(&self) -> Option<Estimate<T>> {
        self.est
    }

    pub fn update(&mut self, f: &SensorFrame<T>) -> Estimate<T> {
        let alpha = self.filter.alpha_ema;
        let tau = self.filter.tau_complementary;
        let Some(mut e) = self.est else {
            let e = Estimate {
                rates: f.gyro,
                attitude: f.attitude,
                position: Vector3::new(f.gps_pos.x, f.gps_pos.y, f.ultrasonic_z),
                velocity: Vector3::new(f.gps_vel.x, f.gps_vel.y, T::zero()),
            };
            self.est = Some(e);
            self.last_imu_t = Some(f.imu_t);
            self.last_gps_t = Some(f.gps_t);
            self.last_ultra = Some((f.ultrasonic_t, f.ultrasonic_z));
            return e;
        };

        if self.last_imu_t.is_none_or(|t0| f.imu_t > t0) {
            let dt = f.imu_t - self.last_imu_t.unwrap_or(f.imu_t);
            self.last_imu_t = Some(f.imu_t);
            e.rates = e.rates.zip_map(&f.gyro, |prev, s| ema(prev, s, alpha));
            let meas = e.attitude.zip_map(&f.attitude, |prev, s| ema(prev, s, alpha));
            let (phi, theta, psi) = (e.attitude.x, e.attitude.y, e.attitude.z);
            match body_to_euler_rates(&e.rates, phi, theta) {
                Ok(dr) if tau > T::zero() && dt > T::zero() => {
                    e.attitude.x = complementary(phi, dr.x, f.attitude.x, dt, tau);
                    e.attitude.y = complementary(theta, dr.y, f.attitude.y, dt, tau);
                    // Yaw is blended on the unit circle so wrap-around is seamless.
                    let a = tau / (tau + dt);
                    let pred = psi + dr.z * dt;
                    let c = a * pred.cos() + (T::one() - a) * f.attitude.z.cos();
                    let s = a * pred.sin() + (T::one() - a) * f.attitude.z.sin();
                    e.attitude.z = s.atan2(c);
                }
                _ => e.attitude = if alpha == T::one() { f.attitude } else { meas },
            }
        }

        if self.last_gps_t.is_none_or(|t0| f.gps_t > t0) {
            self.last_gps_t = Some(f.gps_t);
            e.position.x = ema(e.position.x, f.gps_pos.x, alpha);
            e.position.y = ema(e.position.y, f.gps_pos.y, alpha);
            e.velocity.x = ema(e.velocity.x, f.gps_vel.x, alpha);
            e.velocity.y = ema(e.velocity.y, f.gps_vel.y, alpha);
        }

        if let Some((t0, z0)) = self.last_ultra {
            if f.ultrasonic_t > t0 {
                let zd = (f.ultrasonic_z - z0) / (f.ultrasonic_t - t0);
                e.velocity.z = ema(e.velocity.z, zd, alpha);
                e.position.z = ema(e.position.z, f.ultrasonic_z, alpha);
                self.last_ultra = Some((f.ultrasonic_t, f.ultrasonic_z));
            }
        }
        self.est = Some(e);
        e
    }
}
