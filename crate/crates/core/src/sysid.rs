//! System identification: pendulum inertia, propeller curves, yaw drag.

use crate::error::{Error, Result};
use crate::real::Real;

/// Default motor winding resistance (ohm).
pub const DEFAULT_WINDING_RESISTANCE: f64 = 0.12;

/// Propeller aerodynamic drag coefficient. Its effect is absorbed into the
/// body yaw drag, so it is identically zero.
pub const PROP_DRAG_COEFF: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumTrial<T> {
    /// Distance from the centre of mass to the pivot (m).
    pub pivot_distance: T,
    /// Small-amplitude swing period (s).
    pub period: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropSample<T> {
    pub omega: T,
    pub thrust: T,
    pub voltage: T,
    pub current: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DragSample<T> {
    pub total_torque: T,
    pub omega_ss: T,
}

/// Inertia about the pivot and, by the parallel-axis theorem, about the
/// centre of mass.
pub fn moi_from_pendulum<T: Real>(mass: T, g: T, trial: &PendulumTrial<T>) -> Result<(T, T)> {
    let (r, period) = (trial.pivot_distance, trial.period);
    if !(r > T::zero()) || !(period > T::zero()) || !(mass > T::zero()) {
        return Err(Error::Domain("pendulum mass, pivot distance and period must be positive".into()));
    }
    let s = period / T::two_pi();
    let j_pivot = mass * g * r * s * s;
    let j_com = j_pivot - mass * r * r;
    if !(j_com > T::zero()) {
        return Err(Error::InconsistentMeasurement(format!(
            "period {period} s is too short for a pivot distance of {r} m"
        )));
    }
    Ok((j_pivot, j_com))
}

/// Spin inertia of a motor bell (solid cylinder) plus a blade modelled as a
/// uniform disk.
pub fn propeller_moi<T: Real>(motor_mass: T, motor_radius: T, blade_mass: T, blade_radius: T) -> T {
    let half = T::lit(0.5);
    half * motor_mass * motor_radius * motor_radius + half * blade_mass * blade_radius * blade_radius
}

/// Least squares slope through the origin of `y` against `x`.
fn slope_through_origin<T: Real>(x: &[T], y: &[T]) -> Result<T> {
    let sxx = x.iter().fold(T::zero(), |a, v| a + *v * *v);
    let sxy = x.iter().zip(y).fold(T::zero(), |a, (u, v)| a + *u * *v);
    if !(sxx > T::zero()) {
        return Err(Error::Fit("regressor is identically zero".into()));
    }
    let k = sxy / sxx;
    if !k.is_finite() {
        return Err(Error::Fit("fit produced a non-finite coefficient".into()));
    }
    Ok(k)
}

fn check_speeds<T: Real>(omega: &[T], needed: usize) -> Result<()> {
    if omega.len() < needed {
        return Err(Error::InsufficientData { needed, got: omega.len() });
    }
    if omega.iter().any(|w| !(*w > T::zero()) || !w.is_finite()) {
        return Err(Error::Fit("speeds must be positive and finite".into()));
    }
    let lo = omega.iter().copied().fold(omega[0], |a, b| a.min(b));
    let hi = omega.iter().copied().fold(omega[0], |a, b| a.max(b));
    if hi - lo <= hi * T::default_epsilon() * T::lit(16.0) {
        return Err(Error::Fit("all samples share one speed; the fit is degenerate".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustFit<T> {
    pub kf: T,
    pub kt: T,
    /// Thrust-to-torque ratio kf/kt.
    pub k: T,
}

/// Electrical torque: air-gap power over speed.
pub fn electrical_torque<T: Real>(s: &PropSample<T>, winding_resistance: T) -> T {
    (s.voltage * s.current - s.current * s.current * winding_resistance) / s.omega
}

/// Fit `f = kf w^2` and `tau_e = kt w^2` by least squares through the origin.
pub fn fit_thrust_curve<T: Real>(samples: &[PropSample<T>], winding_resistance: T) -> Result<ThrustFit<T>> {
    let omega: Vec<T> = samples.iter().map(|s| s.omega).collect();
    check_speeds(&omega, 3)?;
    if !(winding_resistance >= T::zero()) {
        return Err(Error::Domain("winding resistance must be non-negative".into()));
    }
    let x: Vec<T> = omega.iter().map(|w| *w * *w).collect();
    let f: Vec<T> = samples.iter().map(|s| s.thrust).collect();
    let tau: Vec<T> = samples.iter().map(|s| electrical_torque(s, winding_resistance)).collect();
    let kf = slope_through_origin(&x, &f)?;
    let kt = slope_through_origin(&x, &tau)?;
    if !(kf > T::zero()) || !(kt > T::zero()) {
        return Err(Error::Fit(format!("non-positive propeller coefficients kf={kf}, kt={kt}")));
    }
    Ok(ThrustFit { kf, kt, k: kf / kt })
}

/// Fit the yaw drag coefficient from steady spin samples, `tau = gamma w^2`.
pub fn fit_drag<T: Real>(samples: &[DragSample<T>]) -> Result<T> {
    let omega: Vec<T> = samples.iter().map(|s| s.omega_ss.abs()).collect();
    check_speeds(&omega, 3)?;
    let x: Vec<T> = omega.iter().map(|w| *w * *w).collect();
    let y: Vec<T> = samples.iter().map(|s| s.total_torque.abs()).collect();
    let gamma = slope_through_origin(&x, &y)?;
    if !(gamma > T::zero()) {
        return Err(Error::Fit(format!("non-positive drag coefficient {gamma}")));
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pendulum_examples() {
        let two_pi = std::f64::consts::TAU;
        // M g r = 1.
        let (jp, jc) = moi_from_pendulum(1.0, 4.0, &PendulumTrial { pivot_distance: 0.25, period: two_pi }).unwrap();
        assert_relative_eq!(jp, 1.0, epsilon = 1e-15);
        assert_relative_eq!(jc, 0.9375, epsilon = 1e-15);
        let (jp, jc) = moi_from_pendulum(1.439, 9.80665, &PendulumTrial { pivot_distance: 0.1, period: 1.0 }).unwrap();
        assert_relative_eq!(jp, 0.035746, epsilon = 5e-7);
        assert_relative_eq!(jc, 0.021356, epsilon = 5e-7);
        let short = PendulumTrial { pivot_distance: 0.5, period: 0.5 };
        assert!(matches!(moi_from_pendulum(1.0, 9.8, &short), Err(Error::InconsistentMeasurement(_))));
    }

    #[test]
    fn pendulum_recovers_simulated_inertia() {
        let (m, g, r, j_com) = (1.439, 9.80665, 0.15, 0.0205);
        let jp = j_com + m * r * r;
        let k = m * g * r / jp;
        // RK4 on theta'' = -k sin(theta), period from upward zero crossings.
        let (mut th, mut om, dt) = (0.02f64, 0.0f64, 1e-5);
        let mut crossings = Vec::new();
        let mut t = 0.0;
        while crossings.len() < 6 {
            let f = |th: f64, om: f64| (om, -k * th.sin());
            let (a1, b1) = f(th, om);
            let (a2, b2) = f(th + 0.5 * dt * a1, om + 0.5 * dt * b1);
            let (a3, b3) = f(th + 0.5 * dt * a2, om + 0.5 * dt * b2);
            let (a4, b4) = f(th + dt * a3, om + dt * b3);
            let nth = th + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            om += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            if th < 0.0 && nth >= 0.0 {
                crossings.push(t + dt * (-th) / (nth - th));
            }
            th = nth;
            t += dt;
        }
        let period = (crossings[5] - crossings[0]) / 5.0;
        let (_, jc) = moi_from_pendulum(m, g, &PendulumTrial { pivot_distance: r, period }).unwrap();
        assert_relative_eq!(jc, j_com, max_relative = 0.01);
    }

    #[test]
    fn pendulum_monotone() {
        let j = |r: f64, t: f64| moi_from_pendulum(1.0, 9.8, &PendulumTrial { pivot_distance: r, period: t }).map(|v| v.0);
        assert!(j(0.2, 1.1).unwrap() > j(0.2, 1.0).unwrap());
        assert!(j(0.21, 1.0).unwrap() > j(0.2, 1.0).unwrap());
    }

    fn prop_samples(kf: f64, kt: f64, rw: f64, noise: impl Fn(usize) -> f64) -> Vec<PropSample<f64>> {
        (0..20)
            .map(|i| {
                let w = 200.0 + 40.0 * i as f64;
                let current = 2.0 + 0.5 * i as f64;
                let tau = kt * w * w;
                // Voltage chosen so the electrical torque equals tau.
                let voltage = (tau * w + current * current * rw) / current;
                PropSample { omega: w, thrust: kf * w * w * noise(i), voltage, current }
            })
            .collect()
    }

    #[test]
    fn exact_thrust_fit() {
        let s = prop_samples(2e-5, 3e-7, 0.12, |_| 1.0);
        let fit = fit_thrust_curve(&s, 0.12).unwrap();
        assert_relative_eq!(fit.kf, 2e-5, max_relative = 1e-12);
        assert_relative_eq!(fit.kt, 3e-7, max_relative = 1e-10);
        for p in &s {
            let f = fit.kf * p.omega * p.omega;
            let tau = fit.kt * p.omega * p.omega;
            assert_relative_eq!(f, fit.k * tau, max_relative = 1e-12);
        }
    }

    #[test]
    fn noisy_thrust_fit() {
        // Deterministic +/-1% pattern.
        let s = prop_samples(2e-5, 3e-7, 0.12, |i| 1.0 + 0.01 * ((i as f64) * 2.3).sin());
        let fit = fit_thrust_curve(&s, 0.12).unwrap();
        assert_relative_eq!(fit.kf, 2e-5, max_relative = 0.02);
    }

    #[test]
    fn thrust_fit_errors() {
        let s = prop_samples(2e-5, 3e-7, 0.12, |_| 1.0);
        assert!(matches!(fit_thrust_curve(&s[..2], 0.12), Err(Error::InsufficientData { .. })));
        let neg: Vec<_> = s.iter().map(|p| PropSample { thrust: -p.thrust, ..*p }).collect();
        assert!(matches!(fit_thrust_curve(&neg, 0.12), Err(Error::Fit(_))));
    }

    #[test]
    fn drag_fit() {
        let g = 0.000184199;
        let s: Vec<_> = (1..=6).map(|i| DragSample { total_torque: g * (10.0 * i as f64).powi(2), omega_ss: 10.0 * i as f64 }).collect();
        assert_relative_eq!(fit_drag(&s).unwrap(), g, max_relative = 1e-12);
        let scaled: Vec<_> = s.iter().map(|d| DragSample { total_torque: 3.0 * d.total_torque, ..*d }).collect();
        assert_relative_eq!(fit_drag(&scaled).unwrap(), 3.0 * g, max_relative = 1e-12);
        let same: Vec<_> = (0..4).map(|_| DragSample { total_torque: 0.1, omega_ss: 20.0 }).collect();
        assert!(matches!(fit_drag(&same), Err(Error::Fit(_))));
    }

    #[test]
    fn propeller_inertia() {
        assert_relative_eq!(propeller_moi(0.05, 0.014, 0.012, 0.1143), 0.5 * (0.05 * 0.014f64.powi(2) + 0.012 * 0.1143f64.powi(2)));
    }
}
