//! Periodic (spinning) equilibria after one or two opposing motors fail.
//!
//! At equilibrium the body rates are constant in the body frame, so the
//! angular velocity is also fixed in the inertial frame and the vehicle
//! spins about a vertical primary axis. Four conditions fix the solution:
//! body torque balance `tau - drag = w x (J w + h_rotor)` (three equations)
//! and lift balance `F * n_z = M g`. The thrust pattern is fixed up to scale
//! by the failure set: the two motors adjacent to a single failed motor
//! share the same thrust and the motor opposite to it carries `rho` times
//! that thrust.

use nalgebra::{Matrix4, Vector3, Vector4};

use crate::dynamics::{
    body_rate_derivative, mix_forces, rotor_speed, signed_speed_sum, MotorMask, MotorSet,
    QuadParams,
};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAX_NEWTON_ITERATIONS: usize = 200;

/// Which motors are lost and how the remaining thrust is shared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureConfig<T> {
    failed: MotorMask,
    rho: T,
}

/// Fail-safe architecture implied by a failure set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    ThreeRotor,
    TwoRotor,
}

impl<T: Real> FailureConfig<T> {
    /// `rho` is ignored (set to zero) when two opposing motors fail.
    pub fn new(failed: MotorMask, rho: T) -> Result<Self> {
        match failed.len() {
            1 => {
                if !rho.is_finite() || rho < T::zero() {
                    return Err(Error::Domain(format!("tuning factor must be finite and >= 0, got {rho}")));
                }
                Ok(Self { failed, rho })
            }
            2 => {
                let bits = failed.bits();
                if bits != 0b0101 && bits != 0b1010 {
                    return Err(Error::Domain(format!(
                        "double failure must be an opposing pair (1,3 or 2,4), got {failed}"
                    )));
                }
                Ok(Self { failed, rho: T::zero() })
            }
            n => Err(Error::Domain(format!(
                "fail-safe flight needs one or two failed motors, got {n}"
            ))),
        }
    }

    pub fn single(motor: usize, rho: T) -> Result<Self> {
        Self::new(MotorMask::from_motors(&[motor])?, rho)
    }

    pub fn opposing_pair(motors: [usize; 2]) -> Result<Self> {
        Self::new(MotorMask::from_motors(&motors)?, T::zero())
    }

    pub fn failed(&self) -> MotorMask {
        self.failed
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn architecture(&self) -> Architecture {
        if self.failed.len() == 2 {
            Architecture::TwoRotor
        } else {
            Architecture::ThreeRotor
        }
    }

    /// Thrust of each motor relative to the reference pair.
    fn pattern(&self) -> [T; 4] {
        // Reference motor: any survivor not opposite to a failed one.
        let anchor = self.failed.motors()[0];
        let opposite = (anchor + 1) % 4 + 1;
        let mut c = [T::one(); 4];
        c[anchor - 1] = T::zero();
        c[opposite - 1] = self.rho;
        if self.failed.len() == 2 {
            c[opposite - 1] = T::zero();
        }
        c
    }
}

/// Periodic equilibrium of the spinning vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium<T> {
    pub failed: MotorMask,
    pub rho: T,
    /// Equilibrium thrusts, zero on failed motors (N).
    pub thrust: [T; 4],
    /// Equilibrium rotor speeds (rad/s).
    pub speed: [T; 4],
    /// Body rates (p, q, r) (rad/s).
    pub rates: Vector3<T>,
    /// Unit primary axis in body coordinates, oriented with positive z.
    pub axis: Vector3<T>,
    /// Total thrust (N).
    pub total_thrust: T,
    /// Torque-to-thrust ratio used by the solve.
    pub epsilon: T,
    /// Radius of the horizontal circle traced by the centre of mass (m).
    pub orbit_radius: T,
}

impl<T: Real> Equilibrium<T> {
    pub fn p(&self) -> T {
        self.rates.x
    }
    pub fn q(&self) -> T {
        self.rates.y
    }
    pub fn r(&self) -> T {
        self.rates.z
    }
    pub fn nz(&self) -> T {
        self.axis.z
    }

    pub fn architecture(&self) -> Architecture {
        if self.failed.len() == 2 {
            Architecture::TwoRotor
        } else {
            Architecture::ThreeRotor
        }
    }

    pub fn motor_set(&self) -> MotorSet<T> {
        MotorSet::new(self.thrust, self.failed)
    }

    /// 1-based motor numbers that still produce thrust.
    pub fn survivors(&self) -> Vec<usize> {
        self.failed.complement().motors()
    }

    /// Body angular acceleration the plant model produces at this operating
    /// point. Zero (to solver tolerance) for a genuine equilibrium.
    pub fn body_rate_residual(&self, params: &QuadParams<T>) -> Result<Vector3<T>> {
        let w = mix_forces(&self.motor_set(), params)?;
        Ok(body_rate_derivative(&self.rates, &w, params))
    }

    /// Lift residual `F n_z - M g` (N).
    pub fn lift_residual(&self, params: &QuadParams<T>) -> T {
        self.total_thrust * self.nz() - params.weight()
    }
}

/// Options controlling the equilibrium solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T> {
    /// Per-motor thrust ceiling; solutions needing more are infeasible.
    pub f_max: Option<T>,
    /// Stopping tolerance on the residual, in rad/s^2 (torque rows) and
    /// m/s^2 (lift row).
    pub tol: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            f_max: None,
            tol: T::solver_tol(),
            max_iterations: MAX_NEWTON_ITERATIONS,
        }
    }
}

/// Unit primary axis through the body rates.
pub fn primary_axis<T: Real>(p: T, q: T, r: T) -> Result<Vector3<T>> {
    let w = Vector3::new(p, q, r);
    let n = w.norm();
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::Domain("primary axis of a zero rate vector is undefined".into()));
    }
    Ok(w / n)
}

/// Radius of the horizontal circle swept by the centre of mass.
pub fn orbit_radius<T: Real>(nz: T, omega_norm: T, g: T) -> Result<T> {
    if !(nz > T::zero()) || nz > T::one() + T::default_epsilon() {
        return Err(Error::Domain(format!("axis z component must lie in (0, 1], got {nz}")));
    }
    if !(omega_norm > T::zero()) {
        return Err(Error::Domain(format!("spin rate must be positive, got {omega_norm}")));
    }
    let nz = nz.min(T::one());
    Ok((T::one() - nz * nz).sqrt() / nz * g / (omega_norm * omega_norm))
}

/// Solve for the equilibrium of a failure configuration.
///
/// Opposing-pair failures use the closed form; single failures run a
/// damped Newton iteration seeded from the closed form.
pub fn solve_equilibrium<T: Real>(params: &QuadParams<T>, fc: &FailureConfig<T>) -> Result<Equilibrium<T>> {
    solve_equilibrium_with(params, fc, &SolveOptions::default())
}

pub fn solve_equilibrium_with<T: Real>(
    params: &QuadParams<T>,
    fc: &FailureConfig<T>,
    opts: &SolveOptions<T>,
) -> Result<Equilibrium<T>> {
    params.validate()?;
    let eq = match fc.architecture() {
        Architecture::TwoRotor => two_rotor_closed_form(params, fc.failed())?,
        Architecture::ThreeRotor => solve_newton(params, fc, opts)?,
    };
    if let Some(f_max) = opts.f_max {
        if let Some(i) = eq.thrust.iter().position(|f| *f > f_max) {
            return Err(Error::Infeasible(format!(
                "motor {} needs {} N, above the {} N ceiling",
                i + 1,
                eq.thrust[i],
                f_max
            )));
        }
    }
    Ok(eq)
}

/// Closed-form equilibrium for two opposing failed motors.
pub fn two_rotor_closed_form<T: Real>(params: &QuadParams<T>, failed: MotorMask) -> Result<Equilibrium<T>> {
    let fc = FailureConfig::new(failed, T::zero())?;
    if fc.architecture() != Architecture::TwoRotor {
        return Err(Error::Domain(format!("closed form needs an opposing pair, got {failed}")));
    }
    let half = params.weight() / T::lit(2.0);
    let c = fc.pattern();
    let thrust = c.map(|ci| ci * half);
    let speed = thrust.map(|f| rotor_speed(f, params.kf));
    let w = speed.iter().copied().fold(T::zero(), |a, b| a.max(b));
    // Motors 1/3 yaw the body positively, 2/4 negatively.
    let sign = if failed.contains(2) { T::one() } else { -T::one() };
    let r = sign * (T::lit(2.0) * params.kt * w * w / params.gamma).sqrt();
    build(params, failed, T::zero(), thrust, Vector3::new(T::zero(), T::zero(), r))
}

fn build<T: Real>(
    params: &QuadParams<T>,
    failed: MotorMask,
    rho: T,
    thrust: [T; 4],
    rates: Vector3<T>,
) -> Result<Equilibrium<T>> {
    let speed = thrust.map(|f| rotor_speed(f, params.kf));
    let mut axis = primary_axis(rates.x, rates.y, rates.z)?;
    if rates.z < T::zero() {
        axis = -axis;
    }
    let orbit = orbit_radius(axis.z, rates.norm(), params.g)?;
    Ok(Equilibrium {
        failed,
        rho,
        thrust,
        speed,
        rates,
        axis,
        total_thrust: thrust[0] + thrust[1] + thrust[2] + thrust[3],
        epsilon: params.torque_ratio(),
        orbit_radius: orbit,
    })
}

struct Problem<T: Real> {
    c: [T; 4],
    /// Torque per unit reference thrust.
    t: Vector3<T>,
    /// Signed rotor speed sum per sqrt(reference thrust).
    s_omega: T,
    total: T,
    params: QuadParams<T>,
}

impl<T: Real> Problem<T> {
    fn new(params: &QuadParams<T>, fc: &FailureConfig<T>) -> Self {
        let c = fc.pattern();
        let l = params.l;
        let t = Vector3::new(
            l * (c[1] - c[3]),
            l * (c[2] - c[0]),
            params.torque_ratio() * (c[0] - c[1] + c[2] - c[3]),
        );
        let per_unit = c.map(|ci| (ci / params.kf).sqrt());
        Self {
            c,
            t,
            s_omega: signed_speed_sum(&per_unit),
            total: c[0] + c[1] + c[2] + c[3],
            params: *params,
        }
    }

    /// Residual scaled to accelerations: torque rows divided by the axis
    /// inertia, lift row divided by mass.
    fn residual(&self, x: &Vector4<T>) -> Vector4<T> {
        let pr = &self.params;
        let (fa, p, q, r) = (x[0], x[1], x[2], x[3]);
        let omega = self.s_omega * fa.max(T::zero()).sqrt();
        let hz = pr.jzz * r + pr.jp * omega;
        let cx = q * hz - pr.jyy * q * r;
        let cy = pr.jxx * p * r - p * hz;
        let cz = (pr.jyy - pr.jxx) * p * q;
        let n = (p * p + q * q + r * r).sqrt();
        Vector4::new(
            (self.t.x * fa - cx) / pr.jxx,
            (self.t.y * fa - cy) / pr.jyy,
            (self.t.z * fa - pr.gamma * r * r.abs() - cz) / pr.jzz,
            (self.total * fa * r.abs() / n - pr.weight()) / pr.m,
        )
    }

    fn jacobian(&self, x: &Vector4<T>) -> Matrix4<T> {
        let pr = &self.params;
        let (fa, p, q, r) = (x[0], x[1], x[2], x[3]);
        let two = T::lit(2.0);
        let omega = self.s_omega * fa.sqrt();
        let d_omega = omega / (two * fa);
        let n2 = p * p + q * q + r * r;
        let n = n2.sqrt();
        let n3 = n2 * n;
        let sr = if r < T::zero() { -T::one() } else { T::one() };
        let bx = (pr.jzz - pr.jyy) * r + pr.jp * omega;
        let by = (pr.jxx - pr.jzz) * r - pr.jp * omega;
        let mut j = Matrix4::from_row_slice(&[
            self.t.x - pr.jp * q * d_omega,
            T::zero(),
            -bx,
            -(pr.jzz - pr.jyy) * q,
            //
            self.t.y + pr.jp * p * d_omega,
            -by,
            T::zero(),
            -(pr.jxx - pr.jzz) * p,
            //
            self.t.z,
            -(pr.jyy - pr.jxx) * q,
            -(pr.jyy - pr.jxx) * p,
            -two * pr.gamma * r.abs(),
            //
            self.total * r.abs() / n,
            -self.total * fa * r.abs() * p / n3,
            -self.total * fa * r.abs() * q / n3,
            self.total * fa * sr * (n2 - r * r) / n3,
        ]);
        let scale = [pr.jxx, pr.jyy, pr.jzz, pr.m];
        for (i, s) in scale.iter().enumerate() {
            for k in 0..4 {
                j[(i, k)] /= *s;
            }
        }
        j
    }
}

/// General damped-Newton equilibrium solve. Works for opposing-pair
/// failures too, which makes it an independent check on the closed form.
pub fn solve_newton<T: Real>(
    params: &QuadParams<T>,
    fc: &FailureConfig<T>,
    opts: &SolveOptions<T>,
) -> Result<Equilibrium<T>> {
    let prob = Problem::new(params, fc);
    if !(prob.total > T::zero()) {
        return Err(Error::Infeasible("no motor produces thrust".into()));
    }
    if prob.t.z == T::zero() {
        return Err(Error::Infeasible(
            "surviving rotors produce no net yaw torque, so no spin equilibrium exists".into(),
        ));
    }
    // Seed: opposing pair at half weight each, the third rotor at rho times that.
    let fa0 = params.weight() / T::lit(2.0);
    let r0 = prob.t.z.signum() * (prob.t.z.abs() * fa0 / params.gamma).sqrt();
    let mut x = Vector4::new(fa0, T::zero(), T::zero(), r0);
    let mut res = prob.residual(&x);
    let mut norm = res.amax();
    let mut iterations = 0;
    while norm >= opts.tol {
        if iterations >= opts.max_iterations {
            return Err(Error::Convergence { iterations, residual: norm.to_f64_lossy() });
        }
        iterations += 1;
        let jac = prob.jacobian(&x);
        let Some(delta) = jac.lu().solve(&-res) else {
            return Err(Error::Convergence { iterations, residual: norm.to_f64_lossy() });
        };
        let mut alpha = T::one();
        // Keep the reference thrust positive.
        while x[0] + alpha * delta[0] <= T::zero() {
            alpha *= T::lit(0.5);
        }
        let mut accepted = false;
        for _ in 0..40 {
            let trial = x + delta * alpha;
            let trial_res = prob.residual(&trial);
            let trial_norm = trial_res.amax();
            if trial_norm.is_finite() && trial_norm < norm {
                x = trial;
                res = trial_res;
                norm = trial_norm;
                accepted = true;
                break;
            }
            alpha *= T::lit(0.5);
        }
        if !accepted {
            // Line search stalled; at machine precision this is convergence.
            if norm < opts.tol * T::lit(100.0) {
                break;
            }
            return Err(Error::Convergence { iterations, residual: norm.to_f64_lossy() });
        }
    }
    if x[3] * prob.t.z <= T::zero() {
        return Err(Error::Infeasible("spin direction opposes the net rotor torque".into()));
    }
    let thrust = prob.c.map(|ci| ci * x[0]);
    build(params, fc.failed(), fc.rho(), thrust, Vector3::new(x[1], x[2], x[3]))
}
