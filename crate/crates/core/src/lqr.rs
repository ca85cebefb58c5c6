//! Linear model of the reduced attitude dynamics and LQR synthesis.
//!
//! The reduced state is `s = (p, q, n_x, n_y)`: the two controlled body
//! rates and the body-frame x/y components of the inertially fixed thrust
//! direction. Along the reduced model `r` stays at its equilibrium value and
//! `n_z` at the equilibrium axis component. Inputs are thrust deviations of
//! the surviving motors from their equilibrium values.

use nalgebra::{Complex, DMatrix, DVector, Matrix4, Vector3};

use crate::dynamics::{body_rate_derivative, QuadParams};
use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};
use crate::real::Real;

/// Reduced attitude state `(p, q, n_x, n_y)`, or an error in it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReducedState<T> {
    pub p: T,
    pub q: T,
    pub nx: T,
    pub ny: T,
}

impl<T: Real> ReducedState<T> {
    pub fn new(p: T, q: T, nx: T, ny: T) -> Self {
        Self { p, q, nx, ny }
    }

    /// Equilibrium point of the reduced model.
    pub fn at_equilibrium(eq: &Equilibrium<T>) -> Self {
        Self::new(eq.p(), eq.q(), eq.axis.x, eq.axis.y)
    }

    pub fn as_array(&self) -> [T; 4] {
        [self.p, self.q, self.nx, self.ny]
    }

    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_row_slice(&self.as_array())
    }

    /// Componentwise `self - target`.
    pub fn error_from(&self, target: &Self) -> Self {
        Self::new(self.p - target.p, self.q - target.q, self.nx - target.nx, self.ny - target.ny)
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Linearized reduced dynamics `ds/dt = A s + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T: Real> {
    pub a: Matrix4<T>,
    /// 4 x m, one column per surviving motor.
    pub b: DMatrix<T>,
    /// 1-based motor number of each column of `b`.
    pub inputs: Vec<usize>,
}

/// Diagonal LQR weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights<T: Real> {
    /// Weights on (p, q, n_x, n_y).
    pub q: [T; 4],
    /// One weight per input, in input order.
    pub r: Vec<T>,
}

impl<T: Real> LqrWeights<T> {
    pub fn new(q: [T; 4], r: Vec<T>) -> Result<Self> {
        if q.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
            return Err(Error::Domain("state weights must be finite and non-negative".into()));
        }
        if r.is_empty() || r.iter().any(|w| !(*w > T::zero()) || !w.is_finite()) {
            return Err(Error::Domain("input weights must be finite and positive".into()));
        }
        Ok(Self { q, r })
    }

    pub fn q_matrix(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.q))
    }

    pub fn r_matrix(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.r))
    }

    /// Scale both weights by the same factor.
    pub fn scaled(&self, c: T) -> Self {
        Self { q: self.q.map(|w| w * c), r: self.r.iter().map(|w| *w * c).collect() }
    }
}

/// Reduced-state derivative at state error `ds` and input deviation `u`
/// (one entry per surviving motor, in `survivors` order).
///
/// This is the nonlinear map the [`linearize`] Jacobians describe. It is
/// evaluated through the plant's rotational model, so it also serves as the
/// finite-difference reference.
pub fn reduced_dynamics<T: Real>(
    params: &QuadParams<T>,
    eq: &Equilibrium<T>,
    ds: &[T; 4],
    u: &[T],
) -> Result<[T; 4]> {
    let survivors = eq.survivors();
    if u.len() != survivors.len() {
        return Err(Error::Domain(format!(
            "expected {} input deviations, got {}",
            survivors.len(),
            u.len()
        )));
    }
    let mut thrust = eq.thrust;
    for (k, m) in survivors.iter().enumerate() {
        thrust[m - 1] += u[k];
    }
    let w = crate::dynamics::mix_forces(&crate::dynamics::MotorSet::new(thrust, eq.failed), params)?;
    let rates = Vector3::new(eq.p() + ds[0], eq.q() + ds[1], eq.r());
    let acc = body_rate_derivative(&rates, &w, params);
    let (nx, ny, nz) = (eq.axis.x + ds[2], eq.axis.y + ds[3], eq.axis.z);
    // Body-frame derivative of an inertially fixed direction: n x w.
    let ndot_x = ny * rates.z - nz * rates.y;
    let ndot_y = nz * rates.x - nx * rates.z;
    Ok([acc.x, acc.y, ndot_x, ndot_y])
}

/// Jacobians of [`reduced_dynamics`] at the equilibrium.
pub fn linearize<T: Real>(params: &QuadParams<T>, eq: &Equilibrium<T>) -> LinearModel<T> {
    let (jxx, jyy, jzz, jp) = (params.jxx, params.jyy, params.jzz, params.jp);
    let (pb, qb, rb) = (eq.p(), eq.q(), eq.r());
    let nz = eq.nz();
    let omega = crate::dynamics::signed_speed_sum(&eq.speed);

    let a_pq = -((jzz - jyy) * rb + jp * omega) / jxx;
    let b_qp = -((jxx - jzz) * rb - jp * omega) / jyy;
    let z = T::zero();
    let a = Matrix4::from_row_slice(&[
        z, a_pq, z, z, //
        b_qp, z, z, z, //
        z, -nz, z, rb, //
        nz, z, -rb, z,
    ]);

    let inputs = eq.survivors();
    let l = params.l;
    let two = T::lit(2.0);
    let mut b = DMatrix::zeros(4, inputs.len());
    for (k, &m) in inputs.iter().enumerate() {
        let (d_roll, d_pitch) = match m {
            1 => (z, -l),
            2 => (l, z),
            3 => (z, l),
            _ => (-l, z),
        };
        let sign = if m % 2 == 1 { -T::one() } else { T::one() };
        // Spin-up sensitivity is unbounded at zero speed; the term is dropped there.
        let d_omega = if eq.speed[m - 1] > z { sign / (two * params.kf * eq.speed[m - 1]) } else { z };
        b[(0, k)] = d_roll / jxx - jp / jxx * qb * d_omega;
        b[(1, k)] = d_pitch / jyy + jp / jyy * pb * d_omega;
    }
    LinearModel { a, b, inputs }
}

/// Stabilizing solution of the continuous algebraic Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution<T: Real> {
    /// Cost matrix P.
    pub p: DMatrix<T>,
    /// Gain K = R^-1 B^T P, so u = -K s.
    pub k: DMatrix<T>,
    pub iterations: usize,
}

impl<T: Real> CareSolution<T> {
    pub fn closed_loop_eigenvalues(&self, a: &DMatrix<T>, b: &DMatrix<T>) -> Vec<Complex<T>> {
        (a - b * &self.k).complex_eigenvalues().iter().copied().collect()
    }
}

/// Riccati residual `A^T P + P A - P B R^-1 B^T P + Q`.
pub fn care_residual<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    p: &DMatrix<T>,
) -> DMatrix<T> {
    let r_inv = r.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(r.nrows(), r.ncols()));
    a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q
}

fn max_real<T: Real>(m: &DMatrix<T>) -> Complex<T> {
    m.complex_eigenvalues()
        .iter()
        .copied()
        .fold(Complex::new(T::min_value().unwrap_or(-T::one() / T::default_epsilon()), T::zero()), |acc, z| {
            if z.re > acc.re {
                z
            } else {
                acc
            }
        })
}

fn synthesis_error<T: Real>(reason: &str, z: Complex<T>) -> Error {
    Error::Synthesis { reason: reason.into(), re: z.re.to_f64_lossy(), im: z.im.to_f64_lossy() }
}

/// Solve `M X + X N = C` through the Kronecker form, with one step of
/// iterative refinement.
pub fn solve_sylvester<T: Real>(m: &DMatrix<T>, n: &DMatrix<T>, c: &DMatrix<T>) -> Option<DMatrix<T>> {
    let (rows, cols) = (m.nrows(), n.nrows());
    let dim = rows * cols;
    let mut big = DMatrix::zeros(dim, dim);
    // Column-major vec: vec(M X) = (I kron M) vec X, vec(X N) = (N^T kron I) vec X.
    for j in 0..cols {
        for i in 0..rows {
            let row = j * rows + i;
            for k in 0..rows {
                big[(row, j * rows + k)] += m[(i, k)];
            }
            for k in 0..cols {
                big[(row, k * rows + i)] += n[(k, j)];
            }
        }
    }
    let lu = big.clone().lu();
    let rhs = DVector::from_column_slice(c.as_slice());
    let mut x = lu.solve(&rhs)?;
    let resid = &rhs - &big * &x;
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_column_slice(rows, cols, x.as_slice()))
}

/// Stabilizing initial gain (Bass): with `A + beta I` anti-stable, solve
/// `(A + beta I) Z + Z (A + beta I)^T = 2 B R^-1 B^T` and take
/// `K0 = R^-1 B^T Z^-1`.
fn bass_gain<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, r_inv: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let lead = max_real(a);
    let beta = lead.re.max(T::zero()) + a.norm().max(T::one()) * T::lit(0.1) + T::one();
    let shifted = a + DMatrix::identity(n, n) * beta;
    let rhs = b * r_inv * b.transpose() * T::lit(2.0);
    let z = solve_sylvester(&shifted, &shifted.transpose(), &rhs)
        .ok_or_else(|| synthesis_error("shifted Lyapunov equation is singular", lead))?;
    let z = (&z + z.transpose()) * T::lit(0.5);
    let z_inv = z
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| synthesis_error("pair (A, B) is not controllable", lead))?;
    Ok(r_inv * b.transpose() * z_inv)
}

pub const MAX_KLEINMAN_ITERATIONS: usize = 100;

/// Solve the CARE by Newton-Kleinman iteration.
pub fn solve_care<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<CareSolution<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Domain("inconsistent CARE dimensions".into()));
    }
    let q = (q + q.transpose()) * T::lit(0.5);
    let q_min = q.symmetric_eigenvalues().min();
    if q_min < -T::default_epsilon().sqrt() * q.norm().max(T::one()) {
        return Err(Error::Domain(format!("Q must be positive semidefinite (eigenvalue {q_min})")));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Domain("R must be positive definite".into()))?;

    let mut k = if max_real(a).re < T::zero() {
        DMatrix::zeros(b.ncols(), n)
    } else {
        bass_gain(a, b, &r_inv)?
    };
    let lead = max_real(&(a - b * &k));
    if lead.re >= T::zero() {
        return Err(synthesis_error("no stabilizing initial gain; (A, B) not stabilizable", lead));
    }

    let mut p_prev: Option<DMatrix<T>> = None;
    let mut best: Option<(T, DMatrix<T>, DMatrix<T>)> = None;
    let r_mat = r.clone();
    for it in 1..=MAX_KLEINMAN_ITERATIONS {
        let acl = a - b * &k;
        let rhs = -(&q + k.transpose() * &r_mat * &k);
        let p = solve_sylvester(&acl.transpose(), &acl, &rhs)
            .ok_or_else(|| synthesis_error("closed-loop Lyapunov equation is singular", max_real(&acl)))?;
        let p = (&p + p.transpose()) * T::lit(0.5);
        k = &r_inv * b.transpose() * &p;
        let res = care_residual(a, b, &q, r, &p).amax();
        if !res.is_finite() {
            return Err(synthesis_error("Newton-Kleinman iteration diverged", max_real(&acl)));
        }
        let improved = best.as_ref().is_none_or(|(r0, _, _)| res < *r0);
        if improved {
            best = Some((res, p.clone(), k.clone()));
        }
        let step = p_prev.as_ref().map(|pp| (&p - pp).amax()).unwrap_or_else(|| p.amax() + T::one());
        let scale = p.amax().max(T::one());
        if step <= scale * T::default_epsilon() * T::lit(64.0) || (!improved && it > 3) {
            let (_, p, k) = best.expect("at least one iterate");
            let sol = CareSolution { p, k, iterations: it };
            let lead = max_real(&(a - b * &sol.k));
            if lead.re >= T::zero() {
                return Err(synthesis_error("closed loop is not Hurwitz", lead));
            }
            return Ok(sol);
        }
        p_prev = Some(p);
    }
    Err(synthesis_error(
        "Newton-Kleinman iteration did not settle",
        max_real(&(a - b * &k)),
    ))
}

/// Linearize at `eq` and solve the LQR problem for `weights`.
pub fn lqr_gain<T: Real>(
    params: &QuadParams<T>,
    eq: &Equilibrium<T>,
    weights: &LqrWeights<T>,
) -> Result<(LinearModel<T>, CareSolution<T>)> {
    let model = linearize(params, eq);
    if weights.r.len() != model.inputs.len() {
        return Err(Error::Domain(format!(
            "{} input weights given for {} surviving motors",
            weights.r.len(),
            model.inputs.len()
        )));
    }
    let a = DMatrix::from_iterator(4, 4, model.a.iter().copied());
    let sol = solve_care(&a, &model.b, &weights.q_matrix(), &weights.r_matrix())?;
    Ok((model, sol))
}
