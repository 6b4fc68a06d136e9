//! Rotations, Euler-rate kinematics and rigid-body dynamics.
//!
//! Attitude is stored as `q = [psi, phi, theta]` (yaw, roll, pitch). A global
//! vector maps to the body frame as `w_local = rot_y(theta)^T rot_x(phi)^T rot_z(psi)^T w`.
//! The global frame is z-up; gravity acts along `-e_z`.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub type Vec3T<T> = [T; 3];
pub type Mat3T<T> = [[T; 3]; 3];
/// `[p (3), q (3), v (3), omega (3)]`.
pub type StateT<T> = [T; 12];

/// Roll margin to the Euler-rate singularity.
pub const SINGULARITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnvConstantsT<T> {
    pub rho: T,
    pub g: T,
}

impl<T: Real> Default for EnvConstantsT<T> {
    fn default() -> Self {
        Self {
            rho: lit(1.225),
            g: lit(9.81),
        }
    }
}

impl<T: Real> EnvConstantsT<T> {
    pub fn g_vec(&self) -> Vec3T<T> {
        [T::zero(), T::zero(), self.g]
    }
}

/// Mass properties needed by the equations of motion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RigidBodyT<T> {
    pub mass: T,
    pub inertia: Mat3T<T>,
}

pub fn rot_x<T: Real>(a: T) -> Mat3T<T> {
    let (s, c) = a.sin_cos();
    let (o, l) = (T::zero(), T::one());
    [[l, o, o], [o, c, -s], [o, s, c]]
}

pub fn rot_y<T: Real>(a: T) -> Mat3T<T> {
    let (s, c) = a.sin_cos();
    let (o, l) = (T::zero(), T::one());
    [[c, o, s], [o, l, o], [-s, o, c]]
}

pub fn rot_z<T: Real>(a: T) -> Mat3T<T> {
    let (s, c) = a.sin_cos();
    let (o, l) = (T::zero(), T::one());
    [[c, -s, o], [s, c, o], [o, o, l]]
}

pub fn transpose<T: Real>(m: &Mat3T<T>) -> Mat3T<T> {
    let mut r = *m;
    for (i, row) in r.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[j][i];
        }
    }
    r
}

pub fn mat_mul<T: Real>(a: &Mat3T<T>, b: &Mat3T<T>) -> Mat3T<T> {
    let mut r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    r
}

pub fn mat_vec<T: Real>(a: &Mat3T<T>, v: &Vec3T<T>) -> Vec3T<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn cross<T: Real>(a: &Vec3T<T>, b: &Vec3T<T>) -> Vec3T<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot<T: Real>(a: &Vec3T<T>, b: &Vec3T<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm<T: Real>(a: &Vec3T<T>) -> T {
    dot(a, a).sqrt()
}

pub fn det<T: Real>(m: &Mat3T<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn inverse<T: Real>(m: &Mat3T<T>) -> Option<Mat3T<T>> {
    let d = det(m);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    let mut r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
            let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / d;
        }
    }
    Some(r)
}

/// Matrix `R` with `w_local = R w_global`.
pub fn rot_global_to_local<T: Real>(q: &Vec3T<T>) -> Mat3T<T> {
    let rz = transpose(&rot_z(q[0]));
    let rx = transpose(&rot_x(q[1]));
    let ry = transpose(&rot_y(q[2]));
    mat_mul(&ry, &mat_mul(&rx, &rz))
}

/// Matrix with `w_global = R w_local`.
pub fn rot_local_to_global<T: Real>(q: &Vec3T<T>) -> Mat3T<T> {
    mat_mul(&rot_z(q[0]), &mat_mul(&rot_x(q[1]), &rot_y(q[2])))
}

/// `J(q)` with `omega_local = J(q) q_dot`.
pub fn angular_jacobian<T: Real>(q: &Vec3T<T>) -> Mat3T<T> {
    let (sf, cf) = q[1].sin_cos();
    let (st, ct) = q[2].sin_cos();
    let (o, l) = (T::zero(), T::one());
    [[-st * cf, ct, o], [sf, o, l], [ct * cf, st, o]]
}

/// Euler rates from body rates, `q_dot = J(q)^-1 omega`.
pub fn euler_rates<T: Real>(q: &Vec3T<T>, omega: &Vec3T<T>) -> Result<Vec3T<T>> {
    let (sf, cf) = q[1].sin_cos();
    let half_pi = lit::<T>(std::f64::consts::FRAC_PI_2);
    if q[1].abs() >= half_pi - lit(SINGULARITY_MARGIN) || !q[1].is_finite() {
        return Err(Error::Singular(q[1].to_f64().unwrap_or(f64::NAN)));
    }
    let (st, ct) = q[2].sin_cos();
    let psi_d = (ct * omega[2] - st * omega[0]) / cf;
    let phi_d = ct * omega[0] + st * omega[2];
    let theta_d = omega[1] - sf * psi_d;
    Ok([psi_d, phi_d, theta_d])
}

/// Time derivative of the state under global force and body torque.
pub fn dynamics_rhs<T: Real>(
    xi: &StateT<T>,
    f_global: &Vec3T<T>,
    tau_local: &Vec3T<T>,
    body: &RigidBodyT<T>,
    env: &EnvConstantsT<T>,
) -> Result<StateT<T>> {
    let q = [xi[3], xi[4], xi[5]];
    let omega = [xi[9], xi[10], xi[11]];
    let q_dot = euler_rates(&q, &omega)?;
    let inv = inverse(&body.inertia).ok_or_else(|| Error::Invalid("singular inertia".into()))?;
    let i_omega = mat_vec(&body.inertia, &omega);
    let gyro = cross(&omega, &i_omega);
    let rhs = [tau_local[0] - gyro[0], tau_local[1] - gyro[1], tau_local[2] - gyro[2]];
    let omega_dot = mat_vec(&inv, &rhs);
    let g = env.g_vec();
    let mut d = [T::zero(); 12];
    d[..3].copy_from_slice(&xi[6..9]);
    d[3..6].copy_from_slice(&q_dot);
    for k in 0..3 {
        d[6 + k] = f_global[k] / body.mass - g[k];
    }
    d[9..12].copy_from_slice(&omega_dot);
    Ok(d)
}

/// One classical fourth-order Runge-Kutta step of `x' = f(t, x)`.
pub fn integrate_step<T: Real, F>(xi: &StateT<T>, t: T, dt: T, mut f: F) -> Result<StateT<T>>
where
    F: FnMut(T, &StateT<T>) -> Result<StateT<T>>,
{
    if dt <= T::zero() {
        return Err(Error::Invalid("dt must be positive".into()));
    }
    let two = lit::<T>(2.0);
    let half = dt / two;
    let axpy = |a: &StateT<T>, h: T, k: &StateT<T>| {
        let mut r = *a;
        for i in 0..12 {
            r[i] = r[i] + h * k[i];
        }
        r
    };
    let k1 = f(t, xi)?;
    let k2 = f(t + half, &axpy(xi, half, &k1))?;
    let k3 = f(t + half, &axpy(xi, half, &k2))?;
    let k4 = f(t + dt, &axpy(xi, dt, &k3))?;
    let mut r = *xi;
    let six = lit::<T>(6.0);
    for i in 0..12 {
        r[i] = r[i] + dt / six * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    Ok(r)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Shifts `a` by multiples of `2 pi` to the branch nearest `reference`.
pub fn unwrap_near(a: f64, reference: f64) -> f64 {
    reference + wrap_angle(a - reference)
}
