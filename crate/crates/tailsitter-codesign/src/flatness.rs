//! Flat output to state and input maps for the low-fidelity model.
//!
//! The flat output is `σ = (x, y, z, ψ)`. Attitude and collective thrust are
//! algebraic in `σ` and its derivatives; body rates and their derivatives
//! come from central differences of the attitude on a uniform time grid.

use crate::aero::Input;
use crate::bspline::BSplineTraj;
use crate::frames::{angular_jacobian, cross, mat_vec, norm, rot_x, rot_z, transpose, unwrap_near};
use crate::geometry::DerivedParams;
use crate::{Error, Result, State, Vec3};

/// Speed below which attitude extraction is considered degenerate (m/s).
pub const EPS_V: f64 = 0.5;
/// Lower bound on `|v'''_x| ‖v‖` in the elevon allocation (m²/s²).
pub const EPS_DEN: f64 = 0.5;

/// Flat output sample: position derivatives 0..=4 and yaw derivatives 0..=2.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FlatPoint {
    pub p: [Vec3; 5],
    pub psi: [f64; 3],
}

impl FlatPoint {
    /// Samples a four-channel `(x, y, z, ψ)` spline.
    pub fn from_spline(s: &BSplineTraj<f64>, t: f64) -> Self {
        let e = s.eval(t, 4);
        let mut fp = FlatPoint::default();
        for k in 0..5 {
            fp.p[k] = [e[k][0], e[k][1], e[k][2]];
        }
        fp.psi = [e[0][3], e[1][3], e[2][3]];
        fp
    }

    pub fn velocity(&self) -> Vec3 {
        self.p[1]
    }
}

/// What to do when the speed drops under [`EPS_V`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HoverPolicy {
    Error,
    /// Keep the given attitude; `None` falls back to the algebraic formula.
    Hold(Option<Vec3>),
}

/// Roll and pitch that align the body z-force with the lift model.
///
/// `f` is the required global force, `v` the global velocity, `psi` the yaw.
pub fn roll_pitch(f: &Vec3, v: &Vec3, psi: f64, k_l: f64) -> (f64, f64) {
    let rz = transpose(&rot_z(psi));
    let f1 = mat_vec(&rz, f);
    let v1 = mat_vec(&rz, v);
    let phi = -f1[1].atan2(f1[2]);
    let rx = transpose(&rot_x(phi));
    let f2 = mat_vec(&rx, &f1);
    let v2 = mat_vec(&rx, &v1);
    let sp = norm(v);
    let theta = (-f2[2] - k_l * v2[2] * sp).atan2(f2[0] + k_l * v2[0] * sp);
    (phi, theta)
}

/// Collective thrust balancing the body x-force at attitude `q`.
pub fn collective_thrust(f_local: &Vec3, v_local: &Vec3, k_d: f64) -> f64 {
    f_local[0] + k_d * v_local[0] * norm(v_local)
}

/// Required global force `m (a + g)`.
pub fn required_force(fp: &FlatPoint, p: &DerivedParams) -> Vec3 {
    let m = p.mass();
    let g = p.env.g_vec();
    std::array::from_fn(|k| m * (fp.p[2][k] + g[k]))
}

/// Attitude `q = (ψ, φ, θ)` at one flat point.
pub fn attitude(fp: &FlatPoint, p: &DerivedParams, hover: HoverPolicy) -> Result<Vec3> {
    let v = fp.velocity();
    let sp = norm(&v);
    if sp < EPS_V {
        match hover {
            HoverPolicy::Error => return Err(Error::Hover(sp)),
            HoverPolicy::Hold(Some(q)) => return Ok(q),
            HoverPolicy::Hold(None) => {}
        }
    }
    let f = required_force(fp, p);
    let (phi, theta) = roll_pitch(&f, &v, fp.psi[0], p.phi.k_l);
    Ok([fp.psi[0], phi, theta])
}

/// Allocation result with raw and saturated commands.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Allocation {
    /// Before saturation.
    pub raw: Input,
    pub input: Input,
    pub saturated: bool,
    /// The elevon denominator guard engaged.
    pub singular: bool,
}

/// Splits collective thrust and body torque over two props and two elevons.
pub fn allocate(thrust: f64, tau: &Vec3, v_local: &Vec3, p: &DerivedParams) -> Allocation {
    let k = &p.phi;
    let l_ty = p.l_ty();
    let mut w = v_local[0] * norm(v_local);
    let singular = w.abs() < EPS_DEN;
    if singular {
        w = if w < 0.0 { -EPS_DEN } else { EPS_DEN };
    }
    let yaw = (k.k_psi / k.k_phi) * tau[0] - tau[2];
    let t1 = 0.5 * thrust + yaw / (2.0 * l_ty);
    let t2 = 0.5 * thrust - yaw / (2.0 * l_ty);
    let a = tau[1] / k.k_theta;
    let b = tau[0] / k.k_phi;
    let d1 = (a - b) / (2.0 * w);
    let d2 = (a + b) / (2.0 * w);
    let raw = [t1, t2, d1, d2];
    let lim = &p.limits;
    let input = [
        t1.clamp(lim.t_min, lim.t_max),
        t2.clamp(lim.t_min, lim.t_max),
        d1.clamp(-lim.delta_max, lim.delta_max),
        d2.clamp(-lim.delta_max, lim.delta_max),
    ];
    Allocation { raw, input, saturated: raw != input, singular }
}

/// Second-order derivative of uniformly sampled vectors.
fn gradient(xs: &[Vec3], h: f64) -> Vec<Vec3> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            std::array::from_fn(|k| {
                if n < 3 {
                    if n < 2 {
                        0.0
                    } else {
                        (xs[1][k] - xs[0][k]) / h
                    }
                } else if i == 0 {
                    (-3.0 * xs[0][k] + 4.0 * xs[1][k] - xs[2][k]) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * xs[n - 1][k] - 4.0 * xs[n - 2][k] + xs[n - 3][k]) / (2.0 * h)
                } else {
                    (xs[i + 1][k] - xs[i - 1][k]) / (2.0 * h)
                }
            })
        })
        .collect()
}

/// State and input trajectory generated from a flat output on a uniform grid.
#[derive(Clone, Debug, Default)]
pub struct FlatSeries {
    pub t: Vec<f64>,
    pub flat: Vec<FlatPoint>,
    pub states: Vec<State>,
    pub thrust: Vec<f64>,
    pub torque: Vec<Vec3>,
    pub omega_dot: Vec<Vec3>,
    pub alloc: Vec<Allocation>,
}

impl FlatSeries {
    pub fn inputs(&self) -> Vec<Input> {
        self.alloc.iter().map(|a| a.input).collect()
    }

    pub fn any_saturated(&self) -> bool {
        self.alloc.iter().any(|a| a.saturated)
    }

    pub fn any_singular(&self) -> bool {
        self.alloc.iter().any(|a| a.singular)
    }

    pub fn step(&self) -> f64 {
        if self.t.len() > 1 {
            self.t[1] - self.t[0]
        } else {
            0.0
        }
    }
}

/// Evaluates state and input maps at `n` uniform points on `[0, t_end]`.
pub fn evaluate_uniform<F>(sigma: F, t_end: f64, n: usize, p: &DerivedParams, hover_hold: bool) -> Result<FlatSeries>
where
    F: Fn(f64) -> FlatPoint,
{
    if n < 3 || !(t_end > 0.0) {
        return Err(Error::Invalid("need at least three samples on a positive horizon".into()));
    }
    let h = t_end / (n - 1) as f64;
    let t: Vec<f64> = (0..n).map(|i| (i as f64 * h).min(t_end)).collect();
    let flat: Vec<FlatPoint> = t.iter().map(|&ti| sigma(ti)).collect();
    let mut qs: Vec<Vec3> = Vec::with_capacity(n);
    for fp in &flat {
        let prev = qs.last().copied();
        let policy = if hover_hold { HoverPolicy::Hold(prev) } else { HoverPolicy::Error };
        let mut q = attitude(fp, p, policy)?;
        if let Some(r) = prev {
            q = [unwrap_near(q[0], r[0]), unwrap_near(q[1], r[1]), unwrap_near(q[2], r[2])];
        }
        qs.push(q);
    }
    let qd = gradient(&qs, h);
    let omega: Vec<Vec3> = qs.iter().zip(&qd).map(|(q, d)| mat_vec(&angular_jacobian(q), d)).collect();
    let omega_dot = gradient(&omega, h);
    let body = p.body();
    let k = p.phi;
    let mut series = FlatSeries { t, ..Default::default() };
    for i in 0..n {
        let fp = &flat[i];
        let q = qs[i];
        let r = crate::frames::rot_global_to_local(&q);
        let v_local = mat_vec(&r, &fp.velocity());
        let f_local = mat_vec(&r, &required_force(fp, p));
        let thrust = collective_thrust(&f_local, &v_local, k.k_d);
        let w = omega[i];
        let iw = mat_vec(&body.inertia, &w);
        let gyro = cross(&w, &iw);
        let ia = mat_vec(&body.inertia, &omega_dot[i]);
        let tau = [ia[0] + gyro[0], ia[1] + gyro[1], ia[2] + gyro[2]];
        let mut xi = [0.0; 12];
        xi[..3].copy_from_slice(&fp.p[0]);
        xi[3..6].copy_from_slice(&q);
        xi[6..9].copy_from_slice(&fp.p[1]);
        xi[9..12].copy_from_slice(&w);
        series.alloc.push(allocate(thrust, &tau, &v_local, p));
        series.states.push(xi);
        series.thrust.push(thrust);
        series.torque.push(tau);
    }
    series.flat = flat;
    series.omega_dot = omega_dot;
    Ok(series)
}

/// Convenience wrapper for spline flat outputs.
pub fn evaluate_spline(s: &BSplineTraj<f64>, n: usize, p: &DerivedParams, hover_hold: bool) -> Result<FlatSeries> {
    evaluate_uniform(|t| FlatPoint::from_spline(s, t), s.t_end(), n, p, hover_hold)
}

/// Pitch of steady level flight at speed `v` under the low-fidelity model.
pub fn level_cruise_pitch(v: f64, p: &DerivedParams) -> f64 {
    let fp = FlatPoint { p: [[0.0; 3], [v, 0.0, 0.0], [0.0; 3], [0.0; 3], [0.0; 3]], psi: [0.0; 3] };
    let f = required_force(&fp, p);
    roll_pitch(&f, &fp.p[1], 0.0, p.phi.k_l).1
}

/// Relative RMS of `dξ/dt − F(ξ, υ)` over a series, using unsaturated inputs.
///
/// The state derivative is taken by second-order differences on the grid.
pub fn dynamics_residual(series: &FlatSeries, p: &DerivedParams) -> Result<f64> {
    let h = series.step();
    let n = series.states.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let d: State = std::array::from_fn(|k| {
            let x = |j: usize| series.states[j][k];
            if i == 0 {
                (-3.0 * x(0) + 4.0 * x(1) - x(2)) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * x(n - 1) - 4.0 * x(n - 2) + x(n - 3)) / (2.0 * h)
            } else {
                (x(i + 1) - x(i - 1)) / (2.0 * h)
            }
        });
        let f = crate::aero::lofi_rhs(&series.states[i], &series.alloc[i].raw, p)?;
        num += d.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        den += f.iter().map(|b| b * b).sum::<f64>();
    }
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}
