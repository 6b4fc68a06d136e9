//! Cascaded feedback-linearizing controller and sampled closed-loop simulation.
//!
//! The outer loop turns position errors into a desired global force, the
//! attitude setpoint follows from the same algebra as the flatness map, and
//! the inner loop turns attitude errors into a desired body torque. Commands
//! are computed every tick from the state sampled one tick earlier and are
//! ramped linearly across the following tick.

use serde::{Deserialize, Serialize};

use crate::aero::{hifi_rhs, lofi_rhs, CoeffProvider, Episode, Input};
use crate::flatness::{allocate, collective_thrust, roll_pitch, Allocation, FlatSeries, EPS_V};
use crate::frames::{angular_jacobian, cross, integrate_step, mat_vec, norm, rot_global_to_local, unwrap_near, wrap_angle};
use crate::geometry::DerivedParams;
use crate::{Error, Result, State, Vec3};

/// Controller tick (s).
pub const TICK: f64 = 0.01;
/// Plant integration step (s).
pub const PLANT_DT: f64 = 1e-3;
/// Position error that marks an episode as diverged (m).
pub const DIVERGENCE_RADIUS: f64 = 50.0;

/// PID gains; index 0 integral, 1 proportional, 2 derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: [f64; 3],
    pub kq: [f64; 3],
}

pub const GAIN_NAMES: [&str; 6] = ["kp_i", "kp_p", "kp_d", "kq_i", "kq_p", "kq_d"];

impl Gains {
    pub fn zero() -> Self {
        Self { kp: [0.0; 3], kq: [0.0; 3] }
    }

    /// Critically damped hand-tuned gains.
    pub fn hand() -> Self {
        Self { kp: [0.0, 0.8, 1.6], kq: [0.0, 400.0, 40.0] }
    }

    /// Tuning box in the order of [`GAIN_NAMES`].
    pub fn bounds() -> [(f64, f64); 6] {
        [(0.0, 0.8), (0.0, 0.8), (0.0, 4.0), (0.0, 2000.0), (0.0, 2000.0), (0.0, 40.0)]
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.kp[0], self.kp[1], self.kp[2], self.kq[0], self.kq[1], self.kq[2]]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self { kp: [a[0], a[1], a[2]], kq: [a[3], a[4], a[5]] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Invalid("gains must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Ratio of attitude to position natural frequency.
    pub fn bandwidth_ratio(&self) -> f64 {
        (self.kq[1] / self.kp[1]).sqrt()
    }
}

/// Desired global force.
pub fn position_loop(e_p: &Vec3, e_v: &Vec3, a_ref: &Vec3, gamma_p: &Vec3, g: &Gains, m: f64, g_vec: &Vec3) -> Vec3 {
    std::array::from_fn(|k| m * (a_ref[k] - g.kp[2] * e_v[k] - g.kp[1] * e_p[k] - g.kp[0] * gamma_p[k]) + m * g_vec[k])
}

/// Attitude aligning the body with `f_c`.
///
/// Yaw is `psi_ref` when given, else the reference heading; below the hover
/// guard without `psi_ref` the previous yaw is kept.
pub fn attitude_setpoint(f_c: &Vec3, v_ref: &Vec3, psi_ref: Option<f64>, k_l: f64, prev: Option<&Vec3>) -> Vec3 {
    let psi = match (psi_ref, prev) {
        (Some(p), _) => p,
        (None, Some(q)) if norm(&[v_ref[0], v_ref[1], 0.0]) < EPS_V => q[0],
        (None, _) => v_ref[1].atan2(v_ref[0]),
    };
    let (phi, theta) = roll_pitch(f_c, v_ref, psi, k_l);
    let q = [psi, phi, theta];
    match prev {
        Some(r) => std::array::from_fn(|k| unwrap_near(q[k], r[k])),
        None => q,
    }
}

/// Attitude error expressed along the body axes.
pub fn attitude_error(q: &Vec3, q_c: &Vec3) -> Vec3 {
    let d = [wrap_angle(q[0] - q_c[0]), wrap_angle(q[1] - q_c[1]), wrap_angle(q[2] - q_c[2])];
    mat_vec(&angular_jacobian(q), &d)
}

/// Desired body torque.
pub fn attitude_loop(omega: &Vec3, e_omega: &Vec3, e_q: &Vec3, omega_dot_ref: &Vec3, gamma_q: &Vec3, g: &Gains, inertia: &crate::Mat3) -> Vec3 {
    let wd: Vec3 = std::array::from_fn(|k| omega_dot_ref[k] - g.kq[2] * e_omega[k] - g.kq[1] * e_q[k] - g.kq[0] * gamma_q[k]);
    let iw = mat_vec(inertia, &wd);
    let gyro = cross(omega, &mat_vec(inertia, omega));
    [iw[0] + gyro[0], iw[1] + gyro[1], iw[2] + gyro[2]]
}

/// Reference sampled from a flatness series by linear interpolation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefSample {
    pub xi: State,
    pub accel: Vec3,
    pub omega_dot: Vec3,
    pub input: Input,
}

/// Interpolates a uniform flatness series, clamping beyond its ends.
pub fn reference_at(s: &FlatSeries, t: f64) -> RefSample {
    let n = s.t.len();
    let h = s.step();
    let x = if h > 0.0 { (t / h).clamp(0.0, (n - 1) as f64) } else { 0.0 };
    let i = (x.floor() as usize).min(n.saturating_sub(2));
    let w = (x - i as f64).clamp(0.0, 1.0);
    let j = (i + 1).min(n - 1);
    let lerp = |a: f64, b: f64| a + w * (b - a);
    RefSample {
        xi: std::array::from_fn(|k| lerp(s.states[i][k], s.states[j][k])),
        accel: std::array::from_fn(|k| lerp(s.flat[i].p[2][k], s.flat[j].p[2][k])),
        omega_dot: std::array::from_fn(|k| lerp(s.omega_dot[i][k], s.omega_dot[j][k])),
        input: std::array::from_fn(|k| lerp(s.alloc[i].input[k], s.alloc[j].input[k])),
    }
}

/// Plant right-hand side.
pub trait Plant: Sync {
    fn rhs(&self, xi: &State, u: &Input) -> Result<State>;
}

/// The low-fidelity model in still air.
pub struct LofiPlant<'a> {
    pub params: &'a DerivedParams,
}

impl Plant for LofiPlant<'_> {
    fn rhs(&self, xi: &State, u: &Input) -> Result<State> {
        lofi_rhs(xi, u, self.params)
    }
}

/// Coefficient-based forces with one episode's disturbances.
pub struct HifiPlant<'a, P: CoeffProvider + ?Sized> {
    pub provider: &'a P,
    pub params: &'a DerivedParams,
    pub episode: Episode,
}

impl<P: CoeffProvider + ?Sized> Plant for HifiPlant<'_, P> {
    fn rhs(&self, xi: &State, u: &Input) -> Result<State> {
        hifi_rhs(xi, u, self.provider, self.params, &self.episode)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerOptions {
    /// Freeze integrators while the last command saturated.
    pub anti_windup: bool,
    pub w4: f64,
    pub w5: f64,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self { anti_windup: true, w4: 0.1, w5: 1.0 }
    }
}

/// One controller tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub xi: State,
    pub xi_ref: State,
    /// Applied input at `t`.
    pub applied: Input,
    /// Command computed at this tick.
    pub command: Input,
    pub saturated: bool,
    pub singular: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopLog {
    pub rows: Vec<LogRow>,
    /// `∫ (T1 + T2) dt`.
    pub l_cdp: f64,
    /// `∫ w4 ‖ξ* − ξ‖² + w5 ‖υ̇‖² dt`.
    pub l_fcp: f64,
    /// Time of divergence, if any.
    pub diverged: Option<f64>,
    pub final_state: State,
}

impl ClosedLoopLog {
    pub fn failed(&self) -> bool {
        self.diverged.is_some()
    }

    pub fn max_position_error(&self) -> f64 {
        self.rows.iter().map(|r| pos_err(&r.xi, &r.xi_ref)).fold(0.0, f64::max)
    }

    pub const CSV_COLUMNS: [&'static str; 35] = [
        "t", "px", "py", "pz", "q_psi", "q_phi", "q_theta", "vx", "vy", "vz", "wx", "wy", "wz", "ref_px", "ref_py", "ref_pz", "ref_q_psi", "ref_q_phi",
        "ref_q_theta", "ref_vx", "ref_vy", "ref_vz", "ref_wx", "ref_wy", "ref_wz", "T1", "T2", "d1", "d2", "cmd_T1", "cmd_T2", "cmd_d1", "cmd_d2",
        "saturated", "singular",
    ];

    /// Writes the log as CSV preceded by a version comment.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(Self::CSV_COLUMNS).map_err(io)?;
        for r in &self.rows {
            let mut row: Vec<String> = Vec::with_capacity(35);
            row.push(format!("{:.6}", r.t));
            row.extend(r.xi.iter().chain(&r.xi_ref).chain(&r.applied).chain(&r.command).map(|v| format!("{v:.9e}")));
            row.push((r.saturated as u8).to_string());
            row.push((r.singular as u8).to_string());
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        let mut out = String::from(LOG_CSV_VERSION);
        out.push('\n');
        out.push_str(&String::from_utf8_lossy(&bytes));
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Version comment of the closed-loop CSV.
pub const LOG_CSV_VERSION: &str = "# tailsitter-closed-loop v1";

fn pos_err(a: &State, b: &State) -> f64 {
    norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

fn state_error_sq(xi: &State, r: &State) -> f64 {
    (0..12)
        .map(|k| {
            let d = if (3..6).contains(&k) { wrap_angle(xi[k] - r[k]) } else { xi[k] - r[k] };
            d * d
        })
        .sum()
}

struct Controller<'a> {
    p: &'a DerivedParams,
    gains: Gains,
    opts: ControllerOptions,
    gamma_p: Vec3,
    gamma_q: Vec3,
    q_c_prev: Option<Vec3>,
}

impl Controller<'_> {
    /// Command from a state measured at `t_m`, taking full effect at `t_f`.
    fn command(&mut self, xi: &State, r_m: &RefSample, r_f: &RefSample, freeze: bool) -> Allocation {
        let p = self.p;
        let m = p.mass();
        let g_vec = p.env.g_vec();
        let e_p: Vec3 = std::array::from_fn(|k| xi[k] - r_m.xi[k]);
        let e_v: Vec3 = std::array::from_fn(|k| xi[6 + k] - r_m.xi[6 + k]);
        let q = [xi[3], xi[4], xi[5]];
        let omega = [xi[9], xi[10], xi[11]];
        let v_ref_m = [r_m.xi[6], r_m.xi[7], r_m.xi[8]];
        let v_ref_f = [r_f.xi[6], r_f.xi[7], r_f.xi[8]];
        // Setpoint the vehicle should have held at the measurement time.
        let f_m = position_loop(&e_p, &e_v, &r_m.accel, &self.gamma_p, &self.gains, m, &g_vec);
        let q_ref_m = [r_m.xi[3], r_m.xi[4], r_m.xi[5]];
        let q_c_m = attitude_setpoint(&f_m, &v_ref_m, Some(r_m.xi[3]), p.phi.k_l, Some(&q_ref_m));
        let e_q = attitude_error(&q, &q_c_m);
        let e_w: Vec3 = std::array::from_fn(|k| omega[k] - r_m.xi[9 + k]);
        // Force and attitude at the time the command is reached.
        let f_f = position_loop(&e_p, &e_v, &r_f.accel, &self.gamma_p, &self.gains, m, &g_vec);
        let q_ref_f = [r_f.xi[3], r_f.xi[4], r_f.xi[5]];
        let q_c = attitude_setpoint(&f_f, &v_ref_f, Some(r_f.xi[3]), p.phi.k_l, Some(&self.q_c_prev.unwrap_or(q_ref_f)));
        self.q_c_prev = Some(q_c);
        let omega_f: Vec3 = std::array::from_fn(|k| r_f.xi[9 + k] + e_w[k]);
        let inertia = p.body().inertia;
        let tau = attitude_loop(&omega_f, &e_w, &e_q, &r_f.omega_dot, &self.gamma_q, &self.gains, &inertia);
        let r = rot_global_to_local(&q_c);
        let v_b = mat_vec(&r, &[v_ref_f[0] + e_v[0], v_ref_f[1] + e_v[1], v_ref_f[2] + e_v[2]]);
        let thrust = collective_thrust(&mat_vec(&r, &f_f), &v_b, p.phi.k_d);
        let a = allocate(thrust, &tau, &v_b, p);
        if !(freeze && self.opts.anti_windup) {
            for k in 0..3 {
                self.gamma_p[k] += e_p[k] * TICK;
                self.gamma_q[k] += e_q[k] * TICK;
            }
        }
        a
    }
}

/// Simulates the sampled closed loop over `[0, horizon]` starting from `xi0`.
pub fn simulate_closed_loop<P: Plant + ?Sized>(
    plant: &P,
    p: &DerivedParams,
    reference: &FlatSeries,
    gains: &Gains,
    xi0: &State,
    horizon: f64,
    opts: &ControllerOptions,
) -> Result<ClosedLoopLog> {
    gains.validate()?;
    let n_ticks = (horizon / TICK).round().max(1.0) as usize;
    let sub = (TICK / PLANT_DT).round() as usize;
    let mut ctl = Controller { p, gains: *gains, opts: *opts, gamma_p: [0.0; 3], gamma_q: [0.0; 3], q_c_prev: None };
    let mut xi = *xi0;
    let mut measured = *xi0;
    let mut prev_cmd = reference_at(reference, 0.0).input;
    let mut prev_sat = false;
    let mut log = ClosedLoopLog { rows: Vec::with_capacity(n_ticks + 1), l_cdp: 0.0, l_fcp: 0.0, diverged: None, final_state: xi };
    for k in 0..n_ticks {
        let t_k = k as f64 * TICK;
        let t_m = if k == 0 { 0.0 } else { t_k - TICK };
        let r_m = reference_at(reference, t_m);
        let r_f = reference_at(reference, t_k + TICK);
        let alloc = ctl.command(&measured, &r_m, &r_f, prev_sat);
        let cmd = alloc.input;
        let r_k = reference_at(reference, t_k);
        log.rows.push(LogRow { t: t_k, xi, xi_ref: r_k.xi, applied: prev_cmd, command: cmd, saturated: alloc.saturated, singular: alloc.singular });
        let du: f64 = cmd.iter().zip(&prev_cmd).map(|(a, b)| ((a - b) / TICK).powi(2)).sum();
        log.l_fcp += opts.w5 * du * TICK;
        // The state sampled now is used at the next tick.
        measured = xi;
        for j in 0..sub {
            let t0 = t_k + j as f64 * PLANT_DT;
            let u_at = |t: f64| -> Input {
                let w = ((t - t_k) / TICK).clamp(0.0, 1.0);
                std::array::from_fn(|i| prev_cmd[i] + w * (cmd[i] - prev_cmd[i]))
            };
            let u0 = u_at(t0);
            let u1 = u_at(t0 + PLANT_DT);
            let e0 = state_error_sq(&xi, &reference_at(reference, t0).xi);
            let next = integrate_step(&xi, t0, PLANT_DT, |t, x| plant.rhs(x, &u_at(t)));
            match next {
                Ok(x) if x.iter().all(|v| v.is_finite()) => xi = x,
                _ => {
                    log.diverged = Some(t0);
                    log.final_state = xi;
                    return Ok(log);
                }
            }
            let r1 = reference_at(reference, t0 + PLANT_DT);
            let e1 = state_error_sq(&xi, &r1.xi);
            log.l_cdp += 0.5 * PLANT_DT * (u0[0] + u0[1] + u1[0] + u1[1]);
            log.l_fcp += opts.w4 * 0.5 * PLANT_DT * (e0 + e1);
            if pos_err(&xi, &r1.xi) > DIVERGENCE_RADIUS {
                log.diverged = Some(t0 + PLANT_DT);
                log.final_state = xi;
                return Ok(log);
            }
        }
        prev_cmd = cmd;
        prev_sat = alloc.saturated;
    }
    let r_end = reference_at(reference, n_ticks as f64 * TICK);
    log.rows.push(LogRow {
        t: n_ticks as f64 * TICK,
        xi,
        xi_ref: r_end.xi,
        applied: prev_cmd,
        command: prev_cmd,
        saturated: prev_sat,
        singular: false,
    });
    log.final_state = xi;
    Ok(log)
}

/// Reference series on the plant grid for a spline flat output.
pub fn reference_series(spline: &crate::BSpline, p: &DerivedParams) -> Result<FlatSeries> {
    let n = ((spline.t_end() / PLANT_DT).round() as usize).max(2) + 1;
    crate::flatness::evaluate_spline(spline, n, p, true)
}
