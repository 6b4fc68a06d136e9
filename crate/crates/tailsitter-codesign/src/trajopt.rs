//! Mission boundary conditions and the flatness-based optimal control problem.
//!
//! Step one searches the horizon `T` and one free boundary scalar per mission
//! so that a cubic flat path between the endpoints needs the least thrust
//! while respecting actuator limits. Step two refines that cubic inside a
//! clamped quintic B-spline, minimizing
//! `∫ w1 ‖p⁗‖² + w2 ψ̈² + w3 (T1 + T2) dt` under the same limits.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bspline::{clamped_knots, fit_least_squares, BSplineTraj, DEFAULT_DEGREE, DEFAULT_N_BASIS};
use crate::flatness::{evaluate_spline, evaluate_uniform, FlatPoint, FlatSeries};
use crate::geometry::DerivedParams;
use crate::optim::{bfgs_maximize, golden_section_min};
use crate::{Error, Result, Vec3};

/// Bank angle held at both ends of the turn (rad).
pub const TURN_ROLL: f64 = -0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionKind {
    Cruise,
    Turn,
    Takeoff,
    Landing,
    /// User-specified endpoints without a free scalar.
    Custom,
}

impl MissionKind {
    pub const SUITE: [MissionKind; 4] = [MissionKind::Cruise, MissionKind::Turn, MissionKind::Takeoff, MissionKind::Landing];

    pub fn name(&self) -> &'static str {
        match self {
            MissionKind::Cruise => "cruise",
            MissionKind::Turn => "turn",
            MissionKind::Takeoff => "takeoff",
            MissionKind::Landing => "landing",
            MissionKind::Custom => "custom",
        }
    }
}

impl fmt::Display for MissionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MissionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cruise" => Ok(MissionKind::Cruise),
            "turn" => Ok(MissionKind::Turn),
            "takeoff" | "take-off" => Ok(MissionKind::Takeoff),
            "landing" => Ok(MissionKind::Landing),
            _ => Err(Error::Invalid(format!("unknown mission `{s}`"))),
        }
    }
}

/// Endpoints of a flat path; the free scalar has already been substituted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub t_end: f64,
    pub p0: Vec3,
    pub v0: Vec3,
    pub psi0: f64,
    pub p1: Vec3,
    pub v1: Vec3,
    pub psi1: f64,
    /// Value of the mission's free scalar, if any.
    pub free: Option<f64>,
}

/// A mission with its fixed endpoints and the search range of its free scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mission {
    pub kind: MissionKind,
    pub p0: Vec3,
    pub v0: Vec3,
    pub psi0: f64,
    pub p1: Vec3,
    pub v1: Vec3,
    pub psi1: f64,
    pub free_range: Option<(f64, f64)>,
    /// Horizon search range (s).
    pub t_range: (f64, f64),
}

impl Mission {
    pub fn new(kind: MissionKind) -> Self {
        let z = [0.0; 3];
        let base = Mission { kind, p0: z, v0: z, psi0: 0.0, p1: z, v1: z, psi1: 0.0, free_range: None, t_range: (1.0, 20.0) };
        match kind {
            // Level 100 m leg; the common speed is free.
            MissionKind::Cruise => Mission { p0: [0.0, 0.0, 100.0], p1: [100.0, 0.0, 100.0], free_range: Some((5.0, 40.0)), ..base },
            // Coordinated half turn; speed is free and fixes the radius.
            MissionKind::Turn => Mission { p0: [0.0, 0.0, 100.0], p1: [0.0, 0.0, 100.0], psi1: std::f64::consts::PI, free_range: Some((5.0, 40.0)), ..base },
            // Climbing transition to level flight at 27 m/s; final x is free.
            MissionKind::Takeoff => Mission { v0: [5.0, 0.0, 10.0], v1: [27.0, 0.0, 0.0], free_range: Some((5.0, 150.0)), ..base },
            // Transition from 27 m/s level to slow steep flight; final height is free.
            MissionKind::Landing => Mission { v0: [27.0, 0.0, 0.0], p1: [80.0, 0.0, 0.0], v1: [5.0, 0.0, 5.0], free_range: Some((-30.0, 60.0)), ..base },
            MissionKind::Custom => base,
        }
    }

    pub fn suite() -> Vec<Mission> {
        MissionKind::SUITE.iter().map(|&k| Mission::new(k)).collect()
    }

    /// Boundary conditions for horizon `t_end` and free value `s`.
    pub fn boundary(&self, t_end: f64, s: Option<f64>, g: f64) -> BoundaryConditions {
        let mut bc = BoundaryConditions { t_end, p0: self.p0, v0: self.v0, psi0: self.psi0, p1: self.p1, v1: self.v1, psi1: self.psi1, free: s };
        if let Some(s) = s {
            match self.kind {
                MissionKind::Cruise => {
                    bc.v0 = [s, 0.0, 0.0];
                    bc.v1 = [s, 0.0, 0.0];
                }
                MissionKind::Turn => {
                    let r = s * s / (g * TURN_ROLL.abs().tan());
                    bc.p0[1] = -r;
                    bc.p1[1] = r;
                    bc.v0 = [s, 0.0, 0.0];
                    bc.v1 = [-s, 0.0, 0.0];
                }
                MissionKind::Takeoff => bc.p1[0] = s,
                MissionKind::Landing => bc.p1[2] = s,
                MissionKind::Custom => {}
            }
        }
        bc
    }
}

/// Cubic Hermite flat path through the boundary conditions; yaw has zero end rates.
pub fn cubic_flat(bc: &BoundaryConditions) -> impl Fn(f64) -> FlatPoint + Clone {
    let t = bc.t_end;
    let cubic = |p0: f64, p1: f64, v0: f64, v1: f64| {
        let a2 = (3.0 * (p1 - p0) / t - 2.0 * v0 - v1) / t;
        let a3 = (2.0 * (p0 - p1) / t + v0 + v1) / (t * t);
        [p0, v0, a2, a3]
    };
    let c: [[f64; 4]; 3] = std::array::from_fn(|k| cubic(bc.p0[k], bc.p1[k], bc.v0[k], bc.v1[k]));
    let cy = cubic(bc.psi0, bc.psi1, 0.0, 0.0);
    move |tt: f64| {
        let d = |a: &[f64; 4]| {
            [
                a[0] + tt * (a[1] + tt * (a[2] + tt * a[3])),
                a[1] + tt * (2.0 * a[2] + 3.0 * tt * a[3]),
                2.0 * a[2] + 6.0 * tt * a[3],
                6.0 * a[3],
                0.0,
            ]
        };
        let mut fp = FlatPoint::default();
        for k in 0..3 {
            let v = d(&c[k]);
            for o in 0..5 {
                fp.p[o][k] = v[o];
            }
        }
        let y = d(&cy);
        fp.psi = [y[0], y[1], y[2]];
        fp
    }
}

/// Largest actuator-limit excess over a series (N for thrust, rad for elevons).
pub fn max_violation(series: &FlatSeries, p: &DerivedParams) -> f64 {
    let l = &p.limits;
    series
        .alloc
        .iter()
        .map(|a| {
            let [t1, t2, d1, d2] = a.raw;
            [t1 - l.t_max, l.t_min - t1, t2 - l.t_max, l.t_min - t2, d1.abs() - l.delta_max, d2.abs() - l.delta_max]
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Trapezoid rule on a uniform grid.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

fn thrust_integral(series: &FlatSeries) -> f64 {
    let t: Vec<f64> = series.alloc.iter().map(|a| a.raw[0] + a.raw[1]).collect();
    trapezoid(&t, series.step())
}

/// Options of the boundary-condition search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOptions {
    pub n_grid: usize,
    pub t_scan: usize,
    pub free_scan: usize,
    pub tol: f64,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        Self { n_grid: 201, t_scan: 39, free_scan: 21, tol: 1e-3 }
    }
}

/// Normalized interior margin demanded of the cubic path.
pub const BC_MARGIN: f64 = 1e-3;
/// Normalized margin the optimizer aims for inside the limits.
pub const OCP_MARGIN: f64 = 2e-4;

/// Thrust integral of the cubic path, or `None` when limits are violated.
pub fn cubic_cost(bc: &BoundaryConditions, p: &DerivedParams, n_grid: usize) -> Option<f64> {
    let s = evaluate_uniform(cubic_flat(bc), bc.t_end, n_grid, p, true).ok()?;
    if constraint_values(&s, p).into_iter().fold(f64::NEG_INFINITY, f64::max) > -BC_MARGIN {
        return None;
    }
    let j = thrust_integral(&s);
    j.is_finite().then_some(j)
}

/// Scan then golden-section refine of a scalar function that may be infeasible.
fn scan_refine<F: FnMut(f64) -> Option<f64>>(mut f: F, lo: f64, hi: f64, n: usize, tol: f64) -> Option<(f64, f64)> {
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let vals: Vec<Option<f64>> = xs.iter().map(|&x| f(x)).collect();
    let (ib, jb) = vals.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).min_by(|a, b| a.1.total_cmp(&b.1))?;
    let a = xs[ib.saturating_sub(1)];
    let b = xs[(ib + 1).min(n - 1)];
    let (x, v) = golden_section_min(|x| f(x).unwrap_or(f64::INFINITY), a, b, tol);
    if v < jb {
        Some((x, v))
    } else {
        Some((xs[ib], jb))
    }
}

/// Horizon and free boundary scalar minimizing the cubic path's thrust integral.
pub fn solve_boundary_conditions(m: &Mission, p: &DerivedParams, opts: &BoundaryOptions) -> Result<BoundaryConditions> {
    let g = p.env.g;
    let inner = |t: f64| -> Option<(Option<f64>, f64)> {
        match m.free_range {
            None => cubic_cost(&m.boundary(t, None, g), p, opts.n_grid).map(|j| (None, j)),
            Some((lo, hi)) => scan_refine(|s| cubic_cost(&m.boundary(t, Some(s), g), p, opts.n_grid), lo, hi, opts.free_scan, opts.tol)
                .map(|(s, j)| (Some(s), j)),
        }
    };
    let (tlo, thi) = m.t_range;
    let (t, _) = scan_refine(|t| inner(t).map(|r| r.1), tlo, thi, opts.t_scan, opts.tol)
        .ok_or_else(|| Error::Infeasible(format!("{}: no horizon admits a cubic path within actuator limits", m.kind)))?;
    let (s, _) = inner(t).ok_or_else(|| Error::Infeasible(format!("{}: refined horizon lost feasibility", m.kind)))?;
    Ok(m.boundary(t, s, g))
}

/// Weights of the running cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpWeights {
    /// Snap.
    pub w1: f64,
    /// Yaw acceleration.
    pub w2: f64,
    /// Collective thrust.
    pub w3: f64,
}

impl Default for OcpWeights {
    fn default() -> Self {
        Self { w1: 1e-8, w2: 1e-6, w3: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpOptions {
    pub weights: OcpWeights,
    pub degree: usize,
    pub n_basis: usize,
    pub n_int: usize,
    pub n_check: usize,
    pub max_iter: usize,
    /// Inner quasi-Newton iterations per multiplier update.
    pub inner_iter: usize,
    pub tol: f64,
    /// Violation allowed on the verification grid.
    pub check_tol: f64,
}

impl Default for OcpOptions {
    fn default() -> Self {
        Self {
            weights: OcpWeights::default(),
            degree: DEFAULT_DEGREE,
            n_basis: DEFAULT_N_BASIS,
            n_int: 201,
            n_check: 2001,
            max_iter: 300,
            inner_iter: 40,
            tol: 1e-6,
            check_tol: 1e-4,
        }
    }
}

/// The cubic path expressed in the quintic spline basis.
pub fn initial_guess(bc: &BoundaryConditions, opts: &OcpOptions) -> Result<BSplineTraj<f64>> {
    let knots = clamped_knots(opts.degree, opts.n_basis, bc.t_end);
    let f = cubic_flat(bc);
    let m = 4 * opts.n_basis;
    let times: Vec<f64> = (0..m).map(|i| bc.t_end * i as f64 / (m - 1) as f64).collect();
    let pts: Vec<FlatPoint> = times.iter().map(|&t| f(t)).collect();
    let mut coeffs = Vec::with_capacity(4);
    for ch in 0..4 {
        let vals: Vec<f64> = pts.iter().map(|fp| if ch < 3 { fp.p[0][ch] } else { fp.psi[0] }).collect();
        coeffs.push(fit_least_squares(&knots, opts.degree, &times, &vals)?);
    }
    BSplineTraj::new(opts.degree, knots, coeffs)
}

/// Cost breakdown of a spline on the integration grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpCost {
    /// Weighted objective.
    pub objective: f64,
    /// `∫ (T1 + T2) dt` (N s).
    pub thrust_integral: f64,
    pub max_violation: f64,
}

/// Weighted objective and constraint violation of a spline.
pub fn ocp_cost(s: &BSplineTraj<f64>, p: &DerivedParams, opts: &OcpOptions) -> Result<OcpCost> {
    let series = evaluate_spline(s, opts.n_int, p, true)?;
    Ok(cost_of_series(&series, p, &opts.weights))
}

fn cost_of_series(series: &FlatSeries, p: &DerivedParams, w: &OcpWeights) -> OcpCost {
    let run: Vec<f64> = series
        .flat
        .iter()
        .zip(&series.alloc)
        .map(|(fp, a)| {
            let snap = fp.p[4].iter().map(|x| x * x).sum::<f64>();
            w.w1 * snap + w.w2 * fp.psi[2] * fp.psi[2] + w.w3 * (a.raw[0] + a.raw[1])
        })
        .collect();
    OcpCost { objective: trapezoid(&run, series.step()), thrust_integral: thrust_integral(series), max_violation: max_violation(series, p) }
}

/// Positions of free coefficients: `(channel, index)`.
///
/// Position channels keep three coefficients clamped at each end (position,
/// velocity and acceleration); yaw keeps two (angle and rate).
pub fn free_coefficients(n_basis: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for ch in 0..4 {
        let fixed = if ch < 3 { 3 } else { 2 };
        for i in fixed..n_basis - fixed {
            v.push((ch, i));
        }
    }
    v
}

fn with_free(base: &BSplineTraj<f64>, idx: &[(usize, usize)], x: &[f64]) -> BSplineTraj<f64> {
    let mut s = base.clone();
    for (&(ch, i), &v) in idx.iter().zip(x) {
        s.coeffs[ch][i] = v;
    }
    s
}

/// Normalized inequality values `g ≤ 0` at every grid point.
fn constraint_values(series: &FlatSeries, p: &DerivedParams) -> Vec<f64> {
    let l = &p.limits;
    let mut g = Vec::with_capacity(series.alloc.len() * 6);
    for a in &series.alloc {
        let [t1, t2, d1, d2] = a.raw;
        for t in [t1, t2] {
            g.push((t - l.t_max) / l.t_max);
            g.push((l.t_min - t) / l.t_max);
        }
        for d in [d1, d2] {
            g.push(d.abs() / l.delta_max - 1.0);
        }
    }
    g
}

#[derive(Clone, Debug)]
pub struct OcpSolution {
    pub spline: BSplineTraj<f64>,
    pub bc: BoundaryConditions,
    pub cost: OcpCost,
    pub initial_cost: OcpCost,
    /// Largest violation on the verification grid.
    pub check_violation: f64,
    pub iterations: usize,
    /// The hover guard engaged somewhere on the verification grid.
    pub singular: bool,
}

impl OcpSolution {
    pub fn series(&self, p: &DerivedParams, n: usize) -> Result<FlatSeries> {
        evaluate_spline(&self.spline, n, p, true)
    }
}

/// Solves the transcribed optimal control problem by an augmented Lagrangian.
///
/// The objective is divided by `w3` internally; the minimizer is unchanged.
/// The best feasible iterate is returned, never worse than the initial guess.
pub fn solve_ocp(bc: &BoundaryConditions, p: &DerivedParams, opts: &OcpOptions) -> Result<OcpSolution> {
    let base = initial_guess(bc, opts)?;
    let idx = free_coefficients(opts.n_basis);
    let x0: Vec<f64> = idx.iter().map(|&(ch, i)| base.coeffs[ch][i]).collect();
    let bounds: Vec<(f64, f64)> = idx
        .iter()
        .zip(&x0)
        .map(|(&(ch, _), &v)| {
            let r = if ch < 3 { 25.0 } else { std::f64::consts::PI };
            (v - r, v + r)
        })
        .collect();
    let scale = opts.weights.w3;
    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>, OcpCost)> {
        let s = with_free(&base, &idx, x);
        let series = evaluate_spline(&s, opts.n_int, p, true).ok()?;
        let c = cost_of_series(&series, p, &opts.weights);
        let g = constraint_values(&series, p).into_iter().map(|v| v + OCP_MARGIN).collect();
        c.objective.is_finite().then(|| (c.objective / scale, g, c))
    };
    let (_, _, initial_cost) = eval(&x0).ok_or_else(|| Error::Infeasible("initial guess cannot be evaluated".into()))?;
    let feasible = |c: &OcpCost| c.max_violation <= opts.tol;
    let mut best: Option<(Vec<f64>, OcpCost)> = feasible(&initial_cost).then(|| (x0.clone(), initial_cost));
    let mut lam = vec![0.0; constraint_count(opts.n_int)];
    let mut mu = 10.0;
    let mut x = x0.clone();
    let mut used = 0;
    let mut prev_viol = f64::INFINITY;
    let mut prev_obj = f64::INFINITY;
    while used < opts.max_iter {
        let budget = opts.inner_iter.min(opts.max_iter - used);
        let merit = |y: &[f64]| -> f64 {
            match eval(y) {
                Some((j, g, _)) => -(j + phr_penalty(&g, &lam, mu)),
                None => f64::NEG_INFINITY,
            }
        };
        x = bfgs_maximize(merit, &x, &bounds, budget, 1e-12).0;
        used += budget;
        let Some((j, g, c)) = eval(&x) else { break };
        if feasible(&c) && best.as_ref().map_or(true, |(_, b)| c.objective < b.objective) {
            best = Some((x.clone(), c));
        }
        let viol = g.iter().cloned().fold(0.0, f64::max);
        for (l, gi) in lam.iter_mut().zip(&g) {
            *l = (*l + mu * gi).max(0.0);
        }
        if viol > 0.25 * prev_viol {
            mu = (mu * 10.0).min(1e8);
        }
        if viol <= opts.tol && (prev_obj - j).abs() <= 1e-9 * (1.0 + j.abs()) {
            break;
        }
        prev_viol = viol;
        prev_obj = j;
    }
    let (xb, cost) = best.ok_or_else(|| Error::NonConvergence(format!("no feasible iterate after {used} iterations")))?;
    let spline = with_free(&base, &idx, &xb);
    let check = evaluate_spline(&spline, opts.n_check, p, true)?;
    let check_violation = max_violation(&check, p);
    if check_violation > opts.check_tol {
        return Err(Error::Infeasible(format!("limit violation {check_violation:.3e} on the verification grid")));
    }
    Ok(OcpSolution { spline, bc: *bc, cost, initial_cost, check_violation, iterations: used, singular: check.any_singular() })
}

fn constraint_count(n_int: usize) -> usize {
    n_int * 6
}

/// Powell-Hestenes-Rockafellar penalty for `g ≤ 0`.
fn phr_penalty(g: &[f64], lam: &[f64], mu: f64) -> f64 {
    g.iter()
        .zip(lam)
        .map(|(&gi, &li)| {
            let s = gi + li / mu;
            if s > 0.0 {
                0.5 * mu * s * s - li * li / (2.0 * mu)
            } else {
                -li * li / (2.0 * mu)
            }
        })
        .sum()
}

/// Column names of the trajectory CSV.
pub const TRAJECTORY_COLUMNS: [&str; 35] = [
    "t", "x", "y", "z", "psi", "vx", "vy", "vz", "ax", "ay", "az", "jx", "jy", "jz", "sx", "sy", "sz", "psi_d", "psi_dd", "px", "py", "pz", "q_psi",
    "q_phi", "q_theta", "gvx", "gvy", "gvz", "wx", "wy", "wz", "T1", "T2", "d1", "d2",
];

/// Version tag written as the first CSV comment line.
pub const CSV_VERSION: &str = "# tailsitter-trajectory v1";

/// Writes flat output derivatives, state and input samples as CSV.
pub fn write_trajectory_csv(path: &Path, series: &FlatSeries) -> Result<()> {
    let mut out = String::new();
    out.push_str(CSV_VERSION);
    out.push('\n');
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(TRAJECTORY_COLUMNS).map_err(io)?;
    for i in 0..series.t.len() {
        let fp = &series.flat[i];
        let mut row = vec![series.t[i], fp.p[0][0], fp.p[0][1], fp.p[0][2], fp.psi[0]];
        for o in 1..5 {
            row.extend_from_slice(&fp.p[o]);
        }
        row.extend_from_slice(&fp.psi[1..]);
        row.extend_from_slice(&series.states[i]);
        row.extend_from_slice(&series.alloc[i].input);
        w.write_record(row.iter().map(|v| format!("{v:.9e}"))).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    out.push_str(&String::from_utf8_lossy(&bytes));
    std::fs::write(path, out)?;
    Ok(())
}
