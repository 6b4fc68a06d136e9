//! Design vector, planform, mass properties, trim and φ-coefficient extraction.
//!
//! The half wing is two trapezoids: root (y = 0, chord `c_sym`, leading edge
//! at the origin) to the fuselage station, and fuselage station to the tip.
//! The centre of gravity sits at the middle of the root chord.

use serde::{Deserialize, Serialize};

use crate::aero::{AeroState, CoeffProvider};
use crate::frames::{EnvConstantsT, RigidBodyT};
use crate::{Error, Mat3, Result};

/// Foam cross-section area per squared chord.
pub const K_AREA: f64 = 0.1192;
/// Foam density (kg/m³).
pub const FOAM_DENSITY: f64 = 100.0;
pub const AVIONICS_MASS: f64 = 0.5;
pub const PROP_MASS: f64 = 0.25;
pub const SPAN_EFFICIENCY: f64 = 0.9;

/// The twelve conceptual design variables. Twists in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub c_sym: f64,
    pub c_fus: f64,
    pub c_tip: f64,
    pub x_fus: f64,
    pub x_tip: f64,
    pub y_fus: f64,
    pub y_tip: f64,
    pub z_fus: f64,
    pub z_tip: f64,
    pub gamma_fus: f64,
    pub gamma_tip: f64,
    pub f_con: f64,
}

pub const DESIGN_NAMES: [&str; 12] = [
    "c_sym", "c_fus", "c_tip", "x_fus", "x_tip", "y_fus", "y_tip", "z_fus", "z_tip", "gamma_fus", "gamma_tip", "f_con",
];

/// Names that carry angles (degrees at the configuration boundary).
pub fn is_angle(name: &str) -> bool {
    name.starts_with("gamma")
}

impl DesignVector {
    pub fn from_array(a: [f64; 12]) -> Self {
        Self {
            c_sym: a[0],
            c_fus: a[1],
            c_tip: a[2],
            x_fus: a[3],
            x_tip: a[4],
            y_fus: a[5],
            y_tip: a[6],
            z_fus: a[7],
            z_tip: a[8],
            gamma_fus: a[9],
            gamma_tip: a[10],
            f_con: a[11],
        }
    }

    pub fn to_array(&self) -> [f64; 12] {
        [
            self.c_sym,
            self.c_fus,
            self.c_tip,
            self.x_fus,
            self.x_tip,
            self.y_fus,
            self.y_tip,
            self.z_fus,
            self.z_tip,
            self.gamma_fus,
            self.gamma_tip,
            self.f_con,
        ]
    }

    pub fn baseline() -> Self {
        let d = std::f64::consts::PI / 180.0;
        Self::from_array([0.6, 0.3, 0.15, 0.2, 0.5, 0.2, 0.5, 0.0, 0.0, -1.0 * d, -7.0 * d, 0.625])
    }

    pub fn lower() -> Self {
        let d = std::f64::consts::PI / 180.0;
        Self::from_array([0.4, 0.2, 0.1, 0.1, 0.4, 0.1, 0.4, -0.01, -0.01, -6.0 * d, -12.0 * d, 0.5])
    }

    pub fn upper() -> Self {
        let d = std::f64::consts::PI / 180.0;
        Self::from_array([0.8, 0.4, 0.2, 0.3, 0.6, 0.3, 0.6, 0.01, 0.01, 4.0 * d, -2.0 * d, 0.75])
    }

    pub fn bounds() -> [(f64, f64); 12] {
        let lo = Self::lower().to_array();
        let hi = Self::upper().to_array();
        std::array::from_fn(|i| (lo[i], hi[i]))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        DESIGN_NAMES.iter().position(|n| *n == name).map(|i| self.to_array()[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = DESIGN_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Invalid(format!("unknown design variable {name}")))?;
        let mut a = self.to_array();
        a[i] = value;
        *self = Self::from_array(a);
        Ok(())
    }

    /// Checks every component against its bound (relative slack 1e-9).
    pub fn validate(&self) -> Result<()> {
        let v = self.to_array();
        for (i, (lo, hi)) in Self::bounds().iter().enumerate() {
            let slack = 1e-9 * (hi - lo);
            if !v[i].is_finite() || v[i] < lo - slack || v[i] > hi + slack {
                return Err(Error::OutOfBounds { field: DESIGN_NAMES[i], value: v[i], lower: *lo, upper: *hi });
            }
        }
        Ok(())
    }
}

/// Planform and mass properties that follow in closed form from the design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Wing area (m²).
    pub s: f64,
    /// Span (m).
    pub b: f64,
    /// Mean chord S / b (m).
    pub c: f64,
    pub aspect_ratio: f64,
    /// Area-weighted tangent of the half-chord sweep.
    pub tan_sweep: f64,
    /// Area of both outer panels (m²).
    pub s_outer: f64,
    pub cog: [f64; 3],
    pub mass: f64,
    pub inertia: Mat3,
    /// Propeller lever arms (x, y) relative to the cog (m).
    pub l_t: [f64; 2],
    /// Elevon hinge lever arms (x, y) relative to the cog (m).
    pub l_d: [f64; 2],
    /// Area-weighted mean of y² over the wing (m²), used for roll damping.
    pub y_gyr2: f64,
    /// Area-weighted mean of squared quarter-chord arm plus chord²/12 (m²).
    pub x_gyr2: f64,
    pub f_con: f64,
    pub gamma_fus: f64,
    pub gamma_tip: f64,
}

fn chord_at(d: &DesignVector, y: f64) -> f64 {
    if y <= d.y_fus {
        d.c_sym + (d.c_fus - d.c_sym) * y / d.y_fus
    } else {
        d.c_fus + (d.c_tip - d.c_fus) * (y - d.y_fus) / (d.y_tip - d.y_fus)
    }
}

fn le_x_at(d: &DesignVector, y: f64) -> f64 {
    if y <= d.y_fus {
        d.x_fus * y / d.y_fus
    } else {
        d.x_fus + (d.x_tip - d.x_fus) * (y - d.y_fus) / (d.y_tip - d.y_fus)
    }
}

/// Five-point Gauss-Legendre on `[a, b]`.
fn gauss5<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    X.iter().zip(W).map(|(x, w)| w * f(m + h * x)).sum::<f64>() * h
}

/// Integral over the whole span (both half wings) of `f(y)`, split at the kink.
fn span_integral<F: Fn(f64) -> f64>(d: &DesignVector, f: F) -> f64 {
    2.0 * (gauss5(&f, 0.0, d.y_fus) + gauss5(&f, d.y_fus, d.y_tip))
}

/// Planform, mass and inertia of a design.
pub fn derive_geometry(d: &DesignVector) -> Result<Geometry> {
    d.validate()?;
    let s_inner = d.y_fus * (d.c_sym + d.c_fus);
    let s_outer = (d.y_tip - d.y_fus) * (d.c_fus + d.c_tip);
    let s = s_inner + s_outer;
    let b = 2.0 * d.y_tip;
    let c = s / b;
    let cog = [0.5 * d.c_sym, 0.0, 0.0];

    let tan_in = (d.x_fus + 0.5 * d.c_fus - 0.5 * d.c_sym) / d.y_fus;
    let tan_out = (d.x_tip + 0.5 * d.c_tip - d.x_fus - 0.5 * d.c_fus) / (d.y_tip - d.y_fus);
    let tan_sweep = (tan_in * s_inner + tan_out * s_outer) / s;

    let y_mid = 0.5 * (d.y_fus + d.y_tip);
    let x_le_mid = le_x_at(d, y_mid);
    let x_te_mid = x_le_mid + chord_at(d, y_mid);
    let l_t = [cog[0] - x_le_mid, y_mid];
    let l_d = [cog[0] - x_te_mid, y_mid];

    let lambda = |y: f64| FOAM_DENSITY * K_AREA * chord_at(d, y).powi(2);
    let foam = span_integral(d, lambda);
    let mass = AVIONICS_MASS + 2.0 * PROP_MASS + foam;

    // Thin plate in the xy-plane; chordwise mass uniform over each strip.
    let ixx_f = span_integral(d, |y| lambda(y) * y * y);
    let iyy_f = span_integral(d, |y| {
        let ch = chord_at(d, y);
        let xm = le_x_at(d, y) + 0.5 * ch - cog[0];
        lambda(y) * (xm * xm + ch * ch / 12.0)
    });
    let ixx = ixx_f + 2.0 * PROP_MASS * y_mid * y_mid;
    let iyy = iyy_f + 2.0 * PROP_MASS * l_t[0] * l_t[0];
    let izz = ixx + iyy;
    let inertia = [[ixx, 0.0, 0.0], [0.0, iyy, 0.0], [0.0, 0.0, izz]];

    let y_gyr2 = span_integral(d, |y| chord_at(d, y) * y * y) / s;
    let x_gyr2 = span_integral(d, |y| {
        let ch = chord_at(d, y);
        let xq = le_x_at(d, y) + 0.25 * ch - cog[0];
        ch * (xq * xq + ch * ch / 12.0)
    }) / s;

    Ok(Geometry {
        s,
        b,
        c,
        aspect_ratio: b * b / s,
        tan_sweep,
        s_outer,
        cog,
        mass,
        inertia,
        l_t,
        l_d,
        y_gyr2,
        x_gyr2,
        f_con: d.f_con,
        gamma_fus: d.gamma_fus,
        gamma_tip: d.gamma_tip,
    })
}

impl Geometry {
    pub fn body(&self) -> RigidBodyT<f64> {
        RigidBodyT { mass: self.mass, inertia: self.inertia }
    }

    /// Analytic induced-drag factor `1 / (π AR e)`.
    pub fn induced_drag_factor(&self) -> f64 {
        1.0 / (std::f64::consts::PI * self.aspect_ratio * SPAN_EFFICIENCY)
    }
}

/// Low-fidelity model coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiCoeffs {
    /// kg/m
    pub k_l: f64,
    /// kg/m
    pub k_d: f64,
    /// kg
    pub k_phi: f64,
    /// kg
    pub k_theta: f64,
    /// kg
    pub k_psi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimPoint {
    pub alpha: f64,
    pub delta: f64,
    pub cl: f64,
    pub cd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DragPolar {
    pub cd0: f64,
    pub k: f64,
    /// Fitted `k` over `1 / (π AR e)`.
    pub k_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    pub t_min: f64,
    pub t_max: f64,
    pub delta_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self { t_min: 0.0, t_max: 25.0, delta_max: 15f64.to_radians() }
    }
}

/// Everything derived from a design: geometry, trim, polar, φ-coefficients, limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub geometry: Geometry,
    pub trim: TrimPoint,
    pub polar: DragPolar,
    pub phi: PhiCoeffs,
    pub limits: ActuatorLimits,
    pub env: EnvConstantsT<f64>,
}

impl DerivedParams {
    pub fn body(&self) -> RigidBodyT<f64> {
        self.geometry.body()
    }

    pub fn mass(&self) -> f64 {
        self.geometry.mass
    }

    pub fn l_ty(&self) -> f64 {
        self.geometry.l_t[1]
    }
}

pub const TRIM_ALPHA_DEG: (f64, f64, f64) = (-5.0, 10.0, 0.25);

fn symmetric_state(alpha: f64, delta: f64) -> AeroState {
    AeroState { alpha, beta: 0.0, delta: [delta, delta], rates: [0.0; 3] }
}

/// Lift and drag coefficients from body-axis coefficients.
pub fn lift_drag(alpha: f64, cx: f64, cz: f64) -> (f64, f64) {
    let (sa, ca) = alpha.sin_cos();
    (cz * ca - cx * sa, cz * sa + cx * ca)
}

fn cl_cd<P: CoeffProvider + ?Sized>(p: &P, alpha: f64, delta: f64) -> (f64, f64) {
    let c = p.coeffs(&symmetric_state(alpha, delta));
    lift_drag(alpha, c.cx, c.cz)
}

/// Symmetric deflection with zero pitching moment at `alpha`, by bisection.
pub fn trim_delta<P: CoeffProvider + ?Sized>(p: &P, alpha: f64, delta_max: f64) -> Option<f64> {
    let cm = |dl: f64| p.coeffs(&symmetric_state(alpha, dl)).ctheta;
    let (mut lo, mut hi) = (-delta_max, delta_max);
    let (mut flo, fhi) = (cm(lo), cm(hi));
    if !(flo * fhi <= 0.0) {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = cm(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Trimmed operating point of maximal lift-to-drag ratio, and the fitted polar.
pub fn trim<P: CoeffProvider + ?Sized>(p: &P, geom: &Geometry, limits: &ActuatorLimits) -> Result<(TrimPoint, DragPolar)> {
    let (a0, a1, da) = TRIM_ALPHA_DEG;
    let n = ((a1 - a0) / da).round() as usize;
    let mut pts = Vec::new();
    for i in 0..=n {
        let alpha = (a0 + da * i as f64).to_radians();
        if let Some(delta) = trim_delta(p, alpha, limits.delta_max) {
            let (cl, cd) = cl_cd(p, alpha, delta);
            pts.push(TrimPoint { alpha, delta, cl, cd });
        }
    }
    if pts.is_empty() {
        return Err(Error::NoTrim("pitching moment has no root within the elevon range".into()));
    }
    let best = *pts
        .iter()
        .filter(|t| t.cd > 0.0)
        .max_by(|a, b| (a.cl / a.cd).total_cmp(&(b.cl / b.cd)))
        .ok_or_else(|| Error::NoTrim("no trimmed point with positive drag".into()))?;
    // Least squares cd = cd0 + k cl² over the trimmed grid.
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), t| (a + t.cl * t.cl, b + t.cd));
    let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |(a, b), t| (a + t.cl.powi(4), b + t.cl * t.cl * t.cd));
    let den = m * sxx - sx * sx;
    let k = if den.abs() > 1e-300 { (m * sxy - sx * sy) / den } else { 0.0 };
    let cd0 = (sy - k * sx) / m;
    let polar = DragPolar { cd0, k, k_ratio: k / geom.induced_drag_factor() };
    Ok((best, polar))
}

/// Step for the central differences in α.
pub const EXTRACT_STEP: f64 = 0.5 * std::f64::consts::PI / 180.0;

/// φ-coefficients from derivatives of the provider at the trim point.
pub fn extract_phi_coeffs<P: CoeffProvider + ?Sized>(
    p: &P,
    geom: &Geometry,
    trim: &TrimPoint,
    env: &EnvConstantsT<f64>,
) -> PhiCoeffs {
    let h = EXTRACT_STEP;
    let (clp, cdp) = cl_cd(p, trim.alpha + h, trim.delta);
    let (clm, cdm) = cl_cd(p, trim.alpha - h, trim.delta);
    let dcl = (clp - clm) / (2.0 * h);
    let dcd = (cdp - cdm) / (2.0 * h);
    let q = 0.5 * env.rho * geom.s;
    let k_l = q * dcl;
    PhiCoeffs {
        k_l,
        k_d: q * trim.cd,
        k_phi: k_l * geom.l_d[1] * geom.f_con,
        k_theta: k_l * geom.l_d[0].abs() * geom.f_con,
        k_psi: q * geom.l_d[1] * geom.f_con * dcd,
    }
}

/// Geometry, trim, polar and φ-coefficients for a design.
pub fn derive_params<P: CoeffProvider + ?Sized>(
    geom: Geometry,
    provider: &P,
    limits: ActuatorLimits,
    env: EnvConstantsT<f64>,
) -> Result<DerivedParams> {
    let (trim_pt, polar) = trim(provider, &geom, &limits)?;
    let phi = extract_phi_coeffs(provider, &geom, &trim_pt, &env);
    if !(phi.k_l > 0.0) {
        return Err(Error::NoTrim(format!("non-positive lift coefficient slope {}", phi.k_l)));
    }
    Ok(DerivedParams { geometry: geom, trim: trim_pt, polar, phi, limits, env })
}
