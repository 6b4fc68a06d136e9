//! Aerodynamic models: the low-fidelity φ-model, a synthetic nonlinear
//! coefficient provider, per-design GP surrogates of that provider, and the
//! stochastic high-fidelity force assembly.
//!
//! # Synthetic provider constants
//!
//! | symbol | value | meaning |
//! |---|---|---|
//! | `a0` | `2π AR / (2 + sqrt(4 + AR² (1 + tan² Λ)))` | lift slope, Λ = area-weighted half-chord sweep |
//! | `CD0` | 0.012 | parasitic drag |
//! | `k` | `1 / (π AR 0.9)` | induced drag factor |
//! | stall | logistic in `|α|`, centre 12°, width 1° | blends to `2 sgn(α) sin²α cos α` |
//! | stall drag | `1.2 σ sin²α` | |
//! | `CYβ` | −0.1 | side force |
//! | `Cθα` | `−0.05 a0 c / b` | 5 % static margin |
//! | `Cθ0` | `−0.02 a0 (γ_fus − γ_tip)` | washout moment |
//! | `Cθδ` | `a0 f_con |l^δ_x| / b` | per radian of `δ1 + δ2` |
//! | `Cθq` | `−2 a0 x_g² / (c b)` | pitch damping |
//! | `Cφδ` | `a0 f_con l^δ_y / c` | per radian of `δ2 − δ1` |
//! | `Cφp` | `−2 a0 y_g² / c²` | roll damping |
//! | `Cψδ` | `f_con l^δ_y ∂αCD / c` | adverse yaw |
//! | `Cψr` | `−2 CD(α) y_g² / c²` | yaw damping |
//! | `Cψβ` | 0.02 | weathercock |
//!
//! Control terms are scaled by `cos α (1 − σ/2)`. Rates enter as
//! `Ω c / (2 ‖v‖)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::frames::{dynamics_rhs, mat_vec, norm, rot_global_to_local, rot_local_to_global, EnvConstantsT};
use crate::geometry::{DerivedParams, Geometry, PhiCoeffs};
use crate::gp::{fit_gpi, GpModel, GpOptions};
use crate::lowdisc::{scale_to_bounds, scrambled_sobol};
use crate::optim::GaOptions;
use crate::{Error, Result, State, Vec3};

/// `(T1, T2, δ1, δ2)` in N and rad.
pub type Input = [f64; 4];

/// Flow angles, deflections and normalized body rates.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct AeroState {
    pub alpha: f64,
    pub beta: f64,
    pub delta: [f64; 2],
    /// `Ω c / (2 ‖v‖)`.
    pub rates: [f64; 3],
}

impl AeroState {
    pub fn from_motion(v_local: &Vec3, omega: &Vec3, delta: [f64; 2], chord: f64) -> Self {
        let speed = norm(v_local);
        let alpha = v_local[2].atan2(v_local[0]);
        let (beta, rates) = if speed > 0.0 {
            let k = chord / (2.0 * speed);
            ((v_local[1] / speed).clamp(-1.0, 1.0).asin(), [omega[0] * k, omega[1] * k, omega[2] * k])
        } else {
            (0.0, [0.0; 3])
        };
        Self { alpha, beta, delta, rates }
    }

    pub fn to_vec(&self) -> [f64; 7] {
        [self.alpha, self.beta, self.delta[0], self.delta[1], self.rates[0], self.rates[1], self.rates[2]]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { alpha: x[0], beta: x[1], delta: [x[2], x[3]], rates: [x[4], x[5], x[6]] }
    }

    /// Projects onto the surrogate sampling box.
    pub fn clamped(&self) -> Self {
        let v = self.to_vec();
        let b = surrogate_box();
        let c: Vec<f64> = v.iter().zip(b.iter()).map(|(x, (lo, hi))| x.clamp(*lo, *hi)).collect();
        Self::from_slice(&c)
    }
}

/// Sampling box of the surrogate design of experiments.
pub fn surrogate_box() -> [(f64, f64); 7] {
    let d = std::f64::consts::PI / 180.0;
    [(-15.0 * d, 15.0 * d), (-10.0 * d, 10.0 * d), (-15.0 * d, 15.0 * d), (-15.0 * d, 15.0 * d), (-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3)]
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CoeffSet {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub cphi: f64,
    pub ctheta: f64,
    pub cpsi: f64,
}

impl CoeffSet {
    pub const NAMES: [&'static str; 6] = ["cx", "cy", "cz", "cphi", "ctheta", "cpsi"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.cx, self.cy, self.cz, self.cphi, self.ctheta, self.cpsi]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { cx: a[0], cy: a[1], cz: a[2], cphi: a[3], ctheta: a[4], cpsi: a[5] }
    }
}

/// Anything that yields the six coefficients at a flow state.
pub trait CoeffProvider: Sync {
    fn coeffs(&self, s: &AeroState) -> CoeffSet;
}

/// Low-fidelity forces and torques in the body frame.
pub fn lofi_forces(v: &Vec3, u: &Input, k: &PhiCoeffs, l_ty: f64) -> (Vec3, Vec3) {
    let sp = norm(v);
    let vxs = v[0] * sp;
    let f = [u[0] + u[1] - k.k_d * vxs, 0.0, -k.k_l * v[2] * sp];
    let tau = [
        k.k_phi * vxs * (u[3] - u[2]),
        k.k_theta * vxs * (u[2] + u[3]),
        k.k_psi * vxs * (u[3] - u[2]) + l_ty * (u[1] - u[0]),
    ];
    (f, tau)
}

pub const CD0: f64 = 0.012;
pub const STALL_CENTER_DEG: f64 = 12.0;
pub const STALL_WIDTH_DEG: f64 = 1.0;
pub const STALL_DRAG: f64 = 1.2;
pub const CY_BETA: f64 = -0.1;
pub const STATIC_MARGIN: f64 = 0.05;
pub const WASHOUT_GAIN: f64 = 0.02;
pub const CPSI_BETA: f64 = 0.02;

/// Analytic stand-in for a vortex-lattice code, parameterized by the geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProvider {
    pub a0: f64,
    pub cd0: f64,
    pub k: f64,
    pub cm0: f64,
    pub cm_alpha: f64,
    pub cm_delta: f64,
    pub cm_q: f64,
    pub cl_delta: f64,
    pub cl_p: f64,
    /// Multiplies `∂αCD` for the adverse-yaw derivative.
    pub cn_delta_scale: f64,
    /// Multiplies `CD` for yaw damping.
    pub cn_r_scale: f64,
}

impl SyntheticProvider {
    pub fn new(g: &Geometry) -> Self {
        let ar = g.aspect_ratio;
        let a0 = 2.0 * std::f64::consts::PI * ar / (2.0 + (4.0 + ar * ar * (1.0 + g.tan_sweep * g.tan_sweep)).sqrt());
        let (c, b) = (g.c, g.b);
        Self {
            a0,
            cd0: CD0,
            k: g.induced_drag_factor(),
            cm0: -WASHOUT_GAIN * a0 * (g.gamma_fus - g.gamma_tip),
            cm_alpha: -STATIC_MARGIN * a0 * c / b,
            cm_delta: a0 * g.f_con * g.l_d[0].abs() / b,
            cm_q: -2.0 * a0 * g.x_gyr2 / (c * b),
            cl_delta: a0 * g.f_con * g.l_d[1] / c,
            cl_p: -2.0 * a0 * g.y_gyr2 / (c * c),
            cn_delta_scale: g.f_con * g.l_d[1] / c,
            cn_r_scale: -2.0 * g.y_gyr2 / (c * c),
        }
    }

    fn stall(alpha: f64) -> f64 {
        let x = (alpha.abs() - STALL_CENTER_DEG.to_radians()) / STALL_WIDTH_DEG.to_radians();
        1.0 / (1.0 + (-x).exp())
    }

    pub fn lift(&self, alpha: f64) -> f64 {
        let s = Self::stall(alpha);
        let (sa, ca) = alpha.sin_cos();
        (1.0 - s) * self.a0 * alpha + s * 2.0 * alpha.signum() * sa * sa * ca
    }

    pub fn drag(&self, alpha: f64) -> f64 {
        let cl = self.lift(alpha);
        let sa = alpha.sin();
        self.cd0 + self.k * cl * cl + STALL_DRAG * Self::stall(alpha) * sa * sa
    }

    pub fn drag_slope(&self, alpha: f64) -> f64 {
        let h = 1e-6;
        (self.drag(alpha + h) - self.drag(alpha - h)) / (2.0 * h)
    }
}

impl CoeffProvider for SyntheticProvider {
    fn coeffs(&self, s: &AeroState) -> CoeffSet {
        let a = s.alpha;
        let (sa, ca) = a.sin_cos();
        let cl = self.lift(a);
        let cd = self.drag(a);
        let eff = ca * (1.0 - 0.5 * Self::stall(a));
        let sym = s.delta[0] + s.delta[1];
        let diff = s.delta[1] - s.delta[0];
        let [p, q, r] = s.rates;
        CoeffSet {
            cx: cd * ca - cl * sa,
            cy: CY_BETA * s.beta,
            cz: cl * ca + cd * sa,
            cphi: self.cl_delta * eff * diff + self.cl_p * p,
            ctheta: self.cm0 + self.cm_alpha * sa + self.cm_delta * eff * sym + self.cm_q * q,
            cpsi: self.cn_delta_scale * self.drag_slope(a) * eff * diff + self.cn_r_scale * cd * r + CPSI_BETA * s.beta,
        }
    }
}

/// Number of flow states sampled per design.
pub const SURROGATE_SAMPLES: usize = 100;

/// One GP interpolator per coefficient, fitted to a provider.
#[derive(Clone, Debug)]
pub struct DesignSurrogate {
    pub models: Vec<GpModel>,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SurrogateOptions {
    pub samples: usize,
    pub seed: u64,
    pub ga: GaOptions,
    pub qn_steps: usize,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self { samples: SURROGATE_SAMPLES, seed: 0, ga: GaOptions::default(), qn_steps: 50 }
    }
}

/// Samples the provider on a scrambled Sobol design and fits six GPs.
pub fn fit_design_surrogate<P: CoeffProvider + ?Sized>(provider: &P, opts: &SurrogateOptions) -> Result<DesignSurrogate> {
    let bx = surrogate_box();
    let samples = scale_to_bounds(&scrambled_sobol(opts.samples, 7, opts.seed), &bx);
    let values: Vec<[f64; 6]> = samples.iter().map(|x| provider.coeffs(&AeroState::from_slice(x)).to_array()).collect();
    let models = (0..6)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = values.iter().map(|v| v[k]).collect();
            let go = GpOptions { bounds: Some(bx.to_vec()), ga: opts.ga.clone(), qn_steps: opts.qn_steps, seed: opts.seed ^ (k as u64 + 1) };
            fit_gpi(&samples, &y, &go).map_err(|e| Error::Surrogate(format!("{}: {e}", CoeffSet::NAMES[k])))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DesignSurrogate { models, samples })
}

impl CoeffProvider for DesignSurrogate {
    fn coeffs(&self, s: &AeroState) -> CoeffSet {
        let x = s.clamped().to_vec();
        CoeffSet::from_array(std::array::from_fn(|k| self.models[k].predict_mean(&x)))
    }
}

/// Stochastic-emulator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulatorConfig {
    /// Multiplicative coefficient noise standard deviation.
    pub s_c: f64,
    /// Per-axis wind standard deviation (m/s).
    pub wind_std: f64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self { s_c: 0.05, wind_std: 0.5 }
    }
}

impl EmulatorConfig {
    pub fn deterministic() -> Self {
        Self { s_c: 0.0, wind_std: 0.0 }
    }
}

/// Disturbances fixed for one closed-loop episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub coeff_scale: [f64; 6],
    pub wind: Vec3,
}

impl Episode {
    pub fn nominal() -> Self {
        Self { coeff_scale: [1.0; 6], wind: [0.0; 3] }
    }

    pub fn draw(cfg: &EmulatorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
        let coeff_scale = std::array::from_fn(|_| 1.0 + cfg.s_c * z());
        let wind = std::array::from_fn(|_| cfg.wind_std * z());
        Self { coeff_scale, wind }
    }
}

/// High-fidelity body-frame forces from provider coefficients.
pub fn hifi_forces<P: CoeffProvider + ?Sized>(
    xi: &State,
    u: &Input,
    provider: &P,
    geom: &Geometry,
    env: &EnvConstantsT<f64>,
    episode: &Episode,
) -> (Vec3, Vec3) {
    let q = [xi[3], xi[4], xi[5]];
    let air = [xi[6] - episode.wind[0], xi[7] - episode.wind[1], xi[8] - episode.wind[2]];
    let v = mat_vec(&rot_global_to_local(&q), &air);
    let omega = [xi[9], xi[10], xi[11]];
    let sp2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    let thrust = u[0] + u[1];
    let yaw_t = geom.l_t[1] * (u[1] - u[0]);
    if sp2 == 0.0 {
        return ([thrust, 0.0, 0.0], [0.0, 0.0, yaw_t]);
    }
    let s = AeroState::from_motion(&v, &omega, [u[2], u[3]], geom.c);
    let raw = provider.coeffs(&s).to_array();
    let c: [f64; 6] = std::array::from_fn(|k| raw[k] * episode.coeff_scale[k]);
    let qs = 0.5 * env.rho * sp2 * geom.s;
    (
        [thrust - c[0] * qs, c[1] * qs, -c[2] * qs],
        [c[3] * qs * geom.c, c[4] * qs * geom.b, c[5] * qs * geom.c + yaw_t],
    )
}

/// State derivative of the low-fidelity model in still air.
pub fn lofi_rhs(xi: &State, u: &Input, p: &DerivedParams) -> Result<State> {
    let q = [xi[3], xi[4], xi[5]];
    let v = mat_vec(&rot_global_to_local(&q), &[xi[6], xi[7], xi[8]]);
    let (f, tau) = lofi_forces(&v, u, &p.phi, p.l_ty());
    let fg = mat_vec(&rot_local_to_global(&q), &f);
    dynamics_rhs(xi, &fg, &tau, &p.body(), &p.env)
}

/// State derivative under the high-fidelity forces.
pub fn hifi_rhs<P: CoeffProvider + ?Sized>(xi: &State, u: &Input, provider: &P, p: &DerivedParams, episode: &Episode) -> Result<State> {
    let (f, tau) = hifi_forces(xi, u, provider, &p.geometry, &p.env, episode);
    let q = [xi[3], xi[4], xi[5]];
    let fg = mat_vec(&rot_local_to_global(&q), &f);
    dynamics_rhs(xi, &fg, &tau, &p.body(), &p.env)
}

/// Adapter point for an external vortex-lattice executable.
///
/// The exchange is file based: a geometry file describing both wing panels
/// (root, kink and tip sections with chord, leading-edge position and twist),
/// a run-case file listing `(α, β, δ1, δ2, p̂, q̂, r̂)` states, and a result
/// table with one `CX CY CZ Cl Cm Cn` row per state. Not bundled.
#[derive(Clone, Debug)]
pub struct VortexLatticeAdapter {
    pub executable: std::path::PathBuf,
}

impl VortexLatticeAdapter {
    pub fn evaluate(&self, _geometry: &Geometry, _states: &[AeroState]) -> Result<Vec<CoeffSet>> {
        Err(Error::Unsupported(format!("external solver {} is not available", self.executable.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{derive_geometry, DesignVector};

    fn provider() -> SyntheticProvider {
        SyntheticProvider::new(&derive_geometry(&DesignVector::baseline()).unwrap())
    }

    #[test]
    fn symmetric_zero_state() {
        let c = provider().coeffs(&AeroState::default());
        assert!(c.cz.abs() < 1e-12 && c.cy == 0.0 && c.cphi == 0.0 && c.cpsi == 0.0);
    }

    #[test]
    fn side_force_constant() {
        let c = provider().coeffs(&AeroState { beta: 0.1, ..Default::default() });
        assert!((c.cy + 0.01).abs() < 1e-15);
    }

    #[test]
    fn small_alpha_slope() {
        let p = provider();
        let h = 1e-4;
        let slope = (p.lift(h) - p.lift(-h)) / (2.0 * h);
        assert!((slope - p.a0).abs() / p.a0 < 0.02);
    }

    #[test]
    fn hover_lofi() {
        let k = PhiCoeffs { k_l: 0.6, k_d: 0.01, k_phi: 0.1, k_theta: 0.1, k_psi: 0.01 };
        let (f, t) = lofi_forces(&[0.0; 3], &[3.0, 5.0, 0.1, -0.2], &k, 0.35);
        assert_eq!(f, [8.0, 0.0, 0.0]);
        assert_eq!(t, [0.0, 0.0, 0.35 * 2.0]);
    }

    #[test]
    fn stub_is_unsupported() {
        let a = VortexLatticeAdapter { executable: "avl".into() };
        let g = derive_geometry(&DesignVector::baseline()).unwrap();
        assert!(matches!(a.evaluate(&g, &[]), Err(Error::Unsupported(_))));
    }
}
