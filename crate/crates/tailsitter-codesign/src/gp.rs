//! Gaussian-process interpolation, regression with a nugget, and
//! expectation-propagation classification.
//!
//! Inputs are mapped to the unit box, outputs standardized, and the kernel is
//! an ARD Matérn 5/2 with lengthscales `10^theta`. The trend is a constant
//! (ordinary kriging), so `beta`, `sigma2` follow from generalized least
//! squares and drop out of the concentrated likelihood.
//!
//! The regression nugget is searched as a noise-to-signal ratio `nu`, so that
//! `Psi_r = Psi + nu I`. The equivalent noise variance is `nu * sigma2`, which
//! [`GpModel::lambda`] reports on a log10 scale.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::optim::{bfgs_maximize, ga_maximize, GaOptions};
use crate::stats::{log_norm_cdf, mills_ratio_inv, norm_cdf};
use crate::{Error, Result};

pub const RECORD_VERSION: u32 = 1;
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];
const SQRT5: f64 = 2.236_067_977_499_79;

/// Log10 lengthscale range searched by the MLE.
pub const THETA_BOUNDS: (f64, f64) = (-2.0, 1.0);
/// Log10 noise-to-signal range searched by the regression MLE.
pub const LOG_NU_BOUNDS: (f64, f64) = (-9.0, 0.5);

/// Matérn 5/2 correlation at scaled distance `r`.
pub fn matern52(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Correlation between two unit-box points.
pub fn correlation(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(theta)
        .map(|((x, y), t)| {
            let d = (x - y) / 10f64.powf(*t);
            d * d
        })
        .sum();
    matern52(r2.sqrt())
}

/// Same as [`correlation`] with precomputed inverse length scales `10^-θ`.
fn correlation_inv(a: &[f64], b: &[f64], inv: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(inv)
        .map(|((x, y), s)| {
            let d = (x - y) * s;
            d * d
        })
        .sum();
    matern52(r2.sqrt())
}

#[derive(Clone, Debug)]
pub struct GpOptions {
    /// Normalization box; the data range when `None`.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub ga: GaOptions,
    pub qn_steps: usize,
    pub seed: u64,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self { bounds: None, ga: GaOptions::default(), qn_steps: 50, seed: 0 }
    }
}

#[derive(Clone, Debug)]
struct Normalizer {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Normalizer {
    fn new(x: &[Vec<f64>], bounds: Option<&[(f64, f64)]>) -> Self {
        let d = x.first().map_or(0, |r| r.len());
        let (lower, mut upper) = match bounds {
            Some(b) => (b.iter().map(|p| p.0).collect(), b.iter().map(|p| p.1).collect()),
            None => {
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for r in x {
                    for k in 0..d {
                        lo[k] = lo[k].min(r[k]);
                        hi[k] = hi[k].max(r[k]);
                    }
                }
                (lo, hi)
            }
        };
        for k in 0..d {
            if !(upper[k] > lower[k]) {
                upper[k] = lower[k] + 1.0;
            }
        }
        Self { lower, upper }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }
}

/// Squared coordinate differences for all pairs `i < j`, per dimension.
struct PairCache {
    n: usize,
    d: usize,
    sq: Vec<f64>,
}

impl PairCache {
    fn new(xs: &[Vec<f64>]) -> Self {
        let n = xs.len();
        let d = xs.first().map_or(0, |r| r.len());
        let mut sq = Vec::with_capacity(n * (n.saturating_sub(1)) / 2 * d);
        for i in 0..n {
            for j in (i + 1)..n {
                for k in 0..d {
                    let t = xs[i][k] - xs[j][k];
                    sq.push(t * t);
                }
            }
        }
        Self { n, d, sq }
    }

    fn correlation_matrix(&self, theta: &[f64], diag: f64) -> DMatrix<f64> {
        let inv: Vec<f64> = theta.iter().map(|t| 10f64.powf(-2.0 * t)).collect();
        let mut m = DMatrix::<f64>::zeros(self.n, self.n);
        let mut idx = 0;
        for i in 0..self.n {
            m[(i, i)] = 1.0 + diag;
            for j in (i + 1)..self.n {
                let mut r2 = 0.0;
                for k in 0..self.d {
                    r2 += self.sq[idx + k] * inv[k];
                }
                idx += self.d;
                let v = matern52(r2.sqrt());
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Factorization of `Psi + (nu + jitter) I` with the GLS quantities.
struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    beta: f64,
    sigma2: f64,
    alpha: DVector<f64>,
    psi_inv_one: DVector<f64>,
    gamma: f64,
    log_det: f64,
}

fn factorize(cache: &PairCache, y: &DVector<f64>, theta: &[f64], nu: f64) -> Option<Factor> {
    let n = cache.n;
    for &jitter in JITTER_LADDER.iter() {
        let m = cache.correlation_matrix(theta, nu + jitter);
        let Some(chol) = Cholesky::new(m) else { continue };
        let one = DVector::from_element(n, 1.0);
        let psi_inv_one = chol.solve(&one);
        let denom = one.dot(&psi_inv_one);
        if !(denom > 0.0) {
            continue;
        }
        let beta = psi_inv_one.dot(y) / denom;
        let resid = y - DVector::from_element(n, beta);
        let alpha = chol.solve(&resid);
        let sigma2 = (resid.dot(&alpha) / n as f64).max(0.0);
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        return Some(Factor { chol, jitter, beta, sigma2, alpha, psi_inv_one, gamma: 1.0 / denom, log_det });
    }
    None
}

/// `-n ln sigma2 - ln |Psi|` for standardized data; `-inf` when singular.
fn concentrated(cache: &PairCache, y: &DVector<f64>, theta: &[f64], nu: f64) -> f64 {
    match factorize(cache, y, theta, nu) {
        Some(f) => {
            let v = -(cache.n as f64) * f.sigma2.max(1e-300).ln() - f.log_det;
            if v.is_finite() {
                v
            } else {
                f64::NEG_INFINITY
            }
        }
        None => f64::NEG_INFINITY,
    }
}

fn standardize(y: &[f64]) -> (f64, f64, DVector<f64>) {
    let (m, v) = crate::stats::mean_var(y);
    let s = if v > 0.0 && v.is_finite() { v.sqrt() } else { 1.0 };
    (m, s, DVector::from_iterator(y.len(), y.iter().map(|t| (t - m) / s)))
}

fn check_data(x: &[Vec<f64>], y: &[f64], min_n: usize) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!("{} inputs but {} outputs", x.len(), y.len())));
    }
    if x.len() < min_n {
        return Err(Error::Invalid(format!("need at least {min_n} samples, got {}", x.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Invalid("ragged or empty input rows".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite training data".into()));
    }
    Ok(d)
}

fn has_duplicates(x: &[Vec<f64>]) -> bool {
    (0..x.len()).any(|i| ((i + 1)..x.len()).any(|j| x[i] == x[j]))
}

/// Concentrated log-likelihood `-n ln sigma2 - ln|Psi|` at fixed hyperparameters.
/// `log10_nu = None` is the interpolating model.
pub fn concentrated_log_likelihood(
    x: &[Vec<f64>],
    y: &[f64],
    theta: &[f64],
    log10_nu: Option<f64>,
    bounds: Option<&[(f64, f64)]>,
) -> f64 {
    let norm = Normalizer::new(x, bounds);
    let xs: Vec<Vec<f64>> = x.iter().map(|r| norm.apply(r)).collect();
    let (_, _, ys) = standardize(y);
    concentrated(&PairCache::new(&xs), &ys, theta, log10_nu.map_or(0.0, |l| 10f64.powf(l)))
}

/// Fitted kriging model. Immutable once built.
#[derive(Clone)]
pub struct GpModel {
    norm: Normalizer,
    x_raw: Vec<Vec<f64>>,
    y_raw: Vec<f64>,
    xs: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    theta: Vec<f64>,
    inv_len: Vec<f64>,
    log10_nu: Option<f64>,
    jitter: f64,
    beta: f64,
    sigma2: f64,
    alpha: DVector<f64>,
    psi_inv_one: DVector<f64>,
    gamma: f64,
    chol: Cholesky<f64, Dyn>,
}

impl std::fmt::Debug for GpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpModel")
            .field("n", &self.xs.len())
            .field("theta", &self.theta)
            .field("log10_nu", &self.log10_nu)
            .field("sigma2", &self.sigma2())
            .finish()
    }
}

/// Versioned, self-describing text record of a model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GpRecord {
    pub version: u32,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub theta: Vec<f64>,
    pub log10_nu: Option<f64>,
}

impl GpModel {
    /// Builds a model at fixed hyperparameters. `log10_nu = None` interpolates.
    pub fn with_hyperparameters(
        x: &[Vec<f64>],
        y: &[f64],
        theta: &[f64],
        log10_nu: Option<f64>,
        bounds: Option<&[(f64, f64)]>,
    ) -> Result<Self> {
        let d = check_data(x, y, 1)?;
        if theta.len() != d {
            return Err(Error::Invalid(format!("theta has {} entries for {d} inputs", theta.len())));
        }
        let norm = Normalizer::new(x, bounds);
        let xs: Vec<Vec<f64>> = x.iter().map(|r| norm.apply(r)).collect();
        let (y_mean, y_scale, ys) = standardize(y);
        let nu = log10_nu.map_or(0.0, |l| 10f64.powf(l));
        let f = factorize(&PairCache::new(&xs), &ys, theta, nu).ok_or(Error::IllConditioned)?;
        Ok(Self {
            norm,
            x_raw: x.to_vec(),
            y_raw: y.to_vec(),
            xs,
            y_mean,
            y_scale,
            theta: theta.to_vec(),
            inv_len: theta.iter().map(|t| 10f64.powf(-t)).collect(),
            log10_nu,
            jitter: f.jitter,
            beta: f.beta,
            sigma2: f.sigma2,
            alpha: f.alpha,
            psi_inv_one: f.psi_inv_one,
            gamma: f.gamma,
            chol: f.chol,
        })
    }

    /// Interpolators carry their jitter as a zero-distance kernel term.
    fn self_term(&self) -> f64 {
        if self.is_regression() {
            0.0
        } else {
            self.jitter
        }
    }

    fn correlations(&self, x: &[f64]) -> DVector<f64> {
        let u = self.norm.apply(x);
        let j = self.self_term();
        DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|r| correlation_inv(&u, r, &self.inv_len) + if *r == u { j } else { 0.0 }),
        )
    }

    /// Predictive mean and variance in output units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let psi = self.correlations(x);
        let mu = self.beta + psi.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&psi).unwrap_or_else(|| DVector::zeros(psi.len()));
        let g = self.psi_inv_one.dot(&psi) - 1.0;
        let s = self.sigma2 * (1.0 + self.self_term() - v.norm_squared() + g * g * self.gamma);
        let var = if s < 0.0 { 0.0 } else { s };
        (self.y_mean + self.y_scale * mu, var * self.y_scale * self.y_scale)
    }

    /// Predictive mean only; `O(n d)`.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        let u = self.norm.apply(x);
        let j = self.self_term();
        let mut mu = self.beta;
        for (r, a) in self.xs.iter().zip(self.alpha.iter()) {
            mu += a * (correlation_inv(&u, r, &self.inv_len) + if *r == u { j } else { 0.0 });
        }
        self.y_mean + self.y_scale * mu
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn log10_nu(&self) -> Option<f64> {
        self.log10_nu
    }

    pub fn is_regression(&self) -> bool {
        self.log10_nu.is_some()
    }

    /// Process variance in output units.
    pub fn sigma2(&self) -> f64 {
        self.sigma2 * self.y_scale * self.y_scale
    }

    /// Trend coefficient in output units.
    pub fn beta(&self) -> f64 {
        self.y_mean + self.y_scale * self.beta
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Fitted noise variance in output units (0 for the interpolator).
    pub fn noise_variance(&self) -> f64 {
        self.log10_nu.map_or(0.0, |l| 10f64.powf(l) * self.sigma2())
    }

    /// Log10 of the noise variance in standardized units.
    pub fn lambda(&self) -> Option<f64> {
        self.log10_nu.map(|l| l + self.sigma2.max(1e-300).log10())
    }

    pub fn n_samples(&self) -> usize {
        self.xs.len()
    }

    pub fn training_inputs(&self) -> &[Vec<f64>] {
        &self.x_raw
    }

    pub fn training_outputs(&self) -> &[f64] {
        &self.y_raw
    }

    pub fn to_record(&self) -> GpRecord {
        GpRecord {
            version: RECORD_VERSION,
            x: self.x_raw.clone(),
            y: self.y_raw.clone(),
            bounds: self.norm.lower.iter().copied().zip(self.norm.upper.iter().copied()).collect(),
            theta: self.theta.clone(),
            log10_nu: self.log10_nu,
        }
    }

    pub fn from_record(r: &GpRecord) -> Result<Self> {
        if r.version != RECORD_VERSION {
            return Err(Error::Unsupported(format!("gp record version {}", r.version)));
        }
        Self::with_hyperparameters(&r.x, &r.y, &r.theta, r.log10_nu, Some(&r.bounds))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(&self.to_record()).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let r: GpRecord = serde_json::from_str(&s).map_err(|e| Error::Io(e.to_string()))?;
        Self::from_record(&r)
    }
}

fn search(
    cache: &PairCache,
    ys: &DVector<f64>,
    d: usize,
    regression: bool,
    opts: &GpOptions,
) -> Result<(Vec<f64>, Option<f64>)> {
    let mut bounds = vec![THETA_BOUNDS; d];
    if regression {
        bounds.push(LOG_NU_BOUNDS);
    }
    let objective = |p: &[f64]| {
        let nu = if regression { 10f64.powf(p[d]) } else { 0.0 };
        concentrated(cache, ys, &p[..d], nu)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut seed = vec![-0.5; d];
    if regression {
        seed.push(-2.0);
    }
    let (x0, f0) = ga_maximize(objective, &bounds, &opts.ga, &[seed], &mut rng);
    if !f0.is_finite() {
        return Err(Error::IllConditioned);
    }
    let (x1, _) = bfgs_maximize(objective, &x0, &bounds, opts.qn_steps, 1e-10);
    let theta = x1[..d].to_vec();
    Ok((theta, regression.then(|| x1[d])))
}

/// Interpolating GP with hyperparameters by maximum likelihood.
/// Duplicate inputs switch to [`fit_gpr`].
pub fn fit_gpi(x: &[Vec<f64>], y: &[f64], opts: &GpOptions) -> Result<GpModel> {
    let d = check_data(x, y, 2)?;
    if has_duplicates(x) {
        return fit_gpr(x, y, opts);
    }
    let norm = Normalizer::new(x, opts.bounds.as_deref());
    let xs: Vec<Vec<f64>> = x.iter().map(|r| norm.apply(r)).collect();
    let (_, _, ys) = standardize(y);
    let (theta, _) = search(&PairCache::new(&xs), &ys, d, false, opts)?;
    GpModel::with_hyperparameters(x, y, &theta, None, opts.bounds.as_deref())
}

/// Regression GP with a jointly fitted nugget.
pub fn fit_gpr(x: &[Vec<f64>], y: &[f64], opts: &GpOptions) -> Result<GpModel> {
    let d = check_data(x, y, 3)?;
    let norm = Normalizer::new(x, opts.bounds.as_deref());
    let xs: Vec<Vec<f64>> = x.iter().map(|r| norm.apply(r)).collect();
    let (_, _, ys) = standardize(y);
    let (theta, nu) = search(&PairCache::new(&xs), &ys, d, true, opts)?;
    GpModel::with_hyperparameters(x, y, &theta, nu, opts.bounds.as_deref())
}

// ---------------------------------------------------------------------------
// Classification

/// Probit GP classifier with an EP posterior approximation.
#[derive(Clone)]
pub struct GpClassifier {
    norm: Normalizer,
    xs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    theta: Vec<f64>,
    log10_sf2: f64,
    site_tau: DVector<f64>,
    site_nu: DVector<f64>,
    sqrt_tau: DVector<f64>,
    l_b: DMatrix<f64>,
    weights: DVector<f64>,
    log_z: f64,
    sweeps: usize,
}

impl std::fmt::Debug for GpClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpClassifier")
            .field("n", &self.xs.len())
            .field("theta", &self.theta)
            .field("log10_sf2", &self.log10_sf2)
            .field("log_z", &self.log_z)
            .finish()
    }
}

struct EpState {
    tau: DVector<f64>,
    nu: DVector<f64>,
    sqrt_tau: DVector<f64>,
    l_b: DMatrix<f64>,
    weights: DVector<f64>,
    log_z: f64,
    sweeps: usize,
}

fn prior_cov(xs: &[Vec<f64>], theta: &[f64], sf2: f64) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| sf2 * correlation(&xs[i], &xs[j], theta))
}

/// Posterior covariance/mean from site parameters (stable B-form).
fn ep_posterior(k: &DMatrix<f64>, tau: &DVector<f64>, nu: &DVector<f64>) -> Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    let n = k.nrows();
    let st = tau.map(|t| t.max(0.0).sqrt());
    let mut b = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += st[i] * k[(i, j)] * st[j];
        }
    }
    let l = Cholesky::new(b)?.l();
    let mut sk = k.clone();
    for i in 0..n {
        for j in 0..n {
            sk[(i, j)] *= st[i];
        }
    }
    let v = l.solve_lower_triangular(&sk)?;
    let sigma = k - v.transpose() * &v;
    let mu = &sigma * nu;
    Some((sigma, mu, l, st))
}

fn run_ep(k: &DMatrix<f64>, y: &[f64], damping: f64, max_sweeps: usize) -> Option<EpState> {
    let n = k.nrows();
    let mut tau = DVector::<f64>::zeros(n);
    let mut nu = DVector::<f64>::zeros(n);
    let mut sigma = k.clone();
    let mut mu = DVector::<f64>::zeros(n);
    let mut converged = false;
    let mut sweeps = 0;
    for sweep in 0..max_sweeps {
        sweeps = sweep + 1;
        let mut change: f64 = 0.0;
        for i in 0..n {
            let tau_c = 1.0 / sigma[(i, i)] - tau[i];
            let nu_c = mu[i] / sigma[(i, i)] - nu[i];
            if !(tau_c > 0.0) {
                return None;
            }
            let s2 = 1.0 / tau_c;
            let m = nu_c / tau_c;
            let denom = (1.0 + s2).sqrt();
            let z = y[i] * m / denom;
            let r = mills_ratio_inv(z);
            let mu_hat = m + y[i] * s2 * r / denom;
            let s2_hat = s2 - s2 * s2 * r * (z + r) / (1.0 + s2);
            let tau_new = (1.0 / s2_hat - tau_c).max(0.0);
            let d_tau = damping * (tau_new - tau[i]);
            let tau_i = tau[i] + d_tau;
            let nu_i = (1.0 - damping) * nu[i] + damping * (mu_hat / s2_hat - nu_c);
            change = change.max(d_tau.abs()).max((nu_i - nu[i]).abs());
            tau[i] = tau_i;
            nu[i] = nu_i;
            // Rank-one update of the posterior.
            let si = sigma.column(i).clone_owned();
            let c = d_tau / (1.0 + d_tau * si[i]);
            sigma -= c * &si * si.transpose();
            mu = &sigma * &nu;
        }
        let (s, m, _, _) = ep_posterior(k, &tau, &nu)?;
        sigma = s;
        mu = m;
        if change < 1e-6 {
            converged = true;
            break;
        }
    }
    if !converged {
        return None;
    }
    let (sigma, _, l_b, st) = ep_posterior(k, &tau, &nu)?;
    // Weights w = nu - S^1/2 B^-1 S^1/2 K nu so that the mean is k*^T w.
    let knu = k * &nu;
    let t = l_b.solve_lower_triangular(&st.component_mul(&knu))?;
    let t = l_b.transpose().solve_upper_triangular(&t)?;
    let weights = &nu - st.component_mul(&t);
    // Approximate log marginal likelihood.
    let mut log_z = 0.0;
    let mut cav_terms = 0.0;
    for i in 0..n {
        let tau_c = 1.0 / sigma[(i, i)] - tau[i];
        let nu_c = (sigma.row(i) * &nu)[0] / sigma[(i, i)] - nu[i];
        let lz = log_norm_cdf(y[i] * nu_c / tau_c / (1.0 + 1.0 / tau_c).sqrt());
        let a = nu_c;
        cav_terms += lz
            + 0.5 * (1.0 + tau[i] / tau_c).ln()
            + 0.5 * a * ((tau[i] / tau_c * a - 2.0 * nu[i]) / (tau[i] + tau_c))
            - 0.5 * nu[i] * nu[i] / (tau_c + tau[i]);
    }
    let log_det_b: f64 = (0..n).map(|i| l_b[(i, i)].ln()).sum();
    log_z += cav_terms - log_det_b + 0.5 * nu.dot(&(&sigma * &nu));
    Some(EpState { tau, nu, sqrt_tau: st, l_b, weights, log_z, sweeps })
}

fn check_labels(c: &[f64]) -> Result<()> {
    if c.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(Error::Invalid("class labels must be +1 or -1".into()));
    }
    Ok(())
}

impl GpClassifier {
    /// EP posterior at fixed hyperparameters.
    pub fn with_hyperparameters(
        x: &[Vec<f64>],
        c: &[f64],
        theta: &[f64],
        log10_sf2: f64,
        bounds: Option<&[(f64, f64)]>,
    ) -> Result<Self> {
        let d = check_data(x, c, 1)?;
        check_labels(c)?;
        if theta.len() != d {
            return Err(Error::Invalid("theta length mismatch".into()));
        }
        let norm = Normalizer::new(x, bounds);
        let xs: Vec<Vec<f64>> = x.iter().map(|r| norm.apply(r)).collect();
        let k = prior_cov(&xs, theta, 10f64.powf(log10_sf2));
        let ep = run_ep(&k, c, 1.0, 100)
            .or_else(|| run_ep(&k, c, 0.5, 200))
            .ok_or_else(|| Error::NonConvergence("expectation propagation".into()))?;
        Ok(Self {
            norm,
            xs,
            labels: c.to_vec(),
            theta: theta.to_vec(),
            log10_sf2,
            site_tau: ep.tau,
            site_nu: ep.nu,
            sqrt_tau: ep.sqrt_tau,
            l_b: ep.l_b,
            weights: ep.weights,
            log_z: ep.log_z,
            sweeps: ep.sweeps,
        })
    }

    /// Latent predictive mean and variance.
    pub fn latent(&self, x: &[f64]) -> (f64, f64) {
        let u = self.norm.apply(x);
        let sf2 = 10f64.powf(self.log10_sf2);
        let ks = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|r| sf2 * correlation(&u, r, &self.theta)));
        let mean = ks.dot(&self.weights);
        let v = self
            .l_b
            .solve_lower_triangular(&self.sqrt_tau.component_mul(&ks))
            .unwrap_or_else(|| DVector::zeros(ks.len()));
        (mean, (sf2 - v.norm_squared()).max(0.0))
    }

    /// Probability of the `+1` class.
    pub fn predict_class(&self, x: &[f64]) -> f64 {
        let (m, v) = self.latent(x);
        norm_cdf(m / (1.0 + v).sqrt())
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_z
    }

    /// Site variances `1 / tau`.
    pub fn site_variances(&self) -> Vec<f64> {
        self.site_tau.iter().map(|t| 1.0 / t).collect()
    }

    pub fn site_means(&self) -> Vec<f64> {
        self.site_tau.iter().zip(self.site_nu.iter()).map(|(t, n)| n / t).collect()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn log10_signal_variance(&self) -> f64 {
        self.log10_sf2
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

/// EP classifier with hyperparameters maximizing the EP evidence.
pub fn fit_gpc_ep(x: &[Vec<f64>], c: &[f64], opts: &GpOptions) -> Result<GpClassifier> {
    let d = check_data(x, c, 2)?;
    check_labels(c)?;
    if !c.contains(&1.0) || !c.contains(&-1.0) {
        return Err(Error::Invalid("both classes must be present".into()));
    }
    let norm = Normalizer::new(x, opts.bounds.as_deref());
    let xs: Vec<Vec<f64>> = x.iter().map(|r| norm.apply(r)).collect();
    let mut bounds = vec![THETA_BOUNDS; d];
    bounds.push((-1.0, 2.0));
    let objective = |p: &[f64]| {
        let k = prior_cov(&xs, &p[..d], 10f64.powf(p[d]));
        run_ep(&k, c, 1.0, 100).map_or(f64::NEG_INFINITY, |s| s.log_z)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_c1a5);
    let ga = GaOptions { population: 16, generations: 12, elite: 2 };
    let mut seed = vec![-0.5; d];
    seed.push(0.5);
    let (best, _) = ga_maximize(objective, &bounds, &ga, &[seed.clone()], &mut rng);
    GpClassifier::with_hyperparameters(x, c, &best[..d], best[d], opts.bounds.as_deref())
        .or_else(|_| GpClassifier::with_hyperparameters(x, c, &seed[..d], seed[d], opts.bounds.as_deref()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_at_zero_is_one() {
        assert_eq!(matern52(0.0), 1.0);
        assert!(matern52(5.0) < 1e-3);
    }

    #[test]
    fn single_point_model() {
        let m = GpModel::with_hyperparameters(&[vec![0.3]], &[2.5], &[-0.5], None, Some(&[(0.0, 1.0)])).unwrap();
        let (mu, var) = m.predict(&[0.3]);
        assert!((mu - 2.5).abs() < 1e-12 && var.abs() < 1e-12);
        assert!((m.predict_mean(&[0.9]) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn record_roundtrip() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| (3.0 * r[0]).sin()).collect();
        let m = GpModel::with_hyperparameters(&x, &y, &[-0.4], None, None).unwrap();
        let back = GpModel::from_record(&m.to_record()).unwrap();
        assert_eq!(m.predict(&[0.33]), back.predict(&[0.33]));
        let mut r = m.to_record();
        r.version = 99;
        assert!(GpModel::from_record(&r).is_err());
    }
}
