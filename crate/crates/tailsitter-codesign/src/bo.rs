//! Bayesian optimization: acquisition functions, hypervolume, Pareto
//! archiving and a fail-safe EGO loop. All objectives are minimized.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gp::{fit_gpc_ep, fit_gpi, fit_gpr, GpClassifier, GpModel, GpOptions};
use crate::lowdisc::{scale_to_bounds, scrambled_sobol};
use crate::optim::{bfgs_maximize, ga_maximize, GaOptions};
use crate::stats::{norm_cdf, norm_pdf};
use crate::{Error, Result};

/// Closed-form expected improvement below `y_min`.
pub fn expected_improvement(mean: f64, variance: f64, y_min: f64) -> f64 {
    let s = variance.max(0.0).sqrt();
    let d = y_min - mean;
    if s <= 0.0 {
        return d.max(0.0);
    }
    let z = d / s;
    (d * norm_cdf(z) + s * norm_pdf(z)).max(0.0)
}

/// `true` when `a` weakly dominates `b` and differs from it.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Indices of the nondominated points (duplicates keep their first copy).
pub fn nondominated(points: &[Vec<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        let beaten = (0..points.len()).any(|j| {
            dominates(&points[j], &points[i]) || (j < i && points[j] == points[i])
        });
        if !beaten {
            out.push(i);
        }
    }
    out
}

fn check_reference(front: &[Vec<f64>], r: &[f64]) -> Result<()> {
    for p in front {
        if p.len() != r.len() {
            return Err(Error::Invalid("objective dimension mismatch".into()));
        }
        if p.iter().zip(r).any(|(a, b)| a > b || !a.is_finite()) {
            return Err(Error::Invalid(format!("point {p:?} lies beyond reference {r:?}")));
        }
    }
    Ok(())
}

fn hv2(front: &[Vec<f64>], r: &[f64]) -> f64 {
    let mut pts: Vec<&Vec<f64>> = front.iter().collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut vol = 0.0;
    let mut y_cap = r[1];
    for p in pts {
        if p[1] < y_cap {
            vol += (r[0] - p[0]) * (y_cap - p[1]);
            y_cap = p[1];
        }
    }
    vol
}

/// Dominated hypervolume of `front` with respect to `r`.
///
/// Two objectives use a staircase sweep; three sweep slabs along the last
/// axis and reuse the 2-D sweep per slab.
pub fn hypervolume(front: &[Vec<f64>], r: &[f64]) -> Result<f64> {
    check_reference(front, r)?;
    match r.len() {
        1 => Ok(front.iter().map(|p| r[0] - p[0]).fold(0.0, f64::max)),
        2 => Ok(hv2(front, r)),
        3 => {
            let mut zs: Vec<f64> = front.iter().map(|p| p[2]).collect();
            zs.sort_by(f64::total_cmp);
            zs.dedup();
            let mut vol = 0.0;
            for (k, z) in zs.iter().enumerate() {
                let z_next = zs.get(k + 1).copied().unwrap_or(r[2]);
                let slab: Vec<Vec<f64>> =
                    front.iter().filter(|p| p[2] <= *z).map(|p| vec![p[0], p[1]]).collect();
                vol += hv2(&slab, &r[..2]) * (z_next - z);
            }
            Ok(vol)
        }
        m => Err(Error::Unsupported(format!("hypervolume in {m} objectives"))),
    }
}

/// Hypervolume by inclusion-exclusion over all subsets. Exponential; meant
/// as a cross-check for small fronts.
pub fn hypervolume_inclusion_exclusion(front: &[Vec<f64>], r: &[f64]) -> Result<f64> {
    check_reference(front, r)?;
    let n = front.len();
    if n > 20 {
        return Err(Error::Unsupported("inclusion-exclusion beyond 20 points".into()));
    }
    let mut vol = 0.0;
    for mask in 1u32..(1u32 << n) {
        let mut corner = vec![f64::NEG_INFINITY; r.len()];
        for (i, p) in front.iter().enumerate() {
            if mask & (1 << i) != 0 {
                for k in 0..r.len() {
                    corner[k] = corner[k].max(p[k]);
                }
            }
        }
        let box_vol: f64 = corner.iter().zip(r).map(|(c, rr)| rr - c).product();
        vol += if mask.count_ones() % 2 == 1 { box_vol } else { -box_vol };
    }
    Ok(vol)
}

/// `int_{-inf}^{c} Phi((z - mu) / s) dz`.
fn upper_partial(c: f64, mu: f64, s: f64) -> f64 {
    if c == f64::INFINITY {
        return f64::INFINITY;
    }
    if s <= 0.0 {
        return (c - mu).max(0.0);
    }
    let t = (c - mu) / s;
    s * (t * norm_cdf(t) + norm_pdf(t))
}

fn interval_integral(a: f64, b: f64, mu: f64, s: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let lo = if a == f64::NEG_INFINITY { 0.0 } else { upper_partial(a, mu, s) };
    (upper_partial(b, mu, s) - lo).max(0.0)
}

/// Two-objective expected hypervolume improvement for independent normal
/// predictions, by decomposing the nondominated region into rectangles.
pub fn hvei(mean: [f64; 2], variance: [f64; 2], front: &[Vec<f64>], r: [f64; 2]) -> f64 {
    let s = [variance[0].max(0.0).sqrt(), variance[1].max(0.0).sqrt()];
    let mut pts: Vec<[f64; 2]> = nondominated(front)
        .into_iter()
        .map(|i| [front[i][0], front[i][1]])
        .filter(|p| p[0] < r[0] && p[1] < r[1])
        .collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut total = 0.0;
    let mut a = f64::NEG_INFINITY;
    let mut cap = r[1];
    for p in pts.iter().chain(std::iter::once(&[r[0], f64::NEG_INFINITY])) {
        let b = p[0].min(r[0]);
        let w = interval_integral(a, b, mean[0], s[0]);
        if w > 0.0 {
            total += w * upper_partial(cap, mean[1], s[1]);
        }
        a = b;
        cap = cap.min(p[1]);
    }
    total.max(0.0)
}

/// Product of a base acquisition with the feasibility probability.
pub fn safe_acquisition(value: f64, probability: f64) -> f64 {
    value * probability
}

#[derive(Clone, Debug)]
pub struct AcqOptions {
    pub ga: GaOptions,
    pub polish_iter: usize,
}

impl Default for AcqOptions {
    fn default() -> Self {
        Self { ga: GaOptions { population: 50, generations: 80, elite: 2 }, polish_iter: 40 }
    }
}

/// GA search followed by a local quasi-Newton polish from the GA winner.
pub fn optimize_acquisition<F: Fn(&[f64]) -> f64>(
    f: F,
    bounds: &[(f64, f64)],
    opts: &AcqOptions,
    seeds: &[Vec<f64>],
    seed: u64,
) -> (Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, f0) = ga_maximize(&f, bounds, &opts.ga, seeds, &mut rng);
    if !f0.is_finite() {
        return (x0, f0);
    }
    let (x1, f1) = bfgs_maximize(&f, &x0, bounds, opts.polish_iter, 1e-12);
    if f1 > f0 {
        (x1, f1)
    } else {
        (x0, f0)
    }
}

// ---------------------------------------------------------------------------
// EGO loop

/// Outcome of one expensive evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum Evaluation {
    Ok(Vec<f64>),
    Failed(String),
}

/// One line of the iteration ledger. Iteration 0 is the DoE.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LedgerEntry {
    pub index: usize,
    pub iteration: usize,
    pub x: Vec<f64>,
    pub objectives: Option<Vec<f64>>,
    pub feasible: bool,
    pub failure: Option<String>,
    pub acquisition: Option<f64>,
    pub probability: Option<f64>,
    pub hypervolume: f64,
}

#[derive(Clone, Debug)]
pub struct EgoConfig {
    pub n_doe: usize,
    pub max_iter: usize,
    /// Relative improvement threshold; 0 disables early stopping.
    pub k_ei: f64,
    pub seed: u64,
    /// Use regression GPs and model-mean incumbents.
    pub noisy: bool,
    /// Designs evaluated ahead of the Sobol points (e.g. a baseline).
    pub extra_doe: Vec<Vec<f64>>,
    /// Selections require a feasibility probability above this.
    pub p_safe: f64,
    pub gp: GpOptions,
    pub acq: AcqOptions,
}

impl EgoConfig {
    pub fn new(d: usize, seed: u64) -> Self {
        Self {
            n_doe: (11 * d).saturating_sub(5).max(d + 2),
            max_iter: 200,
            k_ei: 1e-3,
            seed,
            noisy: false,
            extra_doe: Vec::new(),
            p_safe: 0.05,
            gp: GpOptions::default(),
            acq: AcqOptions::default(),
        }
    }
}

/// Evaluated set, reference point and ledger.
#[derive(Clone, Debug, Default)]
pub struct Archive {
    pub n_obj: usize,
    pub entries: Vec<LedgerEntry>,
    /// Reference point, fixed once the DoE is evaluated.
    pub reference: Option<Vec<f64>>,
}

impl Archive {
    pub fn feasible(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.iter().filter(|e| e.feasible)
    }

    /// Nondominated feasible entries.
    pub fn front(&self) -> Vec<&LedgerEntry> {
        let feas: Vec<&LedgerEntry> = self.feasible().collect();
        let pts: Vec<Vec<f64>> = feas.iter().map(|e| e.objectives.clone().unwrap()).collect();
        nondominated(&pts).into_iter().map(|i| feas[i]).collect()
    }

    /// Hypervolume of the observed feasible objectives against the fixed reference.
    pub fn hypervolume(&self) -> f64 {
        let Some(r) = &self.reference else { return 0.0 };
        let pts: Vec<Vec<f64>> = self
            .feasible()
            .filter_map(|e| e.objectives.clone())
            .filter(|o| o.iter().zip(r).all(|(a, b)| a <= b))
            .collect();
        hypervolume(&pts, r).unwrap_or(0.0)
    }

    /// Best feasible entry for a single objective.
    pub fn best(&self) -> Option<&LedgerEntry> {
        self.feasible().min_by(|a, b| a.objectives.as_ref().unwrap()[0].total_cmp(&b.objectives.as_ref().unwrap()[0]))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.entries {
            writeln!(f, "{}", serde_json::to_string(e).map_err(|e| Error::Io(e.to_string()))?)?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<LedgerEntry>> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut out = Vec::new();
        for line in f.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Io(e.to_string()))?);
        }
        Ok(out)
    }
}

fn reference_point(objs: &[Vec<f64>], n_obj: usize) -> Vec<f64> {
    (0..n_obj)
        .map(|k| {
            let lo = objs.iter().map(|o| o[k]).fold(f64::INFINITY, f64::min);
            let hi = objs.iter().map(|o| o[k]).fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            hi + if span > 0.0 { 0.05 * span } else { 0.05 * hi.abs().max(1e-9) }
        })
        .collect()
}

struct Surrogates {
    models: Vec<GpModel>,
    classifier: Option<GpClassifier>,
}

fn fit_surrogates(archive: &Archive, bounds: &[(f64, f64)], cfg: &EgoConfig, iter: usize) -> Result<Surrogates> {
    let feas: Vec<&LedgerEntry> = archive.feasible().collect();
    let x: Vec<Vec<f64>> = feas.iter().map(|e| e.x.clone()).collect();
    let mut gp = cfg.gp.clone();
    gp.bounds = Some(bounds.to_vec());
    let models = (0..archive.n_obj)
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = feas.iter().map(|e| e.objectives.as_ref().unwrap()[k]).collect();
            let opts = GpOptions { seed: cfg.seed ^ ((iter as u64) << 8) ^ k as u64, ..gp.clone() };
            if cfg.noisy && x.len() >= 3 {
                fit_gpr(&x, &y, &opts)
            } else {
                fit_gpi(&x, &y, &opts)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let any_failed = archive.entries.iter().any(|e| !e.feasible);
    let classifier = if any_failed {
        let xs: Vec<Vec<f64>> = archive.entries.iter().map(|e| e.x.clone()).collect();
        let c: Vec<f64> = archive.entries.iter().map(|e| if e.feasible { 1.0 } else { -1.0 }).collect();
        Some(fit_gpc_ep(&xs, &c, &GpOptions { seed: cfg.seed ^ 0xc1a5 ^ iter as u64, ..gp })?)
    } else {
        None
    };
    Ok(Surrogates { models, classifier })
}

/// Runs DoE plus acquisition-driven iterations.
///
/// `evaluate(x, index)` receives a unique evaluation index for seeding.
/// `resume` entries with matching indices are reused instead of re-evaluated.
/// `on_entry` sees every ledger line as it is appended.
pub fn ego_loop<F, C>(
    evaluate: F,
    bounds: &[(f64, f64)],
    n_obj: usize,
    cfg: &EgoConfig,
    resume: &[LedgerEntry],
    mut on_entry: C,
) -> Result<Archive>
where
    F: Fn(&[f64], usize) -> Evaluation + Sync,
    C: FnMut(&LedgerEntry),
{
    if !(1..=2).contains(&n_obj) {
        return Err(Error::Unsupported(format!("{n_obj} objectives")));
    }
    let d = bounds.len();
    let mut doe = cfg.extra_doe.clone();
    let unit = scrambled_sobol(cfg.n_doe.saturating_sub(doe.len()), d, cfg.seed);
    doe.extend(scale_to_bounds(&unit, bounds));

    let lookup = |i: usize| resume.iter().find(|e| e.index == i).cloned();
    let results: Vec<(Vec<f64>, Evaluation)> = doe
        .par_iter()
        .enumerate()
        .map(|(i, x)| match lookup(i) {
            Some(e) => (e.x.clone(), entry_to_eval(&e)),
            None => (x.clone(), evaluate(x, i)),
        })
        .collect();

    let mut archive = Archive { n_obj, entries: Vec::new(), reference: None };
    let mut doe_entries = Vec::new();
    for (i, (x, ev)) in results.into_iter().enumerate() {
        doe_entries.push(make_entry(i, 0, x, ev, None, None, n_obj)?);
    }
    let feasible_objs: Vec<Vec<f64>> = doe_entries.iter().filter_map(|e| e.objectives.clone()).collect();
    if feasible_objs.is_empty() {
        for e in &doe_entries {
            on_entry(e);
        }
        archive.entries = doe_entries;
        return Err(Error::Infeasible("every design of experiments sample failed".into()));
    }
    if n_obj == 2 {
        archive.reference = Some(reference_point(&feasible_objs, n_obj));
    } else {
        archive.reference = Some(vec![feasible_objs.iter().map(|o| o[0]).fold(f64::NEG_INFINITY, f64::max)]);
    }
    for mut e in doe_entries {
        archive.entries.push(e.clone());
        e.hypervolume = archive.hypervolume();
        *archive.entries.last_mut().unwrap() = e.clone();
        on_entry(&e);
    }

    let mut scale: Option<f64> = None;
    for iter in 1..=cfg.max_iter {
        let index = archive.entries.len();
        if let Some(prev) = lookup(index) {
            let mut e = prev;
            archive.entries.push(e.clone());
            e.hypervolume = archive.hypervolume();
            *archive.entries.last_mut().unwrap() = e.clone();
            if scale.is_none() {
                scale = e.acquisition.filter(|a| *a > 0.0);
            }
            on_entry(&e);
            continue;
        }
        if archive.feasible().count() < 2 {
            // A single success cannot be modelled; keep it as the answer.
            break;
        }
        let sur = fit_surrogates(&archive, bounds, cfg, iter)?;
        let incumbent = incumbents(&archive, &sur, cfg);
        let prob = |x: &[f64]| sur.classifier.as_ref().map_or(1.0, |c| c.predict_class(x));
        let base = |x: &[f64]| -> f64 {
            if n_obj == 1 {
                let (m, v) = sur.models[0].predict(x);
                expected_improvement(m, v, incumbent.0[0][0])
            } else {
                let (m0, v0) = sur.models[0].predict(x);
                let (m1, v1) = sur.models[1].predict(x);
                let r = archive.reference.as_ref().unwrap();
                hvei([m0, m1], [v0, v1], &incumbent.0, [r[0], r[1]])
            }
        };
        let gated = |x: &[f64]| {
            let p = prob(x);
            if p <= cfg.p_safe {
                0.0
            } else {
                safe_acquisition(base(x), p)
            }
        };
        let seeds: Vec<Vec<f64>> = incumbent.1.clone();
        let acq_seed = cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(iter as u64);
        let (mut x, mut value) = optimize_acquisition(gated, bounds, &cfg.acq, &seeds, acq_seed);
        let duplicate = archive.entries.iter().any(|e| e.x.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
        if !(value > 0.0) || duplicate {
            // Nothing to gain anywhere: explore where the model is least certain.
            let explore = |x: &[f64]| {
                let p = prob(x);
                if p <= cfg.p_safe {
                    -1.0
                } else {
                    sur.models[0].predict(x).1 * p
                }
            };
            let (xe, _) = optimize_acquisition(explore, bounds, &cfg.acq, &[], acq_seed ^ 0xe);
            x = xe;
            value = gated(&x).max(0.0);
        }
        let p_sel = sur.classifier.as_ref().map(|c| c.predict_class(&x));
        let ev = evaluate(&x, index);
        let mut e = make_entry(index, iter, x, ev, Some(value), p_sel, n_obj)?;
        archive.entries.push(e.clone());
        e.hypervolume = archive.hypervolume();
        *archive.entries.last_mut().unwrap() = e.clone();
        on_entry(&e);
        if cfg.k_ei > 0.0 {
            match scale {
                None if value > 0.0 => scale = Some(value),
                Some(s) if value < cfg.k_ei * s => break,
                _ => {}
            }
        }
    }
    Ok(archive)
}

/// Current incumbent front (or best value) and its design vectors.
fn incumbents(archive: &Archive, sur: &Surrogates, cfg: &EgoConfig) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let feas: Vec<&LedgerEntry> = archive.feasible().collect();
    let vals: Vec<Vec<f64>> = feas
        .iter()
        .map(|e| {
            if cfg.noisy {
                sur.models.iter().map(|m| m.predict_mean(&e.x)).collect()
            } else {
                e.objectives.clone().unwrap()
            }
        })
        .collect();
    if archive.n_obj == 1 {
        let i = (0..vals.len()).min_by(|&a, &b| vals[a][0].total_cmp(&vals[b][0])).unwrap();
        (vec![vals[i].clone()], vec![feas[i].x.clone()])
    } else {
        let idx = nondominated(&vals);
        (idx.iter().map(|&i| vals[i].clone()).collect(), idx.iter().map(|&i| feas[i].x.clone()).collect())
    }
}

fn entry_to_eval(e: &LedgerEntry) -> Evaluation {
    match (&e.objectives, e.feasible) {
        (Some(o), true) => Evaluation::Ok(o.clone()),
        _ => Evaluation::Failed(e.failure.clone().unwrap_or_else(|| "failed".into())),
    }
}

fn make_entry(
    index: usize,
    iteration: usize,
    x: Vec<f64>,
    ev: Evaluation,
    acquisition: Option<f64>,
    probability: Option<f64>,
    n_obj: usize,
) -> Result<LedgerEntry> {
    let (objectives, feasible, failure) = match ev {
        Evaluation::Ok(o) if o.len() == n_obj && o.iter().all(|v| v.is_finite()) => (Some(o), true, None),
        Evaluation::Ok(o) => (None, false, Some(format!("invalid objective vector {o:?}"))),
        Evaluation::Failed(tag) => (None, false, Some(tag)),
    };
    Ok(LedgerEntry { index, iteration, x, objectives, feasible, failure, acquisition, probability, hypervolume: 0.0 })
}
