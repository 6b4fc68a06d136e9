//! Small derivative-free and quasi-Newton optimizers over boxes.
//!
//! Everything here maximizes. Callers that minimize negate.

use rand::Rng;

pub type Bounds = [(f64, f64)];

fn clamp_box(x: &mut [f64], b: &Bounds) {
    for (xi, (lo, hi)) in x.iter_mut().zip(b) {
        *xi = xi.clamp(*lo, *hi);
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

/// Settings for [`ga_maximize`].
#[derive(Clone, Debug)]
pub struct GaOptions {
    pub population: usize,
    pub generations: usize,
    pub elite: usize,
}

impl Default for GaOptions {
    fn default() -> Self {
        Self { population: 40, generations: 60, elite: 2 }
    }
}

/// Real-coded genetic algorithm: binary tournaments, blend crossover,
/// Gaussian mutation, elitism. `seeds` are injected into the first population.
pub fn ga_maximize<F, R>(
    f: F,
    bounds: &Bounds,
    opts: &GaOptions,
    seeds: &[Vec<f64>],
    rng: &mut R,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let d = bounds.len();
    let np = opts.population.max(2);
    let mut pop: Vec<Vec<f64>> = seeds.iter().take(np).cloned().collect();
    for s in pop.iter_mut() {
        clamp_box(s, bounds);
    }
    while pop.len() < np {
        pop.push(bounds.iter().map(|(lo, hi)| rng.gen_range(*lo..=*hi)).collect());
    }
    let mut fit: Vec<f64> = pop.iter().map(|x| finite_or_neg_inf(f(x))).collect();
    for _ in 0..opts.generations {
        let mut order: Vec<usize> = (0..np).collect();
        order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
        let mut next: Vec<Vec<f64>> = order.iter().take(opts.elite.min(np)).map(|&i| pop[i].clone()).collect();
        let mut next_fit: Vec<f64> = order.iter().take(opts.elite.min(np)).map(|&i| fit[i]).collect();
        let pick = |rng: &mut R| {
            let a = rng.gen_range(0..np);
            let b = rng.gen_range(0..np);
            if fit[a] >= fit[b] {
                a
            } else {
                b
            }
        };
        while next.len() < np {
            let (pa, pb) = (pick(rng), pick(rng));
            let mut child = vec![0.0; d];
            for k in 0..d {
                let (lo, hi) = bounds[k];
                let (a, b) = (pop[pa][k], pop[pb][k]);
                let span = (a - b).abs();
                let c_lo = a.min(b) - 0.5 * span;
                let c_hi = a.max(b) + 0.5 * span;
                let mut v = if c_hi > c_lo { rng.gen_range(c_lo..=c_hi) } else { a };
                if rng.gen::<f64>() < 1.0 / d as f64 {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    v += 0.1 * (hi - lo) * z;
                }
                child[k] = v.clamp(lo, hi);
            }
            next_fit.push(finite_or_neg_inf(f(&child)));
            next.push(child);
        }
        pop = next;
        fit = next_fit;
    }
    let best = (0..np).max_by(|&a, &b| fit[a].total_cmp(&fit[b])).unwrap();
    (pop[best].clone(), fit[best])
}

/// Central-difference gradient with steps scaled to the box.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], bounds: &Bounds, rel_step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let (lo, hi) = bounds[k];
        let h = rel_step * (hi - lo).max(1e-12);
        let up = (x[k] + h).min(hi);
        let dn = (x[k] - h).max(lo);
        if up <= dn {
            continue;
        }
        xp[k] = up;
        let fu = f(&xp);
        xp[k] = dn;
        let fd = f(&xp);
        xp[k] = x[k];
        g[k] = (fu - fd) / (up - dn);
        if !g[k].is_finite() {
            g[k] = 0.0;
        }
    }
    g
}

/// Projected BFGS ascent with a finite-difference gradient and backtracking.
pub fn bfgs_maximize<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    bounds: &Bounds,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp_box(&mut x, bounds);
    let mut fx = finite_or_neg_inf(f(&x));
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut g = fd_gradient(&f, &x, bounds, 1e-6);
    let mut h = identity(n);
    let scale: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo).max(1e-12)).collect();
    for _ in 0..max_iter {
        // Ascent direction d = H g, with free-variable masking at active bounds.
        let mut d = mat_vec(&h, &g);
        for k in 0..n {
            let (lo, hi) = bounds[k];
            if (x[k] <= lo && d[k] < 0.0) || (x[k] >= hi && d[k] > 0.0) {
                d[k] = 0.0;
            }
        }
        if dot(&d, &g) <= 0.0 {
            h = identity(n);
            d = g.clone();
        }
        let dn = d.iter().zip(&scale).map(|(a, s)| (a / s).abs()).fold(0.0, f64::max);
        if dn == 0.0 {
            break;
        }
        // Cap the first trial step at a quarter of the box.
        let mut step = (0.25 / dn).min(1.0);
        let slope = dot(&d, &g);
        let mut accepted = None;
        for _ in 0..30 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + step * b).collect();
            clamp_box(&mut xn, bounds);
            let fnew = finite_or_neg_inf(f(&xn));
            if fnew > fx && fnew >= fx + 1e-4 * step * slope {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = fd_gradient(&f, &xn, bounds, 1e-6);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Ascent on f is descent on -f: y = -(gn - g).
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy = dot(&s, &y);
        let improvement = fnew - fx;
        x = xn;
        fx = fnew;
        g = gn;
        if sy > 1e-12 {
            let hy = mat_vec(&h, &y);
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if improvement.abs() <= tol * (1.0 + fx.abs()) {
            break;
        }
    }
    (x, fx)
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|r| dot(r, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn neg_rosen(x: &[f64]) -> f64 {
        -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let b = [(-2.0, 2.0), (-1.0, 3.0)];
        let (x, fx) = bfgs_maximize(neg_rosen, &[-1.2, 1.0], &b, 500, 1e-14);
        assert!(fx > -1e-6, "{fx}");
        assert!((x[0] - 1.0).abs() < 1e-2 && (x[1] - 1.0).abs() < 2e-2);
    }

    #[test]
    fn bfgs_respects_bounds() {
        let b = [(0.0, 0.5)];
        let (x, _) = bfgs_maximize(|x| -(x[0] - 2.0).powi(2), &[0.1], &b, 50, 1e-12);
        assert_eq!(x[0], 0.5);
    }

    #[test]
    fn ga_is_reproducible_and_close() {
        let b = [(-3.0, 3.0), (-3.0, 3.0)];
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - (x[1] + 0.5).powi(2);
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = ga_maximize(f, &b, &GaOptions::default(), &[], &mut r1);
        let c = ga_maximize(f, &b, &GaOptions::default(), &[], &mut r2);
        assert_eq!(a.0, c.0);
        assert!(a.1 > -1e-2);
    }

    #[test]
    fn golden_section_parabola() {
        let (x, _) = golden_section_min(|x| (x - 0.3).powi(2), 0.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-8);
    }
}
