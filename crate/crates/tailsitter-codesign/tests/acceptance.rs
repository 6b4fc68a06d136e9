//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.
//!
//! Criteria 9 and 10 run the desk-scale searches and take several minutes.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use tailsitter_codesign::aero::SyntheticProvider;
use tailsitter_codesign::bo::{expected_improvement, hvei, hypervolume};
use tailsitter_codesign::bspline::{basis_row, clamped_knots, fit_least_squares, BSplineTraj};
use tailsitter_codesign::codesign::{
    plan_missions, prepare_design, propagate_uncertainty, run_episode, run_search, stream_seed, CodesignConfig, Mode, PlantSpec, Stage,
};
use tailsitter_codesign::control::{reference_series, simulate_closed_loop, Gains, LofiPlant, PLANT_DT};
use tailsitter_codesign::flatness::{dynamics_residual, evaluate_spline, evaluate_uniform, level_cruise_pitch, FlatPoint};
use tailsitter_codesign::geometry::{derive_geometry, derive_params, ActuatorLimits, DerivedParams, DesignVector};
use tailsitter_codesign::gp::{fit_gpi, fit_gpr, matern52, GpClassifier, GpModel, GpOptions};
use tailsitter_codesign::lowdisc::scrambled_sobol;
use tailsitter_codesign::stats::norm_cdf;
use tailsitter_codesign::trajopt::{solve_boundary_conditions, solve_ocp, Mission, MissionKind, OcpOptions};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn params() -> DerivedParams {
    let g = derive_geometry(&DesignVector::baseline()).unwrap();
    let sp = SyntheticProvider::new(&g);
    derive_params(g, &sp, ActuatorLimits::default(), Default::default()).unwrap()
}

// 1 ------------------------------------------------------------------------

fn geometry_anchors() -> Check {
    let g = derive_geometry(&DesignVector::baseline()).map_err(|e| e.to_string())?;
    for (name, got, want) in [("S", g.s, 0.315), ("b", g.b, 1.0), ("c", g.c, 0.315), ("l^T_y", g.l_t[1], 0.35), ("l^delta_x", g.l_d[0], -0.275)] {
        ensure((got - want).abs() <= 1e-4, || format!("{name} = {got}, expected {want}"))?;
    }
    ensure((g.mass - 2.3764).abs() / 2.3764 <= 5e-3, || format!("baseline mass {}", g.mass))?;
    let lo = derive_geometry(&DesignVector::lower()).map_err(|e| e.to_string())?;
    ensure((lo.mass - 1.3893).abs() / 1.3893 <= 5e-3, || format!("lower-bound mass {}", lo.mass))
}

// 2 ------------------------------------------------------------------------

fn cruise_pitch() -> Check {
    let th = level_cruise_pitch(27.5, &params());
    ensure((th + 0.05).abs() <= 0.005, || format!("cruise pitch {th} rad"))
}

// 3 ------------------------------------------------------------------------

fn flat_consistency() -> Check {
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let t_end = 3.0;
    let n = 9;
    let knots = clamped_knots(5, n, t_end);
    let greville: Vec<f64> = (0..n).map(|i| knots[i + 1..i + 6].iter().sum::<f64>() / 5.0).collect();
    let mut worst = 0.0f64;
    for case in 0..100 {
        let speed = rng.gen_range(8.0..25.0);
        let amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5));
        let freq: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..2.0));
        let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
        let yaw_rate = rng.gen_range(-0.3..0.3);
        let wave = |k: usize, t: f64| amp[k] * (freq[k] * t + phase[k]).sin();
        let xs = greville.iter().map(|&t| speed * t + 0.3 * wave(0, t)).collect();
        let ys = greville.iter().map(|&t| wave(1, t)).collect();
        let zs = greville.iter().map(|&t| 100.0 + wave(2, t)).collect();
        let ps = greville.iter().map(|&t| yaw_rate * t).collect();
        let s = BSplineTraj::new(5, knots.clone(), vec![xs, ys, zs, ps]).map_err(|e| e.to_string())?;
        let series = evaluate_spline(&s, 3001, &p, false).map_err(|e| format!("case {case}: {e}"))?;
        let slow = series.flat.iter().map(|fp| fp.p[1].iter().map(|v| v * v).sum::<f64>().sqrt()).fold(f64::INFINITY, f64::min);
        ensure(slow > 2.0, || format!("case {case}: speed drops to {slow}"))?;
        let r = dynamics_residual(&series, &p).map_err(|e| format!("case {case}: {e}"))?;
        worst = worst.max(r);
    }
    ensure(worst < 1e-4, || format!("worst relative RMS residual {worst:e}"))
}

// 4 ------------------------------------------------------------------------

/// Exact classifier posterior predictive by tensor Gauss-Hermite quadrature.
fn quadrature_probability(x: &[f64], c: &[f64], ell: f64, sf2: f64, xs: f64) -> f64 {
    let n = x.len();
    let k = nalgebra::DMatrix::from_fn(n, n, |i, j| sf2 * matern52((x[i] - x[j]).abs() / ell));
    let ks = nalgebra::DVector::from_iterator(n, x.iter().map(|xi| sf2 * matern52((xi - xs).abs() / ell)));
    let chol = nalgebra::Cholesky::new(k + nalgebra::DMatrix::identity(n, n) * 1e-12).unwrap();
    let l = chol.l();
    let w_mean = chol.solve(&ks);
    let s2 = (sf2 - ks.dot(&w_mean)).max(0.0);
    let m = 40;
    let mut jac = nalgebra::DMatrix::<f64>::zeros(m, m);
    for i in 1..m {
        let b = (i as f64 / 2.0).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = jac.symmetric_eigen();
    let nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let weights: Vec<f64> = (0..m).map(|k| std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, k)].powi(2)).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for idx in 0..m.pow(n as u32) {
        let mut rem = idx;
        let mut u = nalgebra::DVector::zeros(n);
        let mut w = 1.0;
        for d in 0..n {
            let k = rem % m;
            rem /= m;
            u[d] = nodes[k] * std::f64::consts::SQRT_2;
            w *= weights[k];
        }
        let f = &l * u;
        let lik: f64 = (0..n).map(|i| norm_cdf(c[i] * f[i])).product();
        den += w * lik;
        num += w * lik * norm_cdf(w_mean.dot(&f) / (1.0 + s2).sqrt());
    }
    num / den
}

fn gp_suite() -> Check {
    // Two-point posterior against the hand-inverted 2x2 system.
    let x = vec![vec![0.2], vec![0.7]];
    let y = [1.0, 3.0];
    let m = GpModel::with_hyperparameters(&x, &y, &[0.3f64.log10()], None, Some(&[(0.0, 1.0)])).map_err(|e| e.to_string())?;
    let j = m.jitter();
    let rho = matern52(0.5 / 0.3);
    let a = 1.0 + j;
    let det = a * a - rho * rho;
    let inv = [[a / det, -rho / det], [-rho / det, a / det]];
    let quad = |u: [f64; 2], v: [f64; 2]| u[0] * (inv[0][0] * v[0] + inv[0][1] * v[1]) + u[1] * (inv[1][0] * v[0] + inv[1][1] * v[1]);
    let one_inv_one = quad([1.0, 1.0], [1.0, 1.0]);
    let r = [-1.0, 1.0];
    let sigma2 = quad(r, r) / 2.0;
    for &t in &[0.0, 0.2, 0.45, 0.9, 1.3] {
        let at = |c: f64| matern52((t - c).abs() / 0.3) + if t == c { j } else { 0.0 };
        let psi = [at(0.2), at(0.7)];
        let mu = 2.0 + quad(psi, r);
        let g = quad([1.0, 1.0], psi) - 1.0;
        let var = (sigma2 * (a - quad(psi, psi) + g * g / one_inv_one)).max(0.0);
        let (pm, pv) = m.predict(&[t]);
        ensure((pm - mu).abs() <= 1e-10 && (pv - var).abs() <= 1e-10, || format!("two-point posterior at {t}: ({pm}, {pv}) vs ({mu}, {var})"))?;
    }

    // Interpolation.
    let pts = scrambled_sobol(24, 2, 11);
    let f = |x: &[f64]| (3.0 * x[0]).sin() + (x[1] - 0.5).powi(2) * 2.0 + 0.3 * x[0] * x[1];
    let yv: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let m = fit_gpi(&pts, &yv, &GpOptions::default()).map_err(|e| e.to_string())?;
    for (p, v) in pts.iter().zip(&yv) {
        let res = (m.predict_mean(p) - v).abs();
        ensure(res <= 1e-8, || format!("interpolation residual {res:e}"))?;
    }

    // Nugget recovery.
    let s = 0.1;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, s).unwrap();
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 + rng.gen::<f64>()) / 60.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (6.0 * p[0]).sin() + noise.sample(&mut rng)).collect();
        let m = fit_gpr(&x, &y, &GpOptions { seed, ..GpOptions::default() }).map_err(|e| e.to_string())?;
        let nv = m.noise_variance();
        ensure(nv >= s * s / 4.0 && nv <= 4.0 * s * s, || format!("seed {seed}: noise variance {nv}"))?;
    }

    // Expectation propagation against quadrature.
    let ell: f64 = 0.4;
    let sf2: f64 = 4.0;
    let cases: [(&[f64], &[f64]); 4] = [(&[0.3, 0.7], &[1.0, -1.0]), (&[0.2, 0.5, 0.9], &[1.0, 1.0, -1.0]), (&[0.1, 0.45, 0.6], &[-1.0, 1.0, -1.0]), (&[0.5], &[1.0])];
    for (x, c) in cases {
        let xr: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let clf = GpClassifier::with_hyperparameters(&xr, c, &[ell.log10()], sf2.log10(), Some(&[(0.0, 1.0)])).map_err(|e| e.to_string())?;
        for &t in &[0.0, 0.25, 0.5, 0.8, 1.0] {
            let (pe, pq) = (clf.predict_class(&[t]), quadrature_probability(x, c, ell, sf2, t));
            ensure((pe - pq).abs() < 0.05, || format!("EP {pe} vs quadrature {pq} at {t} for {x:?}"))?;
        }
    }
    Ok(())
}

// 5 ------------------------------------------------------------------------

fn acquisition_oracles() -> Check {
    let ei = expected_improvement(0.0, 1.0, 0.0);
    ensure((ei - 0.398942).abs() <= 1e-6, || format!("EI at the incumbent {ei}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 1_000_000;
    for _ in 0..3 {
        let mu: f64 = rng.gen_range(-1.0..1.0);
        let var: f64 = rng.gen_range(0.05..2.0);
        let y_min: f64 = rng.gen_range(-1.0..1.0);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let imp = (y_min - (mu + var.sqrt() * z)).max(0.0);
            s += imp;
            s2 += imp * imp;
        }
        let m = s / n as f64;
        let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        let ei = expected_improvement(mu, var, y_min);
        ensure((ei - m).abs() <= 3.0 * se, || format!("EI {ei} vs Monte Carlo {m} (se {se})"))?;
    }

    let front = vec![vec![0.2, 0.9], vec![0.4, 0.5], vec![0.8, 0.2]];
    let r = [1.0, 1.0];
    let base = hypervolume(&front, &r).map_err(|e| e.to_string())?;
    for (mean, var) in [([0.5, 0.6], [0.04, 0.09]), ([0.3, 0.4], [0.01, 0.02])] {
        let exact = hvei(mean, var, &front, r);
        let mut acc = 0.0;
        for _ in 0..n {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            let y = vec![mean[0] + var[0].sqrt() * z0, mean[1] + var[1].sqrt() * z1];
            if y[0] < r[0] && y[1] < r[1] {
                let mut f = front.clone();
                f.push(y);
                acc += hypervolume(&f, &r).unwrap() - base;
            }
        }
        let mc = acc / n as f64;
        ensure((exact - mc).abs() <= 0.01 * exact, || format!("HVEI {exact} vs Monte Carlo {mc}"))?;
    }

    let hv = hypervolume(&[vec![1.0, 2.0], vec![2.0, 1.0]], &[3.0, 3.0]).map_err(|e| e.to_string())?;
    ensure(hv == 3.0, || format!("hypervolume {hv}"))
}

// 6 ------------------------------------------------------------------------

fn bspline_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let degree = rng.gen_range(1..6);
        let n = degree + 1 + rng.gen_range(0..10);
        let t_end = rng.gen_range(0.5..10.0);
        let knots = clamped_knots(degree, n, t_end);
        let sum: f64 = basis_row(&knots, degree, rng.gen_range(0.0..=t_end), 0).iter().sum();
        ensure((sum - 1.0).abs() <= 1e-12, || format!("basis sum {sum}"))?;
    }
    for _ in 0..200 {
        let degree = rng.gen_range(3..6);
        let coeffs: Vec<f64> = (0..13).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let s = BSplineTraj::new(degree, clamped_knots(degree, 13, 4.0), vec![coeffs.clone()]).map_err(|e| e.to_string())?;
        let t = rng.gen_range(0.2..3.8);
        let h = 1e-5;
        let fd = (s.eval(t + h, 0)[0][0] - s.eval(t - h, 0)[0][0]) / (2.0 * h);
        let an = s.eval(t, 1)[1][0];
        let scale = coeffs.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        ensure((fd - an).abs() <= 1e-5 * scale, || format!("derivative {an} vs finite difference {fd}"))?;
    }
    for _ in 0..50 {
        let a: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
        let degree = rng.gen_range(3..6);
        let knots = clamped_knots(degree, 11, 3.0);
        let poly = |t: f64| a[0] + a[1] * t + a[2] * t * t + a[3] * t * t * t;
        let times: Vec<f64> = (0..40).map(|i| 3.0 * i as f64 / 39.0).collect();
        let vals: Vec<f64> = times.iter().map(|&t| poly(t)).collect();
        let c = fit_least_squares(&knots, degree, &times, &vals).map_err(|e| e.to_string())?;
        let s = BSplineTraj::new(degree, knots, vec![c]).map_err(|e| e.to_string())?;
        for i in 0..=50 {
            let t = 3.0 * i as f64 / 50.0;
            let res = (s.eval(t, 0)[0][0] - poly(t)).abs();
            ensure(res <= 1e-8, || format!("cubic reproduction residual {res:e}"))?;
        }
    }
    Ok(())
}

// 7 ------------------------------------------------------------------------

fn trajectory_optimization() -> Check {
    let p = params();
    let cfg = CodesignConfig::desk();
    let plans = plan_missions(&p, &cfg).map_err(|f| f.to_string())?;
    ensure(plans.len() == 4, || format!("{} missions planned", plans.len()))?;
    let lim = p.limits;
    for plan in &plans {
        let sol = &plan.solution;
        let series = sol.series(&p, 2001).map_err(|e| e.to_string())?;
        for a in &series.alloc {
            let u = a.raw;
            let ok = (0..2).all(|k| u[k] >= lim.t_min - 1e-9 && u[k] <= lim.t_max + 1e-9) && (2..4).all(|k| u[k].abs() <= lim.delta_max + 1e-9);
            ensure(ok, || format!("{}: input {u:?} outside the actuator limits", plan.kind))?;
        }
        ensure(sol.cost.objective <= sol.initial_cost.objective, || format!("{}: objective {} above the initial guess {}", plan.kind, sol.cost.objective, sol.initial_cost.objective))?;
        if plan.kind == MissionKind::Cruise {
            ensure((2.5..=5.5).contains(&sol.bc.t_end), || format!("cruise lasts {} s", sol.bc.t_end))?;
        }
    }
    Ok(())
}

// 8 ------------------------------------------------------------------------

fn closed_loop() -> Check {
    let p = params();
    let hover = FlatPoint { p: [[0.0, 0.0, 10.0], [0.0; 3], [0.0; 3], [0.0; 3], [0.0; 3]], psi: [0.0; 3] };
    let r = evaluate_uniform(|_| hover, 6.0, (6.0 / PLANT_DT).round() as usize + 1, &p, true).map_err(|e| e.to_string())?;
    let mut x0 = r.states[0];
    x0[2] += 0.1;
    let log = simulate_closed_loop(&LofiPlant { params: &p }, &p, &r, &Gains::hand(), &x0, 5.0, &Default::default()).map_err(|e| e.to_string())?;
    let f = log.final_state;
    let err = ((f[0] - r.states[5000][0]).powi(2) + (f[1] - r.states[5000][1]).powi(2) + (f[2] - r.states[5000][2]).powi(2)).sqrt();
    ensure(log.diverged.is_none() && err < 0.01, || format!("hover error after 5 s: {err} m"))?;

    let bc = solve_boundary_conditions(&Mission::new(MissionKind::Takeoff), &p, &Default::default()).map_err(|e| e.to_string())?;
    let sol = solve_ocp(&bc, &p, &OcpOptions { max_iter: 40, ..Default::default() }).map_err(|e| e.to_string())?;
    let rs = reference_series(&sol.spline, &p).map_err(|e| e.to_string())?;
    let log = simulate_closed_loop(&LofiPlant { params: &p }, &p, &rs, &Gains::zero(), &rs.states[0], 1.0, &Default::default()).map_err(|e| e.to_string())?;
    ensure(log.max_position_error() < 1e-3, || format!("open-loop replay error {}", log.max_position_error()))?;

    // Emulator episodes under different worker counts.
    let mut cfg = CodesignConfig::desk();
    cfg.missions = vec![MissionKind::Cruise, MissionKind::Takeoff];
    cfg.seed = 77;
    let model = prepare_design(&cfg.baseline, &cfg, Some(stream_seed(cfg.seed, "surrogate", &[0]))).map_err(|f| f.to_string())?;
    let plans = plan_missions(&model.params, &cfg).map_err(|f| f.to_string())?;
    let run = |workers: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        pool.install(|| {
            let plant = PlantSpec::Emulator { coeffs: model.emulator_coeffs(), emulator: cfg.emulator };
            let up = propagate_uncertainty(plant, &model.params, &plans, &Gains::hand(), 3, &cfg, 0).map_err(|f| f.to_string());
            let logs = (0..3u64)
                .into_par_iter()
                .map(|s| run_episode(plant, &model.params, &plans[0], &Gains::hand(), stream_seed(cfg.seed, "episode", &[s]), &cfg.controller).map_err(|e| e.to_string()))
                .collect::<Result<Vec<_>, _>>();
            (up, logs)
        })
    };
    let (up1, logs1) = run(1);
    let (up4, logs4) = run(4);
    let (up1, up4) = (up1?, up4?);
    ensure(up1.mission_costs == up4.mission_costs && up1.mean.to_bits() == up4.mean.to_bits(), || "episode costs depend on the worker count".into())?;
    ensure(logs1? == logs4?, || "closed-loop logs depend on the worker count".into())
}

// 9 ------------------------------------------------------------------------

fn desk_cdp() -> Check {
    let cfg = CodesignConfig::desk();
    ensure(cfg.free.len() == 3 && cfg.cdp.n_doe == 12 && cfg.cdp.max_iter == 10 && cfg.episodes == 4, || "desk budget differs from 3 / 12 / 10 / 4".into())?;
    let t0 = Instant::now();
    let res = run_search(&cfg, Mode::Full, &[], |_, _| {}).map_err(|e| e.to_string())?;
    let took = t0.elapsed();
    ensure(took < Duration::from_secs(30 * 60), || format!("desk search took {took:?}"))?;
    let hv = res.hypervolume_trace();
    ensure(hv.windows(2).all(|w| w[1] >= w[0]), || format!("hypervolume decreases: {hv:?}"))?;
    ensure(res.front_dominates_baseline() == Some(true), || format!("front {:?} does not dominate the baseline {:?}", res.front(), res.baseline_objectives()))?;

    let mut stress = CodesignConfig::desk();
    stress.limits.t_max = 15.0;
    let res = run_search(&stress, Mode::Full, &[], |_, _| {}).map_err(|e| e.to_string())?;
    let failed = res.archive.entries.iter().filter(|e| !e.feasible).count();
    ensure(failed > 0, || "the stress configuration produced no failed design".into())?;
    let post: Vec<_> = res.archive.entries.iter().filter(|e| e.iteration > 0).collect();
    ensure(!post.is_empty(), || "the stress search stopped after its design of experiments".into())?;
    for e in post {
        let p = e.probability.ok_or_else(|| format!("selection {} has no classifier probability", e.index))?;
        ensure(p > 0.05, || format!("selection {} made at probability {p}", e.index))?;
    }
    Ok(())
}

// 10 -----------------------------------------------------------------------

fn ablations() -> Check {
    let cfg = CodesignConfig::desk();
    let a = run_search(&cfg, Mode::NoEmulator, &[], |_, _| {}).map_err(|e| format!("no-emulator: {e}"))?;
    let b = run_search(&cfg, Mode::Static, &[], |_, _| {}).map_err(|e| format!("static: {e}"))?;
    let (la, lb) = (a.ledger(), b.ledger());
    ensure(!la.is_empty() && !lb.is_empty(), || "empty ledger".into())?;
    ensure(la.iter().all(|r| r.mode == Mode::NoEmulator && r.entry.objectives.as_ref().map_or(true, |o| o.len() == 1)), || "no-emulator ledger is not single-objective".into())?;
    ensure(lb.iter().all(|r| r.mode == Mode::Static && r.closed_loop_runs == 0 && !r.stages.contains(&Stage::Episode)), || "static ledger contains closed-loop work".into())?;
    ensure(la.iter().filter(|r| r.entry.feasible).all(|r| r.stages.contains(&Stage::Episode) && !r.stages.contains(&Stage::Fcp)), || "no-emulator ledger has unexpected stages".into())?;
    for r in la.iter().chain(&lb).filter(|r| !r.entry.feasible) {
        let f = r.entry.failure.as_deref().unwrap_or("");
        ensure(r.stage.is_some() && f.starts_with(r.stage.unwrap().as_str()), || format!("untagged failure `{f}`"))?;
    }
    let json = |l: &[tailsitter_codesign::codesign::LedgerRecord]| l.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>();
    ensure(json(&la).iter().all(|l| l.contains("\"mode\":\"no-emulator\"")) && json(&lb).iter().all(|l| l.contains("\"mode\":\"static\"")), || "serialized ledgers do not carry their mode".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("geometry anchors", geometry_anchors),
        ("cruise pitch", cruise_pitch),
        ("flatness consistency", flat_consistency),
        ("GP oracle suite", gp_suite),
        ("acquisition oracles", acquisition_oracles),
        ("B-spline suite", bspline_suite),
        ("trajectory optimization", trajectory_optimization),
        ("closed loop", closed_loop),
        ("desk-scale co-design", desk_cdp),
        ("ablation mechanism", ablations),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let r = check();
        let secs = t0.elapsed().as_secs_f64();
        // Written to the raw handle so the lines survive output capture.
        let line = match &r {
            Ok(()) => format!("criterion {n:>2} {name}: PASS ({secs:.1} s)\n"),
            Err(m) => format!("criterion {n:>2} {name}: FAIL ({secs:.1} s): {m}\n"),
        };
        let _ = err.write_all(line.as_bytes());
        if r.is_err() {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
