use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tailsitter_codesign::bo::{
    dominates, ego_loop, expected_improvement, hvei, hypervolume, hypervolume_inclusion_exclusion, nondominated,
    optimize_acquisition, safe_acquisition, AcqOptions, EgoConfig, Evaluation,
};

#[test]
fn ei_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let mu: f64 = rng.gen_range(-1.0..1.0);
        let var: f64 = rng.gen_range(0.05..2.0);
        let y_min: f64 = rng.gen_range(-1.0..1.0);
        let n = 1_000_000;
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
        assert!((ei - m).abs() <= 3.0 * se, "ei {ei} mc {m} se {se}");
    }
}

fn mc_hvei(mean: [f64; 2], var: [f64; 2], front: &[Vec<f64>], r: [f64; 2], n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = hypervolume(front, &r).unwrap();
    let mut acc = 0.0;
    for _ in 0..n {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let y = vec![mean[0] + var[0].sqrt() * z0, mean[1] + var[1].sqrt() * z1];
        if y[0] < r[0] && y[1] < r[1] {
            let mut f = front.to_vec();
            f.push(y);
            acc += hypervolume(&f, &r).unwrap() - base;
        }
    }
    acc / n as f64
}

#[test]
fn hvei_matches_monte_carlo() {
    let front = vec![vec![0.2, 0.9], vec![0.4, 0.5], vec![0.8, 0.2]];
    let r = [1.0, 1.0];
    for (mean, var) in [([0.5, 0.6], [0.04, 0.09]), ([0.3, 0.4], [0.01, 0.02])] {
        let exact = hvei(mean, var, &front, r);
        let mc = mc_hvei(mean, var, &front, r, 1_000_000, 9);
        assert!((exact - mc).abs() <= 0.01 * exact, "exact {exact} mc {mc}");
    }
}

#[test]
fn hvei_vanishes_when_dominated() {
    let front = vec![vec![0.2, 0.2]];
    assert!(hvei([0.9, 0.9], [1e-4, 1e-4], &front, [1.0, 1.0]) < 1e-12);
}

#[test]
fn hypervolume_three_objectives_matches_inclusion_exclusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let pts: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let front: Vec<Vec<f64>> = nondominated(&pts).into_iter().map(|i| pts[i].clone()).collect();
        let r = [1.1, 1.2, 1.05];
        let a = hypervolume(&front, &r).unwrap();
        let b = hypervolume_inclusion_exclusion(&front, &r).unwrap();
        assert!((a - b).abs() < 1e-12);
        let c = hypervolume(&pts, &r).unwrap();
        assert!((a - c).abs() < 1e-12, "dominated points must not add volume");
    }
}

#[test]
fn safe_acquisition_product() {
    assert_eq!(safe_acquisition(2.0, 1.0), 2.0);
    assert_eq!(safe_acquisition(2.0, 0.0), 0.0);
    assert_eq!(safe_acquisition(2.0, 0.5), 1.0);
}

#[test]
fn acquisition_optimizer_finds_quadratic_peak() {
    let b = [(0.0, 2.0), (-1.0, 1.0), (0.0, 1.0)];
    let target = [1.3, -0.4, 0.75];
    let f = |x: &[f64]| -x.iter().zip(&target).map(|(a, t)| (a - t).powi(2)).sum::<f64>();
    let (x, v) = optimize_acquisition(f, &b, &AcqOptions::default(), &[], 4);
    let diag = (4.0f64 + 4.0 + 1.0).sqrt();
    let err = x.iter().zip(&target).map(|(a, t)| (a - t).powi(2)).sum::<f64>().sqrt();
    assert!(err < 1e-3 * diag, "{err}");
    let (x2, v2) = optimize_acquisition(f, &b, &AcqOptions::default(), &[], 4);
    assert_eq!((x, v), (x2, v2));
    let (xc, vc) = optimize_acquisition(|_| 2.5, &b, &AcqOptions::default(), &[], 1);
    assert_eq!(vc, 2.5);
    assert!(xc.iter().zip(&b).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi));
}

fn forrester(x: f64) -> f64 {
    (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin()
}

#[test]
fn ego_finds_global_minimum_of_multimodal_function() {
    let grid_min = (0..=100_000)
        .map(|i| i as f64 / 100_000.0)
        .min_by(|a, b| forrester(*a).total_cmp(&forrester(*b)))
        .unwrap();
    let mut hits = 0;
    for seed in 0..20u64 {
        let mut cfg = EgoConfig::new(1, seed);
        cfg.max_iter = 30 - cfg.n_doe;
        cfg.k_ei = 0.0;
        let arch = ego_loop(|x, _| Evaluation::Ok(vec![forrester(x[0])]), &[(0.0, 1.0)], 1, &cfg, &[], |_| {}).unwrap();
        assert_eq!(arch.entries.len(), 30);
        if (arch.best().unwrap().x[0] - grid_min).abs() < 1e-2 {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn ego_respects_classifier_threshold() {
    let mut cfg = EgoConfig::new(2, 7);
    cfg.max_iter = 12;
    cfg.k_ei = 0.0;
    let eval = |x: &[f64], _: usize| {
        if x[0] > 0.5 {
            Evaluation::Failed("episode".into())
        } else {
            Evaluation::Ok(vec![(x[0] - 0.45).powi(2) + (x[1] - 0.3).powi(2)])
        }
    };
    let arch = ego_loop(eval, &[(0.0, 1.0), (0.0, 1.0)], 1, &cfg, &[], |_| {}).unwrap();
    let post: Vec<_> = arch.entries.iter().filter(|e| e.iteration > 0).collect();
    assert!(!post.is_empty());
    for e in post {
        assert!(e.probability.unwrap() > 0.05, "{:?}", e);
    }
}

#[test]
fn ego_with_one_success_returns_it() {
    let mut cfg = EgoConfig::new(1, 5);
    cfg.extra_doe = vec![vec![0.25]];
    cfg.max_iter = 5;
    let eval = |x: &[f64], _: usize| {
        if (x[0] - 0.25).abs() < 1e-12 {
            Evaluation::Ok(vec![1.0])
        } else {
            Evaluation::Failed("bc".into())
        }
    };
    let arch = ego_loop(eval, &[(0.0, 1.0)], 1, &cfg, &[], |_| {}).unwrap();
    assert_eq!(arch.feasible().count(), 1);
    assert!(arch.entries.iter().all(|e| e.iteration == 0));
}

#[test]
fn ego_two_objective_hypervolume_nondecreasing() {
    let mut cfg = EgoConfig::new(2, 3);
    cfg.max_iter = 10;
    cfg.k_ei = 0.0;
    let eval = |x: &[f64], _: usize| {
        let g = 1.0 + x[1];
        Evaluation::Ok(vec![x[0], g * (1.0 - (x[0] / g).sqrt())])
    };
    let mut seen = Vec::new();
    let arch = ego_loop(eval, &[(0.0, 1.0), (0.0, 1.0)], 2, &cfg, &[], |e| seen.push(e.hypervolume)).unwrap();
    assert_eq!(seen.len(), arch.entries.len());
    for w in seen.windows(2) {
        assert!(w[1] >= w[0]);
    }
}

fn brute_front(pts: &[Vec<f64>]) -> Vec<usize> {
    (0..pts.len())
        .filter(|&i| !pts.iter().enumerate().any(|(j, q)| dominates(q, &pts[i]) || (j < i && *q == pts[i])))
        .collect()
}

proptest! {
    #[test]
    fn ei_is_translation_invariant(mu in -5.0..5.0f64, var in 0.0..4.0f64, y in -5.0..5.0f64, c in -10.0..10.0f64) {
        let a = expected_improvement(mu, var, y);
        let b = expected_improvement(mu + c, var, y + c);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn hvei_is_translation_invariant(
        m0 in 0.0..1.0f64, m1 in 0.0..1.0f64, v0 in 0.0..0.2f64, v1 in 0.0..0.2f64, c in -3.0..3.0f64,
        pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..6),
    ) {
        let front: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        let shifted: Vec<Vec<f64>> = front.iter().map(|p| vec![p[0] + c, p[1] + c]).collect();
        let a = hvei([m0, m1], [v0, v1], &front, [1.1, 1.1]);
        let b = hvei([m0 + c, m1 + c], [v0, v1], &shifted, [1.1 + c, 1.1 + c]);
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn nondominated_filter_matches_brute_force(pts in prop::collection::vec(prop::collection::vec(0..5i32, 2), 0..25)) {
        let p: Vec<Vec<f64>> = pts.iter().map(|v| v.iter().map(|x| *x as f64).collect()).collect();
        prop_assert_eq!(nondominated(&p), brute_front(&p));
    }

    #[test]
    fn hypervolume_2d_matches_inclusion_exclusion(pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 0..10)) {
        let p: Vec<Vec<f64>> = pts.iter().map(|v| vec![v.0, v.1]).collect();
        let a = hypervolume(&p, &[1.0, 1.0]).unwrap();
        let b = hypervolume_inclusion_exclusion(&p, &[1.0, 1.0]).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
