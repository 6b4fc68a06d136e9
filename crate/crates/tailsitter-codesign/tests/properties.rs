use proptest::prelude::*;
use tailsitter_codesign::aero::SyntheticProvider;
use tailsitter_codesign::bspline::{basis_row, clamped_knots, fit_least_squares, BSplineTraj};
use tailsitter_codesign::codesign::sample_mean_variance;
use tailsitter_codesign::control::attitude_setpoint;
use tailsitter_codesign::flatness::{dynamics_residual, evaluate_spline};
use tailsitter_codesign::frames::{angular_jacobian, euler_rates, integrate_step, mat_mul, mat_vec, rot_global_to_local, rot_local_to_global, rot_z, transpose, wrap_angle};
use tailsitter_codesign::geometry::{derive_geometry, derive_params, ActuatorLimits, DerivedParams, DesignVector};
use tailsitter_codesign::trajopt::{initial_guess, ocp_cost, Mission, MissionKind, OcpOptions};
use tailsitter_codesign::Mat3;

fn params() -> DerivedParams {
    let g = derive_geometry(&DesignVector::baseline()).unwrap();
    let sp = SyntheticProvider::new(&g);
    derive_params(g, &sp, ActuatorLimits::default(), Default::default()).unwrap()
}

fn angle() -> impl Strategy<Value = f64> {
    -3.1..3.1f64
}

fn roll() -> impl Strategy<Value = f64> {
    -1.4..1.4f64
}

fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
    (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| (a[i][j] - b[i][j]).abs()).fold(0.0, f64::max)
}

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_is_orthonormal(psi in angle(), phi in angle(), theta in angle()) {
        let q = [psi, phi, theta];
        let r = rot_global_to_local(&q);
        prop_assert!(max_abs_diff(&mat_mul(&r, &transpose(&r)), &IDENTITY) < 1e-14);
        prop_assert!(max_abs_diff(&transpose(&r), &rot_local_to_global(&q)) < 1e-15);
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        prop_assert!((det - 1.0).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_rotation_derivative(psi in angle(), phi in roll(), theta in angle(), rates in prop::array::uniform3(-2.0..2.0f64)) {
        // skew(omega_local) = R_lgᵀ dR_lg/dt along q(t) = q + t q_dot.
        let q = [psi, phi, theta];
        let h = 1e-6;
        let at = |s: f64| rot_local_to_global(&[q[0] + s * rates[0], q[1] + s * rates[1], q[2] + s * rates[2]]);
        let (rp, rm) = (at(h), at(-h));
        let rd: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| (rp[i][j] - rm[i][j]) / (2.0 * h)));
        let w = mat_mul(&transpose(&at(0.0)), &rd);
        let omega = [w[2][1], w[0][2], w[1][0]];
        let jq = mat_vec(&angular_jacobian(&q), &rates);
        for k in 0..3 {
            prop_assert!((omega[k] - jq[k]).abs() < 1e-7, "{:?} vs {:?}", omega, jq);
        }
        let back = euler_rates(&q, &jq).unwrap();
        for k in 0..3 {
            prop_assert!((back[k] - rates[k]).abs() < 1e-9 * (1.0 + rates[k].abs()) / phi.cos());
        }
    }

    #[test]
    fn rk4_is_fourth_order(lambda in prop::array::uniform3(-2.0..1.0f64), x0 in prop::array::uniform3(0.5..2.0f64)) {
        let exact: Vec<f64> = (0..3).map(|k| x0[k] * lambda[k].exp()).collect();
        let run = |n: usize| {
            let mut x = [0.0; 12];
            x[..3].copy_from_slice(&x0);
            let dt = 1.0 / n as f64;
            for i in 0..n {
                x = integrate_step(&x, i as f64 * dt, dt, |_, y| {
                    let mut d = [0.0; 12];
                    for k in 0..3 {
                        d[k] = lambda[k] * y[k];
                    }
                    Ok(d)
                })
                .unwrap();
            }
            (0..3).map(|k| (x[k] - exact[k]).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (run(8), run(16));
        prop_assume!(e2 > 1e-13);
        let order = (e1 / e2).log2();
        prop_assert!((3.6..4.4).contains(&order), "observed order {order}");
    }

    #[test]
    fn basis_partition_of_unity(degree in 1usize..6, extra in 0usize..10, t_end in 0.5..10.0f64, u in 0.0..=1.0f64) {
        let n = degree + 1 + extra;
        let knots = clamped_knots(degree, n, t_end);
        let row = basis_row(&knots, degree, u * t_end, 0);
        prop_assert_eq!(row.len(), n);
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(row.iter().all(|b| *b >= -1e-15));
    }

    #[test]
    fn spline_derivative_matches_finite_difference(
        degree in 3usize..6,
        coeffs in prop::collection::vec(-5.0..5.0f64, 13),
        u in 0.05..0.95f64,
    ) {
        let n = coeffs.len();
        let t_end = 4.0;
        let s = BSplineTraj::new(degree, clamped_knots(degree, n, t_end), vec![coeffs.clone()]).unwrap();
        let t = u * t_end;
        let h = 1e-5;
        let fd = (s.eval(t + h, 0)[0][0] - s.eval(t - h, 0)[0][0]) / (2.0 * h);
        let an = s.eval(t, 1)[1][0];
        let scale = coeffs.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        prop_assert!((fd - an).abs() <= 1e-5 * scale, "{fd} vs {an}");
        let ds = s.derivative().unwrap();
        prop_assert!((ds.eval(t, 0)[0][0] - an).abs() <= 1e-10 * scale);
    }

    #[test]
    fn spline_stays_in_convex_hull(coeffs in prop::collection::vec(-5.0..5.0f64, 9), u in 0.0..=1.0f64) {
        let s = BSplineTraj::new(5, clamped_knots(5, 9, 2.0), vec![coeffs.clone()]).unwrap();
        let v = s.eval(u * 2.0, 0)[0][0];
        let lo = coeffs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = coeffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn least_squares_reproduces_cubics(a in prop::array::uniform4(-3.0..3.0f64), degree in 3usize..6) {
        let t_end = 3.0;
        let n = 11;
        let knots = clamped_knots(degree, n, t_end);
        let poly = |t: f64| a[0] + a[1] * t + a[2] * t * t + a[3] * t * t * t;
        let times: Vec<f64> = (0..40).map(|i| t_end * i as f64 / 39.0).collect();
        let vals: Vec<f64> = times.iter().map(|&t| poly(t)).collect();
        let c = fit_least_squares(&knots, degree, &times, &vals).unwrap();
        let s = BSplineTraj::new(degree, knots, vec![c]).unwrap();
        for i in 0..=50 {
            let t = t_end * i as f64 / 50.0;
            prop_assert!((s.eval(t, 0)[0][0] - poly(t)).abs() <= 1e-8);
        }
    }

    #[test]
    fn setpoint_is_yaw_equivariant(
        f in prop::array::uniform3(-15.0..15.0f64),
        vx in 5.0..30.0f64,
        vy in -3.0..3.0f64,
        psi in angle(),
        shift in angle(),
    ) {
        let p = params();
        let f = [f[0], f[1], f[2] + 25.0];
        let v = [vx, vy, 1.0];
        let q = attitude_setpoint(&f, &v, Some(psi), p.phi.k_l, None);
        let rz = rot_z(shift);
        let q2 = attitude_setpoint(&mat_vec(&rz, &f), &mat_vec(&rz, &v), Some(psi + shift), p.phi.k_l, None);
        prop_assert!(wrap_angle(q2[0] - q[0] - shift).abs() < 1e-9);
        prop_assert!(wrap_angle(q2[1] - q[1]).abs() < 1e-9);
        prop_assert!(wrap_angle(q2[2] - q[2]).abs() < 1e-9);
    }

    #[test]
    fn variance_matches_welford(xs in prop::collection::vec(-1e3..1e3f64, 2..40), offset in -1e4..1e4f64) {
        let xs: Vec<f64> = xs.iter().map(|x| x + offset).collect();
        let (m, v) = sample_mean_variance(&xs);
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, x) in xs.iter().enumerate() {
            let d = x - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (x - mean);
        }
        let var = m2 / (xs.len() - 1) as f64;
        prop_assert!((m - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
        prop_assert!((v - var).abs() <= 1e-12 * (1.0 + var + mean * mean));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_flat_trajectories_are_dynamically_consistent(
        speed in 8.0..25.0f64,
        amp in prop::array::uniform3(-1.5..1.5f64),
        freq in prop::array::uniform3(0.5..2.0f64),
        phase in prop::array::uniform3(0.0..std::f64::consts::TAU),
        yaw_rate in -0.3..0.3f64,
    ) {
        let p = params();
        let t_end = 3.0;
        let n = 9;
        let knots = clamped_knots(5, n, t_end);
        // Coefficients sampled at the Greville abscissae track smooth curves.
        let greville: Vec<f64> = (0..n).map(|i| knots[i + 1..i + 6].iter().sum::<f64>() / 5.0).collect();
        let wave = |k: usize, t: f64| amp[k] * (freq[k] * t + phase[k]).sin();
        let xs: Vec<f64> = greville.iter().map(|&t| speed * t + 0.3 * wave(0, t)).collect();
        let ys: Vec<f64> = greville.iter().map(|&t| wave(1, t)).collect();
        let zs: Vec<f64> = greville.iter().map(|&t| 100.0 + wave(2, t)).collect();
        let ps: Vec<f64> = greville.iter().map(|&t| yaw_rate * t).collect();
        let s = BSplineTraj::new(5, knots, vec![xs, ys, zs, ps]).unwrap();
        let series = evaluate_spline(&s, 3001, &p, false).unwrap();
        prop_assert!(series.flat.iter().all(|fp| fp.p[1].iter().map(|v| v * v).sum::<f64>().sqrt() > 2.0));
        let r = dynamics_residual(&series, &p).unwrap();
        prop_assert!(r < 1e-4, "residual {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Central differences of the transcribed objective at two step sizes
    /// agree, so the finite-difference gradient the solver uses is reliable.
    #[test]
    fn ocp_objective_gradient_is_consistent(kind in prop::sample::select(vec![MissionKind::Cruise, MissionKind::Takeoff]), t_end in 3.0..5.0f64, idx in 3usize..10, ch in 0usize..3) {
        let p = params();
        let m = Mission::new(kind);
        let s_free = match kind { MissionKind::Cruise => 25.0, _ => 60.0 };
        let bc = m.boundary(t_end, Some(s_free), p.env.g);
        let opts = OcpOptions::default();
        let s = initial_guess(&bc, &opts).unwrap();
        let cost = |h: f64| {
            let mut c = s.clone();
            c.coeffs[ch][idx] += h;
            ocp_cost(&c, &p, &opts).unwrap().objective
        };
        let d1 = (cost(1e-3) - cost(-1e-3)) / 2e-3;
        let d2 = (cost(5e-4) - cost(-5e-4)) / 1e-3;
        let scale = d1.abs().max(d2.abs()).max(1e-6);
        prop_assert!((d1 - d2).abs() <= 1e-3 * scale, "{d1} vs {d2}");
    }
}
