mod common;

use common::*;
use conicflow::flow::*;
use conicflow::geometry::{Potential, ScatteringMetric, SurfaceOfRevolution};
use proptest::prelude::*;

/// Classical RK4 on `z' = zeta / c, zeta' = |zeta|^2 grad c / (2 c^2)` with
/// `c = 1 + eps * phi`, the cometric of the conformal bump written out by hand.
fn rk4_conformal(eps: f64, z: [f64; 2], zeta: [f64; 2], s_end: f64, h: f64) -> [f64; 4] {
    let bump = conicflow::geometry::Bump::new(vec![0.3, -0.2], 1.5).unwrap();
    let rhs = |y: [f64; 4]| -> [f64; 4] {
        let (phi, dphi) = bump.eval(&y[..2]);
        let c = 1.0 + eps * phi;
        let p2 = y[2] * y[2] + y[3] * y[3];
        let k = 0.5 * p2 * eps / (c * c);
        [y[2] / c, y[3] / c, k * dphi[0], k * dphi[1]]
    };
    let mut y = [z[0], z[1], zeta[0], zeta[1]];
    let n = (s_end / h).round() as usize;
    let h = s_end / n as f64;
    for _ in 0..n {
        let k1 = rhs(y);
        let k2 = rhs(std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]));
        let k3 = rhs(std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]));
        let k4 = rhs(std::array::from_fn(|i| y[i] + h * k3[i]));
        for i in 0..4 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

#[test]
fn bump_geodesic_matches_rk4_oracle() {
    let m = bump();
    let w = [0.1, 0.4];
    let eta = normalize_covector(&m, &w, &[0.8, -0.6]).unwrap();
    let tr = integrate_interior(&m, &w, &eta, 2.0, 1e-11).unwrap();
    let e = tr.end();
    let o = rk4_conformal(0.2, w, [eta[0], eta[1]], 2.0, 1e-5);
    let err = (0..2)
        .map(|i| (e.z[i] - o[i]).abs().max((e.zeta[i] - o[2 + i]).abs()))
        .fold(0.0, f64::max);
    assert!(err < 1e-7, "err {err:e}");
}

#[test]
fn flow_is_reversible() {
    let tol = 1e-10;
    for m in [&flat() as &dyn ScatteringMetric, &bump()] {
        let mut r = rng(3);
        for _ in 0..5 {
            let src = random_source(m, &mut r, 1.0);
            let a = integrate_interior(m, &src.w, &src.eta_hat, 3.0, tol).unwrap().end();
            let back: Vec<f64> = a.zeta.iter().map(|p| -p).collect();
            let b = integrate_interior(m, &a.z, &back, 3.0, tol).unwrap().end();
            for i in 0..2 {
                assert!((b.z[i] - src.w[i]).abs() < 100.0 * tol, "{:?} vs {:?}", b.z, src.w);
                assert!((b.zeta[i] + src.eta_hat[i]).abs() < 100.0 * tol);
            }
        }
    }
}

#[test]
fn flat_b_coordinates_follow_the_straight_line() {
    let m = flat();
    let (w, eta) = ([2.0, 1.0], [1.0, 0.0]);
    let tr = integrate_interior(&m, &w, &eta, 60.0, 1e-11).unwrap();
    for s in [50.0, 60.0] {
        let st = tr.state_at(s);
        let b = to_b_coords(&m, &st).unwrap();
        let z = [w[0] + s * eta[0], w[1] + s * eta[1]];
        let r2 = z[0] * z[0] + z[1] * z[1];
        let lam = -s * (z[0] * eta[0] + z[1] * eta[1]) / r2;
        let mu = s * (z[0] * eta[1] - z[1] * eta[0]) / r2;
        assert!((b.radial - lam).abs() < 1e-9, "{} vs {lam}", b.radial);
        assert!((b.angular[0] - mu).abs() < 1e-9);
        assert!((b.energy - s * s / (2.0 * r2)).abs() < 1e-9);
        assert!((b.radial + 1.0).abs() < 3.0 / s);
        assert!(on_shell_residual(&m, &b).unwrap().abs() < 1e-10);
    }
}

#[test]
fn radial_ray_has_vanishing_blown_up_fibre() {
    let m = flat();
    let (_, traj) = trace_to_front_face(&m, &[0.0, 0.0], &[0.6, 0.8], 1.0, &FlowOptions::default()).unwrap();
    for st in &traj.states {
        assert!(st.radial.abs() < 1e-9 && st.angular[0].abs() < 1e-9, "{st:?}");
    }
    let lim = front_face_limit(&traj, 1e-9).unwrap();
    assert!((lim.y0[0] - 0.8f64.atan2(0.6)).abs() < 1e-9);
}

#[test]
fn blow_down_inverts_blow_up() {
    let b = BCoordState {
        x: 0.013,
        y: vec![0.7],
        radial: -0.97,
        angular: vec![0.004],
        source: vec![0.01, -0.003],
        energy: 0.47,
    };
    let back = blow_down(&blow_up(&b).unwrap()).unwrap();
    assert!((back.radial - b.radial).abs() <= 1e-15 * b.radial.abs());
    assert!((back.angular[0] - b.angular[0]).abs() <= 1e-15 * b.angular[0].abs());
    assert!((back.source[1] - b.source[1]).abs() <= 1e-15 * b.source[1].abs());
}

#[test]
fn extrapolation_error_shrinks_with_x_stop() {
    let m = bump();
    let eta = normalize_covector(&m, &[0.4, 0.1], &[0.2, 1.0]).unwrap();
    let est = |x_stop: f64| {
        let o = FlowOptions {
            x_stop,
            ..Default::default()
        };
        let (_, traj) = trace_to_front_face(&m, &[0.4, 0.1], &eta, 1.0, &o).unwrap();
        front_face_limit(&traj, 1e-9).unwrap().error_estimate
    };
    let (coarse, fine) = (est(1e-2 / 6.0), est(1e-3 / 6.0));
    // both estimates may already sit at the rounding floor
    assert!(fine * 10.0 <= coarse || coarse.max(fine) < 1e-13, "{coarse:e} -> {fine:e}");
}

#[test]
fn equator_of_surface_of_revolution_stays_undecided() {
    let m = SurfaceOfRevolution::new(1.5, 2.0, 1.0, 0.2, 1e6, Potential::Zero).unwrap();
    // locate the local maximum of the profile
    let mut r_star = None;
    let mut prev = m.profile(1.0).1;
    for k in 1..=4000 {
        let r = 1.0 + 2.0 * k as f64 / 4000.0;
        let d = m.profile(r).1;
        if prev > 0.0 && d <= 0.0 {
            let r0 = r - 2.0 / 4000.0;
            r_star = Some(r0 + (r - r0) * prev / (prev - d));
            break;
        }
        prev = d;
    }
    let r_star = r_star.expect("profile has an interior maximum");
    let w = [r_star, 0.0];
    let eta = normalize_covector(&m, &w, &[0.0, 1.0]).unwrap();
    for s_max in [50.0, 400.0] {
        let c = classify_ray(&m, &w, &eta, s_max).unwrap();
        assert_eq!(c.kind, RayKind::Undecided, "s_max {s_max}");
    }
}

#[test]
fn weak_bump_sweep_is_nontrapped() {
    let m = bump_eps(0.05);
    let mut r = rng(11);
    for _ in 0..100 {
        let src = random_source(&m, &mut r, 2.0);
        let c = classify_ray(&m, &src.w, &src.eta_hat, 100.0).unwrap();
        assert_eq!(c.kind, RayKind::Nontrapped, "{src:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hamiltonian_is_conserved(a in -3.1f64..3.1, r in 0.0f64..1.5, phi in -3.1f64..3.1) {
        let m = bump();
        let w = [r * a.cos(), r * a.sin()];
        let eta = normalize_covector(&m, &w, &[phi.cos(), phi.sin()]).unwrap();
        let e = integrate_interior(&m, &w, &eta, 4.0, 1e-10).unwrap().end();
        let n = covector_norm(&m, &e.z, &e.zeta).unwrap();
        prop_assert!((n - 1.0).abs() < 1e-8);
    }

    #[test]
    fn flat_straight_lines(w0 in -3.0f64..3.0, w1 in -3.0f64..3.0, phi in -3.1f64..3.1, s in 0.1f64..20.0) {
        let m = flat();
        let eta = [phi.cos(), phi.sin()];
        let e = integrate_interior(&m, &[w0, w1], &eta, s, 1e-10).unwrap().end();
        prop_assert!((e.z[0] - w0 - s * eta[0]).abs() < 1e-9);
        prop_assert!((e.z[1] - w1 - s * eta[1]).abs() < 1e-9);
    }
}
