mod common;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use common::*;
use conicflow::geometry::{Bump, Euclidean, Potential, ScatteringMetric};
use conicflow::parametrix::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

/// `det(-d^2 Phi / dz dw) / sqrt(det g(z) det g(w))` from central differences
/// of the phase in both arguments.
fn van_vleck(m: &dyn ScatteringMetric, w: [f64; 2], z: [f64; 2], h: f64) -> f64 {
    let mut mixed = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                let mut zz = z;
                let mut ww = w;
                zz[i] += si * h;
                ww[j] += sj * h;
                acc += sign * phase_phi(m, &ww, &zz).unwrap();
            }
            mixed[i][j] = -acc / (4.0 * h * h);
        }
    }
    let det = mixed[0][0] * mixed[1][1] - mixed[0][1] * mixed[1][0];
    let dg = |p: [f64; 2]| m.metric_jet(&p).unwrap().sqrt_det();
    det / (dg(z) * dg(w))
}

#[derive(PartialEq)]
struct Node(f64, usize);
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Shortest path on a square lattice through `w` with spacing `h`, edges to
/// every primitive offset of max-norm at most `radius`, edge lengths by
/// three-point Gauss quadrature of the conformal factor.
fn graph_distance(eps: f64, bump: &Bump, w: [f64; 2], z_off: [i64; 2], h: f64, margin: i64, radius: i64) -> f64 {
    let lo = [z_off[0].min(0) - margin, z_off[1].min(0) - margin];
    let hi = [z_off[0].max(0) + margin, z_off[1].max(0) + margin];
    let nx = (hi[0] - lo[0] + 1) as usize;
    let ny = (hi[1] - lo[1] + 1) as usize;
    let idx = |i: i64, j: i64| ((i - lo[0]) as usize) * ny + (j - lo[1]) as usize;
    let pos = |i: i64, j: i64| [w[0] + i as f64 * h, w[1] + j as f64 * h];
    let speed = |p: [f64; 2]| (1.0 + eps * bump.eval(&p).0).sqrt();
    let gauss = [(0.5 - 0.5 * (0.6f64).sqrt(), 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + 0.5 * (0.6f64).sqrt(), 5.0 / 18.0)];
    let mut offsets = Vec::new();
    for a in -radius..=radius {
        for b in -radius..=radius {
            if (a, b) != (0, 0) && gcd(a, b) == 1 {
                offsets.push((a, b));
            }
        }
    }
    let mut dist = vec![f64::INFINITY; nx * ny];
    let mut heap = BinaryHeap::new();
    dist[idx(0, 0)] = 0.0;
    heap.push(Node(0.0, idx(0, 0)));
    let target = idx(z_off[0], z_off[1]);
    while let Some(Node(d, k)) = heap.pop() {
        if d > dist[k] {
            continue;
        }
        if k == target {
            return d;
        }
        let i = (k / ny) as i64 + lo[0];
        let j = (k % ny) as i64 + lo[1];
        let p = pos(i, j);
        for &(a, b) in &offsets {
            let (ii, jj) = (i + a, j + b);
            if ii < lo[0] || ii > hi[0] || jj < lo[1] || jj > hi[1] {
                continue;
            }
            let q = pos(ii, jj);
            let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
            let c: f64 = gauss
                .iter()
                .map(|(s, wt)| wt * speed([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]))
                .sum();
            let nd = d + c * len;
            let kk = idx(ii, jj);
            if nd < dist[kk] {
                dist[kk] = nd;
                heap.push(Node(nd, kk));
            }
        }
    }
    dist[target]
}

#[test]
fn flat_segment_and_phase() {
    let m = Euclidean::new(2, 0.1, 20.0, Potential::Zero).unwrap();
    let seg = geodesic_bvp(&m, &[0.0, 0.0], &[3.0, 4.0], 1e-12).unwrap();
    assert!((seg.length - 5.0).abs() < 1e-12);
    assert!((seg.phase() - 12.5).abs() < 1e-11);
    for (tau, q) in &seg.samples {
        assert!((q[0] - 3.0 * tau).abs() < 1e-10 && (q[1] - 4.0 * tau).abs() < 1e-10);
    }
    let diag = geodesic_bvp(&m, &[1.0, 1.0], &[1.0, 1.0], 1e-12).unwrap();
    assert_eq!(diag.phase(), 0.0);
    assert!(diag.end_covector.iter().all(|p| *p == 0.0));
}

#[test]
fn distance_is_symmetric() {
    let m = bump();
    let mut r = rng(21);
    for _ in 0..20 {
        let w = [r.gen_range(-0.6..0.8), r.gen_range(-0.8..0.6)];
        let z = [w[0] + r.gen_range(-0.5..0.5), w[1] + r.gen_range(-0.5..0.5)];
        let a = geodesic_bvp(&m, &w, &z, 1e-12).unwrap().length;
        let b = geodesic_bvp(&m, &z, &w, 1e-12).unwrap().length;
        assert!((a - b).abs() < 2e-12, "{a} vs {b}");
    }
}

#[test]
fn distance_matches_graph_oracle() {
    let m = bump();
    let b = Bump::new(vec![0.3, -0.2], 1.5).unwrap();
    let h = 0.02;
    let pairs: [([f64; 2], [i64; 2]); 10] = [
        ([0.0, 0.0], [25, 10]),
        ([0.3, -0.2], [-20, 15]),
        ([-0.4, 0.1], [30, -5]),
        ([0.5, 0.5], [-12, -30]),
        ([0.1, -0.7], [8, 28]),
        ([-0.2, -0.3], [33, 12]),
        ([0.6, -0.1], [-35, 3]),
        ([0.0, 0.4], [17, -24]),
        ([-0.5, -0.5], [22, 22]),
        ([0.2, 0.2], [-3, -36]),
    ];
    for (w, off) in pairs {
        let z = [w[0] + off[0] as f64 * h, w[1] + off[1] as f64 * h];
        let d = geodesic_bvp(&m, &w, &z, 1e-12).unwrap().length;
        let g = graph_distance(0.2, &b, w, off, h, 10, 24);
        assert!(((d - g) / d).abs() < 1e-3, "{w:?} -> {z:?}: {d} vs graph {g}");
        assert!(g >= d - 1e-9, "graph paths cannot be shorter");
    }
}

#[test]
fn eikonal_residual_is_small() {
    let m = bump();
    let mut r = rng(22);
    for _ in 0..20 {
        let w = [r.gen_range(-0.6..0.8), r.gen_range(-0.8..0.6)];
        let a = r.gen_range(-PI..PI);
        let rad = r.gen_range(0.1..0.6);
        let z = [w[0] + rad * a.cos(), w[1] + rad * a.sin()];
        let e = eikonal_residual(&m, &w, &z, 1e-3).unwrap();
        assert!(e.abs() < 1e-6, "{e:e}");
    }
}

#[test]
fn leading_amplitude_matches_van_vleck_oracle() {
    let m = bump();
    let mut r = rng(23);
    for _ in 0..10 {
        let w = [r.gen_range(-0.6..0.8), r.gen_range(-0.8..0.6)];
        let a = r.gen_range(-PI..PI);
        let rad = r.gen_range(0.1..0.6);
        let z = [w[0] + rad * a.cos(), w[1] + rad * a.sin()];
        let a0 = amplitude_a0(&m, &w, &z).unwrap();
        let vv = van_vleck(&m, w, z, 1e-3);
        assert!((a0 * a0 - vv).abs() < 1e-4, "a0^2 {} vs {vv}", a0 * a0);
        assert!((a0 - 1.0).abs() > 1e-5, "bump should bend the amplitude");
    }
}

#[test]
fn flat_amplitude_is_one() {
    let m = flat();
    let mut r = rng(24);
    for _ in 0..5 {
        let w = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
        let z = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
        assert!((amplitude_a0(&m, &w, &z).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn first_amplitude_closed_forms() {
    let plateau = |c: f64| {
        Euclidean::new(
            2,
            0.05,
            10.0,
            Potential::Plateau {
                amplitude: c,
                center: vec![0.0, 0.0],
                inner: 3.0,
                outer: 4.0,
            },
        )
        .unwrap()
    };
    // V = 0
    let m = plateau(0.0);
    let seg = geodesic_bvp(&m, &[0.1, 0.2], &[0.9, -0.4], 1e-12).unwrap();
    assert!(transport_a1(&m, &seg, DEFAULT_A1_STEP).unwrap().norm() < 1e-10);
    // constant V on the tube: a1 = -i c
    let m = plateau(0.7);
    for z in [[0.9, -0.4], [-1.0, 0.5], [0.1, 0.2]] {
        let seg = geodesic_bvp(&m, &[0.1, 0.2], &z, 1e-12).unwrap();
        let a1 = transport_a1(&m, &seg, DEFAULT_A1_STEP).unwrap();
        assert!((a1 - Complex64::new(0.0, -0.7)).norm() < 1e-6, "{a1}");
    }
    // smooth V: a1(s) = -(i/s) int V, and a1(w, w) = -i V(w)
    let bump = Bump::new(vec![0.2, 0.0], 1.2).unwrap();
    let m = Euclidean::new(2, 0.05, 10.0, Potential::Bump { amplitude: 1.3, bump: bump.clone() }).unwrap();
    let w = [0.1, 0.3];
    let seg = geodesic_bvp(&m, &w, &w, 1e-12).unwrap();
    let a1 = transport_a1(&m, &seg, DEFAULT_A1_STEP).unwrap();
    assert!((a1 - Complex64::new(0.0, -m.potential(&w))).norm() < 1e-6, "{a1}");
    let z = [0.8, -0.2];
    let seg = geodesic_bvp(&m, &w, &z, 1e-12).unwrap();
    let a1 = transport_a1(&m, &seg, DEFAULT_A1_STEP).unwrap();
    let (nodes, weights) = gauss_legendre(40);
    let mean: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(s, wt)| wt * m.potential(&[w[0] + s * (z[0] - w[0]), w[1] + s * (z[1] - w[1])]))
        .sum();
    assert!((a1 - Complex64::new(0.0, -mean)).norm() < 1e-6, "{a1} vs -i{mean}");
}

#[test]
fn free_kernel_is_reproduced() {
    let m = Euclidean::new(2, 0.05, 8.0, Potential::Zero).unwrap();
    let k = ParametrixKernel::new(&m, 0).unwrap();
    let w: [f64; 2] = [0.3, -0.1];
    for t in [1e-3, 0.05, 0.7] {
        for z in [[0.3f64, -0.1], [1.1, 0.4], [-0.9, 0.8]] {
            let u = parametrix_eval(&k, &z, &w, t).unwrap();
            let d2 = (z[0] - w[0]).powi(2) + (z[1] - w[1]).powi(2);
            let exact = Complex64::from_polar(1.0 / (2.0 * PI * t), d2 / (2.0 * t));
            assert!((u - exact).norm() <= 1e-12 * exact.norm() * (1.0 + d2 / t), "{u} vs {exact}");
        }
    }
    // outside the cutoff
    assert_eq!(parametrix_eval(&k, &[4.5, -0.1], &w, 0.1).unwrap(), Complex64::new(0.0, 0.0));
}

#[test]
fn free_kernel_factorization() {
    // (2 pi t)^{-1} e^{i|z-w|^2/2t} = W(t) e^{i|z|^2/2t} with W = (2 pi t)^{-1} e^{-i z.w/t} e^{i|w|^2/2t}
    let mut r = rng(25);
    for _ in 0..50 {
        let t = r.gen_range(0.01f64..2.0);
        let z = [r.gen_range(-3.0f64..3.0), r.gen_range(-3.0f64..3.0)];
        let w = [r.gen_range(-3.0f64..3.0), r.gen_range(-3.0f64..3.0)];
        let d2 = (z[0] - w[0]).powi(2) + (z[1] - w[1]).powi(2);
        let lhs = Complex64::from_polar(1.0 / (2.0 * PI * t), d2 / (2.0 * t));
        let zw = z[0] * w[0] + z[1] * w[1];
        let ww = w[0] * w[0] + w[1] * w[1];
        let zz = z[0] * z[0] + z[1] * z[1];
        let wt = Complex64::from_polar(1.0 / (2.0 * PI * t), -zw / t + ww / (2.0 * t));
        let rhs = wt * Complex64::from_polar(1.0, zz / (2.0 * t));
        // the phases agree up to rounding of |z|^2/t sized arguments
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm() * (1.0 + (zz + ww) / t));
    }
}

#[test]
fn modulus_is_amplitude_times_cutoff() {
    let m = bump();
    let k = ParametrixKernel::new(&m, 0).unwrap();
    let w = [0.1, 0.2];
    for z in [[0.3, 0.3], [0.6, -0.2], [0.1, 0.85]] {
        let t = 0.02;
        let u = parametrix_eval(&k, &z, &w, t).unwrap();
        let seg = geodesic_bvp(&m, &w, &z, 1e-12).unwrap();
        let want = cutoff(seg.length, k.iota()) * amplitude_a0(&m, &w, &z).unwrap() / (2.0 * PI * t);
        assert!((u.norm() - want).abs() < 1e-10 * want.max(1.0), "{} vs {want}", u.norm());
    }
}

#[test]
fn flat_residual_is_at_noise_floor() {
    let m = Euclidean::new(2, 0.05, 1.6, Potential::Zero).unwrap();
    let k = ParametrixKernel::new(&m, 0).unwrap();
    let grid = ResidualGrid::covering(k.iota(), 0.1);
    let rep = residual_order(&k, &[0.0, 0.0], &grid, &[1e-3, 1e-2, 1e-1]).unwrap();
    for s in &rep.samples {
        assert!(s.residual < 1e-8, "{s:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn amplitude_on_the_diagonal_is_one(x in -0.8f64..1.0, y in -1.0f64..0.6) {
        let m = bump();
        prop_assert!((amplitude_a0(&m, &[x, y], &[x, y]).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cutoff_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(cutoff(lo, 1.6) >= cutoff(hi, 1.6));
    }
}
