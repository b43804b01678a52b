#![allow(dead_code)]

use std::f64::consts::PI;

use conicflow::geometry::{Bump, ConformalBump, Euclidean, Potential};
use conicflow::pde::{GridSpec, WavefieldGrid};
use conicflow::sojourn::SourcePoint;
use conicflow::geometry::ScatteringMetric;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn flat() -> Euclidean {
    Euclidean::new(2, 0.05, 1e6, Potential::Zero).unwrap()
}

/// The reference bump: `(1 + 0.2 phi) g_flat`, phi centred at (0.3, -0.2) with radius 1.5.
pub fn bump() -> ConformalBump {
    bump_eps(0.2)
}

pub fn bump_eps(eps: f64) -> ConformalBump {
    ConformalBump::new(2, eps, Bump::new(vec![0.3, -0.2], 1.5).unwrap(), 0.2, 1.6, Potential::Zero).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform point in the disc of radius `r_max` and uniform covector angle.
pub fn random_source(m: &dyn ScatteringMetric, rng: &mut ChaCha8Rng, r_max: f64) -> SourcePoint {
    let r = r_max * rng.gen::<f64>().sqrt();
    let a = rng.gen_range(-PI..PI);
    let phi = rng.gen_range(-PI..PI);
    SourcePoint::from_angle(m, &[r * a.cos(), r * a.sin()], phi).unwrap()
}

/// Free Schrödinger evolution of `exp(-|z-c|^2/2s^2 + i k.z)` at time `t`.
pub fn gaussian(spec: GridSpec, c: [f64; 2], s: f64, k0: [f64; 2], t: f64) -> WavefieldGrid {
    let s2 = Complex64::new(s * s, t);
    let pref = Complex64::new(s * s, 0.0) / s2;
    let mut g = WavefieldGrid::from_fn(spec, move |z| {
        let d0 = z[0] - c[0] - k0[0] * t;
        let d1 = z[1] - c[1] - k0[1] * t;
        let ph = k0[0] * z[0] + k0[1] * z[1] - 0.5 * (k0[0] * k0[0] + k0[1] * k0[1]) * t;
        pref * (-(d0 * d0 + d1 * d1) / (2.0 * s2) + Complex64::new(0.0, ph)).exp()
    });
    g.time = t;
    g
}

pub fn wrap(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
