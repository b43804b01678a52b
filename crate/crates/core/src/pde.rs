//! Reference Schrödinger solver on a periodic box with an absorbing sponge,
//! the quadratic-phase focusing experiment and a scattering-wavefront estimator.
//!
//! The equation is `i u_t = -(1/2) Laplace_g u + V u`, i.e. `(D_t + H) u = 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScatteringMetric;

const I: Complex64 = Complex64::new(0.0, 1.0);
const CHUNK: usize = 4096;

/// Parallel sum with a fixed chunking, so results do not depend on scheduling.
fn chunked_sum<T, F>(len: usize, f: F) -> T
where
    T: Send + Copy + std::iter::Sum<T> + std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T + Sync,
{
    let parts: Vec<T> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(len)).map(&f).sum())
        .collect();
    parts.into_iter().fold(T::default(), |a, b| a + b)
}

/// Grid geometry: `N` points per axis on `[-L, L)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: usize,
    pub n: usize,
    pub half_width: f64,
}

impl GridSpec {
    pub fn new(dims: usize, n: usize, half_width: f64) -> Result<Self> {
        if dims != 1 && dims != 2 {
            return Err(Error::Config("grid dims must be 1 or 2".into()));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Config(format!("N = {n} must be a power of two >= 8")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Config("box half-width must be positive".into()));
        }
        Ok(GridSpec { dims, n, half_width })
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }

    /// Cartesian point of a flat (row-major) index; the second slot is 0 in 1D.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        if self.dims == 1 {
            [self.coord(idx), 0.0]
        } else {
            [self.coord(idx / self.n), self.coord(idx % self.n)]
        }
    }

    fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dims as i32)
    }

    /// Angular wave number of FFT bin `j`.
    fn wavenumber(&self, j: usize) -> f64 {
        let n = self.n as i64;
        let jj = if (j as i64) < n / 2 { j as i64 } else { j as i64 - n };
        2.0 * PI * jj as f64 / (2.0 * self.half_width)
    }
}

/// Complex field on a periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WavefieldGrid {
    pub spec: GridSpec,
    /// Row-major values, first axis slowest.
    pub values: Vec<Complex64>,
    pub time: f64,
}

impl WavefieldGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        WavefieldGrid {
            spec,
            values: vec![Complex64::new(0.0, 0.0); spec.len()],
            time: 0.0,
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> Complex64 + Sync) -> Self {
        let values = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let p = spec.point(idx);
                f(&p[..spec.dims])
            })
            .collect();
        WavefieldGrid { spec, values, time: 0.0 }
    }

    /// `sum |u|^2 dx^n`.
    pub fn mass_squared(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.spec.cell_volume()
    }

    /// Discrete L2 norm.
    pub fn norm(&self) -> f64 {
        self.mass_squared().sqrt()
    }

    pub fn l2_distance(&self, other: &WavefieldGrid) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::domain("grids differ"));
        }
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        Ok((s * self.spec.cell_volume()).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Tensor Lagrange interpolation with six points per axis (2D) at a Cartesian point.
    pub fn interpolate(&self, p: &[f64]) -> Complex64 {
        let n = self.spec.n as i64;
        let dx = self.spec.dx();
        let stencil = |x: f64| -> (i64, [f64; 6]) {
            let f = (x + self.spec.half_width) / dx;
            let b = f.floor() as i64 - 2;
            let mut w = [1.0; 6];
            for (a, wa) in w.iter_mut().enumerate() {
                for c in 0..6 {
                    if a != c {
                        *wa *= (f - (b + c as i64) as f64) / (a as f64 - c as f64);
                    }
                }
            }
            (b, w)
        };
        let wrap = |i: i64| i.rem_euclid(n) as usize;
        if self.spec.dims == 1 {
            let (b, w) = stencil(p[0]);
            return (0..6).map(|a| w[a] * self.values[wrap(b + a as i64)]).sum();
        }
        let (bi, wi) = stencil(p[0]);
        let (bj, wj) = stencil(p[1]);
        let mut s = Complex64::new(0.0, 0.0);
        for a in 0..6 {
            let row = wrap(bi + a as i64) * self.spec.n;
            let mut r = Complex64::new(0.0, 0.0);
            for c in 0..6 {
                r += wj[c] * self.values[row + wrap(bj + c as i64)];
            }
            s += wi[a] * r;
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    SplitStep,
    CrankNicolson,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::SplitStep => "splitstep",
            Scheme::CrankNicolson => "cranknicolson",
        }
    }
}

/// Time-stepping controls.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Requested step; the step actually used divides `t_final` evenly.
    pub dt: f64,
    /// Number of equal sub-steps per `dt`.
    pub substeps: usize,
    /// Sponge layer width at each face; 0 disables it.
    pub sponge_width: f64,
    /// Peak absorption rate of the quadratic sponge profile.
    pub sponge_strength: f64,
    pub krylov_tol: f64,
}

impl SolverConfig {
    pub fn new(scheme: Scheme, dt: f64) -> Self {
        SolverConfig {
            scheme,
            dt,
            substeps: 1,
            sponge_width: 0.0,
            sponge_strength: 20.0,
            krylov_tol: 1e-10,
        }
    }

    pub fn with_sponge(mut self, width: f64) -> Self {
        self.sponge_width = width;
        self
    }

    fn validate(&self, spec: &GridSpec) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        if self.sponge_width < 0.0 || self.sponge_width >= spec.half_width / 2.0 {
            return Err(Error::Config("sponge width must lie in [0, box/4)".into()));
        }
        if !(self.krylov_tol > 0.0) {
            return Err(Error::Config("krylov_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Result of [`evolve`].
#[derive(Clone, Debug)]
pub struct Evolution {
    pub grid: WavefieldGrid,
    pub steps: usize,
    pub dt_used: f64,
    pub norm_initial: f64,
    pub norm_final: f64,
    /// Squared mass removed by the sponge.
    pub absorbed: f64,
    /// `| sqrt(|u|^2 + absorbed) - |u0| |`.
    pub mass_drift: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub max_krylov_iterations: usize,
}

impl Evolution {
    pub fn energy_drift(&self) -> f64 {
        (self.energy_final - self.energy_initial).abs() / self.energy_initial.abs().max(f64::MIN_POSITIVE)
    }
}

/// Sponge absorption rate at a point: quadratic ramp into each face layer.
pub fn sponge_profile(spec: &GridSpec, width: f64, strength: f64, p: &[f64]) -> f64 {
    if width <= 0.0 {
        return 0.0;
    }
    let inner = spec.half_width - width;
    p.iter()
        .map(|x| {
            let d = (x.abs() - inner).max(0.0) / width;
            strength * d.min(1.0).powi(2)
        })
        .sum()
}

struct Fft2 {
    n: usize,
    dims: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(spec: &GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            n: spec.n,
            dims: spec.dims,
            fwd: planner.plan_fft_forward(spec.n),
            inv: planner.plan_fft_inverse(spec.n),
        }
    }

    fn transpose(&self, a: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                a.swap(i * n + j, j * n + i);
            }
        }
    }

    fn run(&self, a: &mut [Complex64], forward: bool) {
        let plan = if forward { &self.fwd } else { &self.inv };
        let n = self.n;
        a.par_chunks_mut(n).for_each(|row| plan.process(row));
        if self.dims == 2 {
            self.transpose(a);
            a.par_chunks_mut(n).for_each(|row| plan.process(row));
            self.transpose(a);
        }
        if !forward {
            let s = 1.0 / (n.pow(self.dims as u32) as f64);
            a.par_iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Per-grid coefficients shared by both schemes.
struct Coefficients {
    potential: Vec<f64>,
    sponge: Vec<f64>,
    /// `sqrt(det g)`.
    weight: Vec<f64>,
    /// `sqrt(det g) g^{ij}` packed as `[a11, a12, a22]` (1D uses `a11`).
    conduct: Vec<[f64; 3]>,
}

fn coefficients(metric: &dyn ScatteringMetric, spec: &GridSpec, cfg: &SolverConfig, need_metric: bool) -> Result<Coefficients> {
    let n = spec.dims;
    let rows: Vec<Result<(f64, f64, f64, [f64; 3])>> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let p = spec.point(idx);
            let z = &p[..n];
            let v = metric.potential(z);
            let s = sponge_profile(spec, cfg.sponge_width, cfg.sponge_strength, z);
            if !need_metric {
                return Ok((v, s, 1.0, [1.0, 0.0, 1.0]));
            }
            let jet = metric.metric_jet(z)?;
            let co = jet.cometric(z)?;
            let det = crate::linalg::det(n, &jet.g);
            let w = det.sqrt();
            let a = if n == 1 {
                [w * co.ginv[0][0], 0.0, 0.0]
            } else {
                [w * co.ginv[0][0], w * co.ginv[0][1], w * co.ginv[1][1]]
            };
            Ok((v, s, w, a))
        })
        .collect();
    let mut c = Coefficients {
        potential: Vec::with_capacity(spec.len()),
        sponge: Vec::with_capacity(spec.len()),
        weight: Vec::with_capacity(spec.len()),
        conduct: Vec::with_capacity(spec.len()),
    };
    for r in rows {
        let (v, s, w, a) = r?;
        c.potential.push(v);
        c.sponge.push(s);
        c.weight.push(w);
        c.conduct.push(a);
    }
    Ok(c)
}

fn check_metric(metric: &dyn ScatteringMetric, spec: &GridSpec, cfg: &SolverConfig) -> Result<()> {
    if metric.dim() != spec.dims {
        return Err(Error::domain(format!(
            "metric dimension {} does not match grid dimension {}",
            metric.dim(),
            spec.dims
        )));
    }
    let r_flat = metric
        .flat_outside_radius()
        .ok_or_else(|| Error::domain("the PDE solver needs a metric that is flat outside a compact set"))?;
    if r_flat >= spec.half_width - cfg.sponge_width {
        return Err(Error::domain(format!(
            "non-flat region (radius {r_flat}) reaches the sponge or the box edge"
        )));
    }
    if cfg.scheme == Scheme::SplitStep && !metric.is_exactly_flat() {
        return Err(Error::domain("splitstep requires an exactly flat metric; use cranknicolson"));
    }
    Ok(())
}

/// Evolves `grid` from its time stamp to `t_final`.
pub fn evolve(metric: &dyn ScatteringMetric, grid: &WavefieldGrid, cfg: &SolverConfig, t_final: f64) -> Result<Evolution> {
    let spec = grid.spec;
    cfg.validate(&spec)?;
    check_metric(metric, &spec, cfg)?;
    if !grid.is_finite() {
        return Err(Error::domain("initial field is not finite"));
    }
    let span = t_final - grid.time;
    if !(span >= 0.0) {
        return Err(Error::domain("t_final precedes the grid time"));
    }
    let h_req = cfg.dt / cfg.substeps as f64;
    let steps = if span == 0.0 { 0 } else { (span / h_req).ceil() as usize };
    let dt = if steps == 0 { 0.0 } else { span / steps as f64 };
    let coef = coefficients(metric, &spec, cfg, cfg.scheme == Scheme::CrankNicolson)?;
    let vmax = coef.potential.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    match cfg.scheme {
        Scheme::SplitStep => {
            // potential phase per half step must stay well below one radian
            if dt * vmax > 1.0 {
                return Err(Error::Stability {
                    dt,
                    suggested: 0.9 / vmax,
                });
            }
            split_step(grid, &coef, steps, dt)
        }
        Scheme::CrankNicolson => {
            let kmax = PI / spec.dx();
            let gmax = coef
                .conduct
                .iter()
                .zip(&coef.weight)
                .map(|(a, w)| (a[0] + a[2]) / w)
                .fold(0.0f64, f64::max);
            let emax = 0.5 * gmax * kmax * kmax * 1.5 + vmax;
            // Krylov conditioning degrades like dt * emax
            if dt * emax > 2000.0 {
                return Err(Error::Stability {
                    dt,
                    suggested: 1800.0 / emax,
                });
            }
            crank_nicolson(grid, &coef, steps, dt, cfg.krylov_tol)
        }
    }
}

fn kinetic_symbol(spec: &GridSpec) -> Vec<f64> {
    (0..spec.len())
        .map(|idx| {
            if spec.dims == 1 {
                let k = spec.wavenumber(idx);
                0.5 * k * k
            } else {
                let kx = spec.wavenumber(idx / spec.n);
                let ky = spec.wavenumber(idx % spec.n);
                0.5 * (kx * kx + ky * ky)
            }
        })
        .collect()
}

fn spectral_energy(u: &[Complex64], fft: &Fft2, kin: &[f64], pot: &[f64]) -> f64 {
    let mut a = u.to_vec();
    fft.run(&mut a, true);
    let nn = u.len() as f64;
    let ek: f64 = a.iter().zip(kin).map(|(v, k)| k * v.norm_sqr()).sum::<f64>() / nn;
    let ep: f64 = u.iter().zip(pot).map(|(v, p)| p * v.norm_sqr()).sum();
    let m: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    (ek + ep) / m.max(f64::MIN_POSITIVE)
}

fn split_step(grid: &WavefieldGrid, coef: &Coefficients, steps: usize, dt: f64) -> Result<Evolution> {
    let spec = grid.spec;
    let fft = Fft2::new(&spec);
    let kin = kinetic_symbol(&spec);
    let kin_phase: Vec<Complex64> = kin.iter().map(|k| Complex64::from_polar(1.0, -k * dt)).collect();
    let half: Vec<Complex64> = coef
        .potential
        .iter()
        .zip(&coef.sponge)
        .map(|(v, s)| (-(I * v + s) * (0.5 * dt)).exp())
        .collect();
    let has_sponge = coef.sponge.iter().any(|s| *s > 0.0);
    let vol = spec.cell_volume();
    let mut u = grid.values.clone();
    let norm0 = grid.norm();
    let e0 = spectral_energy(&u, &fft, &kin, &coef.potential);
    let mut absorbed = 0.0;
    let mass = |u: &[Complex64]| chunked_sum(u.len(), |k| u[k].norm_sqr()) * vol;
    for _ in 0..steps {
        let before = if has_sponge { mass(&u) } else { 0.0 };
        u.par_iter_mut().zip(&half).for_each(|(a, h)| *a *= h);
        if has_sponge {
            absorbed += before - mass(&u);
        }
        fft.run(&mut u, true);
        u.par_iter_mut().zip(&kin_phase).for_each(|(a, h)| *a *= h);
        fft.run(&mut u, false);
        let before = if has_sponge { mass(&u) } else { 0.0 };
        u.par_iter_mut().zip(&half).for_each(|(a, h)| *a *= h);
        if has_sponge {
            absorbed += before - mass(&u);
        }
    }
    let e1 = spectral_energy(&u, &fft, &kin, &coef.potential);
    finish(grid, u, steps, dt, norm0, absorbed, e0, e1, 0)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &WavefieldGrid,
    u: Vec<Complex64>,
    steps: usize,
    dt: f64,
    norm0: f64,
    absorbed: f64,
    e0: f64,
    e1: f64,
    iters: usize,
) -> Result<Evolution> {
    let out = WavefieldGrid {
        spec: grid.spec,
        values: u,
        time: grid.time + dt * steps as f64,
    };
    if !out.is_finite() {
        return Err(Error::Integration {
            at: out.time,
            reason: "field became non-finite".into(),
            last_state: vec![],
        });
    }
    let norm1 = out.norm();
    let drift = ((norm1 * norm1 + absorbed).max(0.0).sqrt() - norm0).abs();
    Ok(Evolution {
        grid: out,
        steps,
        dt_used: dt,
        norm_initial: norm0,
        norm_final: norm1,
        absorbed,
        mass_drift: drift,
        energy_initial: e0,
        energy_final: e1,
        max_krylov_iterations: iters,
    })
}

/// Fourth-order periodic central difference along `axis`.
fn diff4(spec: &GridSpec, u: &[Complex64], axis: usize, out: &mut [Complex64]) {
    let n = spec.n;
    let c = 1.0 / (12.0 * spec.dx());
    out.par_iter_mut().enumerate().for_each(|(idx, o)| {
        let (i, j) = if spec.dims == 1 { (idx, 0) } else { (idx / n, idx % n) };
        let at = |di: i64| -> Complex64 {
            if axis == 0 {
                let ii = (i as i64 + di).rem_euclid(n as i64) as usize;
                if spec.dims == 1 {
                    u[ii]
                } else {
                    u[ii * n + j]
                }
            } else {
                let jj = (j as i64 + di).rem_euclid(n as i64) as usize;
                u[i * n + jj]
            }
        };
        *o = (at(-2) - at(2) + 8.0 * (at(1) - at(-1))) * c;
    });
}

struct CnOperator<'a> {
    spec: GridSpec,
    coef: &'a Coefficients,
    fft: Fft2,
    /// Symbol of the flat preconditioner for `W + i(dt/2)K`.
    precond: Vec<Complex64>,
    dt: f64,
    scratch: Vec<Vec<Complex64>>,
}

impl<'a> CnOperator<'a> {
    fn new(spec: GridSpec, coef: &'a Coefficients, dt: f64) -> Self {
        let dx = spec.dx();
        let keff = |k: f64| {
            let th = k * dx;
            th.sin() * (4.0 - th.cos()) / (3.0 * dx)
        };
        let precond = (0..spec.len())
            .map(|idx| {
                let s = if spec.dims == 1 {
                    keff(spec.wavenumber(idx)).powi(2)
                } else {
                    keff(spec.wavenumber(idx / spec.n)).powi(2) + keff(spec.wavenumber(idx % spec.n)).powi(2)
                };
                1.0 / (Complex64::new(1.0, 0.0) + I * (0.5 * dt) * (0.5 * s))
            })
            .collect();
        CnOperator {
            spec,
            coef,
            fft: Fft2::new(&spec),
            precond,
            dt,
            scratch: vec![vec![Complex64::new(0.0, 0.0); spec.len()]; 4],
        }
    }

    /// `K u = (1/2) sum_i D_i^T (A^{ij} D_j u) + W (V - i sigma) u`, optionally without the sponge.
    fn apply_k(&mut self, u: &[Complex64], out: &mut [Complex64], sponge: bool) {
        let spec = self.spec;
        let [d0, d1, f0, f1] = &mut self.scratch[..] else {
            unreachable!()
        };
        diff4(&spec, u, 0, d0);
        let c = self.coef;
        if spec.dims == 1 {
            f0.par_iter_mut().zip(d0.par_iter()).zip(&c.conduct).for_each(|((f, d), a)| *f = a[0] * d);
            diff4(&spec, f0, 0, d1);
        } else {
            diff4(&spec, u, 1, d1);
            f0.par_iter_mut()
                .zip(f1.par_iter_mut())
                .enumerate()
                .for_each(|(idx, (a0, a1))| {
                    let a = c.conduct[idx];
                    *a0 = a[0] * d0[idx] + a[1] * d1[idx];
                    *a1 = a[1] * d0[idx] + a[2] * d1[idx];
                });
            diff4(&spec, f0, 0, d0);
            diff4(&spec, f1, 1, d1);
            d1.par_iter_mut().zip(d0.par_iter()).for_each(|(a, b)| *a += b);
        }
        // D^T = -D for periodic central differences
        out.par_iter_mut().enumerate().for_each(|(idx, o)| {
            let s = if sponge { c.sponge[idx] } else { 0.0 };
            *o = -0.5 * d1[idx] + c.weight[idx] * Complex64::new(c.potential[idx], -s) * u[idx];
        });
    }

    /// `(W + i (dt/2) K) u`.
    fn apply_lhs(&mut self, u: &[Complex64], out: &mut [Complex64]) {
        self.apply_k(u, out, true);
        let h = 0.5 * self.dt;
        let w = &self.coef.weight;
        out.par_iter_mut()
            .zip(u.par_iter())
            .zip(w.par_iter())
            .for_each(|((o, v), w)| *o = w * v + I * h * *o);
    }

    fn precondition(&self, r: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(r);
        self.fft.run(out, true);
        out.par_iter_mut().zip(&self.precond).for_each(|(a, p)| *a *= p);
        self.fft.run(out, false);
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    chunked_sum(a.len(), |k| a[k].conj() * b[k])
}

fn norm2(a: &[Complex64]) -> f64 {
    chunked_sum(a.len(), |k| a[k].norm_sqr()).sqrt()
}

/// Right-preconditioned BiCGSTAB for `(W + i(dt/2)K) x = b`; returns iterations.
fn bicgstab(op: &mut CnOperator<'_>, b: &[Complex64], x: &mut [Complex64], tol: f64) -> Result<usize> {
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = vec![zero; n];
    op.apply_lhs(x, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(r, b)| *r = b - *r);
    if norm2(&r) <= tol * bnorm {
        return Ok(0);
    }
    let r_hat = r.clone();
    let mut rho = Complex64::new(1.0, 0.0);
    let mut alpha = Complex64::new(1.0, 0.0);
    let mut omega = Complex64::new(1.0, 0.0);
    let mut v = vec![zero; n];
    let mut p = vec![zero; n];
    let mut ph = vec![zero; n];
    let mut s = vec![zero; n];
    let mut sh = vec![zero; n];
    let mut t = vec![zero; n];
    for it in 1..=500 {
        let rho_new = dot(&r_hat, &r);
        if rho_new.norm() == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        p.par_iter_mut()
            .zip(r.par_iter())
            .zip(v.par_iter())
            .for_each(|((p, r), v)| *p = r + beta * (*p - omega * v));
        op.precondition(&p, &mut ph);
        op.apply_lhs(&ph, &mut v);
        alpha = rho / dot(&r_hat, &v);
        s.par_iter_mut()
            .zip(r.par_iter())
            .zip(v.par_iter())
            .for_each(|((s, r), v)| *s = r - alpha * v);
        if norm2(&s) <= tol * bnorm {
            x.par_iter_mut().zip(ph.par_iter()).for_each(|(x, p)| *x += alpha * p);
            return Ok(it);
        }
        op.precondition(&s, &mut sh);
        op.apply_lhs(&sh, &mut t);
        let tt = dot(&t, &t).re;
        omega = dot(&t, &s) / tt;
        x.par_iter_mut()
            .zip(ph.par_iter())
            .zip(sh.par_iter())
            .for_each(|((x, p), s)| *x += alpha * p + omega * s);
        r.par_iter_mut()
            .zip(s.par_iter())
            .zip(t.par_iter())
            .for_each(|((r, s), t)| *r = s - omega * t);
        let res = norm2(&r);
        if res <= tol * bnorm {
            return Ok(it);
        }
        if omega.norm() == 0.0 {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: 500,
        residual: norm2(&r) / bnorm,
    })
}

fn weighted_mass(u: &[Complex64], w: &[f64], vol: f64) -> f64 {
    chunked_sum(u.len(), |k| w[k] * u[k].norm_sqr()) * vol
}

fn crank_nicolson(grid: &WavefieldGrid, coef: &Coefficients, steps: usize, dt: f64, tol: f64) -> Result<Evolution> {
    let spec = grid.spec;
    let vol = spec.cell_volume();
    let mut op = CnOperator::new(spec, coef, dt.max(f64::MIN_POSITIVE));
    let mut u = grid.values.clone();
    let mut ku = vec![Complex64::new(0.0, 0.0); u.len()];
    let energy = |op: &mut CnOperator<'_>, u: &[Complex64], ku: &mut [Complex64]| {
        op.apply_k(u, ku, false);
        dot(u, ku).re / weighted_mass(u, &op.coef.weight, 1.0).max(f64::MIN_POSITIVE)
    };
    let e0 = energy(&mut op, &u, &mut ku);
    let norm0 = weighted_mass(&u, &coef.weight, vol).sqrt();
    let has_sponge = coef.sponge.iter().any(|s| *s > 0.0);
    let mut absorbed = 0.0;
    let mut rhs = vec![Complex64::new(0.0, 0.0); u.len()];
    let mut max_it = 0;
    let h = 0.5 * dt;
    for _ in 0..steps {
        op.apply_k(&u, &mut ku, true);
        rhs.par_iter_mut()
            .zip(u.par_iter())
            .zip(ku.par_iter())
            .zip(coef.weight.par_iter())
            .for_each(|(((r, v), k), w)| *r = w * v - I * h * k);
        let before = if has_sponge { weighted_mass(&u, &coef.weight, vol) } else { 0.0 };
        let mut next = u.clone();
        let it = bicgstab(&mut op, &rhs, &mut next, tol)?;
        max_it = max_it.max(it);
        if has_sponge {
            // the sponge is the only non-Hermitian part, so the mass change is absorption
            absorbed += before - weighted_mass(&next, &coef.weight, vol);
        }
        u = next;
    }
    let e1 = energy(&mut op, &u, &mut ku);
    let mut ev = finish(grid, u, steps, dt, norm0, absorbed, e0, e1, max_it)?;
    let n1 = weighted_mass(&ev.grid.values, &coef.weight, vol).sqrt();
    ev.norm_final = n1;
    ev.mass_drift = ((n1 * n1 + absorbed).max(0.0).sqrt() - norm0).abs();
    Ok(ev)
}

/// Observed temporal order from runs at `dt`, `dt/2`, `dt/4` on the same grid.
pub fn self_convergence_order(metric: &dyn ScatteringMetric, grid: &WavefieldGrid, cfg: &SolverConfig, t_final: f64) -> Result<f64> {
    let runs: Vec<Result<Evolution>> = [1.0, 0.5, 0.25]
        .par_iter()
        .map(|f| {
            let mut c = *cfg;
            c.dt *= f;
            evolve(metric, grid, &c, t_final)
        })
        .collect();
    let mut g = Vec::new();
    for r in runs {
        g.push(r?.grid);
    }
    let e1 = g[0].l2_distance(&g[1])?;
    let e2 = g[1].l2_distance(&g[2])?;
    Ok((e1 / e2).log2())
}

/// Annulus `[r1, r2]` cutoff: `C^infinity`, equal to 1 on the middle half.
pub fn annulus_cutoff(r: f64, r1: f64, r2: f64) -> f64 {
    let ramp = 0.25 * (r2 - r1);
    smooth_unit_step((r - r1) / ramp) * smooth_unit_step((r2 - r) / ramp)
}

fn smooth_unit_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let b = (-1.0 / (1.0 - u)).exp();
        a / (a + b)
    }
}

/// `(2 pi T)^{-n/2} e^{-i |z - w0|^2 / 2T}` times the annulus cutoff in `|z|`.
pub fn make_quadratic_data(spec: &GridSpec, w0: &[f64], t_focus: f64, annulus: [f64; 2], sponge_width: f64) -> Result<WavefieldGrid> {
    if w0.len() != spec.dims {
        return Err(Error::domain("w0 must match the grid dimension"));
    }
    if !(t_focus > 0.0) {
        return Err(Error::domain("focus time T must be positive"));
    }
    let [r1, r2] = annulus;
    if !(r1 >= 0.0 && r2 > r1) {
        return Err(Error::domain("annulus needs 0 <= R1 < R2"));
    }
    if r2 >= spec.half_width - sponge_width {
        return Err(Error::domain(format!(
            "annulus outer radius {r2} must stay inside box minus sponge ({})",
            spec.half_width - sponge_width
        )));
    }
    let amp = (2.0 * PI * t_focus).powf(-(spec.dims as f64) / 2.0);
    let w0 = w0.to_vec();
    Ok(WavefieldGrid::from_fn(*spec, move |z| {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let chi = annulus_cutoff(r, r1, r2);
        if chi == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let d2: f64 = z.iter().zip(&w0).map(|(a, b)| (a - b) * (a - b)).sum();
        Complex64::from_polar(amp * chi, -d2 / (2.0 * t_focus))
    }))
}

/// Peak of `|u|` with sub-grid refinement.
#[derive(Clone, Debug, Serialize)]
pub struct PeakReport {
    pub location: Vec<f64>,
    pub index: Vec<usize>,
    pub value: f64,
    /// Median of `|u|` over cells with `|u| >= 1e-3 max |u|`.
    pub background: f64,
    pub ratio: f64,
    pub inconclusive: bool,
}

/// First (row-major) maximum of `|u|`, refined by a parabola through the
/// logarithms of the neighbouring values along each axis.
pub fn detect_peak(grid: &WavefieldGrid) -> PeakReport {
    let spec = grid.spec;
    let mags: Vec<f64> = grid.values.iter().map(|v| v.norm()).collect();
    let mut best = 0;
    for (k, m) in mags.iter().enumerate() {
        if *m > mags[best] {
            best = k;
        }
    }
    let peak = mags[best];
    let n = spec.n;
    let idx: Vec<usize> = if spec.dims == 1 { vec![best] } else { vec![best / n, best % n] };
    let mut location = Vec::with_capacity(spec.dims);
    for axis in 0..spec.dims {
        let neighbour = |d: i64| -> f64 {
            let mut id = idx.clone();
            id[axis] = (id[axis] as i64 + d).rem_euclid(n as i64) as usize;
            let flat = if spec.dims == 1 { id[0] } else { id[0] * n + id[1] };
            mags[flat]
        };
        let (a, b, c) = (neighbour(-1), peak, neighbour(1));
        let mut off = 0.0;
        if a > 0.0 && c > 0.0 && b > 0.0 {
            let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
            let den = la - 2.0 * lb + lc;
            if den < 0.0 {
                off = (0.5 * (la - lc) / den).clamp(-0.5, 0.5);
            }
        }
        location.push(spec.coord(idx[axis]) + off * spec.dx());
    }
    let floor = 1e-3 * peak;
    let mut above: Vec<f64> = mags.iter().cloned().filter(|m| *m >= floor && *m > 0.0).collect();
    let background = if above.is_empty() {
        0.0
    } else {
        above.sort_by(f64::total_cmp);
        let m = above.len();
        if m % 2 == 1 {
            above[m / 2]
        } else {
            0.5 * (above[m / 2 - 1] + above[m / 2])
        }
    };
    let ratio = if background > 0.0 { peak / background } else { 1.0 };
    PeakReport {
        location,
        index: idx,
        value: peak,
        background,
        ratio,
        inconclusive: ratio < 2.0,
    }
}

/// Outcome of the quadratic-data refocusing run.
#[derive(Clone, Debug, Serialize)]
pub struct FocusReport {
    pub w0: Vec<f64>,
    pub focus_time: f64,
    pub evaluated_at: f64,
    pub peak: PeakReport,
    /// Peak offset from `w0` in grid cells (max over axes).
    pub offset_cells: f64,
    /// `T pi / R2`.
    pub diffraction_width: f64,
    pub absorbed: f64,
    pub mass_drift: f64,
    pub steps: usize,
}

/// Evolves the truncated quadratic data to `t_eval` (default `T`) and locates the peak.
pub fn focusing_experiment(
    metric: &dyn ScatteringMetric,
    w0: &[f64],
    t_focus: f64,
    spec: &GridSpec,
    cfg: &SolverConfig,
    annulus: [f64; 2],
    t_eval: Option<f64>,
) -> Result<FocusReport> {
    if let Some(rf) = metric.flat_outside_radius() {
        if annulus[0] <= rf {
            return Err(Error::domain(format!(
                "annulus inner radius {} must exceed the flat radius {rf}",
                annulus[0]
            )));
        }
    }
    let data = make_quadratic_data(spec, w0, t_focus, annulus, cfg.sponge_width)?;
    let t_eval = t_eval.unwrap_or(t_focus);
    let ev = evolve(metric, &data, cfg, t_eval)?;
    let peak = detect_peak(&ev.grid);
    let offset_cells = peak
        .location
        .iter()
        .zip(w0)
        .map(|(a, b)| (a - b).abs() / spec.dx())
        .fold(0.0, f64::max);
    Ok(FocusReport {
        w0: w0.to_vec(),
        focus_time: t_focus,
        evaluated_at: t_eval,
        peak,
        offset_cells,
        diffraction_width: t_focus * PI / annulus[1],
        absorbed: ev.absorbed,
        mass_drift: ev.mass_drift,
        steps: ev.steps,
    })
}

/// Directions probed by [`estimate_wfsc`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Cone {
    /// Central boundary angle.
    pub center: f64,
    pub half_angle: f64,
    pub rays: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WfscOptions {
    /// Radial samples per ray; 0 picks four per grid cell.
    pub samples: usize,
    /// Detections weaker than this fraction of the strongest ray are dropped.
    pub relative_threshold: f64,
    pub absolute_threshold: f64,
}

impl Default for WfscOptions {
    fn default() -> Self {
        WfscOptions {
            samples: 0,
            relative_threshold: 0.1,
            absolute_threshold: 1e-300,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WfscDetection {
    pub y: f64,
    pub nu: f64,
    pub mu: f64,
    pub strength: f64,
}

/// Estimates `(nu, mu)` of `e^{-i r^2 / 2t} u` along rays of a cone: `nu` is the
/// dominant radial frequency (Hann-windowed spectral peak, `u ~ e^{i nu r}`),
/// `mu` the angular phase derivative divided by `r`.
pub fn estimate_wfsc(grid: &WavefieldGrid, t: f64, cone: &Cone, annulus: [f64; 2], opts: &WfscOptions) -> Result<Vec<WfscDetection>> {
    let spec = grid.spec;
    if spec.dims != 2 {
        return Err(Error::domain("estimate_wfsc needs a 2D grid"));
    }
    if t == 0.0 || !t.is_finite() {
        return Err(Error::domain("t must be nonzero"));
    }
    let [r1, r2] = annulus;
    if !(r2 > r1 && r1 > 0.0) || r2 + 3.0 * spec.dx() >= spec.half_width {
        return Err(Error::domain("annulus must lie inside the box"));
    }
    if cone.rays == 0 || !(cone.half_angle >= 0.0) {
        return Err(Error::domain("cone needs at least one ray"));
    }
    let twist = WavefieldGrid {
        spec,
        time: grid.time,
        values: grid
            .values
            .par_iter()
            .enumerate()
            .map(|(idx, v)| {
                let p = spec.point(idx);
                v * Complex64::from_polar(1.0, -(p[0] * p[0] + p[1] * p[1]) / (2.0 * t))
            })
            .collect(),
    };
    let m = if opts.samples > 0 {
        opts.samples
    } else {
        ((r2 - r1) / spec.dx() * 4.0).ceil() as usize + 1
    };
    let rs: Vec<f64> = (0..m).map(|k| r1 + (r2 - r1) * k as f64 / (m - 1) as f64).collect();
    let window: Vec<f64> = (0..m).map(|k| (PI * k as f64 / (m - 1) as f64).sin().powi(2)).collect();
    let wsum: f64 = window.iter().sum();
    let angles: Vec<f64> = (0..cone.rays)
        .map(|k| {
            if cone.rays == 1 {
                cone.center
            } else {
                cone.center - cone.half_angle + 2.0 * cone.half_angle * k as f64 / (cone.rays - 1) as f64
            }
        })
        .collect();
    let nyquist = PI / spec.dx();
    let dnu = PI / (r2 - r1) / 4.0;
    let dth = 1e-4;
    let raw: Vec<WfscDetection> = angles
        .par_iter()
        .map(|&th| {
            let at = |r: f64, a: f64| twist.interpolate(&[r * a.cos(), r * a.sin()]);
            let v: Vec<Complex64> = rs.iter().map(|&r| at(r, th)).collect();
            let spectrum = |nu: f64| -> f64 {
                v.iter()
                    .zip(&rs)
                    .zip(&window)
                    .map(|((v, r), w)| w * v * Complex64::from_polar(1.0, -nu * r))
                    .sum::<Complex64>()
                    .norm()
            };
            let kmax = (nyquist / dnu).floor() as i64;
            let mut best = (0.0, spectrum(0.0));
            for k in -kmax..=kmax {
                let nu = k as f64 * dnu;
                let s = spectrum(nu);
                if s > best.1 {
                    best = (nu, s);
                }
            }
            let nu = golden_max(&spectrum, best.0 - dnu, best.0 + dnu);
            let strength = spectrum(nu) / wsum;
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, &r) in rs.iter().enumerate() {
                let dv = (at(r, th + dth) - at(r, th - dth)) / (2.0 * dth);
                num += window[k] * (v[k].conj() * dv).im / r;
                den += window[k] * v[k].norm_sqr();
            }
            let mu = if den > 0.0 { num / den } else { 0.0 };
            WfscDetection {
                y: crate::geometry::wrap_angle(th),
                nu,
                mu,
                strength,
            }
        })
        .collect();
    let smax = raw.iter().map(|d| d.strength).fold(0.0, f64::max);
    Ok(raw
        .into_iter()
        .filter(|d| d.strength.is_finite() && d.strength >= opts.absolute_threshold && d.strength >= opts.relative_threshold * smax && d.strength > 0.0)
        .collect())
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Euclidean, Potential};

    #[test]
    fn grid_spec_rejects_non_power_of_two() {
        assert!(GridSpec::new(2, 100, 10.0).is_err());
        assert!(GridSpec::new(3, 64, 10.0).is_err());
        assert!(GridSpec::new(2, 64, 10.0).is_ok());
    }

    #[test]
    fn peak_of_constant_field_is_flagged() {
        let spec = GridSpec::new(2, 16, 4.0).unwrap();
        let g = WavefieldGrid::from_fn(spec, |_| Complex64::new(2.0, 0.0));
        let p = detect_peak(&g);
        assert_eq!(p.index, vec![0, 0]);
        assert_eq!(p.ratio, 1.0);
        assert!(p.inconclusive);
    }

    #[test]
    fn quadratic_data_modulus() {
        let spec = GridSpec::new(2, 64, 20.0).unwrap();
        let g = make_quadratic_data(&spec, &[1.0, -1.0], 1.0, [5.0, 15.0], 2.0).unwrap();
        for (idx, v) in g.values.iter().enumerate() {
            let p = spec.point(idx);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let want = annulus_cutoff(r, 5.0, 15.0) / (2.0 * PI);
            assert!((v.norm() - want).abs() < 1e-15);
        }
        assert!(make_quadratic_data(&spec, &[0.0, 0.0], 1.0, [5.0, 19.0], 2.0).is_err());
    }

    #[test]
    fn splitstep_requires_flat_metric() {
        let spec = GridSpec::new(2, 32, 10.0).unwrap();
        let g = WavefieldGrid::zeros(spec);
        let m = crate::geometry::ConformalBump::new(
            2,
            0.2,
            crate::geometry::Bump::new(vec![0.0, 0.0], 1.0).unwrap(),
            0.2,
            5.0,
            Potential::Zero,
        )
        .unwrap();
        assert!(evolve(&m, &g, &SolverConfig::new(Scheme::SplitStep, 0.01), 0.1).is_err());
        let flat = Euclidean::new(2, 0.2, 5.0, Potential::Zero).unwrap();
        assert!(evolve(&flat, &g, &SolverConfig::new(Scheme::SplitStep, 0.01), 0.1).is_ok());
    }
}
