//! Short-time WKB parametrix: two-point geodesics, the phase `d^2/2`, the
//! transport amplitudes and kernel evaluation, plus a residual-order probe.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extrap::linear_fit;
use crate::geometry::ScatteringMetric;
use crate::linalg::{self, Mat, MAX_DIM, ZERO};
use crate::ode;

/// Fixed number of DP5 steps for two-point shooting.
pub const DEFAULT_BVP_STEPS: usize = 128;
/// Half-width of the velocity stencil used to differentiate the exponential map.
pub const TUBE_OFFSET: f64 = 1e-2;
/// Gauss–Legendre nodes for the transport integrals.
pub const DEFAULT_QUAD_NODES: usize = 16;
/// Offset of the stencil for the Laplacian of `a0`.
pub const DEFAULT_A1_STEP: f64 = 1e-2;

/// Nodes and weights of Gauss–Legendre quadrature on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; m];
    let mut ws = vec![0.0; m];
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[i] = 0.5 * (1.0 - x);
        ws[i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    (idx.iter().map(|&i| xs[i]).collect(), idx.iter().map(|&i| ws[i]).collect())
}

/// Geodesic state in coordinates relative to the source point.
fn relative_rhs<'a>(metric: &'a dyn ScatteringMetric, w: &'a [f64]) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + 'a {
    let n = w.len();
    move |_t, y, dy| {
        let mut z = [0.0; MAX_DIM];
        for k in 0..n {
            z[k] = w[k] + y[k];
        }
        let co = metric.cometric_jet(&z[..n])?;
        let (vel, force) = co.hamilton(&y[n..]);
        for k in 0..n {
            dy[k] = vel[k];
            dy[n + k] = -force[k];
        }
        Ok(())
    }
}

/// Integrates `exp_w(sigma v)` over `sigma in [0, 1]`, returning `(z - w, p)` at
/// each requested node (sorted, in `(0, 1]`), with `steps_per` steps between nodes.
fn ray_nodes(
    metric: &dyn ScatteringMetric,
    w: &[f64],
    gw: &Mat,
    v: &[f64],
    nodes: &[f64],
    steps_per: usize,
) -> Result<Vec<Vec<f64>>> {
    let n = w.len();
    let p0 = linalg::mat_vec(n, gw, v);
    let mut y = vec![0.0; 2 * n];
    y[n..].copy_from_slice(&p0[..n]);
    let mut rhs = relative_rhs(metric, w);
    let mut out = Vec::with_capacity(nodes.len());
    let mut s = 0.0;
    for &node in nodes {
        if node > s {
            y = ode::fixed_dp5(&mut rhs, s, &y, node, steps_per, |_, _, _| {})?;
        }
        out.push(y.clone());
        s = node;
    }
    Ok(out)
}

/// Minimizing geodesic between two interior points.
#[derive(Clone, Debug)]
pub struct GeodesicSegment {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    /// Initial velocity for unit parameter time: `z = exp_w(velocity)`.
    pub velocity: Vec<f64>,
    /// Unit initial covector (zero when `z = w`).
    pub eta_hat: Vec<f64>,
    pub length: f64,
    /// Covector `d_z (d^2/2)` at the endpoint.
    pub end_covector: Vec<f64>,
    /// `(sigma, z(sigma))` at the integration mesh.
    pub samples: Vec<(f64, Vec<f64>)>,
    pub endpoint_miss: f64,
    pub steps: usize,
}

impl GeodesicSegment {
    pub fn phase(&self) -> f64 {
        0.5 * self.length * self.length
    }
}

/// Controls for two-point shooting.
#[derive(Clone, Copy, Debug)]
pub struct BvpOptions {
    pub tol: f64,
    pub steps: usize,
    pub max_iter: usize,
    /// Reject segments longer than the injectivity bound.
    pub check_injectivity: bool,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions {
            tol: 1e-12,
            steps: DEFAULT_BVP_STEPS,
            max_iter: 40,
            check_injectivity: true,
        }
    }
}

fn shoot_end(metric: &dyn ScatteringMetric, w: &[f64], gw: &Mat, v: &[f64], steps: usize) -> Result<Vec<f64>> {
    let n = w.len();
    let p0 = linalg::mat_vec(n, gw, v);
    let mut y = vec![0.0; 2 * n];
    y[n..].copy_from_slice(&p0[..n]);
    let mut rhs = relative_rhs(metric, w);
    ode::fixed_dp5(&mut rhs, 0.0, &y, 1.0, steps, |_, _, _| {})
}

/// Shooting with Newton iterations over the initial velocity, starting from the chord.
pub fn geodesic_bvp_with(metric: &dyn ScatteringMetric, w: &[f64], z: &[f64], opts: &BvpOptions) -> Result<GeodesicSegment> {
    let n = metric.dim();
    if w.len() != n || z.len() != n {
        return Err(Error::domain("endpoints must match the metric dimension"));
    }
    let gw = metric.metric_jet(w)?.g;
    let target: Vec<f64> = z.iter().zip(w).map(|(a, b)| a - b).collect();
    let scale = 1.0 + target.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let floor = 8.0 * f64::EPSILON * (scale + w.iter().map(|v| v.abs()).fold(0.0, f64::max));
    let goal = opts.tol.max(floor);
    let mut v = target.clone();
    let miss = |y: &[f64]| -> Vec<f64> { (0..n).map(|k| y[k] - target[k]).collect() };
    let nrm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut y = shoot_end(metric, w, &gw, &v, opts.steps)?;
    let mut f = miss(&y);
    let mut res = nrm(&f);
    let iota = metric.injectivity_bound();
    let mut iter = 0;
    let mut polished = false;
    loop {
        if res <= goal && (polished || res == 0.0) {
            break;
        }
        if iter >= opts.max_iter {
            if res <= goal {
                break;
            }
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: res,
            });
        }
        if res <= goal {
            polished = true;
        }
        iter += 1;
        let h = 1e-7 * (1.0 + nrm(&v));
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            let mut a = v.clone();
            a[j] += h;
            let ya = shoot_end(metric, w, &gw, &a, opts.steps)?;
            for i in 0..n {
                jac[(i, j)] = (ya[i] - y[i]) / h;
            }
        }
        let rhs = nalgebra::DVector::from_iterator(n, f.iter().map(|x| -x));
        let dv = linalg::solve(jac, rhs).ok_or(Error::NoConvergence {
            iterations: iter,
            residual: res,
        })?;
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-3 {
            let trial: Vec<f64> = (0..n).map(|k| v[k] + t * dv[k]).collect();
            if let Ok(yt) = shoot_end(metric, w, &gw, &trial, opts.steps) {
                let ft = miss(&yt);
                let rt = nrm(&ft);
                if rt < res || (polished && rt <= goal) {
                    v = trial;
                    y = yt;
                    f = ft;
                    res = rt;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            if res <= goal {
                break;
            }
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: res,
            });
        }
        if polished {
            break;
        }
    }
    let length = linalg::quad_form(n, &gw, &v, &v).sqrt();
    if opts.check_injectivity && length >= iota {
        return Err(Error::OutOfInjectivity { length, bound: iota });
    }
    let p0 = linalg::mat_vec(n, &gw, &v);
    let eta_hat = if length > 0.0 {
        p0[..n].iter().map(|p| p / length).collect()
    } else {
        vec![0.0; n]
    };
    // mesh samples for export
    let mut samples = Vec::with_capacity(opts.steps + 1);
    {
        let mut y0 = vec![0.0; 2 * n];
        y0[n..].copy_from_slice(&p0[..n]);
        let mut rhs = relative_rhs(metric, w);
        ode::fixed_dp5(&mut rhs, 0.0, &y0, 1.0, opts.steps, |_, s, yy| {
            samples.push((s, (0..n).map(|k| w[k] + yy[k]).collect()));
        })?;
    }
    Ok(GeodesicSegment {
        w: w.to_vec(),
        z: z.to_vec(),
        velocity: v,
        eta_hat,
        length,
        end_covector: y[n..].to_vec(),
        samples,
        endpoint_miss: res,
        steps: opts.steps,
    })
}

pub fn geodesic_bvp(metric: &dyn ScatteringMetric, w: &[f64], z: &[f64], tol: f64) -> Result<GeodesicSegment> {
    geodesic_bvp_with(
        metric,
        w,
        z,
        &BvpOptions {
            tol,
            ..Default::default()
        },
    )
}

/// `d(z, w)^2 / 2`.
pub fn phase_phi(metric: &dyn ScatteringMetric, w: &[f64], z: &[f64]) -> Result<f64> {
    Ok(geodesic_bvp_with(metric, w, z, &BvpOptions::default())?.phase())
}

/// `Phi - |d_z Phi|^2_g / 2` from a central-difference gradient of `Phi`.
pub fn eikonal_residual(metric: &dyn ScatteringMetric, w: &[f64], z: &[f64], h: f64) -> Result<f64> {
    let n = metric.dim();
    let phi = phase_phi(metric, w, z)?;
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let mut vals = [0.0; 4];
        for (slot, off) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
            let mut zz = z.to_vec();
            zz[k] += off * h;
            vals[slot] = phase_phi(metric, w, &zz)?;
        }
        grad[k] = (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * h);
    }
    let co = metric.cometric_jet(z)?;
    Ok(phi - 0.5 * co.norm2(&grad))
}

/// Leading amplitude with the transport source evaluated at the segment end.
#[derive(Clone, Debug, Serialize)]
pub struct AmplitudeJet {
    pub a0: f64,
    /// `-Laplacian(Phi)/2 + n/2` at `z` (positive-Laplacian sign convention).
    pub source_at_end: f64,
    pub a1: Option<[f64; 2]>,
    pub quad_nodes: usize,
    pub tube_offset: f64,
}

/// Ray-tube data along the geodesic `exp_w(sigma v)`.
struct Tube {
    /// Nodes in `(0, 1]`.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Transport source `f` at each node.
    source: Vec<f64>,
    /// Ray points at each node.
    points: Vec<Vec<f64>>,
}

fn tube(metric: &dyn ScatteringMetric, w: &[f64], v: &[f64], quad: usize, steps_per: usize) -> Result<Tube> {
    let n = w.len();
    let (mut nodes, mut weights) = gauss_legendre(quad);
    // endpoint for the source value at z
    nodes.push(1.0);
    weights.push(0.0);
    let gw = metric.metric_jet(w)?.g;
    let centre = ray_nodes(metric, w, &gw, v, &nodes, steps_per)?;
    let offs = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
    let coef = [-1.0, 9.0, -45.0, 45.0, -9.0, 1.0];
    // dq[m][i][j] = d q_i / d v_j at node m, likewise dp
    let mut dq = vec![[[0.0; MAX_DIM]; MAX_DIM]; nodes.len()];
    let mut dp = vec![[[0.0; MAX_DIM]; MAX_DIM]; nodes.len()];
    for j in 0..n {
        for (k, off) in offs.iter().enumerate() {
            let mut vv = v.to_vec();
            vv[j] += off * TUBE_OFFSET;
            let ray = ray_nodes(metric, w, &gw, &vv, &nodes, steps_per)?;
            for (m, y) in ray.iter().enumerate() {
                for i in 0..n {
                    dq[m][i][j] += coef[k] * y[i] / (60.0 * TUBE_OFFSET);
                    dp[m][i][j] += coef[k] * y[n + i] / (60.0 * TUBE_OFFSET);
                }
            }
        }
    }
    let mut source = Vec::with_capacity(nodes.len());
    let mut points = Vec::with_capacity(nodes.len());
    for (m, &sig) in nodes.iter().enumerate() {
        let z: Vec<f64> = (0..n).map(|k| w[k] + centre[m][k]).collect();
        // Hess Phi = (sigma dp/dv)(dq/dv)^{-1}
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| dq[m][i][j]);
        let b = nalgebra::DMatrix::from_fn(n, n, |i, j| sig * dp[m][i][j]);
        let ainv = a.try_inverse().ok_or_else(|| Error::NoConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        let hm = b * ainv;
        let mut hess = ZERO;
        for i in 0..n {
            for j in 0..n {
                hess[i][j] = 0.5 * (hm[(i, j)] + hm[(j, i)]);
            }
        }
        let jet = metric.metric_jet(&z)?;
        let co = jet.cometric(&z)?;
        let gamma = jet.christoffel(&co.ginv);
        let grad: Vec<f64> = (0..n).map(|k| sig * centre[m][n + k]).collect();
        let mut lap = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut c = hess[i][j];
                for k in 0..n {
                    c -= gamma[k][i][j] * grad[k];
                }
                lap += co.ginv[i][j] * c;
            }
        }
        source.push(-0.5 * lap + 0.5 * n as f64);
        points.push(z);
    }
    Ok(Tube {
        nodes,
        weights,
        source,
        points,
    })
}

fn check_conditioning(t: &Tube) -> Result<()> {
    if t.source.iter().any(|f| !f.is_finite()) {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    Ok(())
}

/// `a0` and the endpoint transport source for a computed segment.
pub fn transport_a0_jet(metric: &dyn ScatteringMetric, seg: &GeodesicSegment, quad: usize) -> Result<AmplitudeJet> {
    Ok(a0_with_points(metric, seg, quad)?.0)
}

/// Also returns the ray points at the quadrature nodes.
fn a0_with_points(metric: &dyn ScatteringMetric, seg: &GeodesicSegment, quad: usize) -> Result<(AmplitudeJet, Vec<Vec<f64>>)> {
    let steps_per = (seg.steps / quad).max(4);
    let mut t = tube(metric, &seg.w, &seg.velocity, quad, steps_per)?;
    check_conditioning(&t)?;
    let m = t.nodes.len() - 1;
    let log_a0: f64 = (0..m).map(|k| t.weights[k] * t.source[k] / t.nodes[k]).sum();
    t.points.truncate(m);
    Ok((
        AmplitudeJet {
            a0: log_a0.exp(),
            source_at_end: t.source[m],
            a1: None,
            quad_nodes: quad,
            tube_offset: TUBE_OFFSET,
        },
        t.points,
    ))
}

/// Leading transport amplitude `a0(z, w)`.
pub fn transport_a0(metric: &dyn ScatteringMetric, seg: &GeodesicSegment) -> Result<f64> {
    Ok(transport_a0_jet(metric, seg, DEFAULT_QUAD_NODES)?.a0)
}

/// `a0(z, w)` including the two-point solve.
pub fn amplitude_a0(metric: &dyn ScatteringMetric, w: &[f64], z: &[f64]) -> Result<f64> {
    let seg = geodesic_bvp_with(metric, w, z, &BvpOptions::default())?;
    transport_a0(metric, &seg)
}

/// First and second partials of `f` at `z` by fourth-order central differences.
fn fd_jet4(n: usize, z: &[f64], h: f64, f: &(dyn Fn(&[f64]) -> Result<f64> + Sync)) -> Result<(f64, [f64; MAX_DIM], Mat)> {
    let offs = [-2i32, -1, 1, 2];
    let c1 = [1.0, -8.0, 8.0, -1.0];
    let c2 = [-1.0, 16.0, 16.0, -1.0];
    let mut pts: Vec<Vec<f64>> = vec![z.to_vec()];
    for i in 0..n {
        for o in offs {
            let mut p = z.to_vec();
            p[i] += o as f64 * h;
            pts.push(p);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for oi in offs {
                for oj in offs {
                    let mut p = z.to_vec();
                    p[i] += oi as f64 * h;
                    p[j] += oj as f64 * h;
                    pts.push(p);
                }
            }
        }
    }
    let vals: Vec<Result<f64>> = pts.par_iter().map(|p| f(p)).collect();
    let mut v = Vec::with_capacity(vals.len());
    for r in vals {
        v.push(r?);
    }
    let f0 = v[0];
    let mut grad = [0.0; MAX_DIM];
    let mut hess = ZERO;
    let mut idx = 1;
    for i in 0..n {
        let mut g = 0.0;
        let mut s = -30.0 * f0;
        for k in 0..4 {
            g += c1[k] * v[idx + k];
            s += c2[k] * v[idx + k];
        }
        grad[i] = g / (12.0 * h);
        hess[i][i] = s / (12.0 * h * h);
        idx += 4;
    }
    for i in 0..n {
        for j in i + 1..n {
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    s += c1[a] * c1[b] * v[idx + 4 * a + b];
                }
            }
            hess[i][j] = s / (144.0 * h * h);
            hess[j][i] = hess[i][j];
            idx += 16;
        }
    }
    Ok((f0, grad, hess))
}

/// Laplace–Beltrami `g^{ij}(d_ij u - Gamma^k_ij d_k u)` from partials.
fn laplace_beltrami(metric: &dyn ScatteringMetric, z: &[f64], grad: &[f64], hess: &Mat) -> Result<f64> {
    let n = z.len();
    let jet = metric.metric_jet(z)?;
    let co = jet.cometric(z)?;
    let gamma = jet.christoffel(&co.ginv);
    let mut lap = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut c = hess[i][j];
            for k in 0..n {
                c -= gamma[k][i][j] * grad[k];
            }
            lap += co.ginv[i][j] * c;
        }
    }
    Ok(lap)
}

/// First correction `a1(z, w) = a0 * int_0^1 R`, with
/// `R = (-(i/2) Laplacian(a0) - i V a0) / a0` along the segment; the positive
/// Laplacian of `a0` uses a fourth-order stencil of offset `grid_step`.
pub fn transport_a1(metric: &dyn ScatteringMetric, seg: &GeodesicSegment, grid_step: f64) -> Result<Complex64> {
    transport_a1_with(metric, seg, grid_step, 12)
}

pub fn transport_a1_with(metric: &dyn ScatteringMetric, seg: &GeodesicSegment, grid_step: f64, quad: usize) -> Result<Complex64> {
    if !(grid_step > 0.0) {
        return Err(Error::domain("grid_step must be positive"));
    }
    let n = metric.dim();
    let w = seg.w.clone();
    let a0_end = transport_a0(metric, seg)?;
    let gw = metric.metric_jet(&w)?.g;
    let (nodes, weights) = gauss_legendre(quad);
    let centre = ray_nodes(metric, &w, &gw, &seg.velocity, &nodes, (seg.steps / quad).max(4))?;
    let a0_at = |p: &[f64]| -> Result<f64> {
        let s = geodesic_bvp_with(metric, &w, p, &BvpOptions::default())?;
        transport_a0(metric, &s)
    };
    let mut integral = Complex64::new(0.0, 0.0);
    for (m, y) in centre.iter().enumerate() {
        let z: Vec<f64> = (0..n).map(|k| w[k] + y[k]).collect();
        let (a0, grad, hess) = fd_jet4(n, &z, grid_step, &a0_at)?;
        let lb = laplace_beltrami(metric, &z, &grad[..n], &hess)?;
        // positive Laplacian = -Laplace-Beltrami
        let delta_a0 = -lb;
        let v = metric.potential(&z);
        let r = Complex64::new(0.0, -0.5 * delta_a0 - v * a0) / a0;
        integral += weights[m] * r;
    }
    Ok(a0_end * integral)
}

/// Cutoff equal to 1 for `d <= iota/4` and 0 for `d >= iota/2`, with the
/// quintic smoothstep `1 - (6u^5 - 15u^4 + 10u^3)`, `u = (d - iota/4)/(iota/4)`, between.
pub fn cutoff(d: f64, iota: f64) -> f64 {
    let q = iota / 4.0;
    if d <= q {
        1.0
    } else if d >= 2.0 * q {
        0.0
    } else {
        let u = (d - q) / q;
        1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

/// Parametrix kernel of order `J in {0, 1}`.
#[derive(Clone, Copy, Debug)]
pub struct ParametrixKernel<'a> {
    pub metric: &'a dyn ScatteringMetric,
    pub order: u8,
    pub bvp: BvpOptions,
    pub quad_nodes: usize,
    pub a1_step: f64,
}

impl<'a> ParametrixKernel<'a> {
    pub fn new(metric: &'a dyn ScatteringMetric, order: u8) -> Result<Self> {
        if order > 1 {
            return Err(Error::domain("parametrix order must be 0 or 1"));
        }
        Ok(ParametrixKernel {
            metric,
            order,
            bvp: BvpOptions::default(),
            quad_nodes: DEFAULT_QUAD_NODES,
            a1_step: DEFAULT_A1_STEP,
        })
    }

    pub fn iota(&self) -> f64 {
        self.metric.injectivity_bound()
    }

    /// Cutoff radii `(iota/4, iota/2)`.
    pub fn cutoff_radii(&self) -> (f64, f64) {
        (self.iota() / 4.0, self.iota() / 2.0)
    }
}

/// `chi(d) (2 pi t)^{-n/2} e^{i Phi / t} (a0 + t a1)`.
pub fn parametrix_eval(kernel: &ParametrixKernel<'_>, z: &[f64], w: &[f64], t: f64) -> Result<Complex64> {
    if !(t > 0.0) {
        return Err(Error::domain("parametrix needs t > 0"));
    }
    let metric = kernel.metric;
    let n = metric.dim();
    let seg = match geodesic_bvp_with(metric, w, z, &kernel.bvp) {
        Ok(s) => s,
        Err(Error::OutOfInjectivity { .. }) => return Ok(Complex64::new(0.0, 0.0)),
        Err(e) => return Err(e),
    };
    let chi = cutoff(seg.length, kernel.iota());
    if chi == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let a0 = transport_a0_jet(metric, &seg, kernel.quad_nodes)?.a0;
    let mut amp = Complex64::new(a0, 0.0);
    if kernel.order == 1 {
        amp += t * transport_a1(metric, &seg, kernel.a1_step)?;
    }
    let pref = (2.0 * std::f64::consts::PI * t).powf(-(n as f64) / 2.0);
    let phase = Complex64::from_polar(1.0, seg.phase() / t);
    Ok(chi * pref * phase * amp)
}

/// Grid for [`residual_order`]: square of `(2K+1)^2` points, spacing `spacing`,
/// centred at the source point.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ResidualGrid {
    pub spacing: f64,
    pub half_points: usize,
}

impl ResidualGrid {
    /// Covers the disc `d <= iota/4` with the given spacing.
    pub fn covering(iota: f64, spacing: f64) -> Self {
        ResidualGrid {
            spacing,
            half_points: ((iota / 4.0) / spacing).ceil() as usize + 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualSample {
    pub t: f64,
    /// `|| t^{n/2} t (D_t + H) U ||` over the evaluation disc.
    pub residual: f64,
    /// Share of the residual carried by terms that vanish for exact data.
    pub noise_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub order: u8,
    pub samples: Vec<ResidualSample>,
    /// Log-log slope of the scaled residual against `t`.
    pub slope: f64,
    /// Slope of `|| t^{n/2} (D_t + H) U ||`, one less than `slope`.
    pub raw_slope: f64,
    /// `t`-range where the noise share stays below 10%.
    pub usable_t_range: Option<(f64, f64)>,
    pub evaluated_points: usize,
    pub grid: ResidualGrid,
}

// eighth-order central stencils
const D1_8: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
const D2_8: [f64; 5] = [-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];

struct Field2 {
    k: i64,
    data: Vec<f64>,
}

impl Field2 {
    fn side(&self) -> usize {
        (2 * self.k + 1) as usize
    }
    fn at(&self, i: i64, j: i64) -> f64 {
        let s = self.side() as i64;
        self.data[((i + self.k) * s + (j + self.k)) as usize]
    }
    fn dx(&self, i: i64, j: i64, h: f64) -> f64 {
        (1..=4).map(|m| D1_8[m - 1] * (self.at(i + m as i64, j) - self.at(i - m as i64, j))).sum::<f64>() / h
    }
    fn dy(&self, i: i64, j: i64, h: f64) -> f64 {
        (1..=4).map(|m| D1_8[m - 1] * (self.at(i, j + m as i64) - self.at(i, j - m as i64))).sum::<f64>() / h
    }
    fn dxx(&self, i: i64, j: i64, h: f64) -> f64 {
        let mut s = D2_8[0] * self.at(i, j);
        for m in 1..=4i64 {
            s += D2_8[m as usize] * (self.at(i + m, j) + self.at(i - m, j));
        }
        s / (h * h)
    }
    fn dyy(&self, i: i64, j: i64, h: f64) -> f64 {
        let mut s = D2_8[0] * self.at(i, j);
        for m in 1..=4i64 {
            s += D2_8[m as usize] * (self.at(i, j + m) + self.at(i, j - m));
        }
        s / (h * h)
    }
    fn dxy(&self, i: i64, j: i64, h: f64) -> f64 {
        let mut s = 0.0;
        for a in 1..=4i64 {
            for b in 1..=4i64 {
                let c = D1_8[a as usize - 1] * D1_8[b as usize - 1];
                s += c * (self.at(i + a, j + b) - self.at(i + a, j - b) - self.at(i - a, j + b) + self.at(i - a, j - b));
            }
        }
        s / (h * h)
    }
    /// Six-point tensor Lagrange interpolation at fractional index `(fi, fj)`.
    fn interp(&self, fi: f64, fj: f64) -> f64 {
        let bi = fi.floor() as i64 - 2;
        let bj = fj.floor() as i64 - 2;
        let wts = |f: f64, b: i64| -> [f64; 6] {
            let mut w = [1.0; 6];
            for a in 0..6 {
                for c in 0..6 {
                    if a != c {
                        w[a] *= (f - (b + c as i64) as f64) / ((a as i64 - c as i64) as f64);
                    }
                }
            }
            w
        };
        let wi = wts(fi, bi);
        let wj = wts(fj, bj);
        let mut s = 0.0;
        for a in 0..6 {
            for c in 0..6 {
                s += wi[a] * wj[c] * self.at(bi + a as i64, bj + c as i64);
            }
        }
        s
    }
}

struct PointData {
    phi: f64,
    a0: f64,
    /// Ray points at the quadrature nodes.
    nodes: Vec<[f64; 2]>,
}

/// Measures how fast `t (D_t + H) U` decays as `t -> 0` on the disc
/// `d(z, w) <= iota/4`. The oscillatory factor `e^{i Phi/t}` is removed
/// analytically; all `z`-derivatives are eighth-order differences on the grid.
pub fn residual_order(kernel: &ParametrixKernel<'_>, w: &[f64], grid: &ResidualGrid, t_list: &[f64]) -> Result<ResidualReport> {
    let metric = kernel.metric;
    if metric.dim() != 2 {
        return Err(Error::domain("residual_order is implemented for n = 2"));
    }
    if t_list.len() < 2 || t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::domain("need at least two positive times"));
    }
    let tmin = t_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let tmax = t_list.iter().cloned().fold(0.0, f64::max);
    if (tmax / tmin).log10() < 1.5 {
        return Err(Error::domain("t_list must span at least 1.5 decades"));
    }
    let h = grid.spacing;
    let k = grid.half_points as i64;
    let iota = kernel.iota();
    let quad = kernel.quad_nodes;
    let (_, gl_weights) = gauss_legendre(quad);
    let ka0 = k + 12;
    let side = (2 * ka0 + 1) as usize;
    // stencil padding may reach past the injectivity bound
    let bvp = BvpOptions {
        check_injectivity: false,
        ..kernel.bvp
    };
    let pts: Vec<(i64, i64)> = (-ka0..=ka0).flat_map(|i| (-ka0..=ka0).map(move |j| (i, j))).collect();
    let data: Vec<Result<PointData>> = pts
        .par_iter()
        .map(|&(i, j)| {
            let z = [w[0] + i as f64 * h, w[1] + j as f64 * h];
            let seg = geodesic_bvp_with(metric, w, &z, &bvp)?;
            let (jet, ray) = a0_with_points(metric, &seg, quad)?;
            Ok(PointData {
                phi: seg.phase(),
                a0: jet.a0,
                nodes: ray.iter().map(|p| [p[0], p[1]]).collect(),
            })
        })
        .collect();
    let mut pd = Vec::with_capacity(data.len());
    for d in data {
        pd.push(d?);
    }
    let phi = Field2 {
        k: ka0,
        data: pd.iter().map(|p| p.phi).collect(),
    };
    let a0 = Field2 {
        k: ka0,
        data: pd.iter().map(|p| p.a0).collect(),
    };
    let idx = |i: i64, j: i64| ((i + ka0) as usize) * side + (j + ka0) as usize;
    let zpt = |i: i64, j: i64| [w[0] + i as f64 * h, w[1] + j as f64 * h];
    let lb_at = |f: &Field2, i: i64, j: i64| -> Result<(f64, [f64; 2])> {
        let z = zpt(i, j);
        let grad = [f.dx(i, j, h), f.dy(i, j, h)];
        let mut hess = ZERO;
        hess[0][0] = f.dxx(i, j, h);
        hess[1][1] = f.dyy(i, j, h);
        hess[0][1] = f.dxy(i, j, h);
        hess[1][0] = hess[0][1];
        Ok((laplace_beltrami(metric, &z, &grad, &hess)?, grad))
    };

    // a1 on the (K+4)-square
    let k1 = k + 4;
    let a1: Option<(Field2, Field2)> = if kernel.order == 1 {
        let k8 = k + 8;
        let mut lap_a0 = vec![0.0; ((2 * k8 + 1) * (2 * k8 + 1)) as usize];
        for i in -k8..=k8 {
            for j in -k8..=k8 {
                lap_a0[((i + k8) * (2 * k8 + 1) + (j + k8)) as usize] = lb_at(&a0, i, j)?.0;
            }
        }
        let lap = Field2 { k: k8, data: lap_a0 };
        let mut re = Vec::new();
        let mut im = Vec::new();
        for i in -k1..=k1 {
            for j in -k1..=k1 {
                let p = &pd[idx(i, j)];
                let mut integral = 0.0;
                for (m, node) in p.nodes.iter().enumerate() {
                    let fi = (node[0] - w[0]) / h;
                    let fj = (node[1] - w[1]) / h;
                    if fi.abs() > (k8 - 3) as f64 || fj.abs() > (k8 - 3) as f64 {
                        return Err(Error::domain("ray leaves the residual grid"));
                    }
                    let a = a0.interp(fi, fj);
                    // positive Laplacian of a0 is minus Laplace-Beltrami
                    let delta_a0 = -lap.interp(fi, fj);
                    let v = metric.potential(node);
                    integral += gl_weights[m] * (-0.5 * delta_a0 - v * a) / a;
                }
                re.push(0.0);
                im.push(p.a0 * integral);
            }
        }
        Some((Field2 { k: k1, data: re }, Field2 { k: k1, data: im }))
    } else {
        None
    };

    // t-independent brackets at the evaluation points
    let mut p2 = Vec::new();
    let mut p1 = Vec::new();
    let mut p0 = Vec::new();
    let mut pm1 = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            let ph = phi.at(i, j);
            let d = (2.0 * ph).sqrt();
            if d > iota / 4.0 {
                continue;
            }
            let z = zpt(i, j);
            let co = metric.cometric_jet(&z)?;
            let (lb_phi, gphi) = lb_at(&phi, i, j)?;
            let (lb_a0, ga0) = lb_at(&a0, i, j)?;
            let eik = ph - 0.5 * co.norm2(&gphi);
            let f = -0.5 * lb_phi + 1.0;
            let a = a0.at(i, j);
            let v = metric.potential(&z);
            let dot = |u: &[f64; 2]| linalg::quad_form(2, &co.ginv, &gphi, u);
            let t0 = dot(&ga0) - f * a;
            let c2 = Complex64::new(eik * a, 0.0);
            let mut c1 = Complex64::new(0.0, t0);
            let mut c0 = Complex64::new(0.5 * lb_a0 - v * a, 0.0);
            let mut cm1 = Complex64::new(0.0, 0.0);
            if let Some((re, im)) = &a1 {
                let a1v = Complex64::new(re.at(i, j), im.at(i, j));
                let (lb_re, g_re) = lb_at(re, i, j)?;
                let (lb_im, g_im) = lb_at(im, i, j)?;
                let ga1 = Complex64::new(dot(&g_re), dot(&g_im));
                c1 += eik * a1v;
                c0 += Complex64::i() * (ga1 - f * a1v + a1v);
                cm1 = 0.5 * Complex64::new(lb_re, lb_im) - v * a1v;
            }
            p2.push(c2);
            p1.push(c1);
            p0.push(c0);
            pm1.push(cm1);
        }
    }
    let npts = p2.len();
    if npts == 0 {
        return Err(Error::domain("no grid points inside the evaluation disc"));
    }
    let area = h * h;
    let mut samples = Vec::new();
    for &t in t_list {
        let mut tot = 0.0;
        let mut noise = 0.0;
        for q in 0..npts {
            let r = p2[q] / t + p1[q] + t * p0[q] + t * t * pm1[q];
            tot += r.norm_sqr();
            let spurious = if kernel.order == 1 { p2[q] / t + p1[q] + t * p0[q] } else { p2[q] / t + p1[q] };
            noise += spurious.norm_sqr();
        }
        let tot = (tot * area).sqrt();
        let noise = (noise * area).sqrt();
        samples.push(ResidualSample {
            t,
            residual: tot,
            noise_fraction: if tot > 0.0 { noise / tot } else { 1.0 },
        });
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.t.ln(), s.residual.max(1e-300).ln())).collect();
    let slope = linear_fit(&pts).0;
    let usable: Vec<f64> = samples.iter().filter(|s| s.noise_fraction < 0.1).map(|s| s.t).collect();
    let usable_t_range = if usable.is_empty() {
        None
    } else {
        Some((
            usable.iter().cloned().fold(f64::INFINITY, f64::min),
            usable.iter().cloned().fold(0.0, f64::max),
        ))
    };
    Ok(ResidualReport {
        order: kernel.order,
        samples,
        slope,
        raw_slope: slope - 1.0,
        usable_t_range,
        evaluated_points: npts,
        grid: *grid,
    })
}
