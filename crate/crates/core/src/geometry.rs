//! Scattering metrics in normal form `g = dx^2/x^4 + h(x, y, dy)/x^2`, their
//! interior Cartesian form, potentials and the chart between the two.
//!
//! Every built-in family is exactly Euclidean outside a compact set, so the
//! collar `x < x0` sees the round metric on the sphere at infinity. Boundary
//! charts are implemented for `n = 2`, where `y` is the polar angle.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, MAX_DIM, ZERO};

/// Central finite-difference step for metrics that do not supply derivatives.
pub const FD_METRIC_STEP: f64 = 1e-6;

/// Metric coefficients and their first partials at a point.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub n: usize,
    pub g: Mat,
    /// `dg[k][i][j] = d g_ij / d z_k`.
    pub dg: [Mat; MAX_DIM],
}

/// Inverse metric coefficients and their first partials.
#[derive(Clone, Debug)]
pub struct CometricJet {
    pub n: usize,
    pub ginv: Mat,
    /// `dginv[k][i][j] = d g^ij / d z_k`.
    pub dginv: [Mat; MAX_DIM],
}

/// Boundary metric `h_ij(x, y)` on the `n - 1` dimensional boundary chart.
#[derive(Clone, Debug)]
pub struct BoundaryJet {
    pub m: usize,
    pub h: Mat,
    pub dh_dx: Mat,
    pub dh_dy: [Mat; MAX_DIM],
}

impl BoundaryJet {
    /// `h^{ij}` together with its `x` and `y` partials.
    pub fn inverse(&self) -> Result<(Mat, Mat, [Mat; MAX_DIM])> {
        let m = self.m;
        let hinv = linalg::inverse_spd(m, &self.h)
            .ok_or_else(|| Error::domain("boundary metric h is not positive definite"))?;
        let dx = neg_conjugate(m, &hinv, &self.dh_dx);
        let mut dy = [ZERO; MAX_DIM];
        for k in 0..m {
            dy[k] = neg_conjugate(m, &hinv, &self.dh_dy[k]);
        }
        Ok((hinv, dx, dy))
    }
}

fn neg_conjugate(n: usize, inv: &Mat, d: &Mat) -> Mat {
    // d(A^{-1}) = -A^{-1} dA A^{-1}
    let mut t = ZERO;
    for i in 0..n {
        for j in 0..n {
            t[i][j] = (0..n).map(|k| inv[i][k] * d[k][j]).sum();
        }
    }
    let mut out = ZERO;
    for i in 0..n {
        for j in 0..n {
            out[i][j] = -(0..n).map(|k| t[i][k] * inv[k][j]).sum::<f64>();
        }
    }
    out
}

impl MetricJet {
    pub fn cometric(&self, at: &[f64]) -> Result<CometricJet> {
        let n = self.n;
        let ginv = linalg::inverse_spd(n, &self.g).ok_or_else(|| Error::SingularMetric {
            at: at.to_vec(),
            condition: linalg::condition_number(n, &self.g),
        })?;
        let mut dginv = [ZERO; MAX_DIM];
        for k in 0..n {
            dginv[k] = neg_conjugate(n, &ginv, &self.dg[k]);
        }
        Ok(CometricJet { n, ginv, dginv })
    }

    pub fn sqrt_det(&self) -> f64 {
        linalg::det(self.n, &self.g).sqrt()
    }

    /// Christoffel symbols `gamma[k][i][j] = Γ^k_ij`.
    pub fn christoffel(&self, ginv: &Mat) -> [Mat; MAX_DIM] {
        let n = self.n;
        let mut gamma = [ZERO; MAX_DIM];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for l in 0..n {
                        s += ginv[k][l] * (self.dg[i][j][l] + self.dg[j][i][l] - self.dg[l][i][j]);
                    }
                    gamma[k][i][j] = 0.5 * s;
                }
            }
        }
        gamma
    }
}

impl CometricJet {
    /// `|p|^2_g = g^{ij} p_i p_j`.
    pub fn norm2(&self, p: &[f64]) -> f64 {
        linalg::quad_form(self.n, &self.ginv, p, p)
    }

    /// Hamilton's equations for `H = |p|^2 / 2`: returns `(dH/dp, dH/dz)`.
    pub fn hamilton(&self, p: &[f64]) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let n = self.n;
        let vel = linalg::mat_vec(n, &self.ginv, p);
        let mut force = [0.0; MAX_DIM];
        for k in 0..n {
            force[k] = 0.5 * linalg::quad_form(n, &self.dginv[k], p, p);
        }
        (vel, force)
    }
}

/// Smooth compactly supported bump `exp(1 - 1/(1 - |z-c|^2/R^2))`, equal to 1 at the centre.
#[derive(Clone, Debug, PartialEq)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Bump {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config("bump radius must be positive".into()));
        }
        Ok(Bump { center, radius })
    }

    /// Value and gradient.
    pub fn eval(&self, z: &[f64]) -> (f64, [f64; MAX_DIM]) {
        let r2 = self.radius * self.radius;
        let mut u = 0.0;
        for (zi, ci) in z.iter().zip(&self.center) {
            u += (zi - ci) * (zi - ci);
        }
        u /= r2;
        let mut grad = [0.0; MAX_DIM];
        if u >= 1.0 {
            return (0.0, grad);
        }
        let om = 1.0 - u;
        let v = (1.0 - 1.0 / om).exp();
        let dv_du = -v / (om * om);
        for (k, g) in grad.iter_mut().enumerate().take(z.len()) {
            *g = dv_du * 2.0 * (z[k] - self.center[k]) / r2;
        }
        (v, grad)
    }

    pub fn support_radius(&self) -> f64 {
        self.center.iter().map(|c| c * c).sum::<f64>().sqrt() + self.radius
    }
}

/// C-infinity step: 0 for `u <= 0`, 1 for `u >= 1`.
pub fn smooth_step(u: f64) -> f64 {
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

/// Short-range potentials. All are compactly supported, so `|V| <= C x^2` holds trivially.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Potential {
    #[default]
    Zero,
    Bump { amplitude: f64, bump: Bump },
    /// Equal to `amplitude` for `|z - c| <= inner`, smoothly zero beyond `outer`.
    Plateau {
        amplitude: f64,
        center: Vec<f64>,
        inner: f64,
        outer: f64,
    },
}

impl Potential {
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Bump { amplitude, bump } => amplitude * bump.eval(z).0,
            Potential::Plateau {
                amplitude,
                center,
                inner,
                outer,
            } => {
                let r = dist(z, center);
                amplitude * (1.0 - smooth_step((r - inner) / (outer - inner)))
            }
        }
    }

    pub fn support_radius(&self) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Bump { bump, .. } => bump.support_radius(),
            Potential::Plateau { center, outer, .. } => norm(center) + outer,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// An asymptotically conic metric in normal form plus a short-range potential.
///
/// Implementations are immutable and shareable across threads.
pub trait ScatteringMetric: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn family(&self) -> &'static str;

    /// `g_ij(z)` and first partials in the interior Cartesian chart.
    fn metric_jet(&self, z: &[f64]) -> Result<MetricJet>;

    /// `h_ij(x, y)` and partials on the collar `x < x0`.
    fn boundary_jet(&self, x: f64, y: &[f64]) -> Result<BoundaryJet>;

    fn potential(&self, z: &[f64]) -> f64;

    /// Collar width.
    fn x0(&self) -> f64;

    /// Inner edge of the chart overlap; the interior chart is used for `x > x_interior`.
    fn x_interior(&self) -> f64 {
        self.x0() / 2.0
    }

    /// Radius beyond which `g` is exactly Euclidean and `V = 0`.
    fn flat_outside_radius(&self) -> Option<f64>;

    /// True when `g` is Euclidean everywhere (the potential may still be nonzero).
    fn is_exactly_flat(&self) -> bool {
        false
    }

    /// User-configured bound for the injectivity radius.
    fn injectivity_bound(&self) -> f64;

    fn cometric_jet(&self, z: &[f64]) -> Result<CometricJet> {
        self.metric_jet(z)?.cometric(z)
    }
}

fn check_point(n: usize, z: &[f64]) -> Result<()> {
    if z.len() != n {
        return Err(Error::domain(format!("expected a point of dimension {n}, got {}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("point has non-finite coordinates"));
    }
    Ok(())
}

fn validate_common(dim: usize, x0: f64, iota: f64, support: f64) -> Result<()> {
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::Config(format!("dimension must be in 1..={MAX_DIM}")));
    }
    if !(x0 > 0.0) {
        return Err(Error::Config("x0 must be positive".into()));
    }
    if support > 0.0 && x0 * support >= 1.0 {
        return Err(Error::Config(format!(
            "collar x < x0 = {x0} must lie outside the perturbation (radius {support}); need x0 < {}",
            1.0 / support
        )));
    }
    if !(iota > 0.0) {
        return Err(Error::Config("injectivity bound must be positive".into()));
    }
    Ok(())
}

/// Round metric of the unit circle in the angle chart.
fn circle_boundary_jet(n: usize, x: f64) -> Result<BoundaryJet> {
    if n != 2 {
        return Err(Error::domain(format!(
            "boundary charts are implemented for n = 2 only (got n = {n})"
        )));
    }
    if !(x >= 0.0) {
        return Err(Error::domain("boundary chart needs x >= 0"));
    }
    let mut h = ZERO;
    h[0][0] = 1.0;
    Ok(BoundaryJet {
        m: 1,
        h,
        dh_dx: ZERO,
        dh_dy: [ZERO; MAX_DIM],
    })
}

/// Exact Euclidean space, radially compactified.
#[derive(Clone, Debug)]
pub struct Euclidean {
    dim: usize,
    x0: f64,
    iota: f64,
    potential: Potential,
}

impl Euclidean {
    pub fn new(dim: usize, x0: f64, iota: f64, potential: Potential) -> Result<Self> {
        validate_common(dim, x0, iota, potential.support_radius())?;
        Ok(Euclidean {
            dim,
            x0,
            iota,
            potential,
        })
    }

    /// Flat 2D metric with the defaults used throughout the tests.
    pub fn plane() -> Self {
        Euclidean::new(2, 0.25, 1e6, Potential::Zero).expect("valid defaults")
    }
}

impl ScatteringMetric for Euclidean {
    fn dim(&self) -> usize {
        self.dim
    }
    fn family(&self) -> &'static str {
        "euclidean"
    }
    fn metric_jet(&self, z: &[f64]) -> Result<MetricJet> {
        check_point(self.dim, z)?;
        Ok(MetricJet {
            n: self.dim,
            g: linalg::identity(self.dim),
            dg: [ZERO; MAX_DIM],
        })
    }
    fn boundary_jet(&self, x: f64, _y: &[f64]) -> Result<BoundaryJet> {
        circle_boundary_jet(self.dim, x)
    }
    fn potential(&self, z: &[f64]) -> f64 {
        self.potential.value(z)
    }
    fn x0(&self) -> f64 {
        self.x0
    }
    fn flat_outside_radius(&self) -> Option<f64> {
        Some(self.potential.support_radius())
    }
    fn is_exactly_flat(&self) -> bool {
        true
    }
    fn injectivity_bound(&self) -> f64 {
        self.iota
    }
}

/// `(1 + eps * phi(z)) delta_ij` with `phi` a compact bump.
#[derive(Clone, Debug)]
pub struct ConformalBump {
    dim: usize,
    epsilon: f64,
    bump: Bump,
    x0: f64,
    iota: f64,
    potential: Potential,
}

impl ConformalBump {
    pub fn new(
        dim: usize,
        epsilon: f64,
        bump: Bump,
        x0: f64,
        iota: f64,
        potential: Potential,
    ) -> Result<Self> {
        if bump.center.len() != dim {
            return Err(Error::Config("bump centre has the wrong dimension".into()));
        }
        if !(epsilon > -1.0) {
            return Err(Error::Config("conformal factor 1 + eps*phi must stay positive (eps > -1)".into()));
        }
        let support = bump.support_radius().max(potential.support_radius());
        validate_common(dim, x0, iota, support)?;
        Ok(ConformalBump {
            dim,
            epsilon,
            bump,
            x0,
            iota,
            potential,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn bump(&self) -> &Bump {
        &self.bump
    }

    /// Conformal factor `c(z) = 1 + eps phi(z)`.
    pub fn factor(&self, z: &[f64]) -> f64 {
        1.0 + self.epsilon * self.bump.eval(z).0
    }
}

impl ScatteringMetric for ConformalBump {
    fn dim(&self) -> usize {
        self.dim
    }
    fn family(&self) -> &'static str {
        "conformal_bump"
    }
    fn metric_jet(&self, z: &[f64]) -> Result<MetricJet> {
        check_point(self.dim, z)?;
        let n = self.dim;
        let (phi, grad) = self.bump.eval(z);
        let c = 1.0 + self.epsilon * phi;
        let mut g = ZERO;
        let mut dg = [ZERO; MAX_DIM];
        for i in 0..n {
            g[i][i] = c;
            for (k, d) in dg.iter_mut().enumerate().take(n) {
                d[i][i] = self.epsilon * grad[k];
            }
        }
        Ok(MetricJet { n, g, dg })
    }
    fn cometric_jet(&self, z: &[f64]) -> Result<CometricJet> {
        check_point(self.dim, z)?;
        let n = self.dim;
        let (phi, grad) = self.bump.eval(z);
        let c = 1.0 + self.epsilon * phi;
        let mut ginv = ZERO;
        let mut dginv = [ZERO; MAX_DIM];
        for i in 0..n {
            ginv[i][i] = 1.0 / c;
            for (k, d) in dginv.iter_mut().enumerate().take(n) {
                d[i][i] = -self.epsilon * grad[k] / (c * c);
            }
        }
        Ok(CometricJet { n, ginv, dginv })
    }
    fn boundary_jet(&self, x: f64, _y: &[f64]) -> Result<BoundaryJet> {
        circle_boundary_jet(self.dim, x)
    }
    fn potential(&self, z: &[f64]) -> f64 {
        self.potential.value(z)
    }
    fn x0(&self) -> f64 {
        self.x0
    }
    fn flat_outside_radius(&self) -> Option<f64> {
        Some(self.bump.support_radius().max(self.potential.support_radius()))
    }
    fn injectivity_bound(&self) -> f64 {
        self.iota
    }
}

/// Surface of revolution `dr^2 + f(r)^2 dtheta^2` in the plane, with
/// `f(r) = r - a * beta(r)` and `beta` a bump centred at `r_mid` of half-width `half_width`.
///
/// When `a * max(beta') > 1`, `f` has an interior local maximum whose circle is a
/// stable closed geodesic.
#[derive(Clone, Debug)]
pub struct SurfaceOfRevolution {
    amplitude: f64,
    r_mid: f64,
    half_width: f64,
    x0: f64,
    iota: f64,
    potential: Potential,
}

impl SurfaceOfRevolution {
    pub fn new(
        amplitude: f64,
        r_mid: f64,
        half_width: f64,
        x0: f64,
        iota: f64,
        potential: Potential,
    ) -> Result<Self> {
        if !(half_width > 0.0) || r_mid - half_width <= 0.0 {
            return Err(Error::Config("need 0 < r_mid - half_width".into()));
        }
        let support = (r_mid + half_width).max(potential.support_radius());
        validate_common(2, x0, iota, support)?;
        let s = SurfaceOfRevolution {
            amplitude,
            r_mid,
            half_width,
            x0,
            iota,
            potential,
        };
        // f must stay positive for the metric to be nondegenerate
        let samples = 2000;
        for k in 0..=samples {
            let r = r_mid - half_width + 2.0 * half_width * k as f64 / samples as f64;
            if s.profile(r).0 <= 0.0 {
                return Err(Error::Config(format!("profile f(r) vanishes near r = {r}")));
            }
        }
        Ok(s)
    }

    /// `(f, f')` at radius `r`.
    pub fn profile(&self, r: f64) -> (f64, f64) {
        let d = (r - self.r_mid) / self.half_width;
        if d.abs() >= 1.0 {
            return (r, 1.0);
        }
        let u = d * d;
        let om = 1.0 - u;
        let beta = (1.0 - 1.0 / om).exp();
        let dbeta = -beta / (om * om) * 2.0 * d / self.half_width;
        (r - self.amplitude * beta, 1.0 - self.amplitude * dbeta)
    }

    /// Radius of the innermost local maximum of `f` (a closed geodesic), if any.
    pub fn equatorial_radius(&self) -> Option<f64> {
        let lo = self.r_mid - self.half_width;
        let samples = 20000;
        let mut prev = lo;
        for k in 1..=samples {
            let r = lo + self.half_width * k as f64 / samples as f64;
            if self.profile(r).1 < 0.0 {
                let (mut a, mut b) = (prev, r);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if self.profile(m).1 > 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return Some(0.5 * (a + b));
            }
            prev = r;
        }
        None
    }
}

impl ScatteringMetric for SurfaceOfRevolution {
    fn dim(&self) -> usize {
        2
    }
    fn family(&self) -> &'static str {
        "surface_of_revolution"
    }
    fn metric_jet(&self, z: &[f64]) -> Result<MetricJet> {
        check_point(2, z)?;
        let r = norm(z);
        let mut g = linalg::identity(2);
        let mut dg = [ZERO; MAX_DIM];
        if (r - self.r_mid).abs() >= self.half_width {
            return Ok(MetricJet { n: 2, g, dg });
        }
        let (f, fp) = self.profile(r);
        let q = (f / r) * (f / r);
        let dq = 2.0 * (f / r) * (fp * r - f) / (r * r);
        let rh = [z[0] / r, z[1] / r];
        for i in 0..2 {
            for j in i..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                g[i][j] = q * delta + (1.0 - q) * rh[i] * rh[j];
                for (k, dgk) in dg.iter_mut().enumerate().take(2) {
                    let dk = |a: usize| {
                        let da = if a == k { 1.0 } else { 0.0 };
                        (da - rh[a] * rh[k]) / r
                    };
                    dgk[i][j] = dq * rh[k] * (delta - rh[i] * rh[j])
                        + (1.0 - q) * (dk(i) * rh[j] + rh[i] * dk(j));
                }
            }
        }
        g[1][0] = g[0][1];
        for d in dg.iter_mut().take(2) {
            d[1][0] = d[0][1];
        }
        Ok(MetricJet { n: 2, g, dg })
    }
    fn boundary_jet(&self, x: f64, _y: &[f64]) -> Result<BoundaryJet> {
        circle_boundary_jet(2, x)
    }
    fn potential(&self, z: &[f64]) -> f64 {
        self.potential.value(z)
    }
    fn x0(&self) -> f64 {
        self.x0
    }
    fn flat_outside_radius(&self) -> Option<f64> {
        Some((self.r_mid + self.half_width).max(self.potential.support_radius()))
    }
    fn injectivity_bound(&self) -> f64 {
        self.iota
    }
}

type MetricFn = dyn Fn(&[f64]) -> Mat + Send + Sync;
type BoundaryFn = dyn Fn(f64, &[f64]) -> Mat + Send + Sync;
type PotentialFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// User-supplied metric given by closures; derivatives come from central
/// differences with step [`FD_METRIC_STEP`], which costs roughly half the
/// significant digits of the metric data.
pub struct CustomMetric {
    dim: usize,
    g: Box<MetricFn>,
    h: Box<BoundaryFn>,
    v: Box<PotentialFn>,
    x0: f64,
    iota: f64,
    flat_outside: Option<f64>,
}

impl fmt::Debug for CustomMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomMetric")
            .field("dim", &self.dim)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

impl CustomMetric {
    pub fn new(
        dim: usize,
        g: Box<MetricFn>,
        h: Box<BoundaryFn>,
        v: Box<PotentialFn>,
        x0: f64,
        iota: f64,
        flat_outside: Option<f64>,
    ) -> Result<Self> {
        validate_common(dim, x0, iota, 0.0)?;
        Ok(CustomMetric {
            dim,
            g,
            h,
            v,
            x0,
            iota,
            flat_outside,
        })
    }
}

impl ScatteringMetric for CustomMetric {
    fn dim(&self) -> usize {
        self.dim
    }
    fn family(&self) -> &'static str {
        "custom"
    }
    fn metric_jet(&self, z: &[f64]) -> Result<MetricJet> {
        check_point(self.dim, z)?;
        let n = self.dim;
        let g = (self.g)(z);
        let mut dg = [ZERO; MAX_DIM];
        let mut zp = z.to_vec();
        for k in 0..n {
            zp[k] = z[k] + FD_METRIC_STEP;
            let gp = (self.g)(&zp);
            zp[k] = z[k] - FD_METRIC_STEP;
            let gm = (self.g)(&zp);
            zp[k] = z[k];
            for i in 0..n {
                for j in 0..n {
                    dg[k][i][j] = (gp[i][j] - gm[i][j]) / (2.0 * FD_METRIC_STEP);
                }
            }
        }
        Ok(MetricJet { n, g, dg })
    }
    fn boundary_jet(&self, x: f64, y: &[f64]) -> Result<BoundaryJet> {
        let m = self.dim - 1;
        if y.len() != m {
            return Err(Error::domain("boundary coordinate has the wrong dimension"));
        }
        let h = (self.h)(x, y);
        let step = FD_METRIC_STEP;
        let hp = (self.h)(x + step, y);
        let hm = (self.h)((x - step).max(0.0), y);
        let denom = x + step - (x - step).max(0.0);
        let mut dh_dx = ZERO;
        for i in 0..m {
            for j in 0..m {
                dh_dx[i][j] = (hp[i][j] - hm[i][j]) / denom;
            }
        }
        let mut dh_dy = [ZERO; MAX_DIM];
        let mut yp = y.to_vec();
        for k in 0..m {
            yp[k] = y[k] + step;
            let a = (self.h)(x, &yp);
            yp[k] = y[k] - step;
            let b = (self.h)(x, &yp);
            yp[k] = y[k];
            for i in 0..m {
                for j in 0..m {
                    dh_dy[k][i][j] = (a[i][j] - b[i][j]) / (2.0 * step);
                }
            }
        }
        Ok(BoundaryJet { m, h, dh_dx, dh_dy })
    }
    fn potential(&self, z: &[f64]) -> f64 {
        (self.v)(z)
    }
    fn x0(&self) -> f64 {
        self.x0
    }
    fn flat_outside_radius(&self) -> Option<f64> {
        self.flat_outside
    }
    fn injectivity_bound(&self) -> f64 {
        self.iota
    }
}

/// `g_ij(z)` in the interior chart.
pub fn interior_metric(metric: &dyn ScatteringMetric, z: &[f64]) -> Result<Mat> {
    let jet = metric.metric_jet(z)?;
    if linalg::cholesky(jet.n, &jet.g).is_none() {
        return Err(Error::SingularMetric {
            at: z.to_vec(),
            condition: linalg::condition_number(jet.n, &jet.g),
        });
    }
    Ok(jet.g)
}

/// Principal energy `|zeta|^2_g / 2`. The potential is subprincipal and excluded.
pub fn hamiltonian(metric: &dyn ScatteringMetric, z: &[f64], zeta: &[f64]) -> Result<f64> {
    let co = metric.cometric_jet(z)?;
    if zeta.len() != co.n {
        return Err(Error::domain("covector has the wrong dimension"));
    }
    Ok(0.5 * co.norm2(zeta))
}

/// A point carried in one or both charts.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub interior: Option<Vec<f64>>,
    pub boundary: Option<(f64, Vec<f64>)>,
}

impl ChartPoint {
    pub fn from_interior(metric: &dyn ScatteringMetric, z: &[f64]) -> Result<Self> {
        check_point(metric.dim(), z)?;
        let r = norm(z);
        let boundary = if r > 0.0 && 1.0 / r < metric.x0() && metric.dim() == 2 {
            Some(to_boundary_chart(metric, z)?)
        } else {
            None
        };
        Ok(ChartPoint {
            interior: Some(z.to_vec()),
            boundary,
        })
    }
}

/// Polar compactification `x = 1/|z|`, `y = atan2(z_2, z_1)`.
pub fn to_boundary_chart(metric: &dyn ScatteringMetric, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_point(metric.dim(), z)?;
    if metric.dim() != 2 {
        return Err(Error::domain("boundary charts are implemented for n = 2 only"));
    }
    let r = norm(z);
    if r == 0.0 {
        return Err(Error::domain("the origin has no boundary-chart representation"));
    }
    let x = 1.0 / r;
    if x >= metric.x0() {
        return Err(Error::domain(format!("x = {x} is outside the collar x < x0 = {}", metric.x0())));
    }
    Ok((x, vec![z[1].atan2(z[0])]))
}

/// Inverse of [`to_boundary_chart`].
pub fn from_boundary_chart(x: f64, y: &[f64]) -> Result<Vec<f64>> {
    if !(x > 0.0) || y.len() != 1 {
        return Err(Error::domain("need x > 0 and a single angle"));
    }
    Ok(vec![y[0].cos() / x, y[0].sin() / x])
}

/// Unit radial vector and unit angular vector at angle `theta`.
pub fn polar_frame(theta: f64) -> ([f64; 2], [f64; 2]) {
    let (s, c) = theta.sin_cos();
    ([c, s], [-s, c])
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut b = a.rem_euclid(2.0 * PI);
    if b > PI {
        b -= 2.0 * PI;
    }
    b
}

/// Cartesian covector -> `(zeta_x, zeta_y)` components in the boundary chart.
pub fn covector_to_boundary(x: f64, theta: f64, zeta: &[f64]) -> (f64, f64) {
    let (rh, th) = polar_frame(theta);
    let zr = zeta[0] * rh[0] + zeta[1] * rh[1];
    let zt = zeta[0] * th[0] + zeta[1] * th[1];
    // dz/dx = -rhat / x^2, dz/dy = that / x
    (-zr / (x * x), zt / x)
}

/// Inverse of [`covector_to_boundary`].
pub fn covector_from_boundary(x: f64, theta: f64, zeta_x: f64, zeta_y: f64) -> [f64; 2] {
    let (rh, th) = polar_frame(theta);
    let zr = -zeta_x * x * x;
    let zt = zeta_y * x;
    [zr * rh[0] + zt * th[0], zr * rh[1] + zt * th[1]]
}

/// Metric assembled from the boundary data, `dx^2/x^4 + h dy^2/x^2`, expressed
/// in Cartesian coordinates at the point with chart coordinates `(x, y)`.
pub fn metric_from_normal_form(metric: &dyn ScatteringMetric, x: f64, y: &[f64]) -> Result<Mat> {
    let b = metric.boundary_jet(x, y)?;
    let theta = y[0];
    let (rh, th) = polar_frame(theta);
    // In (r, theta): g = dr^2 + r^2 h dtheta^2; orthonormal polar frame gives
    // g = rh rh^T + h * th th^T.
    let h = b.h[0][0];
    let mut g = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            g[i][j] = rh[i] * rh[j] + h * th[i] * th[j];
        }
    }
    Ok(g)
}

/// Largest deviation of `|dx/x^2|_g` from 1 over a fixed sample of collar
/// points, for the metric's own defining function `x = 1/|z|`.
pub fn check_bdf_normalization(metric: &dyn ScatteringMetric) -> Result<f64> {
    let profile = |r: f64| (1.0 / r, -1.0 / (r * r));
    Ok(bdf_normalization_profile(metric, &profile, metric.x0())?
        .into_iter()
        .map(|(_, d)| d)
        .fold(0.0, f64::max))
}

/// Deviation samples `(x, | |dx/x^2|_g - 1 |)` for a radial defining function
/// `x = b(r)` given as `r -> (b(r), b'(r))`, on log-spaced `x` in `[1e-4, x_max)`
/// and 16 angles each.
pub fn bdf_normalization_profile(
    metric: &dyn ScatteringMetric,
    bdf: &dyn Fn(f64) -> (f64, f64),
    x_max: f64,
) -> Result<Vec<(f64, f64)>> {
    let n = metric.dim();
    if n != 2 {
        return Err(Error::domain("defining-function check is implemented for n = 2"));
    }
    let mut out = Vec::new();
    let levels = 40;
    let lo = 1e-4f64.ln();
    let hi = (0.999 * x_max).ln();
    for l in 0..levels {
        let xr = (lo + (hi - lo) * l as f64 / (levels - 1) as f64).exp();
        let r = 1.0 / xr;
        let mut worst: f64 = 0.0;
        let mut xval = 0.0;
        for a in 0..16 {
            let theta = 2.0 * PI * a as f64 / 16.0;
            let (rh, _) = polar_frame(theta);
            let z = [r * rh[0], r * rh[1]];
            let (b, db) = bdf(r);
            xval = b;
            // d(b)/b^2 = (b'/b^2) rhat
            let v = [db / (b * b) * rh[0], db / (b * b) * rh[1]];
            let co = metric.cometric_jet(&z)?;
            let len = co.norm2(&v).sqrt();
            worst = worst.max((len - 1.0).abs());
        }
        out.push((xval, worst));
    }
    Ok(out)
}
