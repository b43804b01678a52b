//! Forward and backward sojourn relations, their contact property, inversion
//! by shooting, and the interior wavefront predictor built on them.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{
    blow_down, covector_norm, escape_leg, front_face_limit, integrate_interior, normalize_covector,
    to_b_coords, trace_to_front_face, BlownUpState, FlowOptions, RayKind, UNIT_TOL,
};
use crate::geometry::{covector_from_boundary, from_boundary_chart, wrap_angle, ScatteringMetric};
use crate::ode;

/// A point `(y0, nu, mu)` of the boundary scattering cotangent space.
///
/// `y0` is the angle of the asymptotic direction, `nu` the sojourn time and
/// `mu` the `dy` component of the approach covector (index lowered by the
/// round metric at `y0`, which is the identity in the angle chart).
#[derive(Clone, Debug, PartialEq)]
pub struct SojournData {
    pub y0: Vec<f64>,
    pub nu: f64,
    pub mu: Vec<f64>,
    /// Extrapolation error estimate (zero for data built by hand).
    pub error_estimate: f64,
}

impl SojournData {
    pub fn new(y0: f64, nu: f64, mu: f64) -> Self {
        SojournData {
            y0: vec![y0],
            nu,
            mu: vec![mu],
            error_estimate: 0.0,
        }
    }

    /// Fibre negation `(y0, nu, mu) -> (y0, -nu, -mu)`.
    pub fn negate(&self) -> Self {
        SojournData {
            y0: self.y0.clone(),
            nu: -self.nu,
            mu: self.mu.iter().map(|m| -m).collect(),
            error_estimate: self.error_estimate,
        }
    }

    /// Componentwise differences with the angle wrapped to `(-pi, pi]`.
    pub fn difference(&self, other: &SojournData) -> Vec<f64> {
        let mut d: Vec<f64> = self.y0.iter().zip(&other.y0).map(|(a, b)| wrap_angle(a - b)).collect();
        d.push(self.nu - other.nu);
        d.extend(self.mu.iter().zip(&other.mu).map(|(a, b)| a - b));
        d
    }

    /// Max-norm distance with wrapped angles.
    pub fn distance(&self, other: &SojournData) -> f64 {
        self.difference(other).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.nu.is_finite() && self.y0.iter().chain(&self.mu).all(|v| v.is_finite())
    }
}

/// A unit covector over an interior point.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcePoint {
    pub w: Vec<f64>,
    pub eta_hat: Vec<f64>,
}

impl SourcePoint {
    pub fn new(metric: &dyn ScatteringMetric, w: Vec<f64>, eta_hat: Vec<f64>) -> Result<Self> {
        if w.len() != metric.dim() || eta_hat.len() != metric.dim() {
            return Err(Error::domain("source point has the wrong dimension"));
        }
        let len = covector_norm(metric, &w, &eta_hat)?;
        if (len - 1.0).abs() > UNIT_TOL {
            return Err(Error::domain(format!("eta_hat has length {len}, expected 1")));
        }
        Ok(SourcePoint { w, eta_hat })
    }

    /// Source point with the covector given by an angle and normalised at `w`.
    pub fn from_angle(metric: &dyn ScatteringMetric, w: &[f64], phi: f64) -> Result<Self> {
        let eta = normalize_covector(metric, w, &[phi.cos(), phi.sin()])?;
        Ok(SourcePoint {
            w: w.to_vec(),
            eta_hat: eta,
        })
    }

    /// Angle of the covector.
    pub fn angle(&self) -> f64 {
        self.eta_hat[1].atan2(self.eta_hat[0])
    }

    pub fn flipped(&self) -> Self {
        SourcePoint {
            w: self.w.clone(),
            eta_hat: self.eta_hat.iter().map(|e| -e).collect(),
        }
    }

    /// Max-norm distance in `(w, eta_hat)`.
    pub fn distance(&self, other: &SourcePoint) -> f64 {
        self.w
            .iter()
            .zip(&other.w)
            .chain(self.eta_hat.iter().zip(&other.eta_hat))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Forward,
    Backward,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Forward => "forward",
            Branch::Backward => "backward",
        }
    }
}

fn require_plane(metric: &dyn ScatteringMetric) -> Result<()> {
    if metric.dim() != 2 {
        return Err(Error::domain("sojourn relations are implemented for n = 2 only"));
    }
    Ok(())
}

/// Front-face data `(y0, radial limit, angular limit)` of the ray leaving
/// `(w, eta_hat)` in the given time direction.
fn asymptotic_data(
    metric: &dyn ScatteringMetric,
    src: &SourcePoint,
    direction: f64,
    opts: &FlowOptions,
) -> Result<(f64, f64, f64, f64)> {
    require_plane(metric)?;
    let (_, traj) = trace_to_front_face(metric, &src.w, &src.eta_hat, direction, opts)?;
    let lim = front_face_limit(&traj, opts.tol)?;
    if !lim.converged {
        return Err(Error::Extrapolation {
            estimate: lim.error_estimate,
            tol: opts.tol,
        });
    }
    Ok((wrap_angle(lim.y0[0]), lim.radial, lim.angular[0], lim.error_estimate))
}

/// Forward sojourn relation `(y0, nu, mu) = (y-limit, -radial*, angular*)`.
pub fn sojourn_forward(metric: &dyn ScatteringMetric, src: &SourcePoint, opts: &FlowOptions) -> Result<SojournData> {
    let (y0, lam, m, err) = asymptotic_data(metric, src, 1.0, opts)?;
    Ok(SojournData {
        y0: vec![y0],
        nu: -lam,
        mu: vec![m],
        error_estimate: err,
    })
}

/// Backward sojourn relation, computed by integrating backwards in time from
/// `(w, eta_hat)`; equals `-S_f(w, -eta_hat)`.
pub fn sojourn_backward(metric: &dyn ScatteringMetric, src: &SourcePoint, opts: &FlowOptions) -> Result<SojournData> {
    let (y0, lam, m, err) = asymptotic_data(metric, src, -1.0, opts)?;
    Ok(SojournData {
        y0: vec![y0],
        nu: lam,
        mu: vec![-m],
        error_estimate: err,
    })
}

pub fn sojourn(metric: &dyn ScatteringMetric, src: &SourcePoint, which: Branch, opts: &FlowOptions) -> Result<SojournData> {
    match which {
        Branch::Forward => sojourn_forward(metric, src, opts),
        Branch::Backward => sojourn_backward(metric, src, opts),
    }
}

/// `(y0, c nu, c mu)`.
pub fn scale_fiber(sd: &SojournData, c: f64) -> Result<SojournData> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain("fibre scaling needs c > 0"));
    }
    Ok(SojournData {
        y0: sd.y0.clone(),
        nu: c * sd.nu,
        mu: sd.mu.iter().map(|m| c * m).collect(),
        error_estimate: c * sd.error_estimate,
    })
}

/// Sine of the angle between the pullback of `mu dy - dnu` under `S_f` and
/// the canonical form `eta_hat . dw`, in the coordinates `(w_1, w_2, phi)` of
/// the unit cosphere bundle (`phi` the covector angle).
pub fn contact_defect(
    metric: &dyn ScatteringMetric,
    src: &SourcePoint,
    fd_step: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    require_plane(metric)?;
    if !(fd_step > 0.0) {
        return Err(Error::domain("fd_step must be positive"));
    }
    let phi0 = src.angle();
    let base = SourcePoint::from_angle(metric, &src.w, phi0)?;
    let mut probes = Vec::with_capacity(6);
    for j in 0..3 {
        for sign in [1.0, -1.0] {
            let mut w = src.w.clone();
            let mut phi = phi0;
            if j < 2 {
                w[j] += sign * fd_step;
            } else {
                phi += sign * fd_step;
            }
            probes.push((w, phi));
        }
    }
    let values: Vec<Result<SojournData>> = probes
        .par_iter()
        .map(|(w, phi)| {
            let sp = SourcePoint::from_angle(metric, w, *phi)?;
            sojourn_forward(metric, &sp, opts)
        })
        .collect();
    let mut vals = Vec::with_capacity(6);
    for v in values {
        vals.push(v?);
    }
    let centre = sojourn_forward(metric, &base, opts)?;
    let mu = centre.mu[0];
    let mut pull = [0.0; 3];
    for j in 0..3 {
        let d = vals[2 * j].difference(&vals[2 * j + 1]);
        let dy = d[0] / (2.0 * fd_step);
        let dnu = d[1] / (2.0 * fd_step);
        pull[j] = mu * dy - dnu;
    }
    let alpha = [base.eta_hat[0], base.eta_hat[1], 0.0];
    Ok(sine_between(&pull, &alpha))
}

fn sine_between(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let nb2: f64 = b.iter().map(|v| v * v).sum();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 {
        return 1.0;
    }
    let proj: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>() / nb2;
    let perp: f64 = a.iter().zip(b).map(|(u, v)| (u - proj * v).powi(2)).sum::<f64>().sqrt();
    perp / na
}

/// Ray that arrives at the front face with the given data, traced back into
/// the interior: blown-up flow from `x = 0` up to `x_switch`, then the
/// interior geodesic run backwards to arclength zero.
fn forward_initial_guess(metric: &dyn ScatteringMetric, target: &SojournData, opts: &FlowOptions) -> Result<SourcePoint> {
    let x_switch = opts.x_switch_for(metric);
    let lam = -target.nu;
    let m = target.mu[0];
    // blown-up field in x is regular at x = 0
    let mut rhs = |x: f64, u: &[f64], du: &mut [f64]| -> Result<()> {
        let jet = metric.boundary_jet(x, &u[0..1])?;
        let (hinv, dx, dy) = jet.inverse()?;
        let d = -1.0 + x * u[1];
        if d > -1e-3 {
            return Err(Error::Integration {
                at: x,
                reason: "blown-up field not transverse".into(),
                last_state: u.to_vec(),
            });
        }
        du[0] = hinv[0][0] * u[2] / d;
        du[1] = (-hinv[0][0] * u[2] * u[2] - 0.5 * x * dx[0][0] * u[2] * u[2]) / d;
        du[2] = (u[1] * u[2] - 0.5 * dy[0][0][0] * u[2] * u[2]) / d;
        Ok(())
    };
    let steps = 400;
    let u = ode::fixed_dp5(&mut rhs, 0.0, &[target.y0[0], lam, m], x_switch, steps, |_, _, _| {})?;
    let st = BlownUpState {
        x: x_switch,
        y: vec![u[0]],
        radial: u[1],
        angular: vec![u[2]],
        source: vec![0.0, 0.0],
        energy: 0.0,
    };
    let b = blow_down(&st)?;
    let x = b.x;
    let theta = b.y[0];
    let h = metric.boundary_jet(x, &b.y)?.inverse()?.0[0][0];
    let s = (b.radial * b.radial + h * b.angular[0] * b.angular[0]).sqrt() / x;
    let zeta_l = covector_from_boundary(x, theta, b.radial / (x * x * x), b.angular[0] / (x * x));
    let zeta: Vec<f64> = zeta_l.iter().map(|p| -p / s).collect();
    let z = from_boundary_chart(x, &[theta])?;
    let zeta = normalize_covector(metric, &z, &zeta)?;
    let tr = integrate_interior(metric, &z, &zeta, s, opts.interior_tol())?;
    let end = tr.end();
    let eta = normalize_covector(metric, &end.z, &end.zeta.iter().map(|p| -p).collect::<Vec<_>>())?;
    Ok(SourcePoint { w: end.z, eta_hat: eta })
}

/// Newton/shooting inversion of `S_f` or `S_b` over `(w_1, w_2, phi)`.
pub fn invert_sojourn(
    metric: &dyn ScatteringMetric,
    target: &SojournData,
    which: Branch,
    opts: &FlowOptions,
) -> Result<SourcePoint> {
    require_plane(metric)?;
    if !target.is_finite() {
        return Err(Error::domain("target sojourn data must be finite"));
    }
    let guess = match which {
        Branch::Forward => forward_initial_guess(metric, target, opts)?,
        Branch::Backward => forward_initial_guess(metric, &target.negate(), opts)?.flipped(),
    };
    let eval = |p: &[f64; 3]| -> Result<Vec<f64>> {
        let sp = SourcePoint::from_angle(metric, &p[..2], p[2])?;
        Ok(sojourn(metric, &sp, which, opts)?.difference(target))
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut p = [guess.w[0], guess.w[1], guess.angle()];
    let mut f = eval(&p)?;
    let mut res = norm(&f);
    let max_iter = 50;
    let step = 1e-6;
    let goal = opts.tol.max(1e-12);
    for _ in 0..max_iter {
        if res <= goal {
            let sp = SourcePoint::from_angle(metric, &p[..2], p[2])?;
            return Ok(sp);
        }
        let cols: Vec<Result<Vec<f64>>> = (0..3)
            .into_par_iter()
            .map(|j| {
                let mut a = p;
                let mut b = p;
                a[j] += step;
                b[j] -= step;
                let fa = eval(&a)?;
                let fb = eval(&b)?;
                Ok((0..3).map(|i| (fa[i] - fb[i]) / (2.0 * step)).collect())
            })
            .collect();
        let mut jac = nalgebra::DMatrix::zeros(3, 3);
        for (j, c) in cols.into_iter().enumerate() {
            let c = c?;
            for i in 0..3 {
                jac[(i, j)] = c[i];
            }
        }
        let rhs = nalgebra::DVector::from_iterator(3, f.iter().map(|v| -v));
        let dp = match crate::linalg::solve(jac, rhs) {
            Some(d) => d,
            None => break,
        };
        // damped line search
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-4 {
            let trial = [p[0] + t * dp[0], p[1] + t * dp[1], p[2] + t * dp[2]];
            if let Ok(ft) = eval(&trial) {
                let rt = norm(&ft);
                if rt < res {
                    p = trial;
                    f = ft;
                    res = rt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res <= goal {
        return SourcePoint::from_angle(metric, &p[..2], p[2]);
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

/// Source point whose sojourn data, scaled by `1/t`, is `q`: `S_b^{-1}(t q)`
/// for `t > 0` and `S_f^{-1}(|t| q)` for `t < 0`.
pub fn predict_interior_wf(metric: &dyn ScatteringMetric, q: &SojournData, t: f64, opts: &FlowOptions) -> Result<SourcePoint> {
    if t == 0.0 || !t.is_finite() {
        return Err(Error::domain("prediction needs t != 0"));
    }
    let scaled = scale_fiber(q, t.abs())?;
    let which = if t > 0.0 { Branch::Backward } else { Branch::Forward };
    invert_sojourn(metric, &scaled, which, opts)
}

/// Nontrapped classification with the sojourn hand-off criteria.
pub fn is_nontrapped(metric: &dyn ScatteringMetric, src: &SourcePoint, direction: f64, opts: &FlowOptions) -> Result<bool> {
    let leg = escape_leg(metric, &src.w, &src.eta_hat, direction, opts, true)?;
    Ok(leg.classification.kind == RayKind::Nontrapped)
}

/// Closed-form Euclidean forward relation.
pub fn euclidean_forward(w: &[f64], eta_hat: &[f64]) -> SojournData {
    let th = eta_hat[1].atan2(eta_hat[0]);
    let et = [-th.sin(), th.cos()];
    SojournData::new(
        th,
        -(w[0] * eta_hat[0] + w[1] * eta_hat[1]),
        -(w[0] * et[0] + w[1] * et[1]),
    )
}

/// Checks that the B-coordinate image of a state sits on the characteristic set.
pub fn handoff_on_shell(metric: &dyn ScatteringMetric, src: &SourcePoint, opts: &FlowOptions) -> Result<f64> {
    let leg = escape_leg(metric, &src.w, &src.eta_hat, 1.0, opts, true)?;
    let h = leg.handoff.ok_or(Error::Trapped { s_max: opts.s_max })?;
    let b = to_b_coords(metric, &h)?;
    crate::flow::on_shell_residual(metric, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Euclidean;
    use std::f64::consts::PI;

    #[test]
    fn flat_forward_and_backward_examples() {
        let m = Euclidean::plane();
        let o = FlowOptions::default();
        let src = SourcePoint::new(&m, vec![2.0, 1.0], vec![1.0, 0.0]).unwrap();
        let f = sojourn_forward(&m, &src, &o).unwrap();
        assert!(f.distance(&SojournData::new(0.0, -2.0, -1.0)) < 1e-9, "{f:?}");
        let b = sojourn_backward(&m, &src, &o).unwrap();
        assert!(b.distance(&SojournData::new(PI, -2.0, -1.0)) < 1e-9, "{b:?}");
    }

    #[test]
    fn origin_has_zero_fibre() {
        let m = Euclidean::plane();
        let o = FlowOptions::default();
        let src = SourcePoint::new(&m, vec![0.0, 0.0], vec![0.6, -0.8]).unwrap();
        let f = sojourn_forward(&m, &src, &o).unwrap();
        assert!(f.nu.abs() < 1e-10 && f.mu[0].abs() < 1e-10);
        let b = sojourn_backward(&m, &src, &o).unwrap();
        assert!(b.nu.abs() < 1e-10 && b.mu[0].abs() < 1e-10);
    }

    #[test]
    fn scaling() {
        let sd = SojournData::new(0.3, 2.0, 4.0);
        let h = scale_fiber(&sd, 0.5).unwrap();
        assert_eq!((h.nu, h.mu[0]), (1.0, 2.0));
        assert_eq!(scale_fiber(&sd, 1.0).unwrap(), sd);
        assert!(matches!(scale_fiber(&sd, 0.0), Err(Error::Domain(_))));
        assert!(matches!(scale_fiber(&sd, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn flat_contact_defect_small() {
        let m = Euclidean::plane();
        let src = SourcePoint::from_angle(&m, &[1.0, -0.5], 0.7).unwrap();
        let d = contact_defect(&m, &src, 1e-5, &FlowOptions::default()).unwrap();
        assert!(d < 1e-6, "defect {d}");
    }

    #[test]
    fn flat_inversion() {
        let m = Euclidean::plane();
        let o = FlowOptions::default();
        let sp = invert_sojourn(&m, &SojournData::new(0.0, -2.0, -1.0), Branch::Forward, &o).unwrap();
        assert!((sp.w[0] - 2.0).abs() < 1e-6 && (sp.w[1] - 1.0).abs() < 1e-6, "{sp:?}");
        assert!((sp.eta_hat[0] - 1.0).abs() < 1e-6 && sp.eta_hat[1].abs() < 1e-6);
    }
}
