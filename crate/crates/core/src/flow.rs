//! Geodesic flow in the interior, rescaled boundary coordinates, the blown-up
//! flow near infinity and extrapolation of its front-face limit.
//!
//! Boundary-side operations are implemented for `n = 2` with the angle chart
//! `x = 1/|z|`, `y = atan2(z_2, z_1)`.

use crate::error::{Error, Result};
use crate::extrap::neville_to_zero;
use crate::geometry::{covector_to_boundary, norm, ScatteringMetric};
use crate::linalg;
use crate::ode::{self, Options, Solution};

/// Number of extrapolation nodes `x_stop * {1, ..., 6}`.
pub const EXTRAPOLATION_NODES: usize = 6;

/// Unit covectors are accepted if `| |eta|_g - 1 | <= UNIT_TOL`.
pub const UNIT_TOL: f64 = 1e-10;

/// A phase-space point over the interior together with the source data.
///
/// `zeta` is the unit-speed covector; the Legendrian flowout scales it by the
/// flow parameter, which [`to_b_coords`] applies.
#[derive(Clone, Debug, PartialEq)]
pub struct InteriorCotangentState {
    pub z: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Frozen source covector, `-eta_hat` of the launch direction.
    pub eta: Vec<f64>,
    /// Energy of the unit-speed covector, `1/2` for unit launches.
    pub tau: f64,
    pub s: f64,
}

/// Rescaled boundary phase-space coordinates. With `zeta = c dx/x^2 + m dy/x`:
/// `radial = x c`, `angular = x m`, `source = x^2 eta`, `energy = x^2 tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct BCoordState {
    pub x: f64,
    pub y: Vec<f64>,
    pub radial: f64,
    pub angular: Vec<f64>,
    pub source: Vec<f64>,
    pub energy: f64,
}

/// Blown-up coordinates at the radial point `radial = -1`:
/// `radial = (lambda + 1)/x`, `angular = mu/x`, `source = xi/x`. The energy
/// is carried unchanged so that [`blow_down`] is an exact inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct BlownUpState {
    pub x: f64,
    pub y: Vec<f64>,
    pub radial: f64,
    pub angular: Vec<f64>,
    pub source: Vec<f64>,
    pub energy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayKind {
    Nontrapped,
    Undecided,
}

impl RayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RayKind::Nontrapped => "nontrapped",
            RayKind::Undecided => "undecided",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayClassification {
    pub kind: RayKind,
    pub escape_s: Option<f64>,
    pub s_max: f64,
}

/// Integration controls shared by the flow and sojourn computations.
#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    /// Requested accuracy of returned quantities.
    pub tol: f64,
    /// Arclength budget for the interior leg.
    pub s_max: f64,
    /// Hand-off point to the blown-up flow; `None` means `x0 / 4`.
    pub x_switch: Option<f64>,
    /// Smallest extrapolation node.
    pub x_stop: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            tol: 1e-9,
            s_max: 1e3,
            x_switch: None,
            x_stop: 1e-3,
        }
    }
}

impl FlowOptions {
    pub fn x_switch_for(&self, metric: &dyn ScatteringMetric) -> f64 {
        self.x_switch.unwrap_or(metric.x0() / 4.0)
    }

    /// Tolerance of the adaptive interior integrator, tighter than `tol` so
    /// that derived limits meet `tol`.
    pub fn interior_tol(&self) -> f64 {
        (self.tol * 1e-3).max(1e-13)
    }
}

/// `|eta|_g(w)`.
pub fn covector_norm(metric: &dyn ScatteringMetric, w: &[f64], eta: &[f64]) -> Result<f64> {
    let co = metric.cometric_jet(w)?;
    Ok(co.norm2(eta).sqrt())
}

/// Rescale `eta` to unit length at `w`.
pub fn normalize_covector(metric: &dyn ScatteringMetric, w: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    let len = covector_norm(metric, w, eta)?;
    if !(len > 0.0) {
        return Err(Error::domain("zero covector cannot be normalised"));
    }
    Ok(eta.iter().map(|e| e / len).collect())
}

fn check_unit(metric: &dyn ScatteringMetric, w: &[f64], eta: &[f64]) -> Result<()> {
    if w.len() != metric.dim() || eta.len() != metric.dim() {
        return Err(Error::domain("source point and covector must match the metric dimension"));
    }
    let len = covector_norm(metric, w, eta)?;
    if (len - 1.0).abs() > UNIT_TOL {
        return Err(Error::domain(format!("covector has length {len}, expected a unit covector")));
    }
    Ok(())
}

/// Hamilton's equations for `|zeta|^2_g / 2` on the packed state `[z, zeta]`.
pub fn interior_rhs(metric: &dyn ScatteringMetric) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + '_ {
    let n = metric.dim();
    move |_s, y, dy| {
        let co = metric.cometric_jet(&y[..n])?;
        let (vel, force) = co.hamilton(&y[n..]);
        for k in 0..n {
            dy[k] = vel[k];
            dy[n + k] = -force[k];
        }
        Ok(())
    }
}

/// Dense interior trajectory.
#[derive(Clone, Debug)]
pub struct InteriorTrajectory {
    pub n: usize,
    pub eta: Vec<f64>,
    pub tau: f64,
    pub solution: Solution,
}

impl InteriorTrajectory {
    pub fn state_at(&self, s: f64) -> InteriorCotangentState {
        let y = self.solution.eval(s);
        self.pack(s, &y)
    }

    pub fn end(&self) -> InteriorCotangentState {
        self.pack(self.solution.t_end, &self.solution.y_end)
    }

    pub fn s_end(&self) -> f64 {
        self.solution.t_end
    }

    fn pack(&self, s: f64, y: &[f64]) -> InteriorCotangentState {
        InteriorCotangentState {
            z: y[..self.n].to_vec(),
            zeta: y[self.n..].to_vec(),
            eta: self.eta.clone(),
            tau: self.tau,
            s,
        }
    }

    /// States at the requested parameters.
    pub fn sample(&self, ss: &[f64]) -> Vec<InteriorCotangentState> {
        ss.iter().map(|&s| self.state_at(s)).collect()
    }
}

/// Unit-speed geodesic from `(w, eta_hat)` for `s in [0, s_max]` (or
/// `[s_max, 0]` when `s_max < 0`).
pub fn integrate_interior(
    metric: &dyn ScatteringMetric,
    w: &[f64],
    eta_hat: &[f64],
    s_max: f64,
    tol: f64,
) -> Result<InteriorTrajectory> {
    check_unit(metric, w, eta_hat)?;
    if !(tol > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let n = metric.dim();
    let mut y0 = w.to_vec();
    y0.extend_from_slice(eta_hat);
    let mut rhs = interior_rhs(metric);
    let solution = ode::integrate(&mut rhs, 0.0, &y0, s_max, &Options::with_tol(tol), None)?;
    Ok(InteriorTrajectory {
        n,
        eta: eta_hat.iter().map(|e| -e).collect(),
        tau: 0.5,
        solution,
    })
}

/// Outcome of integrating until the ray is certified to escape.
#[derive(Clone, Debug)]
pub struct EscapeLeg {
    pub classification: RayClassification,
    /// The outgoing state at the hand-off point (parametrised so that `s > 0`
    /// runs outward), present when the ray escaped.
    pub handoff: Option<InteriorCotangentState>,
    pub trajectory: InteriorTrajectory,
}

/// Integrates from `(w, eta_hat)` forward (`direction = 1`) or backward
/// (`direction = -1`) in time until the ray leaves `|z| = 1/x_switch` with
/// outgoing radial momentum. With `require_transverse`, also waits until the
/// rescaled radial momentum is at most `-1/2` so the blown-up flow starts
/// transversally.
pub fn escape_leg(
    metric: &dyn ScatteringMetric,
    w: &[f64],
    eta_hat: &[f64],
    direction: f64,
    opts: &FlowOptions,
    require_transverse: bool,
) -> Result<EscapeLeg> {
    check_unit(metric, w, eta_hat)?;
    if !(opts.s_max > 0.0) {
        return Err(Error::domain("s_max must be positive"));
    }
    let n = metric.dim();
    let x_switch = opts.x_switch_for(metric);
    if !(x_switch > 0.0 && x_switch <= metric.x0()) {
        return Err(Error::domain("x_switch must lie in (0, x0]"));
    }
    // strict inequality x < x_switch at the certificate
    let r_switch = (1.0 + 1e-9) / x_switch;
    let event = move |t: f64, y: &[f64]| {
        let z = &y[..n];
        let r = norm(z);
        let radial_p = direction * y[n..].iter().zip(z).map(|(p, q)| p * q).sum::<f64>() / r;
        let mut g = (r - r_switch).min(radial_p);
        if require_transverse {
            // -lambda = s * p_r / r for the outgoing unit-speed ray
            g = g.min(direction * t * radial_p / r - 0.5);
        }
        g
    };
    let mut y0 = w.to_vec();
    y0.extend_from_slice(eta_hat);
    let mut rhs = interior_rhs(metric);
    let o = Options::with_tol(opts.interior_tol());
    let solution = if event(0.0, &y0) >= 0.0 {
        // already outside and moving outward
        Solution {
            dim: 2 * n,
            t_start: 0.0,
            t_end: 0.0,
            y_end: y0.clone(),
            segments: Vec::new(),
            event: Some(0.0),
        }
    } else {
        ode::integrate(&mut rhs, 0.0, &y0, direction * opts.s_max, &o, Some(&event))?
    };
    let trajectory = InteriorTrajectory {
        n,
        eta: eta_hat.iter().map(|e| -e).collect(),
        tau: 0.5,
        solution,
    };
    match trajectory.solution.event {
        Some(t) => {
            let end = trajectory.end();
            let handoff = InteriorCotangentState {
                z: end.z,
                zeta: end.zeta.iter().map(|p| direction * p).collect(),
                eta: eta_hat.iter().map(|e| -direction * e).collect(),
                tau: end.tau,
                s: direction * t,
            };
            Ok(EscapeLeg {
                classification: RayClassification {
                    kind: RayKind::Nontrapped,
                    escape_s: Some(t.abs()),
                    s_max: opts.s_max,
                },
                handoff: Some(handoff),
                trajectory,
            })
        }
        None => Ok(EscapeLeg {
            classification: RayClassification {
                kind: RayKind::Undecided,
                escape_s: None,
                s_max: opts.s_max,
            },
            handoff: None,
            trajectory,
        }),
    }
}

/// Escape certificate within the arclength budget `s_max`.
pub fn classify_ray(
    metric: &dyn ScatteringMetric,
    w: &[f64],
    eta_hat: &[f64],
    s_max: f64,
) -> Result<RayClassification> {
    let opts = FlowOptions {
        s_max,
        ..Default::default()
    };
    Ok(escape_leg(metric, w, eta_hat, 1.0, &opts, false)?.classification)
}

fn require_plane(metric: &dyn ScatteringMetric) -> Result<()> {
    if metric.dim() != 2 {
        return Err(Error::domain(format!(
            "boundary coordinates are implemented for n = 2 only (got n = {})",
            metric.dim()
        )));
    }
    Ok(())
}

/// Rescaled boundary coordinates of the Legendrian point over `state`.
pub fn to_b_coords(metric: &dyn ScatteringMetric, state: &InteriorCotangentState) -> Result<BCoordState> {
    require_plane(metric)?;
    let r = norm(&state.z);
    if r == 0.0 {
        return Err(Error::domain("the origin is not in the collar"));
    }
    let x = 1.0 / r;
    if x >= metric.x0() {
        return Err(Error::domain(format!("x = {x} is outside the collar x < x0 = {}", metric.x0())));
    }
    let theta = state.z[1].atan2(state.z[0]);
    let s = state.s;
    let zeta_l = [s * state.zeta[0], s * state.zeta[1]];
    let (zx, zy) = covector_to_boundary(x, theta, &zeta_l);
    Ok(BCoordState {
        x,
        y: vec![theta],
        radial: x * x * x * zx,
        angular: vec![x * x * zy],
        source: state.eta.iter().map(|e| x * x * s * e).collect(),
        energy: x * x * s * s * state.tau,
    })
}

/// `energy - (radial^2 + h^{ij} angular_i angular_j)/2`, zero on the characteristic set.
pub fn on_shell_residual(metric: &dyn ScatteringMetric, b: &BCoordState) -> Result<f64> {
    let jet = metric.boundary_jet(b.x, &b.y)?;
    let (hinv, _, _) = jet.inverse()?;
    let m = jet.m;
    let hm = linalg::quad_form(m, &hinv, &b.angular, &b.angular);
    Ok(b.energy - 0.5 * (b.radial * b.radial + hm))
}

pub fn blow_up(b: &BCoordState) -> Result<BlownUpState> {
    if !(b.x > 0.0) {
        return Err(Error::domain("blow-up needs x > 0; front-face values come from extrapolation"));
    }
    let x = b.x;
    Ok(BlownUpState {
        x,
        y: b.y.clone(),
        radial: (b.radial + 1.0) / x,
        angular: b.angular.iter().map(|m| m / x).collect(),
        source: b.source.iter().map(|m| m / x).collect(),
        energy: b.energy,
    })
}

pub fn blow_down(u: &BlownUpState) -> Result<BCoordState> {
    if !(u.x > 0.0) {
        return Err(Error::domain("blow-down needs x > 0"));
    }
    let x = u.x;
    Ok(BCoordState {
        x,
        y: u.y.clone(),
        radial: -1.0 + x * u.radial,
        angular: u.angular.iter().map(|m| m * x).collect(),
        source: u.source.iter().map(|m| m * x).collect(),
        energy: u.energy,
    })
}

/// Blown-up trajectory sampled on a fixed mesh in `x`; the last
/// [`EXTRAPOLATION_NODES`] states sit at `x_stop * {6, ..., 1}`.
#[derive(Clone, Debug)]
pub struct BlownUpTrajectory {
    pub states: Vec<BlownUpState>,
    /// Set when `x` stopped decreasing transversally before reaching `x_stop`.
    pub undecided: bool,
    pub x_stop: f64,
}

/// Rescaled field `W = V/x` with `x` as the independent variable, on
/// `u = [y, radial, angular, source_1..source_n]`.
fn blownup_rhs(metric: &dyn ScatteringMetric) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<()> + '_ {
    move |x, u, du| {
        let y = &u[0..1];
        let lam = u[1];
        let m = u[2];
        let jet = metric.boundary_jet(x, y)?;
        let (hinv, dhinv_dx, dhinv_dy) = jet.inverse()?;
        let d = -1.0 + x * lam;
        if 1.0 - x * lam < 1e-3 {
            return Err(Error::Integration {
                at: x,
                reason: "x is no longer decreasing transversally".into(),
                last_state: u.to_vec(),
            });
        }
        let hmm = hinv[0][0] * m * m;
        du[0] = hinv[0][0] * m / d;
        du[1] = (-hmm - 0.5 * x * dhinv_dx[0][0] * m * m) / d;
        du[2] = (lam * m - 0.5 * dhinv_dy[0][0][0] * m * m) / d;
        for k in 3..u.len() {
            du[k] = lam * u[k] / d;
        }
        Ok(())
    }
}

fn pack_blownup(u: &BlownUpState) -> Vec<f64> {
    let mut v = vec![u.y[0], u.radial, u.angular[0]];
    v.extend_from_slice(&u.source);
    v
}

fn unpack_blownup(metric: &dyn ScatteringMetric, x: f64, v: &[f64]) -> BlownUpState {
    let mut st = BlownUpState {
        x,
        y: vec![v[0]],
        radial: v[1],
        angular: vec![v[2]],
        source: v[3..].to_vec(),
        energy: 0.0,
    };
    // energy follows from the characteristic set
    if let Ok(b) = blow_down(&st) {
        let h = metric
            .boundary_jet(x, &st.y)
            .ok()
            .and_then(|j| j.inverse().ok())
            .map(|(hi, _, _)| hi[0][0])
            .unwrap_or(1.0);
        st.energy = 0.5 * (b.radial * b.radial + h * b.angular[0] * b.angular[0]);
    }
    st
}

/// Integrates the blown-up flow from `start` down to `x_stop`.
pub fn integrate_blownup(
    metric: &dyn ScatteringMetric,
    start: &BlownUpState,
    x_stop: f64,
    tol: f64,
) -> Result<BlownUpTrajectory> {
    require_plane(metric)?;
    if !(tol > 0.0) || !(x_stop > 0.0) {
        return Err(Error::domain("need tol > 0 and x_stop > 0"));
    }
    if start.x >= metric.x0() {
        return Err(Error::domain("blown-up flow must start inside the collar"));
    }
    let last = EXTRAPOLATION_NODES as f64 * x_stop;
    if start.x < last {
        return Err(Error::domain(format!(
            "start x = {} is below the extrapolation nodes (need x >= {last})",
            start.x
        )));
    }
    // fixed mesh: smooth dependence on the initial data
    let h_target = x_stop.min(start.x / 64.0);
    let n1 = (((start.x - last) / h_target).ceil() as usize).max(1);
    let mut states = vec![start.clone()];
    let mut rhs = blownup_rhs(metric);
    let mut v = pack_blownup(start);
    let mut undecided = false;
    let mut run = |x0: f64, x1: f64, steps: usize, v: &mut Vec<f64>, states: &mut Vec<BlownUpState>| -> Result<bool> {
        let mut pts = Vec::new();
        let res = ode::fixed_dp5(&mut rhs, x0, v, x1, steps, |k, x, y| {
            if k > 0 {
                pts.push((x, y.to_vec()));
            }
        });
        for (x, y) in &pts {
            states.push(unpack_blownup(metric, *x, y));
        }
        match res {
            Ok(out) => {
                *v = out;
                Ok(true)
            }
            Err(Error::Integration { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if start.x > last && !run(start.x, last, n1, &mut v, &mut states)? {
        undecided = true;
    }
    if !undecided {
        // exact node placement at x_stop * {5, ..., 1}
        for k in (1..EXTRAPOLATION_NODES).rev() {
            let xa = (k + 1) as f64 * x_stop;
            let xb = k as f64 * x_stop;
            let sub = ((x_stop / h_target).ceil() as usize).max(1);
            let mut tmp = Vec::new();
            if !run(xa, xb, sub, &mut v, &mut tmp)? {
                undecided = true;
                states.extend(tmp);
                break;
            }
            // keep only the node itself
            states.push(tmp.pop().expect("at least one step"));
            // and the exact node coordinate
            if let Some(s) = states.last_mut() {
                s.x = xb;
            }
        }
    }
    if let Some(s) = states.last() {
        if !undecided && !s.x.is_finite() {
            undecided = true;
        }
    }
    Ok(BlownUpTrajectory {
        states,
        undecided,
        x_stop,
    })
}

/// Extrapolated front-face values.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontFaceLimit {
    pub y0: Vec<f64>,
    pub radial: f64,
    pub angular: Vec<f64>,
    pub source: Vec<f64>,
    /// Largest difference between the two highest extrapolation orders.
    pub error_estimate: f64,
    pub converged: bool,
}

/// Polynomial extrapolation of `(y, radial, angular, source)` to `x = 0`
/// from the last [`EXTRAPOLATION_NODES`] states.
pub fn front_face_limit(traj: &BlownUpTrajectory, tol: f64) -> Result<FrontFaceLimit> {
    if traj.undecided {
        return Err(Error::Trapped { s_max: f64::NAN });
    }
    let k = EXTRAPOLATION_NODES;
    if traj.states.len() < k {
        return Err(Error::domain("trajectory does not reach the extrapolation nodes"));
    }
    let tail = &traj.states[traj.states.len() - k..];
    let xs: Vec<f64> = tail.iter().map(|s| s.x).collect();
    let mut err: f64 = 0.0;
    let mut ex = |f: &dyn Fn(&BlownUpState) -> f64| {
        let vs: Vec<f64> = tail.iter().map(f).collect();
        let (v, e) = neville_to_zero(&xs, &vs);
        err = err.max(e);
        v
    };
    let m = tail[0].y.len();
    let y0: Vec<f64> = (0..m).map(|i| ex(&|s: &BlownUpState| s.y[i])).collect();
    let radial = ex(&|s: &BlownUpState| s.radial);
    let angular: Vec<f64> = (0..m).map(|i| ex(&|s: &BlownUpState| s.angular[i])).collect();
    let ns = tail[0].source.len();
    let source: Vec<f64> = (0..ns).map(|i| ex(&|s: &BlownUpState| s.source[i])).collect();
    Ok(FrontFaceLimit {
        y0,
        radial,
        angular,
        source,
        error_estimate: err,
        converged: err <= tol,
    })
}

/// Full forward pipeline from a launch point: escape, hand-off, blown-up flow.
pub fn trace_to_front_face(
    metric: &dyn ScatteringMetric,
    w: &[f64],
    eta_hat: &[f64],
    direction: f64,
    opts: &FlowOptions,
) -> Result<(EscapeLeg, BlownUpTrajectory)> {
    require_plane(metric)?;
    let leg = escape_leg(metric, w, eta_hat, direction, opts, true)?;
    let handoff = match &leg.handoff {
        Some(h) => h.clone(),
        None => return Err(Error::Trapped { s_max: opts.s_max }),
    };
    let b = to_b_coords(metric, &handoff)?;
    let u = blow_up(&b)?;
    let traj = integrate_blownup(metric, &u, opts.x_stop, opts.tol)?;
    if traj.undecided {
        return Err(Error::Trapped { s_max: opts.s_max });
    }
    Ok((leg, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bump, ConformalBump, Euclidean, Potential};

    #[test]
    fn flat_straight_line() {
        let m = Euclidean::plane();
        let tr = integrate_interior(&m, &[0.0, 0.0], &[1.0, 0.0], 5.0, 1e-10).unwrap();
        let e = tr.end();
        assert!((e.z[0] - 5.0).abs() < 1e-12 && e.z[1].abs() < 1e-12);
        assert!((e.zeta[0] - 1.0).abs() < 1e-12 && e.zeta[1].abs() < 1e-12);
    }

    #[test]
    fn rejects_non_unit_covector() {
        let m = Euclidean::plane();
        assert!(matches!(
            integrate_interior(&m, &[0.0, 0.0], &[2.0, 0.0], 1.0, 1e-9),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn radial_b_coords() {
        let m = Euclidean::plane();
        let st = InteriorCotangentState {
            z: vec![10.0, 0.0],
            zeta: vec![1.0, 0.0],
            eta: vec![-1.0, 0.0],
            tau: 0.5,
            s: 10.0,
        };
        let b = to_b_coords(&m, &st).unwrap();
        assert!((b.radial + 1.0).abs() < 1e-15);
        assert!(b.angular[0].abs() < 1e-15);
        assert!((b.energy - 0.5).abs() < 1e-15);
        assert!(on_shell_residual(&m, &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn blow_up_arithmetic() {
        let b = BCoordState {
            x: 0.1,
            y: vec![0.3],
            radial: -0.95,
            angular: vec![0.0],
            source: vec![0.01, -0.02],
            energy: 0.45125,
        };
        let u = blow_up(&b).unwrap();
        assert!((u.radial - 0.5).abs() < 1e-14);
        assert_eq!(u.angular[0], 0.0);
        let back = blow_down(&u).unwrap();
        assert!((back.radial - b.radial).abs() <= 1e-15);
        let zero = BCoordState { x: 0.0, ..b };
        assert!(matches!(blow_up(&zero), Err(Error::Domain(_))));
    }

    #[test]
    fn classify_flat_and_bump() {
        let m = Euclidean::plane();
        let c = classify_ray(&m, &[0.3, -0.2], &[0.6, 0.8], 20.0).unwrap();
        assert_eq!(c.kind, RayKind::Nontrapped);
        let b = ConformalBump::new(2, 0.1, Bump::new(vec![0.0, 0.0], 1.5).unwrap(), 0.2, 1.0, Potential::Zero).unwrap();
        let eta = normalize_covector(&b, &[0.5, 0.0], &[0.0, 1.0]).unwrap();
        let c = classify_ray(&b, &[0.5, 0.0], &eta, 100.0);
        assert_eq!(c.unwrap().kind, RayKind::Nontrapped);
    }

    #[test]
    fn flat_front_face_values() {
        let m = Euclidean::plane();
        let opts = FlowOptions::default();
        let (_, traj) = trace_to_front_face(&m, &[2.0, 1.0], &[1.0, 0.0], 1.0, &opts).unwrap();
        let lim = front_face_limit(&traj, 1e-9).unwrap();
        assert!(lim.y0[0].abs() < 1e-9, "{lim:?}");
        assert!((lim.radial - 2.0).abs() < 1e-9, "{lim:?}");
        assert!((lim.angular[0] + 1.0).abs() < 1e-9, "{lim:?}");
        assert!(lim.converged);
    }
}
