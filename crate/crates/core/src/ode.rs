//! Dormand–Prince 5(4) integration: adaptive with dense output and event
//! location, plus a fixed-step variant whose result depends smoothly on the
//! initial data (used wherever derivatives are taken by finite differences).

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Right-hand side `dy/dt = f(t, y)`, written into the last argument.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self(t, y, dy)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Smallest admissible step as a fraction of the integration span.
    pub min_step_fraction: f64,
}

impl Options {
    pub fn with_tol(tol: f64) -> Self {
        Options {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

impl Default for Options {
    fn default() -> Self {
        Options {
            rtol: 1e-9,
            atol: 1e-9,
            max_steps: 1_000_000,
            min_step_fraction: 1e-14,
        }
    }
}

/// Hermite-type continuous extension over one accepted step.
#[derive(Clone, Debug)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    r: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.r;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }
}

/// Accepted steps of an adaptive run, with continuous output on `[t_start, t_end]`.
#[derive(Clone, Debug)]
pub struct Solution {
    pub dim: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub y_end: Vec<f64>,
    pub segments: Vec<DenseSegment>,
    /// Set when integration stopped at an event.
    pub event: Option<f64>,
}

impl Solution {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if self.segments.is_empty() {
            out.copy_from_slice(&self.y_end);
            return out;
        }
        let forward = self.t_end >= self.t_start;
        // segments are ordered in integration direction
        let idx = self.segments.partition_point(|s| {
            if forward {
                s.t1() < t
            } else {
                s.t1() > t
            }
        });
        let seg = &self.segments[idx.min(self.segments.len() - 1)];
        seg.eval_into(t, &mut out);
        out
    }

    pub fn steps(&self) -> usize {
        self.segments.len()
    }

    /// End points of every accepted step.
    pub fn mesh(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.segments.iter().map(|s| s.t0).collect();
        m.push(self.t_end);
        m
    }
}

/// Event function `g(t, y)`; integration stops where `g` changes sign from
/// negative to non-negative.
pub type EventFn<'a> = &'a dyn Fn(f64, &[f64]) -> f64;

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Work {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y1: vec![0.0; n],
        }
    }
}

/// One DP5 step from `(t, y)` with `k[0] = f(t, y)` already filled.
/// Leaves the 5th-order solution in `w.y1`, `k[6] = f(t + h, y1)`, and returns
/// the embedded error vector in `w.tmp`.
fn dp_step<F: Rhs>(f: &mut F, t: f64, y: &[f64], h: f64, w: &mut Work) -> Result<()> {
    let n = y.len();
    macro_rules! stage {
        ($dst:expr, $c:expr, [$(($a:expr, $j:expr)),*]) => {{
            for i in 0..n {
                w.tmp[i] = y[i] + h * (0.0 $(+ $a * w.k[$j][i])*);
            }
            let (head, tail) = w.k.split_at_mut($dst);
            let _ = head;
            f.eval(t + $c * h, &w.tmp, &mut tail[0])?;
        }};
    }
    stage!(1, C2, [(A21, 0)]);
    stage!(2, C3, [(A31, 0), (A32, 1)]);
    stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
    stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
    stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
    for i in 0..n {
        w.y1[i] = y[i]
            + h * (A71 * w.k[0][i] + A73 * w.k[2][i] + A74 * w.k[3][i] + A75 * w.k[4][i] + A76 * w.k[5][i]);
    }
    f.eval(t + h, &w.y1, &mut w.k[6])?;
    for i in 0..n {
        w.tmp[i] = h
            * (E1 * w.k[0][i] + E3 * w.k[2][i] + E4 * w.k[3][i] + E5 * w.k[4][i] + E6 * w.k[5][i]
                + E7 * w.k[6][i]);
    }
    Ok(())
}

fn dense(t: f64, y: &[f64], h: f64, w: &Work) -> DenseSegment {
    let n = y.len();
    let mut r: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    for i in 0..n {
        let ydiff = w.y1[i] - y[i];
        let bspl = h * w.k[0][i] - ydiff;
        r[0][i] = y[i];
        r[1][i] = ydiff;
        r[2][i] = bspl;
        r[3][i] = ydiff - h * w.k[6][i] - bspl;
        r[4][i] = h
            * (D1 * w.k[0][i] + D3 * w.k[2][i] + D4 * w.k[3][i] + D5 * w.k[4][i] + D6 * w.k[5][i]
                + D7 * w.k[6][i]);
    }
    DenseSegment { t0: t, h, r }
}

fn err_norm(y0: &[f64], y1: &[f64], e: &[f64], o: &Options) -> f64 {
    let n = y0.len() as f64;
    let mut s = 0.0;
    for i in 0..y0.len() {
        let sc = o.atol + o.rtol * y0[i].abs().max(y1[i].abs());
        s += (e[i] / sc) * (e[i] / sc);
    }
    (s / n).sqrt()
}

fn initial_step<F: Rhs>(f: &mut F, t: f64, y: &[f64], f0: &[f64], dir: f64, span: f64, o: &Options) -> Result<f64> {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| o.atol + o.rtol * v.abs()).collect();
    let rms = |v: &[f64]| (v.iter().zip(&sc).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(y);
    let d1 = rms(f0);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + dir * h * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    f.eval(t + dir * h, &y1, &mut f1)?;
    let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
    let d2 = rms(&diff) / h;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h).min(h1).min(span))
}

/// Adaptive integration from `t0` to `t1` (either direction), optionally
/// stopping at the first rising zero of `event`.
pub fn integrate<F: Rhs>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &Options,
    event: Option<EventFn<'_>>,
) -> Result<Solution> {
    let n = y0.len();
    let span = (t1 - t0).abs();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut sol = Solution {
        dim: n,
        t_start: t0,
        t_end: t0,
        y_end: y0.to_vec(),
        segments: Vec::new(),
        event: None,
    };
    if span == 0.0 {
        return Ok(sol);
    }
    let mut w = Work::new(n);
    let mut t = t0;
    let mut y = y0.to_vec();
    f.eval(t, &y, &mut w.k[0])?;
    let mut h = initial_step(f, t, &y, &w.k[0].clone(), dir, span, opts)?;
    let hmin = opts.min_step_fraction * span.max(1.0);
    let mut g_prev = event.map(|g| g(t, &y));
    let mut steps = 0;
    let mut rejected_last = false;
    loop {
        if steps >= opts.max_steps {
            return Err(Error::Integration {
                at: t,
                reason: format!("step budget {} exhausted", opts.max_steps),
                last_state: y,
            });
        }
        let remaining = (t1 - t) * dir;
        let last = h >= remaining;
        let hh = if last { remaining } else { h };
        dp_step(f, t, &y, dir * hh, &mut w)?;
        let err = err_norm(&y, &w.y1, &w.tmp, opts);
        if !err.is_finite() {
            h *= 0.25;
            if h < hmin {
                return Err(Error::Integration {
                    at: t,
                    reason: "non-finite derivative".into(),
                    last_state: y,
                });
            }
            rejected_last = true;
            continue;
        }
        if err > 1.0 {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h = hh * fac;
            rejected_last = true;
            if h < hmin {
                return Err(Error::Integration {
                    at: t,
                    reason: format!("step size underflow (h = {h:.3e})"),
                    last_state: y,
                });
            }
            continue;
        }
        steps += 1;
        let seg = dense(t, &y, dir * hh, &w);
        let t_new = if last { t1 } else { t + dir * hh };
        if let (Some(g), Some(gp)) = (event, g_prev) {
            let gn = g(t_new, &w.y1);
            if gp < 0.0 && gn >= 0.0 {
                let te = locate_event(g, &seg, t, t_new, gp, gn, n);
                let mut ye = vec![0.0; n];
                seg.eval_into(te, &mut ye);
                sol.segments.push(seg);
                sol.t_end = te;
                sol.y_end = ye;
                sol.event = Some(te);
                return Ok(sol);
            }
            g_prev = Some(gn);
        }
        sol.segments.push(seg);
        t = t_new;
        y.copy_from_slice(&w.y1);
        let k6 = std::mem::take(&mut w.k[6]);
        w.k[6] = std::mem::replace(&mut w.k[0], k6);
        if last {
            sol.t_end = t1;
            sol.y_end = y;
            return Ok(sol);
        }
        let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
        fac = fac.clamp(0.2, 10.0);
        if rejected_last {
            fac = fac.min(1.0);
        }
        rejected_last = false;
        h = hh * fac;
    }
}

fn locate_event(g: EventFn<'_>, seg: &DenseSegment, ta: f64, tb: f64, ga: f64, gb: f64, n: usize) -> f64 {
    // Illinois regula falsi on the continuous extension
    let (mut a, mut b, mut fa, mut fb) = (ta, tb, ga, gb);
    let mut y = vec![0.0; n];
    let mut side = 0;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        if !c.is_finite() || (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        seg.eval_into(c, &mut y);
        let fc = g(c, &y);
        if fc >= 0.0 {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
        if fc == 0.0 {
            return c;
        }
    }
    b
}

/// Fixed-step DP5 over `steps` equal steps; `observe(k, t, y)` sees every mesh
/// point including the start (`k = 0`).
pub fn fixed_dp5<F: Rhs>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    steps: usize,
    mut observe: impl FnMut(usize, f64, &[f64]),
) -> Result<Vec<f64>> {
    let n = y0.len();
    let h = (t1 - t0) / steps as f64;
    let mut w = Work::new(n);
    let mut y = y0.to_vec();
    observe(0, t0, &y);
    if steps > 0 {
        f.eval(t0, &y, &mut w.k[0])?;
    }
    for s in 0..steps {
        let t = t0 + h * s as f64;
        dp_step(f, t, &y, h, &mut w)?;
        y.copy_from_slice(&w.y1);
        w.k.swap(0, 6);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                at: t + h,
                reason: "non-finite state".into(),
                last_state: y,
            });
        }
        observe(s + 1, t0 + h * (s + 1) as f64, &y);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        let sol = integrate(&mut f, 0.0, &[1.0], 5.0, &Options::with_tol(1e-11), None).unwrap();
        assert!((sol.y_end[0] - (-5.0f64).exp()).abs() < 1e-10);
        for k in 0..50 {
            let t = 0.1 * k as f64;
            assert!((sol.eval(t)[0] - (-t).exp()).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn harmonic_oscillator_backwards() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        let sol = integrate(&mut f, 3.0, &[3.0f64.cos(), -3.0f64.sin()], 0.0, &Options::with_tol(1e-11), None).unwrap();
        assert!((sol.y_end[0] - 1.0).abs() < 1e-9);
        assert!(sol.y_end[1].abs() < 1e-9);
        assert!((sol.eval(1.5)[0] - 1.5f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn event_is_located() {
        let mut f = |_t: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = 1.0;
            dy[1] = -1.0;
            Ok(())
        };
        let g = |_t: f64, y: &[f64]| y[0] - 2.5;
        let sol = integrate(&mut f, 0.0, &[0.0, 0.0], 10.0, &Options::default(), Some(&g)).unwrap();
        let te = sol.event.unwrap();
        assert!((te - 2.5).abs() < 1e-12);
        assert!((sol.y_end[1] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let run = |steps| {
            let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[0] * y[0].cos();
                Ok(())
            };
            fixed_dp5(&mut f, 0.0, &[0.5], 2.0, steps, |_, _, _| {}).unwrap()[0]
        };
        let reference = run(4000);
        let e1 = (run(20) - reference).abs();
        let e2 = (run(40) - reference).abs();
        let order = (e1 / e2).log2();
        assert!((order - 5.0).abs() < 0.6, "order {order}");
    }
}
