//! Command-line front end. Every command computes its artifacts in memory
//! and writes them (plus `provenance.json`) only after it has succeeded.

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{self, BranchName, InitialKind, RunConfig};
use crate::error::{Error, Result};
use crate::flow::{self, FlowOptions};
use crate::geometry::ScatteringMetric;
use crate::io::{self, fmt_f64, Csv};
use crate::parametrix::{self, ParametrixKernel, ResidualGrid};
use crate::pde::{self, Cone, GridSpec, WavefieldGrid, WfscOptions};
use crate::sojourn::{self, Branch, SojournData, SourcePoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Trace a ray to the front face and tabulate both legs.
    Flow,
    /// Certify escape of a ray within the arclength budget.
    Classify,
    /// Forward or backward sojourn data of one source point.
    Sojourn,
    /// Sojourn data for seeded random source points.
    SojournTable,
    /// Contact defect of the forward sojourn map.
    ContactCheck,
    /// Invert the sojourn map for a target.
    Invert,
    /// Interior wavefront point predicted from scattering data at time t.
    Predict,
    /// Geodesic between two points and the phase function.
    Phase,
    /// Transport amplitudes a0 (and a1).
    Amplitude,
    /// Evaluate the parametrix kernel at a list of points.
    ParametrixEval,
    /// Residual of the parametrix against the Schrödinger operator.
    ParametrixResidual,
    /// Evolve initial data on a grid.
    Evolve,
    /// Focusing experiment with quadratic-phase data.
    Focus,
    /// Scattering wavefront estimate of an evolved field.
    Wfsc,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Classify => "classify",
            Command::Sojourn => "sojourn",
            Command::SojournTable => "sojourn-table",
            Command::ContactCheck => "contact-check",
            Command::Invert => "invert",
            Command::Predict => "predict",
            Command::Phase => "phase",
            Command::Amplitude => "amplitude",
            Command::ParametrixEval => "parametrix-eval",
            Command::ParametrixResidual => "parametrix-residual",
            Command::Evolve => "evolve",
            Command::Focus => "focus",
            Command::Wfsc => "wfsc",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "conicflow", version, about = "Geodesic flow, sojourn relations, parametrix and Schrödinger experiments on asymptotically conic planes", after_help = config::KEY_REFERENCE)]
pub struct Cli {
    pub command: Command,
    /// TOML configuration file.
    pub config: PathBuf,
}

/// A named artifact held in memory until the run succeeds.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

fn artifact(name: &str, bytes: Vec<u8>) -> Artifact {
    Artifact {
        name: name.to_string(),
        bytes,
    }
}

fn json_artifact(name: &str, v: &Value) -> Artifact {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    artifact(name, s.into_bytes())
}

fn f(v: f64) -> String {
    fmt_f64(v)
}

fn section<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("command needs a [{name}] section")))
}

fn branch(b: BranchName) -> Branch {
    match b {
        BranchName::Forward => Branch::Forward,
        BranchName::Backward => Branch::Backward,
    }
}

fn source_point(metric: &dyn ScatteringMetric, cfg: &RunConfig) -> Result<SourcePoint> {
    let s = section(&cfg.source, "source")?;
    match (&s.eta, s.angle) {
        (Some(eta), None) => {
            let e = flow::normalize_covector(metric, &s.w, eta)?;
            SourcePoint::new(metric, s.w.clone(), e)
        }
        (None, Some(phi)) => SourcePoint::from_angle(metric, &s.w, phi),
        _ => Err(Error::Config("give exactly one of source.eta and source.angle".into())),
    }
}

fn direction(b: BranchName) -> f64 {
    match b {
        BranchName::Forward => 1.0,
        BranchName::Backward => -1.0,
    }
}

fn sojourn_cells(sd: &SojournData, which: Branch) -> Vec<String> {
    vec![
        f(sd.y0[0]),
        f(sd.nu),
        f(sd.mu[0]),
        f(sd.error_estimate),
        which.as_str().to_string(),
    ]
}

/// Runs `command` and returns the artifacts to write.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Vec<Artifact>> {
    let metric = cfg.metric.build()?;
    let metric = metric.as_ref();
    let opts = cfg.flow.options()?;
    match command {
        Command::Flow => cmd_flow(metric, cfg, &opts),
        Command::Classify => cmd_classify(metric, cfg, &opts),
        Command::Sojourn => cmd_sojourn(metric, cfg, &opts),
        Command::SojournTable => cmd_sojourn_table(metric, cfg, &opts),
        Command::ContactCheck => cmd_contact(metric, cfg, &opts),
        Command::Invert => cmd_invert(metric, cfg, &opts),
        Command::Predict => cmd_predict(metric, cfg, &opts),
        Command::Phase => cmd_phase(metric, cfg),
        Command::Amplitude => cmd_amplitude(metric, cfg),
        Command::ParametrixEval => cmd_parametrix_eval(metric, cfg),
        Command::ParametrixResidual => cmd_parametrix_residual(metric, cfg),
        Command::Evolve => cmd_evolve(metric, cfg),
        Command::Focus => cmd_focus(metric, cfg),
        Command::Wfsc => cmd_wfsc(metric, cfg, &opts),
    }
}

fn cmd_flow(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let src = source_point(metric, cfg)?;
    let dir = direction(section(&cfg.source, "source")?.branch);
    let (leg, traj) = flow::trace_to_front_face(metric, &src.w, &src.eta_hat, dir, opts)?;
    let lim = flow::front_face_limit(&traj, opts.tol)?;

    let tr = &leg.trajectory;
    let mut knots: Vec<f64> = tr.solution.segments.iter().map(|g| g.t0).collect();
    knots.push(tr.s_end());
    let mut interior = Csv::new(&["s", "z1", "z2", "zeta1", "zeta2"]);
    for st in tr.sample(&knots) {
        interior.row(&[f(st.s), f(st.z[0]), f(st.z[1]), f(st.zeta[0]), f(st.zeta[1])]);
    }
    let mut blown = Csv::new(&["x", "y", "radial", "angular", "source1", "source2", "energy"]);
    for st in &traj.states {
        blown.row(&[
            f(st.x),
            f(st.y[0]),
            f(st.radial),
            f(st.angular[0]),
            f(st.source[0]),
            f(st.source[1]),
            f(st.energy),
        ]);
    }
    let report = json!({
        "w": src.w,
        "eta_hat": src.eta_hat,
        "direction": dir,
        "classification": leg.classification.kind.as_str(),
        "escape_s": leg.classification.escape_s,
        "front_face": {
            "y0": lim.y0,
            "radial": lim.radial,
            "angular": lim.angular,
            "source": lim.source,
            "error_estimate": lim.error_estimate,
            "converged": lim.converged,
        },
        "boundary_chart": "x = 1/|z|, y = polar angle of z",
    });
    Ok(vec![
        artifact("flow_interior.csv", interior.into_bytes()),
        artifact("flow_blownup.csv", blown.into_bytes()),
        json_artifact("flow.json", &report),
    ])
}

fn cmd_classify(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let src = source_point(metric, cfg)?;
    let dir = direction(section(&cfg.source, "source")?.branch);
    let leg = flow::escape_leg(metric, &src.w, &src.eta_hat, dir, opts, false)?;
    let c = leg.classification;
    Ok(vec![json_artifact(
        "classify.json",
        &json!({
            "w": src.w,
            "eta_hat": src.eta_hat,
            "direction": dir,
            "kind": c.kind.as_str(),
            "escape_s": c.escape_s,
            "s_max": c.s_max,
        }),
    )])
}

fn cmd_sojourn(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let src = source_point(metric, cfg)?;
    let which = branch(section(&cfg.source, "source")?.branch);
    let sd = sojourn::sojourn(metric, &src, which, opts)?;
    let mut csv = Csv::new(&["w1", "w2", "eta1", "eta2", "y0", "nu", "mu", "error_estimate", "branch"]);
    let mut cells = vec![f(src.w[0]), f(src.w[1]), f(src.eta_hat[0]), f(src.eta_hat[1])];
    cells.extend(sojourn_cells(&sd, which));
    csv.row(&cells);
    Ok(vec![artifact("sojourn.csv", csv.into_bytes())])
}

fn random_source(metric: &dyn ScatteringMetric, rng: &mut ChaCha8Rng, w_max: f64) -> Result<SourcePoint> {
    let r = w_max * rng.gen::<f64>().sqrt();
    let a = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    SourcePoint::from_angle(metric, &[r * a.cos(), r * a.sin()], phi)
}

fn cmd_sojourn_table(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let t = section(&cfg.table, "table")?;
    if !(t.w_max >= 0.0) {
        return Err(Error::Config("table.w_max must be non-negative".into()));
    }
    let which = branch(t.branch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = Csv::new(&["index", "w1", "w2", "phi", "y0", "nu", "mu", "error_estimate", "branch", "status"]);
    for k in 0..t.samples {
        let src = random_source(metric, &mut rng, t.w_max)?;
        let mut cells = vec![k.to_string(), f(src.w[0]), f(src.w[1]), f(src.angle())];
        match sojourn::sojourn(metric, &src, which, opts) {
            Ok(sd) => {
                cells.extend(sojourn_cells(&sd, which));
                cells.push("ok".into());
            }
            Err(e) => {
                cells.extend(["", "", "", ""].map(String::from));
                cells.push(which.as_str().into());
                cells.push(e.kind().into());
            }
        }
        csv.row(&cells);
    }
    Ok(vec![artifact("sojourn_table.csv", csv.into_bytes())])
}

fn cmd_contact(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let mut csv = Csv::new(&["w1", "w2", "phi", "fd_step", "contact_defect"]);
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    if let Some(t) = &cfg.table {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..t.samples {
            let src = random_source(metric, &mut rng, t.w_max)?;
            let d = sojourn::contact_defect(metric, &src, t.fd_step, opts)?;
            worst = worst.max(d);
            rows += 1;
            csv.row(&[f(src.w[0]), f(src.w[1]), f(src.angle()), f(t.fd_step), f(d)]);
        }
    } else {
        let src = source_point(metric, cfg)?;
        let h = section(&cfg.source, "source")?.fd_step;
        let d = sojourn::contact_defect(metric, &src, h, opts)?;
        worst = d;
        rows = 1;
        csv.row(&[f(src.w[0]), f(src.w[1]), f(src.angle()), f(h), f(d)]);
    }
    Ok(vec![
        artifact("contact.csv", csv.into_bytes()),
        json_artifact("contact.json", &json!({ "samples": rows, "max_contact_defect": worst })),
    ])
}

fn target(cfg: &RunConfig) -> Result<(SojournData, BranchName, Option<f64>)> {
    let t = section(&cfg.target, "target")?;
    Ok((SojournData::new(t.y0, t.nu, t.mu), t.branch, t.t))
}

fn cmd_invert(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let (q, b, _) = target(cfg)?;
    let which = branch(b);
    let src = sojourn::invert_sojourn(metric, &q, which, opts)?;
    let back = sojourn::sojourn(metric, &src, which, opts)?;
    let mut csv = Csv::new(&["y0", "nu", "mu", "branch", "w1", "w2", "eta1", "eta2", "residual"]);
    csv.row(&[
        f(q.y0[0]),
        f(q.nu),
        f(q.mu[0]),
        which.as_str().into(),
        f(src.w[0]),
        f(src.w[1]),
        f(src.eta_hat[0]),
        f(src.eta_hat[1]),
        f(back.distance(&q)),
    ]);
    Ok(vec![artifact("invert.csv", csv.into_bytes())])
}

fn cmd_predict(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let (q, _, t) = target(cfg)?;
    let t = t.ok_or_else(|| Error::Config("predict needs target.t".into()))?;
    let p = sojourn::predict_interior_wf(metric, &q, t, opts)?;
    let mut csv = Csv::new(&["y0", "nu", "mu", "t", "w1", "w2", "eta1", "eta2"]);
    csv.row(&[
        f(q.y0[0]),
        f(q.nu),
        f(q.mu[0]),
        f(t),
        f(p.w[0]),
        f(p.w[1]),
        f(p.eta_hat[0]),
        f(p.eta_hat[1]),
    ]);
    Ok(vec![artifact("predict.csv", csv.into_bytes())])
}

fn cmd_phase(metric: &dyn ScatteringMetric, cfg: &RunConfig) -> Result<Vec<Artifact>> {
    let p = section(&cfg.phase, "phase")?;
    let seg = parametrix::geodesic_bvp(metric, &p.w, &p.z, p.tol)?;
    let mut csv = Csv::new(&["tau", "q1", "q2"]);
    for (tau, q) in &seg.samples {
        csv.row(&[f(*tau), f(q[0]), f(q[1])]);
    }
    let report = json!({
        "w": seg.w,
        "z": seg.z,
        "distance": seg.length,
        "phase": seg.phase(),
        "velocity": seg.velocity,
        "eta_hat": seg.eta_hat,
        "end_covector": seg.end_covector,
        "endpoint_miss": seg.endpoint_miss,
        "steps": seg.steps,
        "injectivity_bound": metric.injectivity_bound(),
    });
    Ok(vec![artifact("geodesic.csv", csv.into_bytes()), json_artifact("phase.json", &report)])
}

fn cmd_amplitude(metric: &dyn ScatteringMetric, cfg: &RunConfig) -> Result<Vec<Artifact>> {
    let p = section(&cfg.phase, "phase")?;
    if p.order > 1 {
        return Err(Error::Config("phase.order must be 0 or 1".into()));
    }
    let seg = parametrix::geodesic_bvp(metric, &p.w, &p.z, p.tol)?;
    let jet = parametrix::transport_a0_jet(metric, &seg, parametrix::DEFAULT_QUAD_NODES)?;
    let a1 = if p.order == 1 {
        let v = parametrix::transport_a1(metric, &seg, p.grid_step)?;
        Some([v.re, v.im])
    } else {
        None
    };
    let report = json!({
        "w": seg.w,
        "z": seg.z,
        "distance": seg.length,
        "a0": jet.a0,
        "a0_squared": jet.a0 * jet.a0,
        "source_at_end": jet.source_at_end,
        "a1": a1,
        "quad_nodes": jet.quad_nodes,
        "tube_offset": jet.tube_offset,
        "a1_grid_step": p.grid_step,
    });
    Ok(vec![json_artifact("amplitude.json", &report)])
}

fn kernel<'a>(metric: &'a dyn ScatteringMetric, cfg: &RunConfig) -> Result<ParametrixKernel<'a>> {
    let p = section(&cfg.parametrix, "parametrix")?;
    ParametrixKernel::new(metric, p.order)
}

fn cmd_parametrix_eval(metric: &dyn ScatteringMetric, cfg: &RunConfig) -> Result<Vec<Artifact>> {
    let p = section(&cfg.parametrix, "parametrix")?;
    let t = p
        .t
        .ok_or_else(|| Error::Config("parametrix-eval needs parametrix.t".into()))?;
    let k = kernel(metric, cfg)?;
    let mut csv = Csv::new(&["z1", "z2", "t", "re", "im", "abs"]);
    for z in &p.points {
        let u: Complex64 = parametrix::parametrix_eval(&k, z, &p.w, t)?;
        csv.row(&[f(z[0]), f(*z.get(1).unwrap_or(&0.0)), f(t), f(u.re), f(u.im), f(u.norm())]);
    }
    Ok(vec![artifact("parametrix_eval.csv", csv.into_bytes())])
}

fn default_t_list() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect()
}

fn cmd_parametrix_residual(metric: &dyn ScatteringMetric, cfg: &RunConfig) -> Result<Vec<Artifact>> {
    let p = section(&cfg.parametrix, "parametrix")?;
    let k = kernel(metric, cfg)?;
    let t_list = p.t_list.clone().unwrap_or_else(default_t_list);
    let grid = ResidualGrid::covering(k.iota(), p.spacing);
    let rep = parametrix::residual_order(&k, &p.w, &grid, &t_list)?;
    let mut csv = Csv::new(&["t", "residual", "noise_fraction"]);
    for s in &rep.samples {
        csv.row(&[f(s.t), f(s.residual), f(s.noise_fraction)]);
    }
    let v = serde_json::to_value(&rep).expect("report serializes");
    Ok(vec![artifact("residual.csv", csv.into_bytes()), json_artifact("residual.json", &v)])
}

fn grid_spec(cfg: &RunConfig) -> Result<GridSpec> {
    section(&cfg.grid, "grid")?.spec()
}

fn initial_field(spec: &GridSpec, cfg: &RunConfig, sponge: f64) -> Result<(WavefieldGrid, f64)> {
    let init = section(&cfg.initial, "initial")?;
    if init.center.len() != spec.dims {
        return Err(Error::Config("initial.center must match the grid dimension".into()));
    }
    let field = match init.kind {
        InitialKind::Gaussian => {
            let width = init
                .width
                .ok_or_else(|| Error::Config("gaussian data needs initial.width".into()))?;
            if !(width > 0.0) {
                return Err(Error::Config("initial.width must be positive".into()));
            }
            let c = init.center.clone();
            let p = init.momentum.clone().unwrap_or_else(|| vec![0.0; spec.dims]);
            if p.len() != spec.dims {
                return Err(Error::Config("initial.momentum must match the grid dimension".into()));
            }
            WavefieldGrid::from_fn(*spec, move |z| {
                let (mut d2, mut ph) = (0.0, 0.0);
                for k in 0..c.len() {
                    d2 += (z[k] - c[k]).powi(2);
                    ph += p[k] * z[k];
                }
                Complex64::from_polar((-d2 / (2.0 * width * width)).exp(), ph)
            })
        }
        InitialKind::Quadratic => {
            let tf = init
                .focus_time
                .ok_or_else(|| Error::Config("quadratic data needs initial.focus_time".into()))?;
            let ann = init
                .annulus
                .ok_or_else(|| Error::Config("quadratic data needs initial.annulus".into()))?;
            pde::make_quadratic_data(spec, &init.center, tf, ann, sponge)?
        }
    };
    Ok((field, init.t_final))
}

fn solver(cfg: &RunConfig) -> Result<pde::SolverConfig> {
    Ok(section(&cfg.solver, "solver")?.config())
}

fn cmd_evolve(metric: &dyn ScatteringMetric, cfg: &RunConfig) -> Result<Vec<Artifact>> {
    let spec = grid_spec(cfg)?;
    let sc = solver(cfg)?;
    let (u0, t_final) = initial_field(&spec, cfg, sc.sponge_width)?;
    let ev = pde::evolve(metric, &u0, &sc, t_final)?;
    let peak = pde::detect_peak(&ev.grid);
    let report = json!({
        "scheme": sc.scheme.as_str(),
        "t_final": t_final,
        "steps": ev.steps,
        "dt_used": ev.dt_used,
        "norm_initial": ev.norm_initial,
        "norm_final": ev.norm_final,
        "absorbed": ev.absorbed,
        "mass_drift": ev.mass_drift,
        "energy_initial": ev.energy_initial,
        "energy_final": ev.energy_final,
        "energy_drift": ev.energy_drift(),
        "max_krylov_iterations": ev.max_krylov_iterations,
        "peak": peak,
        "snapshot": "field.cflw",
        "grid": { "dims": spec.dims, "n": spec.n, "half_width": spec.half_width, "dx": spec.dx() },
    });
    Ok(vec![
        artifact("field.cflw", io::encode_snapshot(&ev.grid)),
        json_artifact("evolve.json", &report),
    ])
}

fn cmd_focus(metric: &dyn ScatteringMetric, cfg: &RunConfig) -> Result<Vec<Artifact>> {
    let fc = section(&cfg.focus, "focus")?;
    let spec = grid_spec(cfg)?;
    let sc = solver(cfg)?;
    let rep = pde::focusing_experiment(metric, &fc.w0, fc.focus_time, &spec, &sc, fc.annulus, fc.t_eval)?;
    let mut v = serde_json::to_value(&rep).expect("report serializes");
    v["dx"] = json!(spec.dx());
    v["scheme"] = json!(sc.scheme.as_str());
    Ok(vec![json_artifact("focus.json", &v)])
}

fn cmd_wfsc(metric: &dyn ScatteringMetric, cfg: &RunConfig, opts: &FlowOptions) -> Result<Vec<Artifact>> {
    let wc = section(&cfg.wfsc, "wfsc")?;
    let spec = grid_spec(cfg)?;
    let field = match &wc.snapshot {
        Some(path) => {
            let g = io::read_snapshot(Path::new(path), spec.half_width, wc.t)?;
            if g.spec != spec {
                return Err(Error::Config("snapshot does not match [grid]".into()));
            }
            g
        }
        None => {
            let sc = solver(cfg)?;
            let (u0, _) = initial_field(&spec, cfg, sc.sponge_width)?;
            pde::evolve(metric, &u0, &sc, wc.t)?.grid
        }
    };
    let cone = Cone {
        center: wc.cone_center,
        half_angle: wc.half_angle,
        rays: wc.rays,
    };
    let wopts = WfscOptions {
        relative_threshold: wc.relative_threshold,
        ..Default::default()
    };
    let dets = pde::estimate_wfsc(&field, wc.t, &cone, wc.annulus, &wopts)?;
    // point-like data at `center` is compared with the rescaled forward sojourn data
    let point_source = match &cfg.initial {
        Some(i) if wc.snapshot.is_none() && i.kind == InitialKind::Gaussian && metric.dim() == 2 => {
            Some(i.center.clone())
        }
        _ => None,
    };
    let mut csv = Csv::new(&["y", "nu", "mu", "strength", "predicted_nu", "predicted_mu"]);
    for d in &dets {
        let mut cells = vec![f(d.y), f(d.nu), f(d.mu), f(d.strength)];
        let pred = point_source.as_ref().and_then(|w| {
            let src = SourcePoint::from_angle(metric, w, d.y).ok()?;
            let sd = sojourn::sojourn_forward(metric, &src, opts).ok()?;
            sojourn::scale_fiber(&sd, 1.0 / wc.t).ok()
        });
        match pred {
            Some(p) => cells.extend([f(p.nu), f(p.mu[0])]),
            None => cells.extend([String::new(), String::new()]),
        }
        csv.row(&cells);
    }
    Ok(vec![artifact("wfsc.csv", csv.into_bytes())])
}

/// Provenance block written next to every set of artifacts.
pub fn provenance(command: Command, cfg: &RunConfig, config_text: &str, files: &[String]) -> Value {
    json!({
        "tool": "conicflow",
        "version": VERSION,
        "command": command.name(),
        "seed": cfg.seed,
        "config": serde_json::to_value(cfg).expect("config serializes"),
        "config_text": config_text,
        "tolerances": {
            "flow_tol": cfg.flow.tol,
            "interior_tol": cfg.flow.options().map(|o| o.interior_tol()).ok(),
            "s_max": cfg.flow.s_max,
            "x_switch": cfg.flow.x_switch,
            "x_stop": cfg.flow.x_stop,
            "bvp_tol": cfg.phase.as_ref().map(|p| p.tol),
            "krylov_tol": cfg.solver.as_ref().map(|s| s.krylov_tol),
            "dt": cfg.solver.as_ref().map(|s| s.dt),
        },
        "floating_point": {
            "type": "IEEE 754 binary64, round to nearest",
            "text_format": "17 significant digits",
            "reductions": "fixed-order chunked sums, independent of thread count",
        },
        "artifacts": files,
    })
}

/// Output directory: `CONICFLOW_OUTPUT_DIR`, else `output_dir`, else `out`.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    if let Ok(d) = std::env::var("CONICFLOW_OUTPUT_DIR") {
        if !d.is_empty() {
            return PathBuf::from(d);
        }
    }
    PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "out".into()))
}

/// Full run: parse, execute, then write every artifact atomically.
pub fn run(command: Command, config_path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(config_path)?;
    let cfg = config::parse(&text)?;
    let arts = execute(command, &cfg)?;
    let dir = output_dir(&cfg);
    let mut names: Vec<String> = arts.iter().map(|a| a.name.clone()).collect();
    names.push("provenance.json".into());
    let prov = json_artifact("provenance.json", &provenance(command, &cfg, &text, &names));
    let mut written = Vec::new();
    for a in arts.iter().chain(std::iter::once(&prov)) {
        let p = dir.join(&a.name);
        io::atomic_write(&p, &a.bytes)?;
        written.push(p);
    }
    Ok(written)
}

/// Machine-readable error line for standard error.
pub fn error_json(e: &Error) -> String {
    json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
    .to_string()
}
