//! Run configuration (TOML). Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowOptions;
use crate::geometry::{Bump, ConformalBump, Euclidean, Potential, ScatteringMetric, SurfaceOfRevolution};
use crate::pde::{GridSpec, Scheme, SolverConfig};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<String>,
    pub metric: MetricConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    pub source: Option<SourceConfig>,
    pub table: Option<TableConfig>,
    pub target: Option<TargetConfig>,
    pub phase: Option<PhaseConfig>,
    pub parametrix: Option<ParametrixConfig>,
    pub grid: Option<GridConfig>,
    pub solver: Option<SolverSection>,
    pub initial: Option<InitialConfig>,
    pub focus: Option<FocusConfig>,
    pub wfsc: Option<WfscConfig>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Euclidean,
    ConformalBump,
    SurfaceOfRevolution,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub family: Family,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_iota")]
    pub injectivity_bound: f64,
    /// Conformal bump strength.
    pub epsilon: Option<f64>,
    pub bump_center: Option<Vec<f64>>,
    pub bump_radius: Option<f64>,
    /// Surface-of-revolution profile parameters.
    pub amplitude: Option<f64>,
    pub r_mid: Option<f64>,
    pub half_width: Option<f64>,
    pub potential: Option<PotentialConfig>,
}

fn default_dim() -> usize {
    2
}
fn default_x0() -> f64 {
    0.25
}
fn default_iota() -> f64 {
    1e6
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Zero,
    Bump,
    Plateau,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    #[serde(default)]
    pub amplitude: f64,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub inner: Option<f64>,
    pub outer: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    pub x_switch: Option<f64>,
    #[serde(default = "default_x_stop")]
    pub x_stop: f64,
}

fn default_tol() -> f64 {
    1e-9
}
fn default_s_max() -> f64 {
    1e3
}
fn default_x_stop() -> f64 {
    1e-3
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            tol: default_tol(),
            s_max: default_s_max(),
            x_switch: None,
            x_stop: default_x_stop(),
        }
    }
}

impl FlowConfig {
    pub fn options(&self) -> Result<FlowOptions> {
        if !(self.tol > 0.0) || !(self.s_max > 0.0) || !(self.x_stop > 0.0) {
            return Err(Error::Config("flow tol, s_max and x_stop must be positive".into()));
        }
        Ok(FlowOptions {
            tol: self.tol,
            s_max: self.s_max,
            x_switch: self.x_switch,
            x_stop: self.x_stop,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BranchName {
    #[default]
    Forward,
    Backward,
}

/// A point of the unit cosphere bundle: `eta` (normalized) or its angle.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub w: Vec<f64>,
    pub eta: Option<Vec<f64>>,
    pub angle: Option<f64>,
    #[serde(default)]
    pub branch: BranchName,
    /// Finite-difference step for `contact-check`.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

fn default_fd_step() -> f64 {
    1e-5
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub samples: usize,
    /// Base points are drawn uniformly from the disc `|w| <= w_max`.
    pub w_max: f64,
    #[serde(default)]
    pub branch: BranchName,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub y0: f64,
    pub nu: f64,
    pub mu: f64,
    #[serde(default)]
    pub branch: BranchName,
    /// Time for `predict`.
    pub t: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    #[serde(default = "default_bvp_tol")]
    pub tol: f64,
    /// Include `a1` in `amplitude`.
    #[serde(default)]
    pub order: u8,
    #[serde(default = "default_a1_step")]
    pub grid_step: f64,
}

fn default_bvp_tol() -> f64 {
    1e-12
}
fn default_a1_step() -> f64 {
    crate::parametrix::DEFAULT_A1_STEP
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ParametrixConfig {
    #[serde(default)]
    pub order: u8,
    pub w: Vec<f64>,
    /// Evaluation points for `parametrix-eval`.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    pub t: Option<f64>,
    /// Grid spacing for `parametrix-residual`.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    pub t_list: Option<Vec<f64>>,
}

fn default_spacing() -> f64 {
    0.04
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dims: usize,
    pub n: usize,
    pub half_width: f64,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.dims, self.n, self.half_width)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub scheme: Scheme,
    pub dt: f64,
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default)]
    pub sponge_width: f64,
    #[serde(default = "default_sponge")]
    pub sponge_strength: f64,
    #[serde(default = "default_krylov")]
    pub krylov_tol: f64,
}

fn one() -> usize {
    1
}
fn default_sponge() -> f64 {
    20.0
}
fn default_krylov() -> f64 {
    1e-10
}

impl SolverSection {
    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            scheme: self.scheme,
            dt: self.dt,
            substeps: self.substeps,
            sponge_width: self.sponge_width,
            sponge_strength: self.sponge_strength,
            krylov_tol: self.krylov_tol,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Gaussian,
    Quadratic,
}

/// Initial data for `evolve` and `wfsc`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialKind,
    /// Gaussian centre, or `w0` of the quadratic data.
    pub center: Vec<f64>,
    /// Gaussian width.
    pub width: Option<f64>,
    pub momentum: Option<Vec<f64>>,
    /// Focus time `T` of the quadratic data.
    pub focus_time: Option<f64>,
    pub annulus: Option<[f64; 2]>,
    pub t_final: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FocusConfig {
    pub w0: Vec<f64>,
    pub focus_time: f64,
    pub annulus: [f64; 2],
    pub t_eval: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WfscConfig {
    pub t: f64,
    pub cone_center: f64,
    pub half_angle: f64,
    pub rays: usize,
    pub annulus: [f64; 2],
    #[serde(default = "default_rel")]
    pub relative_threshold: f64,
    /// Read the field from a snapshot instead of evolving `[initial]`.
    pub snapshot: Option<String>,
}

fn default_rel() -> f64 {
    0.1
}

/// Parses TOML text.
pub fn parse(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
}

fn require<T: Clone>(v: &Option<T>, key: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing key metric.{key}")))
}

fn reject(present: bool, key: &str, family: &str) -> Result<()> {
    if present {
        return Err(Error::Config(format!("key metric.{key} does not apply to family {family}")));
    }
    Ok(())
}

impl PotentialConfig {
    pub fn build(&self) -> Result<Potential> {
        Ok(match self.kind {
            PotentialKind::Zero => Potential::Zero,
            PotentialKind::Bump => Potential::Bump {
                amplitude: self.amplitude,
                bump: Bump::new(
                    self.center.clone().ok_or_else(|| Error::Config("potential.center is required".into()))?,
                    self.radius.ok_or_else(|| Error::Config("potential.radius is required".into()))?,
                )?,
            },
            PotentialKind::Plateau => {
                let inner = self.inner.ok_or_else(|| Error::Config("potential.inner is required".into()))?;
                let outer = self.outer.ok_or_else(|| Error::Config("potential.outer is required".into()))?;
                if !(0.0 < inner && inner < outer) {
                    return Err(Error::Config("plateau needs 0 < inner < outer".into()));
                }
                Potential::Plateau {
                    amplitude: self.amplitude,
                    center: self.center.clone().ok_or_else(|| Error::Config("potential.center is required".into()))?,
                    inner,
                    outer,
                }
            }
        })
    }
}

impl MetricConfig {
    pub fn build(&self) -> Result<Box<dyn ScatteringMetric>> {
        let potential = match &self.potential {
            Some(p) => p.build()?,
            None => Potential::Zero,
        };
        let bump_keys = self.epsilon.is_some() || self.bump_center.is_some() || self.bump_radius.is_some();
        let sor_keys = self.amplitude.is_some() || self.r_mid.is_some() || self.half_width.is_some();
        Ok(match self.family {
            Family::Euclidean => {
                reject(bump_keys, "epsilon/bump_*", "euclidean")?;
                reject(sor_keys, "amplitude/r_mid/half_width", "euclidean")?;
                Box::new(Euclidean::new(self.dim, self.x0, self.injectivity_bound, potential)?)
            }
            Family::ConformalBump => {
                reject(sor_keys, "amplitude/r_mid/half_width", "conformal_bump")?;
                let bump = Bump::new(require(&self.bump_center, "bump_center")?, require(&self.bump_radius, "bump_radius")?)?;
                Box::new(ConformalBump::new(
                    self.dim,
                    require(&self.epsilon, "epsilon")?,
                    bump,
                    self.x0,
                    self.injectivity_bound,
                    potential,
                )?)
            }
            Family::SurfaceOfRevolution => {
                reject(bump_keys, "epsilon/bump_*", "surface_of_revolution")?;
                if self.dim != 2 {
                    return Err(Error::Config("surface_of_revolution is two-dimensional".into()));
                }
                Box::new(SurfaceOfRevolution::new(
                    require(&self.amplitude, "amplitude")?,
                    require(&self.r_mid, "r_mid")?,
                    require(&self.half_width, "half_width")?,
                    self.x0,
                    self.injectivity_bound,
                    potential,
                )?)
            }
        })
    }
}

/// Key reference printed by `--help`.
pub const KEY_REFERENCE: &str = "\
CONFIG KEYS (TOML; unknown keys are rejected)
  seed = u64                      seed for randomized sampling (default 0)
  output_dir = \"path\"             artifact directory (default \"out\")
  [metric]
    family = euclidean | conformal_bump | surface_of_revolution
    dim = 2                       dimension (boundary operations need 2)
    x0 = 0.25                     collar width; x0 * support radius < 1
    injectivity_bound = 1e6       lower bound for the injectivity radius
    epsilon, bump_center, bump_radius      conformal bump (1 + eps*bump) g_flat
    amplitude, r_mid, half_width           surface of revolution profile
  [metric.potential]
    kind = zero | bump | plateau
    amplitude, center, radius (bump), inner, outer (plateau)
  [flow]       tol = 1e-9, s_max = 1e3, x_switch = x0/4, x_stop = 1e-3
  [source]     w, eta | angle, branch = forward | backward, fd_step = 1e-5
  [table]      samples, w_max, branch, fd_step
  [target]     y0, nu, mu, branch, t (predict)
  [phase]      w, z, tol = 1e-12, order = 0 | 1, grid_step = 1e-2
  [parametrix] order, w, points = [[..]], t, spacing = 0.04, t_list
  [grid]       dims = 2, n (power of two), half_width
  [solver]     scheme = splitstep | cranknicolson, dt, substeps = 1,
               sponge_width = 0, sponge_strength = 20, krylov_tol = 1e-10
  [initial]    kind = gaussian | quadratic, center, width, momentum,
               focus_time, annulus = [R1, R2], t_final
  [focus]      w0, focus_time, annulus, t_eval
  [wfsc]       t, cone_center, half_angle, rays, annulus,
               relative_threshold = 0.1, snapshot
ENVIRONMENT
  CONICFLOW_OUTPUT_DIR            overrides output_dir
  CONICFLOW_THREADS               worker thread count
";
